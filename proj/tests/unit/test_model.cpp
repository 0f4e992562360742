#include "support.hpp"

#include <map>
#include <set>

#include "mvil/accounting.hpp"
#include "mvil/config.hpp"
#include "mvil/errors.hpp"
#include "mvil/model.hpp"
#include "mvil/objectives.hpp"

using namespace mvil;
using mvil::test::bitwise_equal;
using mvil::test::max_abs_diff;
using mvil::test::random_tensor;

namespace {

ModelConfig small_config(LayerKind kind = LayerKind::MlpTinyAtt, std::size_t layers = 2) {
    ModelConfig m;
    m.vocab_size = 10;
    m.answer_vocab_size = 5;
    m.text_len = 2;
    m.grid_rows = 2;
    m.grid_cols = 2;
    m.patch_dim = 3;
    m.d = 8;
    StackTemplate st{.h = 16, .h_pos = 4, .heads = 2, .k_attention = 0, .k_tiny = 4};
    return with_uniform_stack(m, kind, layers, st);
}

std::map<std::string, Tensor> by_name(const Model& model) {
    std::map<std::string, Tensor> out;
    for (const auto& [n, t] : model.parameters()) out.emplace(n, t);
    return out;
}

void fill(Tensor t, double v) {
    for (auto& x : t.mutable_values()) x = v;
}

}  // namespace

TEST_SUITE("encoders") {
    TEST_CASE("same id at two positions gives identical rows") {
        Rng rng(1);
        Model model(small_config(), rng);
        const int ids[] = {4, 4};
        const auto t = model.encode_text(ids);
        CHECK(t.shape() == Shape{2, 8});
        for (std::size_t c = 0; c < 8; ++c) CHECK(t.at(0, c) == t.at(1, c));
    }

    TEST_CASE("ids outside the vocabulary are rejected") {
        Rng rng(2);
        Model model(small_config(), rng);
        const int ids[] = {10, 1};
        CHECK_THROWS_AS(model.encode_text(ids), VocabularyError);
        const int negative[] = {-1};
        CHECK_THROWS_AS(model.encode_text(negative), VocabularyError);
    }

    TEST_CASE("embedding gradient equals occurrence counts") {
        Rng rng(3);
        Model model(small_config(), rng);
        const int ids[] = {7, 7};
        backward(sum(model.encode_text(ids)));
        const auto embed = by_name(model).at("text.embed");
        for (std::size_t v = 0; v < 10; ++v)
            for (std::size_t c = 0; c < 8; ++c) CHECK(embed.grad()[v * 8 + c] == (v == 7 ? 2.0 : 0.0));
    }

    TEST_CASE("zero patch projection gives zero vision features") {
        Rng rng(4);
        auto cfg = small_config();
        cfg.grid_rows = 4;
        cfg.grid_cols = 4;
        cfg.patch_dim = 12;
        cfg.d = 16;
        cfg = with_uniform_stack(cfg, LayerKind::Mlp, 1, StackTemplate{.h = 8, .h_pos = 4});
        Model model(cfg, rng);
        auto params = by_name(model);
        for (const char* n : {"vision.proj", "vision.proj_bias", "vision.type"}) fill(params.at(n), 0.0);
        const auto v = model.encode_vision(random_tensor({16, 12}, rng));
        CHECK(v.shape() == Shape{16, 16});
        for (double x : v.values()) CHECK(x == 0.0);
        CHECK_THROWS_AS(model.encode_vision(random_tensor({16, 11}, rng)), ContractError);
    }

    TEST_CASE("mixer vision blocks keep the patch shape and add parameters") {
        Rng rng(5);
        auto cfg = small_config();
        cfg.vision_encoder = VisionEncoderKind::MixerBlocks;
        cfg.vision_blocks = 2;
        cfg.vision_h = 6;
        cfg.vision_h_pos = 3;
        Model model(cfg, rng);
        CHECK(model.vision_block_params().size() == 2u);
        CHECK(model.encode_vision(random_tensor({4, 3}, rng)).shape() == Shape{4, 8});
        CHECK(model.parameter_count() == count_params(cfg).total_params().total());
    }
}

TEST_SUITE("assembly") {
    TEST_CASE("one pad token, 2x2 grid") {
        Rng rng(6);
        Model model(small_config(), rng);
        const int ids[] = {3, kPadId};
        const auto seq = model.assemble_sequence(model.encode_text(ids), model.encode_vision(random_tensor({4, 3}, rng)), ids);
        CHECK(seq.features.shape() == Shape{7, 8});
        const std::vector<PositionTag> expected{PositionTag::Cls,    PositionTag::Text,   PositionTag::Pad,
                                                PositionTag::Vision, PositionTag::Vision, PositionTag::Vision,
                                                PositionTag::Vision};
        CHECK(seq.tags == expected);
        for (std::size_t c = 0; c < 8; ++c) CHECK(seq.features.at(2, c) == 0.0);
    }

    TEST_CASE("zero encoders leave CLS plus type and position rows at non-pad positions") {
        Rng rng(7);
        Model model(small_config(), rng);
        auto params = by_name(model);
        for (const char* n : {"text.embed", "vision.proj", "vision.proj_bias"}) fill(params.at(n), 0.0);
        const int ids[] = {3, kPadId};
        const auto seq = model.assemble_sequence(model.encode_text(ids), model.encode_vision(random_tensor({4, 3}, rng)), ids);
        const auto cls = params.at("seq.cls"), pos = params.at("seq.pos");
        const auto ttype = params.at("text.type"), vtype = params.at("vision.type");
        for (std::size_t c = 0; c < 8; ++c) {
            CHECK(seq.features.at(0, c) == cls.values()[c]);
            CHECK(seq.features.at(1, c) == ttype.values()[c] + pos.at(0, c));
            CHECK(seq.features.at(2, c) == 0.0);
            CHECK(seq.features.at(3, c) == vtype.values()[c] + pos.at(2, c));
        }
    }

    TEST_CASE("too many rows for the sequence budget") {
        Rng rng(8);
        Model model(small_config(), rng);
        const int ids[] = {3, 4};
        CHECK_THROWS_AS(model.assemble_sequence(random_tensor({3, 8}, rng), random_tensor({4, 8}, rng), ids), ContractError);
    }

    TEST_CASE("the content of a pad position never reaches the losses") {
        Rng rng(9);
        auto cfg = small_config();
        cfg.pooling = Pooling::Average;
        Model model(cfg, rng);
        const int ids[] = {3, kPadId};
        const auto patches = random_tensor({4, 3}, rng);
        auto losses = [&] {
            const auto out = model.forward(ids, patches);
            const std::vector<int> labels{kIgnoreLabel, 3, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel};
            const std::vector<double> target{0, 1, 0, 0, 0};
            return std::vector<double>{mlm_loss(model.mlm_head(out.hidden), labels).item(),
                                       itm_loss(model.itm_head(out.pooled), 1).item(),
                                       vqa_loss(model.vqa_head(out.pooled), target).item()};
        };
        const auto before = losses();
        // Rewrite the pad embedding row and the pad slot's position embedding.
        auto params = by_name(model);
        for (std::size_t c = 0; c < 8; ++c) {
            params.at("text.embed").mutable_values()[kPadId * 8 + c] += 5.0;
            params.at("seq.pos").mutable_values()[1 * 8 + c] -= 3.0;
        }
        CHECK(losses() == before);
    }
}

TEST_SUITE("fusion and pooling") {
    TEST_CASE("empty stack returns the input") {
        Rng rng(10);
        const auto x = random_tensor({7, 8}, rng);
        CHECK(bitwise_equal(fusion_forward({}, {}, x), x));
    }

    TEST_CASE("stack equals manual composition") {
        Rng rng(11);
        const auto cfg = small_config(LayerKind::Mlp, 3);
        Model model(cfg, rng);
        const auto x = random_tensor({7, 8}, rng);
        Tensor manual = x;
        for (std::size_t i = 0; i < 3; ++i) manual = layer_forward(cfg.fusion_layers[i], model.fusion_params()[i], manual);
        CHECK(bitwise_equal(model.fusion_forward(x), manual));
    }

    TEST_CASE("mixed stack keeps the shape") {
        Rng rng(12);
        auto cfg = small_config();
        const StackTemplate st{.h = 16, .h_pos = 4, .heads = 2, .k_tiny = 4};
        cfg.fusion_layers = {make_layer(cfg, LayerKind::Mlp, st), make_layer(cfg, LayerKind::Transformer, st),
                             make_layer(cfg, LayerKind::MlpTinyAtt, st)};
        Model model(cfg, rng);
        CHECK(model.fusion_forward(random_tensor({7, 8}, rng)).shape() == Shape{7, 8});
        CHECK_THROWS_AS(model.fusion_forward(random_tensor({6, 8}, rng)), ContractError);
    }

    TEST_CASE("average pooling skips pads") {
        const auto h = Tensor::matrix({{1}, {2}, {3}, {99}});
        CHECK(pool(h, Pooling::Average, {true, true, true, false}).item() == 2.0);
        CHECK(pool(h, Pooling::Cls, {true, true, true, false}).item() == 1.0);
    }

    TEST_CASE("equal rows make both pooling modes agree") {
        const auto h = Tensor::matrix({{1.5, -2}, {1.5, -2}, {1.5, -2}});
        const std::vector<bool> valid{true, true, true};
        CHECK(bitwise_equal(pool(h, Pooling::Average, valid), pool(h, Pooling::Cls, valid)));
    }
}

TEST_SUITE("heads") {
    TEST_CASE("zero weights give zero logits") {
        Rng rng(13);
        auto cfg = small_config();
        cfg.heads.nlvr2 = true;
        Model model(cfg, rng);
        for (auto& [name, t] : model.parameters())
            if (name.starts_with("head.")) fill(t, 0.0);
        const auto pooled = random_tensor({1, 8}, rng);
        for (const auto& logits : {model.mlm_head(random_tensor({7, 8}, rng)), model.itm_head(pooled),
                                   model.vqa_head(pooled), model.nlvr2_pair_head(pooled, pooled)})
            for (double v : logits.values()) CHECK(v == 0.0);
        CHECK(model.mlm_head(random_tensor({7, 8}, rng)).shape() == Shape{7, 10});
        CHECK(model.vqa_head(pooled).shape() == Shape{1, 5});
    }

    TEST_CASE("symmetric NLVR2 weights make the head order-invariant") {
        Rng rng(14);
        auto cfg = small_config();
        cfg.heads.nlvr2 = true;
        Model model(cfg, rng);
        auto w1 = by_name(model).at("head.nlvr2.w1");  // [2d x hidden]
        const std::size_t hidden = w1.cols();
        auto v = w1.mutable_values();
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t c = 0; c < hidden; ++c) v[(8 + r) * hidden + c] = v[r * hidden + c];
        const auto a = random_tensor({1, 8}, rng), b = random_tensor({1, 8}, rng);
        // Equal up to the summation order inside the matmul.
        CHECK(max_abs_diff(model.nlvr2_pair_head(a, b), model.nlvr2_pair_head(b, a)) < 1e-12);
    }
}

TEST_SUITE("whole model") {
    TEST_CASE("forward is deterministic") {
        Rng r1(15), r2(15);
        Model a(small_config(), r1), b(small_config(), r2);
        const int ids[] = {3, 5};
        Rng data(16);
        const auto patches = random_tensor({4, 3}, data);
        CHECK(bitwise_equal(a.forward(ids, patches).hidden, b.forward(ids, patches).hidden));
    }

    TEST_CASE("all-MLP configuration has no attention and no convolution") {
        auto cfg = small_config(LayerKind::Mlp, 2);
        cfg.vision_encoder = VisionEncoderKind::MixerBlocks;
        cfg.vision_blocks = 1;
        cfg.vision_h = 8;
        cfg.vision_h_pos = 4;
        const auto report = count_params(cfg);
        CHECK(report.total_params().attention == 0u);
        CHECK(report.total_params().convolution == 0u);
        CHECK(estimate_flops(cfg).total_flops().attention == 0u);
    }

    TEST_CASE("every parameter receives gradient") {
        for (auto placement : {NormPlacement::PreNorm, NormPlacement::PostNorm})
            for (auto kind : {LayerKind::Transformer, LayerKind::Mlp, LayerKind::MlpTinyAtt}) {
                auto cfg = small_config(kind, 2);
                cfg.vision_encoder = VisionEncoderKind::MixerBlocks;
                cfg.vision_blocks = 1;
                cfg.vision_h = 8;
                cfg.vision_h_pos = 4;
                for (auto& l : cfg.fusion_layers) l.norm_placement = placement;
                Rng rng(17);
                Model model(cfg, rng);
                // Move biases and gammas off their initial values so the batch is generic.
                for (auto& [name, t] : model.parameters())
                    for (auto& v : t.mutable_values()) v += rng.normal(0.0, 0.1);
                const int ids[] = {3, 6};
                const auto out = model.forward(ids, random_tensor({4, 3}, rng));
                const std::vector<int> labels{kIgnoreLabel, 2, 7, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel, kIgnoreLabel};
                const std::vector<double> target{0, 0, 1, 0, 0};
                backward(add(add(mlm_loss(model.mlm_head(out.hidden), labels), itm_loss(model.itm_head(out.pooled), 0)),
                             vqa_loss(model.vqa_head(out.pooled), target)));
                for (const auto& [name, t] : model.parameters()) {
                    double norm = 0.0;
                    if (t.has_grad())
                        for (double g : t.grad()) norm += g * g;
                    // A post-norm position-FFN output bias shifts a whole row by a constant,
                    // which the following layer norm removes; its gradient is zero by construction.
                    const bool post = placement == NormPlacement::PostNorm || name.starts_with("vision.");
                    const bool invariant = post && name.ends_with("pos.b2");
                    CAPTURE(name);
                    CAPTURE(to_string(kind));
                    if (invariant) {
                        CHECK(norm < 1e-20);
                    } else {
                        CHECK(norm > 0.0);
                    }
                }
            }
    }

    TEST_CASE("parameter names are unique and the encoder split is by prefix") {
        Rng rng(18);
        Model model(small_config(), rng);
        std::set<std::string> names;
        for (const auto& [n, t] : model.parameters()) CHECK(names.insert(n).second);
        CHECK(Model::is_encoder_parameter("text.embed"));
        CHECK(Model::is_encoder_parameter("vision.block.0.ffn.u"));
        CHECK_FALSE(Model::is_encoder_parameter("fusion.0.pos.q"));
        CHECK_FALSE(Model::is_encoder_parameter("seq.cls"));
    }
}
