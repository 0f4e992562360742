#include "mvil/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "mvil/config.hpp"
#include "mvil/errors.hpp"
#include "mvil/layers.hpp"
#include "mvil/model.hpp"
#include "mvil/objectives.hpp"
#include "mvil/rng.hpp"

namespace mvil {

GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn, std::span<const Tensor> inputs,
                                std::span<const std::string> labels, const GradCheckOptions& options) {
    if (labels.size() != inputs.size()) throw ContractError("check_gradients: one label per input expected");
    for (const auto& t : inputs) {
        if (!t.requires_grad() || !t.is_leaf()) throw ContractError("check_gradients: inputs must be requires_grad leaves");
    }
    for (auto t : inputs) t.zero_grad();
    backward(loss_fn());

    GradCheckResult result;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tensor t = inputs[i];
        std::vector<double> analytic(t.numel(), 0.0);
        if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
        std::vector<double> numeric(t.numel());
        auto values = t.mutable_values();
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double saved = values[j];
            values[j] = saved + options.step;
            const double up = loss_fn().item();
            values[j] = saved - options.step;
            const double down = loss_fn().item();
            values[j] = saved;
            numeric[j] = (up - down) / (2.0 * options.step);
        }
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t j = 0; j < numeric.size(); ++j) {
            diff += (analytic[j] - numeric[j]) * (analytic[j] - numeric[j]);
            na += analytic[j] * analytic[j];
            nn += numeric[j] * numeric[j];
        }
        const double err = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), options.floor});
        if (result.checks == 0 || err > result.max_relative_error) {
            result.max_relative_error = err;
            result.worst = labels[i];
        }
        ++result.checks;
    }
    for (auto t : inputs) t.zero_grad();
    return result;
}

namespace {

struct Problem {
    std::vector<Tensor> inputs;
    std::vector<std::string> labels;
    std::function<Tensor()> output;
};

Tensor random_leaf(Shape shape, Rng& rng, double sd = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal(0.0, sd);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Every parameter gets fresh random values so zero biases and unit gammas are exercised too.
void randomize(std::vector<NamedTensor>& named, Rng& rng, Problem& p, std::string_view prefix = "") {
    for (auto& [name, t] : named) {
        for (auto& x : t.mutable_values()) x = rng.normal(0.0, 0.5);
        p.inputs.push_back(t);
        p.labels.push_back(fmt::format("{}{}", prefix, name));
    }
}

Tensor add_input(Problem& p, const std::string& label, Tensor t) {
    p.inputs.push_back(t);
    p.labels.push_back(label);
    return t;
}

FusionLayerConfig small_layer(LayerKind kind, NormPlacement placement) {
    FusionLayerConfig c;
    c.kind = kind;
    c.d = 4;
    c.n = 5;
    c.h = 6;
    c.h_pos = 3;
    c.heads = kind == LayerKind::Transformer ? 2 : 1;
    c.k = kind == LayerKind::Transformer ? 2 : 3;
    c.norm_placement = placement;
    return c;
}

ModelConfig small_model(std::size_t seed_index) {
    ModelConfig m;
    m.vocab_size = 7;
    m.answer_vocab_size = 4;
    m.text_len = 3;
    m.grid_rows = 1;
    m.grid_cols = 2;
    m.patch_dim = 3;
    m.d = 4;
    m.vision_encoder = VisionEncoderKind::MixerBlocks;
    m.vision_blocks = 1;
    m.vision_h = 5;
    m.vision_h_pos = 2;
    m.heads.nlvr2 = true;
    m.vqa_hidden = 5;
    m.nlvr2_hidden = 3;
    m.pooling = seed_index % 2 ? Pooling::Average : Pooling::Cls;
    StackTemplate stack{.h = 6, .h_pos = 3, .heads = 2, .k_attention = 2, .k_tiny = 3};
    m.fusion_layers = {make_layer(m, LayerKind::MlpTinyAtt, stack), make_layer(m, LayerKind::Transformer, stack)};
    return m;
}

using Builder = std::function<Problem(Rng&, std::size_t seed_index)>;

Builder unary(std::function<Tensor(const Tensor&)> op, Shape shape) {
    return [op, shape](Rng& rng, std::size_t) {
        Problem p;
        Tensor x = add_input(p, "x", random_leaf(shape, rng));
        p.output = [op, x] { return op(x); };
        return p;
    };
}

Builder layer_builder(LayerKind kind) {
    return [kind](Rng& rng, std::size_t seed_index) {
        const auto placement = seed_index % 2 ? NormPlacement::PreNorm : NormPlacement::PostNorm;
        const FusionLayerConfig c = small_layer(kind, placement);
        auto params = std::make_shared<LayerParams>(init_layer_params(c, rng));
        Problem p;
        Tensor x = add_input(p, "x", random_leaf({c.n, c.d}, rng));
        auto named = params->named();
        randomize(named, rng, p);
        p.output = [c, params, x] { return layer_forward(c, *params, x); };
        return p;
    };
}

Builder model_builder(std::string_view which) {
    return [which = std::string(which)](Rng& rng, std::size_t seed_index) {
        auto model = std::make_shared<Model>(small_model(seed_index), rng);
        const auto& m = model->config();
        Problem p;
        auto named = model->parameters();
        if (which == "model") {
            randomize(named, rng, p);
            std::vector<int> tokens(m.text_len);
            for (auto& t : tokens) t = static_cast<int>(rng.below(m.vocab_size));
            tokens.back() = kPadId;
            const Tensor patches = random_leaf({m.num_patches(), m.patch_dim}, rng).detach();
            std::vector<int> labels(m.seq_len(), kIgnoreLabel);
            labels[1] = static_cast<int>(rng.below(m.vocab_size));
            const int itm_label = static_cast<int>(rng.below(2));
            std::vector<double> vqa_target(m.answer_vocab_size);
            for (auto& v : vqa_target) v = rng.uniform();
            p.output = [model, tokens, patches, labels, itm_label, vqa_target] {
                const auto out = model->forward(tokens, patches);
                return add(add(mlm_loss(model->mlm_head(out.hidden), labels), itm_loss(model->itm_head(out.pooled), itm_label)),
                           vqa_loss(model->vqa_head(out.pooled), vqa_target));
            };
            return p;
        }
        const std::string prefix = fmt::format("head.{}.", which == "nlvr2_head" ? "nlvr2" : which.substr(0, 3));
        std::vector<NamedTensor> head;
        for (auto& nt : named)
            if (nt.first.starts_with(prefix)) head.push_back(nt);
        randomize(head, rng, p);
        if (which == "mlm_head") {
            Tensor x = add_input(p, "hidden", random_leaf({m.seq_len(), m.d}, rng));
            p.output = [model, x] { return model->mlm_head(x); };
        } else if (which == "itm_head") {
            Tensor x = add_input(p, "pooled", random_leaf({1, m.d}, rng));
            p.output = [model, x] { return model->itm_head(x); };
        } else if (which == "vqa_head") {
            Tensor x = add_input(p, "pooled", random_leaf({1, m.d}, rng));
            p.output = [model, x] { return model->vqa_head(x); };
        } else {
            Tensor a = add_input(p, "pooled_a", random_leaf({1, m.d}, rng));
            Tensor b = add_input(p, "pooled_b", random_leaf({1, m.d}, rng));
            p.output = [model, a, b] { return model->nlvr2_pair_head(a, b); };
        }
        return p;
    };
}

const std::map<std::string, Builder>& builders() {
    static const std::map<std::string, Builder> table = [] {
        std::map<std::string, Builder> t;
        t["matmul"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor a = add_input(p, "a", random_leaf({3, 4}, rng));
            Tensor b = add_input(p, "b", random_leaf({4, 2}, rng));
            p.output = [a, b] { return matmul(a, b); };
            return p;
        };
        t["transpose"] = unary([](const Tensor& x) { return transpose(x); }, {3, 2});
        t["gelu"] = unary([](const Tensor& x) { return gelu(x); }, {3, 4});
        t["sigmoid"] = unary([](const Tensor& x) { return sigmoid(x); }, {3, 4});
        t["softmax_rows"] = unary([](const Tensor& x) { return softmax_rows(x); }, {3, 5});
        t["mul"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor a = add_input(p, "a", random_leaf({2, 3}, rng));
            Tensor b = add_input(p, "b", random_leaf({2, 3}, rng));
            p.output = [a, b] { return sub(mul(a, b), scale(add(a, b), 0.5)); };
            return p;
        };
        t["bias"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor x = add_input(p, "x", random_leaf({3, 4}, rng));
            Tensor rb = add_input(p, "row_bias", random_leaf({4}, rng));
            Tensor cb = add_input(p, "col_bias", random_leaf({3}, rng));
            p.output = [x, rb, cb] { return gelu(add_col_bias(add_row_bias(x, rb), cb)); };
            return p;
        };
        t["layer_norm"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor x = add_input(p, "x", random_leaf({3, 5}, rng));
            Tensor g = add_input(p, "gamma", random_leaf({5}, rng));
            Tensor b = add_input(p, "beta", random_leaf({5}, rng));
            p.output = [x, g, b] { return layer_norm(x, g, b); };
            return p;
        };
        t["reshape"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor a = add_input(p, "a", random_leaf({2, 3}, rng));
            Tensor b = add_input(p, "b", random_leaf({1, 3}, rng));
            Tensor c = add_input(p, "c", random_leaf({3, 2}, rng));
            p.output = [a, b, c] {
                Tensor rows = concat_rows({a, b});                        // [3 x 3]
                Tensor both = concat_cols({rows, c});                     // [3 x 5]
                Tensor kept = mask_rows(both, {true, false, true});
                return concat_rows({slice_rows(kept, 1, 3), mean_rows(both, {true, true, false})});
            };
            return p;
        };
        t["embedding"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor table = add_input(p, "table", random_leaf({5, 3}, rng));
            p.output = [table] {
                const int ids[] = {4, 1, 4, 0};
                return embedding(table, ids);
            };
            return p;
        };
        t["cross_entropy_rows"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor x = add_input(p, "logits", random_leaf({4, 5}, rng, 2.0));
            p.output = [x] {
                const int targets[] = {2, -1, 0, 4};
                return cross_entropy_rows(x, targets);
            };
            return p;
        };
        t["bce_with_logits"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor x = add_input(p, "logits", random_leaf({1, 4}, rng, 2.0));
            std::vector<double> targets(4);
            for (auto& v : targets) v = rng.uniform();
            p.output = [x, targets] { return bce_with_logits(x, targets); };
            return p;
        };
        t["channel_ffn"] = [](Rng& rng, std::size_t) {
            const auto c = small_layer(LayerKind::Mlp, NormPlacement::PostNorm);
            auto params = std::make_shared<LayerParams>(init_layer_params(c, rng));
            Problem p;
            Tensor x = add_input(p, "x", random_leaf({c.n, c.d}, rng));
            std::vector<NamedTensor> named = {{"u", params->channel.u}, {"b1", params->channel.b1},
                                              {"v", params->channel.v}, {"b2", params->channel.b2}};
            randomize(named, rng, p);
            p.output = [params, x] { return channel_ffn(x, params->channel); };
            return p;
        };
        t["position_ffn"] = [](Rng& rng, std::size_t) {
            const auto c = small_layer(LayerKind::Mlp, NormPlacement::PostNorm);
            auto params = std::make_shared<LayerParams>(init_layer_params(c, rng));
            Problem p;
            Tensor x = add_input(p, "x", random_leaf({c.n, c.d}, rng));
            std::vector<NamedTensor> named = {{"q", params->position.q}, {"b1", params->position.b1},
                                              {"p", params->position.p}, {"b2", params->position.b2}};
            randomize(named, rng, p);
            p.output = [params, x] { return position_ffn(x, params->position); };
            return p;
        };
        t["multi_head_attention"] = [](Rng& rng, std::size_t) {
            const auto c = small_layer(LayerKind::Transformer, NormPlacement::PostNorm);
            auto params = std::make_shared<LayerParams>(init_layer_params(c, rng));
            Problem p;
            Tensor x = add_input(p, "x", random_leaf({c.n, c.d}, rng));
            std::vector<NamedTensor> named;
            for (std::size_t i = 0; i < params->attention.size(); ++i) {
                named.push_back({fmt::format("h{}.wq", i), params->attention[i].wq});
                named.push_back({fmt::format("h{}.wk", i), params->attention[i].wk});
                named.push_back({fmt::format("h{}.wv", i), params->attention[i].wv});
            }
            randomize(named, rng, p);
            p.output = [params, x] { return multi_head_attention(x, params->attention); };
            return p;
        };
        t["tiny_attention"] = [](Rng& rng, std::size_t) {
            const auto c = small_layer(LayerKind::TinyAttOnly, NormPlacement::PostNorm);
            auto params = std::make_shared<LayerParams>(init_layer_params(c, rng));
            Problem p;
            Tensor x = add_input(p, "x", random_leaf({c.n, c.d}, rng));
            std::vector<NamedTensor> named = {{"wq", params->tiny.wq}, {"wk", params->tiny.wk}};
            randomize(named, rng, p);
            p.output = [params, x] { return tiny_attention(x, params->tiny); };
            return p;
        };
        t["square_mixing"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor x = add_input(p, "x", random_leaf({5, 4}, rng));
            Tensor s = add_input(p, "s", random_leaf({5, 5}, rng));
            p.output = [x, s] { return square_mixing(x, s); };
            return p;
        };
        for (auto kind : {LayerKind::Transformer, LayerKind::Mlp, LayerKind::MlpTinyAtt, LayerKind::TinyAttOnly,
                          LayerKind::SquareMlp}) {
            t[std::string(to_string(kind))] = layer_builder(kind);
        }
        for (const char* head : {"mlm_head", "itm_head", "vqa_head", "nlvr2_head", "model"}) t[head] = model_builder(head);
        t["mlm_loss"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor x = add_input(p, "logits", random_leaf({4, 6}, rng, 2.0));
            std::vector<int> labels = {kIgnoreLabel, static_cast<int>(rng.below(6)), kIgnoreLabel,
                                       static_cast<int>(rng.below(6))};
            p.output = [x, labels] { return mlm_loss(x, labels); };
            return p;
        };
        t["itm_loss"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor x = add_input(p, "logits", random_leaf({1, 2}, rng, 2.0));
            const int label = static_cast<int>(rng.below(2));
            p.output = [x, label] { return itm_loss(x, label); };
            return p;
        };
        t["vqa_loss"] = [](Rng& rng, std::size_t) {
            Problem p;
            Tensor x = add_input(p, "logits", random_leaf({1, 5}, rng, 2.0));
            std::vector<double> targets(5);
            for (auto& v : targets) v = rng.uniform();
            p.output = [x, targets] { return vqa_loss(x, targets); };
            return p;
        };
        return t;
    }();
    return table;
}

}  // namespace

std::vector<std::string> gradcheck_targets() {
    std::vector<std::string> names;
    for (const auto& [name, builder] : builders()) names.push_back(name);
    return names;
}

GradCheckResult run_gradcheck(std::string_view target, std::size_t seeds, std::uint64_t base_seed,
                              const GradCheckOptions& options) {
    const auto it = builders().find(std::string(target));
    if (it == builders().end()) {
        throw ConfigError(fmt::format("unknown gradcheck target '{}'; expected one of: {}", target,
                                      fmt::format("{}", fmt::join(gradcheck_targets(), ", "))));
    }
    GradCheckResult total;
    for (std::size_t s = 0; s < seeds; ++s) {
        Rng rng = Rng::derive(base_seed, s);
        Problem p = it->second(rng, s);
        const Tensor probe = p.output();
        const Tensor weights = random_leaf(probe.shape(), rng).detach();
        auto fn = [&p, weights] { return sum(mul(weights, p.output())); };
        const auto r = check_gradients(fn, p.inputs, p.labels, options);
        if (total.checks == 0 || r.max_relative_error > total.max_relative_error) {
            total.max_relative_error = r.max_relative_error;
            total.worst = fmt::format("seed {} {}", s, r.worst);
        }
        total.checks += r.checks;
    }
    return total;
}

}  // namespace mvil
