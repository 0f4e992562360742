#include "support.hpp"

#include "mvil/config.hpp"
#include "mvil/errors.hpp"
#include "mvil/train.hpp"

using namespace mvil;

TEST_SUITE("key-value files") {
    TEST_CASE("comments, blank lines and later assignments") {
        const auto kv = KeyValueConfig::parse("# comment\n\nd = 16\n  layers=3  \nd = 24\n");
        CHECK(kv.get_size("d", 0) == 24u);
        CHECK(kv.get_size("layers", 0) == 3u);
        CHECK(kv.get_size("missing", 7) == 7u);
    }

    TEST_CASE("overrides replace values") {
        auto kv = KeyValueConfig::parse("d = 16\n");
        kv.apply_override("d=32");
        kv.apply_override("pooling = average");
        CHECK(kv.get_size("d", 0) == 32u);
        CHECK(kv.get_string("pooling", "") == "average");
        CHECK_THROWS_AS(kv.apply_override("no_equals_sign"), ConfigError);
    }

    TEST_CASE("malformed values are config errors") {
        const auto kv = KeyValueConfig::parse("d = sixteen\nrate = 0.1x\nflag = maybe\nneg = -3\n");
        CHECK_THROWS_AS(kv.get_size("d", 0), ConfigError);
        CHECK_THROWS_AS(kv.get_double("rate", 0), ConfigError);
        CHECK_THROWS_AS(kv.get_bool("flag", false), ConfigError);
        CHECK_THROWS_AS(kv.get_size("neg", 0), ConfigError);
        CHECK_THROWS_AS(KeyValueConfig::parse("just a line\n"), ConfigError);
    }

    TEST_CASE("serialize round-trips") {
        const auto kv = KeyValueConfig::parse("b = 2\na = x y\nc = 1e-5\n");
        CHECK(KeyValueConfig::parse(kv.serialize()).entries() == kv.entries());
    }
}

TEST_SUITE("model configs") {
    TEST_CASE("reference setup has n = 288 and the stated widths") {
        const auto s = reference_setup(LayerKind::Transformer);
        CHECK(s.model.seq_len() == 288u);
        CHECK(s.model.fusion_layers.size() == 6u);
        const auto& l = s.model.fusion_layers.front();
        CHECK(l.d == 1024u);
        CHECK(l.heads == 16u);
        CHECK(l.k == 64u);
        CHECK(l.h == 4096u);
        CHECK(reference_setup(LayerKind::MlpTinyAtt).model.fusion_layers.front().k == 64u);
    }

    TEST_CASE("echo round-trips through key-values") {
        auto s = reference_setup(LayerKind::MlpTinyAtt, 2);
        s.model.pooling = Pooling::Average;
        s.model.heads.nlvr2 = true;
        s.model.fusion_layers[1].norm_placement = NormPlacement::PreNorm;
        s.model.fusion_layers[1].activation = Activation::Identity;
        const auto back = model_config_from(KeyValueConfig::parse(to_key_values(s.model).serialize()));
        CHECK(to_key_values(back).serialize() == to_key_values(s.model).serialize());
        CHECK(back.fusion_layers[1].norm_placement == NormPlacement::PreNorm);
        CHECK(back.pooling == Pooling::Average);
    }

    TEST_CASE("explicit fusion list builds a mixed stack") {
        auto kv = KeyValueConfig::parse("d = 8\nvocab_size = 5\nanswer_vocab_size = 3\ntext_len = 2\ngrid_rows = 1\n"
                                        "grid_cols = 2\npatch_dim = 3\nattention_heads = 2\nfusion = Mlp,Transformer\n");
        const auto s = model_setup_from(kv);
        REQUIRE(s.model.fusion_layers.size() == 2u);
        CHECK(s.model.fusion_layers[1].kind == LayerKind::Transformer);
        CHECK(s.model.fusion_layers[1].k == 4u);
        CHECK(s.model.fusion_layers[0].n == 5u);
        kv.set("fusion", "Mlp,Nope");
        CHECK_THROWS_AS(model_setup_from(kv), ConfigError);
    }
}

TEST_SUITE("run configs") {
    TEST_CASE("defaults and task-derived dimensions") {
        const auto run = run_config_from(KeyValueConfig::parse("alphabet_size = 3\ngrid_rows = 2\ngrid_cols = 3\n"));
        CHECK(run.fusion_optimizer.lr == 5e-5);
        CHECK(run.encoder_optimizer.lr == 1e-5);
        CHECK(run.model().vocab_size == 2u + 2u * 3u);
        CHECK(run.model().answer_vocab_size == 7u);
        CHECK(run.model().text_len == 4u);
        CHECK(run.model().patch_dim == 3u);
        CHECK(run.model().seq_len() == 1u + 4u + 6u);
    }

    TEST_CASE("unknown and inconsistent keys are rejected") {
        CHECK_THROWS_AS(run_config_from(KeyValueConfig::parse("lr = 0.1\n")), ConfigError);
        CHECK_THROWS_AS(run_config_from(KeyValueConfig::parse("vocab_size = 99\n")), ConfigError);
        CHECK_THROWS_AS(run_config_from(KeyValueConfig::parse("batch_size = 1\n")), ConfigError);
        CHECK_THROWS_AS(run_config_from(KeyValueConfig::parse("train_size = 4\nbatch_size = 8\n")), ConfigError);
        CHECK_THROWS_AS(run_config_from(KeyValueConfig::parse("attention_heads = 3\nfusion_kind = Transformer\n")), ConfigError);
    }
}
