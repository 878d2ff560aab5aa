#include "swav/model.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

using namespace swav;
using swav::testing::TempDir;

namespace {

Vocabulary small_vocab() { return Vocabulary({{"<oov>", 0}, {"closer", 1}, {"look", 2}, {"we", 3}}); }

}  // namespace

TEST(ModelConfig, PresetsValidateAndRoundTrip) {
    for (const auto& c : {ModelConfig::desk(), ModelConfig::full(), ModelConfig::tiny()}) {
        EXPECT_NO_THROW(c.validate());
        EXPECT_EQ(model_config_from_json(to_json(c)), c);
    }
    EXPECT_EQ(ModelConfig::full().aggregator.num_layers, 8u);
    EXPECT_EQ(ModelConfig::full().aggregator.num_heads, 8u);
    EXPECT_EQ(ModelConfig::full().aggregator.model_dim, 768u);
    EXPECT_EQ(ModelConfig::desk().aggregator.num_layers, 2u);
    EXPECT_EQ(ModelConfig::desk().aggregator.model_dim, 64u);
}

TEST(ModelConfig, PresetWithOverridesAndUnknownKeys) {
    const auto c = model_config_from_json({{"preset", "tiny"}, {"aggregator", {{"num_layers", 1}}}});
    EXPECT_EQ(c.aggregator.num_layers, 1u);
    EXPECT_EQ(c.aggregator.model_dim, ModelConfig::tiny().aggregator.model_dim);
    EXPECT_THROW(model_config_from_json({{"aggregator", {{"layers", 1}}}}), ConfigError);
    EXPECT_THROW(model_config_from_json({{"optimizer", {}}}), ConfigError);
    EXPECT_THROW(model_config_from_json({{"preset", "huge"}}), ConfigError);
    EXPECT_THROW(model_config_from_json({{"aggregator", {{"model_dim", 10}, {"num_heads", 3}}}}), ConfigError);
}

TEST(InitModel, DeterministicNamesAndFrozenTokenTable) {
    const auto a = init_model(ModelConfig::tiny(), small_vocab(), 3);
    const auto b = init_model(ModelConfig::tiny(), small_vocab(), 3);
    const auto c = init_model(ModelConfig::tiny(), small_vocab(), 4);
    EXPECT_TRUE(a.params.values_equal(b.params));
    EXPECT_FALSE(a.params.values_equal(c.params));
    EXPECT_FALSE(a.params.trainable("enc.token_table"));
    EXPECT_EQ(a.params.value("enc.token_table").rows(), 4u);
    for (double v : a.params.value("enc.token_table").values()) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
    for (const char* name : {"enc.frame_proj.weight", "enc.view_table", "enc.temporal_table", "enc.modality_frame",
                             "enc.modality_text", "enc.cls", "agg.pos_table", "agg.layer0.attn.q.weight",
                             "agg.layer1.ffn.out.bias", "agg.final_ln.gamma", "head.out.weight"}) {
        EXPECT_TRUE(a.params.contains(name)) << name;
    }
    for (double v : a.params.value("agg.layer0.ln1.gamma").values()) EXPECT_EQ(v, 1.0);
    for (double v : a.params.value("head.fc0.bias").values()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(a.params.value("enc.view_table").rows(), 2u);
    EXPECT_LT(a.params.parameter_count(true), a.params.parameter_count(false));
}

TEST(InitModel, TableStdMatchesConfig) {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.encoder.max_bins = 4000;
    cfg.encoder.table_init_std = 0.25;
    const auto m = init_model(cfg, small_vocab(), 1);
    const auto& t = m.params.value("enc.temporal_table").values();
    double mean = 0.0, sq = 0.0;
    for (double v : t) mean += v;
    mean /= static_cast<double>(t.size());
    for (double v : t) sq += (v - mean) * (v - mean);
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(t.size())), 0.25, 0.01);
    EXPECT_NEAR(mean, 0.0, 0.01);
}

TEST(ParamStore, CloneIsDeep) {
    const auto a = init_model(ModelConfig::tiny(), small_vocab(), 3);
    auto b = a.clone();
    EXPECT_TRUE(a.params.values_equal(b.params));
    b.params.value("enc.cls")(0, 0) += 1.0;
    EXPECT_FALSE(a.params.values_equal(b.params));
}

TEST(Checkpoint, RoundTripBitExact) {
    TempDir dir("ckpt");
    auto m = init_model(ModelConfig::tiny(), small_vocab(), 17);
    CheckpointMeta meta;
    meta.history = {{"best_epoch", 3}};
    meta.run_config = {{"window", {{"delta_s", 2.0}}}};
    save_checkpoint(dir / "m.ckpt", m, meta);
    CheckpointMeta back_meta;
    const auto back = load_checkpoint(dir / "m.ckpt", &back_meta);
    EXPECT_EQ(back.config, m.config);
    EXPECT_EQ(back.vocab, m.vocab);
    EXPECT_EQ(back.seed, 17u);
    EXPECT_EQ(back.component, Component::Detector);
    EXPECT_TRUE(back.params.values_equal(m.params));
    EXPECT_FALSE(back.params.trainable("enc.token_table"));
    EXPECT_EQ(back_meta.history, meta.history);
    EXPECT_EQ(back_meta.run_config, meta.run_config);
}

TEST(Checkpoint, ConfigMismatchAndCorruption) {
    TempDir dir("ckpt2");
    const auto m = init_model(ModelConfig::tiny(), small_vocab(), 1);
    save_checkpoint(dir / "m.ckpt", m);
    ModelConfig other = ModelConfig::tiny();
    other.aggregator.num_layers = 3;
    EXPECT_THROW(load_checkpoint(dir / "m.ckpt", other), ConfigError);
    EXPECT_NO_THROW(load_checkpoint(dir / "m.ckpt", ModelConfig::tiny()));
    {
        std::ofstream f(dir / "bad.ckpt", std::ios::binary);
        f << "garbage!";
    }
    EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), IoError);
    // truncated payload
    {
        std::ifstream in(dir / "m.ckpt", std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), {});
        std::ofstream out(dir / "short.ckpt", std::ios::binary);
        out << all.substr(0, all.size() - 16);
    }
    EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), IoError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}
