#include "swav/view_selector.hpp"
#include "../common/gradcheck.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

using namespace swav;
using swav::testing::TempDir;

namespace {

Vocabulary vocab() {
    return Vocabulary({{"<oov>", 0}, {"cut", 1}, {"the", 2}, {"onion", 3}, {"closer", 4}, {"look", 5}, {"i", 6}});
}

SelectorSample make_sel(std::uint64_t seed, const std::string& next, ViewKind target, std::size_t n_cand = 2) {
    const std::size_t fd = ModelConfig::tiny().encoder.feat_dim;
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> nd;
    SelectorSample ss;
    Sample& s = ss.base;
    s.video_id = "v" + std::to_string(seed);
    s.t = 10.0;
    s.delta = 2.0;
    s.reference_s = 4.0;
    s.past_frame_features = FeatureMatrix(5, fd);
    for (auto& v : s.past_frame_features.values()) v = nd(rng);
    for (std::size_t i = 0; i < 5; ++i) {
        s.past_frame_views.push_back({(rng() & 1) ? ViewKind::Ego : ViewKind::Exo, 1.0});
        s.past_frame_times.push_back(3.0 + 0.5 * static_cast<double>(i));
    }
    s.past_narrations.push_back({{"cut the onion", 4.0, 5.0}, {ViewKind::Exo, 1.0}, 0.5});
    s.next_narration = {next, 6.5};
    s.target = {target, 1.0};
    ss.ego_candidate_features = FeatureMatrix(n_cand, fd);
    ss.exo_candidate_features = FeatureMatrix(n_cand, fd);
    for (auto& v : ss.ego_candidate_features.values()) v = nd(rng) + 1.0f;
    for (auto& v : ss.exo_candidate_features.values()) v = nd(rng) - 1.0f;
    return ss;
}

ModelConfig sel_cfg() { return selector_config(ModelConfig::tiny(), 4); }

}  // namespace

TEST(Selector, CandidateCountAndConfig) {
    WindowConfig w;
    EXPECT_EQ(candidate_token_count(w), 16u);
    const auto c = selector_config(ModelConfig::tiny(), 16);
    EXPECT_EQ(c.aggregator.candidate_rows, 16u);
    EXPECT_EQ(c.aggregator.model_dim, ModelConfig::tiny().aggregator.model_dim);
}

TEST(Selector, LogitsShapeAndCandidateSwap) {
    const auto det = init_model(ModelConfig::tiny(), vocab(), 1);
    const auto sel = init_from_detector(det, sel_cfg(), 2);
    auto ss = make_sel(3, "closer look", ViewKind::Ego);
    const auto logits = selector_logits(sel, ss);
    EXPECT_EQ(logits.rows(), 1u);
    EXPECT_EQ(logits.cols(), 2u);
    const auto len = EncoderBank(sel).assemble(ss).length();
    std::swap(ss.ego_candidate_features, ss.exo_candidate_features);
    EXPECT_EQ(EncoderBank(sel).assemble(ss).length(), len);
    const auto p = selector_forward(sel, ss);
    EXPECT_NEAR(p.probs[0] + p.probs[1], 1.0, 1e-12);
}

TEST(Selector, InitFromDetectorCopiesTensors) {
    const auto det = init_model(ModelConfig::tiny(), vocab(), 1);
    const auto sel = init_from_detector(det, sel_cfg(), 2);
    EXPECT_EQ(sel.component, Component::Selector);
    for (const auto& name : det.params.names()) {
        if (name == "agg.pos_table") continue;
        EXPECT_EQ(sel.params.value(name), det.params.value(name)) << name;
    }
    const auto& dp = det.params.value("agg.pos_table");
    const auto& sp = sel.params.value("agg.pos_table");
    ASSERT_EQ(sp.rows(), dp.rows() + 4);
    for (std::size_t r = 0; r < dp.rows(); ++r)
        for (std::size_t c = 0; c < dp.cols(); ++c) EXPECT_EQ(sp(r, c), dp(r, c));

    // longer max_seq_len: extra rows fresh, the rest copied
    ModelConfig longer = sel_cfg();
    longer.aggregator.max_seq_len += 5;
    const auto sel2 = init_from_detector(det, longer, 2);
    const auto& lp = sel2.params.value("agg.pos_table");
    ASSERT_EQ(lp.rows(), dp.rows() + 5 + 4);
    for (std::size_t r = 0; r < dp.rows(); ++r)
        for (std::size_t c = 0; c < dp.cols(); ++c) EXPECT_EQ(lp(r, c), dp(r, c));
    double extra = 0.0;
    for (std::size_t r = dp.rows(); r < lp.rows(); ++r)
        for (std::size_t c = 0; c < lp.cols(); ++c) extra += std::abs(lp(r, c));
    EXPECT_GT(extra, 0.0);

    ModelConfig wider = sel_cfg();
    wider.aggregator.model_dim = 16;
    EXPECT_THROW(init_from_detector(det, wider, 2), ConfigError);
    ModelConfig deeper = sel_cfg();
    deeper.aggregator.num_layers = 3;
    EXPECT_THROW(init_from_detector(det, deeper, 2), ConfigError);
}

TEST(Selector, FromScratchSharesOnlyFrozenTensors) {
    const auto det = init_model(ModelConfig::tiny(), vocab(), 1);
    const auto sel = init_selector_from_scratch(det, sel_cfg(), 99);
    EXPECT_EQ(sel.params.value("enc.token_table"), det.params.value("enc.token_table"));
    EXPECT_NE(sel.params.value("head.out.weight"), det.params.value("head.out.weight"));
}

TEST(Selector, IgnoredCandidatesReproduceDetector) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto det = init_model(ModelConfig::tiny(), vocab(), seed);
        const auto sel = init_from_detector(det, sel_cfg(), seed + 10);
        const auto ss = make_sel(seed, "cut the onion", ViewKind::Ego);
        const auto d = detector_forward(det, ss.base);
        const auto s = selector_forward(sel, ss, {}, true);
        EXPECT_NEAR(s.logits[0], d.logits[0], 1e-12);
        EXPECT_NEAR(s.logits[1], d.logits[1], 1e-12);
        const auto visible = selector_forward(sel, ss);
        EXPECT_GT(std::abs(visible.logits[0] - d.logits[0]) + std::abs(visible.logits[1] - d.logits[1]), 1e-9);
    }
}

TEST(NarrationRules, Examples) {
    EXPECT_EQ(narration_pseudo_label("now take a closer look at the stitch").kind, ViewKind::Ego);
    EXPECT_EQ(narration_pseudo_label("I'm going to show you the setup").kind, ViewKind::Exo);
    EXPECT_EQ(narration_pseudo_label("").kind, ViewKind::Exo);
    EXPECT_EQ(narration_pseudo_label("stir slowly").kind, ViewKind::Exo);
}

TEST(JointLoss, DecomposesExactly) {
    const auto det = init_model(ModelConfig::tiny(), vocab(), 1);
    const auto sel = init_from_detector(det, sel_cfg(), 2);
    std::vector<SelectorSample> batch{make_sel(1, "closer look", ViewKind::Exo), make_sel(2, "i cut", ViewKind::Ego),
                                      make_sel(3, "", ViewKind::Ego)};
    for (const auto& s : batch) {
        const auto plain = selector_loss(sel, s, s.base.target.kind, std::nullopt);
        const auto zero = selector_loss(sel, s, s.base.target.kind, JointFinetuneConfig{0.0, {}});
        EXPECT_EQ(zero.total.value()(0, 0), plain.total.value()(0, 0));
        const auto j = selector_loss(sel, s, s.base.target.kind, JointFinetuneConfig{0.3, {}});
        EXPECT_NEAR(j.total.value()(0, 0), j.selection + 0.3 * j.narration, 1e-12);
        EXPECT_EQ(j.selection, plain.selection);
    }
    const auto plain = selector_batch_loss(sel, batch, std::nullopt);
    const auto joint = selector_batch_loss(sel, batch, JointFinetuneConfig{0.3, {}});
    EXPECT_NEAR(joint[0] - plain[0], 0.3 * joint[2], 1e-12);
    EXPECT_THROW(selector_loss(sel, batch[0], ViewKind::Ego, JointFinetuneConfig{-1.0, {}}), ConfigError);
}

TEST(SelectorGradient, JointLossMatchesFiniteDifferences) {
    const auto det = init_model(ModelConfig::tiny(), vocab(), 4);
    auto sel = init_from_detector(det, sel_cfg(), 5);
    const auto a = make_sel(1, "closer look", ViewKind::Exo);
    const auto b = make_sel(2, "i cut the onion", ViewKind::Ego);
    const JointFinetuneConfig joint{0.3, {}};
    const auto errs = swav::testing::grad_check(sel, [&](const ViewModel& m) {
        return ag::scale(ag::add(selector_loss(m, a, ViewKind::Exo, joint).total,
                                 selector_loss(m, b, ViewKind::Ego, joint).total),
                         0.5);
    });
    for (const auto& e : errs) EXPECT_LT(e.rel_error, 1e-4) << e.name;
}

TEST(FinetuneSelector, FrozenTensorsUnchangedAndDeterministic) {
    const auto det = init_model(ModelConfig::tiny(), vocab(), 1);
    std::vector<SelectorSample> train;
    for (std::uint64_t i = 0; i < 12; ++i) {
        train.push_back(make_sel(i, i % 2 ? "closer" : "cut", i % 3 ? ViewKind::Ego : ViewKind::Exo));
    }
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    auto s1 = init_from_detector(det, sel_cfg(), 2);
    auto s2 = s1.clone();
    const auto before = s1.params.value("enc.token_table");
    finetune_selector(s1, train, {}, cfg, JointFinetuneConfig{0.3, {}});
    finetune_selector(s2, train, {}, cfg, JointFinetuneConfig{0.3, {}});
    EXPECT_EQ(s1.params.value("enc.token_table"), before);
    EXPECT_TRUE(s1.params.values_equal(s2.params));
    EXPECT_THROW(finetune_selector(s1, {}, {}, cfg), ValidationError);
}

TEST(SubsampleLabels, StratifiedDeterministicOrdered) {
    std::vector<SelectorSample> all;
    for (std::uint64_t i = 0; i < 40; ++i) {
        auto s = make_sel(i, "cut", ViewKind::Ego);
        s.base.video_id = "v" + std::to_string(100 + i);
        // 10 switches, 30 same-view
        const ViewKind last = s.base.past_frame_views.back().kind;
        s.base.target.kind = i < 10 ? other(last) : last;
        all.push_back(s);
    }
    const auto a = subsample_labels(all, 20, 7);
    const auto b = subsample_labels(all, 20, 7);
    ASSERT_EQ(a.size(), 20u);
    std::vector<std::string> ia, ib;
    for (const auto& s : a) ia.push_back(s.base.video_id);
    for (const auto& s : b) ib.push_back(s.base.video_id);
    EXPECT_EQ(ia, ib);
    EXPECT_TRUE(std::is_sorted(ia.begin(), ia.end()));
    EXPECT_EQ(std::count_if(a.begin(), a.end(), [](const SelectorSample& s) { return s.base.is_switch(); }), 5);
    EXPECT_EQ(subsample_labels(all, 100, 7).size(), 40u);
}

TEST(LimitedLabels, RoundTripAndErrors) {
    TempDir dir("labels");
    const std::vector<LimitedLabel> labels{{"a", 10.0, ViewKind::Ego}, {"b", 12.5, ViewKind::Exo}};
    write_limited_labels(dir / "l.jsonl", labels);
    EXPECT_EQ(load_limited_labels(dir / "l.jsonl"), labels);
    {
        std::ofstream f(dir / "bad.jsonl");
        f << R"({"video_id":"a","t":1.0,"target_kind":"ego"})" << '\n'
          << R"({"video_id":"a","t":1.0,"target_kind":"side"})" << '\n';
    }
    try {
        load_limited_labels(dir / "bad.jsonl");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
    {
        std::ofstream f(dir / "extra.jsonl");
        f << R"({"video_id":"a","t":1.0,"target_kind":"ego","note":1})" << '\n';
    }
    EXPECT_THROW(load_limited_labels(dir / "extra.jsonl"), ParseError);

    auto r = swav::testing::make_record("a", 30.0, 4.0, 4, {{0.0, ViewKind::Exo}});
    r.ego_features = r.frame_features;
    r.exo_features = r.frame_features;
    WindowConfig w;
    w.past_frame_s = 4.0;
    const auto ss = build_selector_samples({r}, {{"a", 10.0, ViewKind::Ego}}, w);
    ASSERT_EQ(ss.size(), 1u);
    EXPECT_EQ(ss[0].base.target.kind, ViewKind::Ego);
    EXPECT_EQ(ss[0].ego_candidate_features.rows(), 8u);
    EXPECT_THROW(build_selector_samples({r}, {{"zzz", 10.0, ViewKind::Ego}}, w), ValidationError);
}
