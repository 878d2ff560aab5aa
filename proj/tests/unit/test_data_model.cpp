#include "swav/data_model.hpp"
#include "swav/vocabulary.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <fstream>

using namespace swav;
using swav::testing::make_record;
using swav::testing::TempDir;

namespace {

void write_line(std::ofstream& f, const nlohmann::json& j) { f << j.dump() << '\n'; }

nlohmann::json manifest_entry(const std::string& id, const std::string& feat, double duration, double fps) {
    return {{"video_id", id},
            {"duration_s", duration},
            {"fps", fps},
            {"features", feat},
            {"narrations", nlohmann::json::array({{{"text", "cut the onion"}, {"begin_s", 1.0}, {"end_s", 3.0}}})},
            {"views", nlohmann::json::array({{{"begin_s", 0.0}, {"end_s", duration}, {"kind", "exo"}, {"prob", 1.0}}})}};
}

}  // namespace

TEST(Manifest, SingleLineTenSecondsAtFourFps) {
    TempDir dir("manifest1");
    write_feature_file(dir / "a.swavft", FeatureMatrix(40, 3, 0.5f));
    {
        std::ofstream f(dir / "m.jsonl");
        write_line(f, manifest_entry("a", "a.swavft", 10.0, 4.0));
    }
    const auto recs = load_manifest(dir / "m.jsonl");
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].num_frames(), 40u);
    EXPECT_EQ(recs[0].feat_dim(), 3u);
    EXPECT_EQ(recs[0].narrations.at(0).text, "cut the onion");
}

TEST(Manifest, NarrationEndBeforeBeginIsValidationError) {
    TempDir dir("manifest2");
    write_feature_file(dir / "a.swavft", FeatureMatrix(40, 3));
    auto e = manifest_entry("a", "a.swavft", 10.0, 4.0);
    e["narrations"][0]["end_s"] = 1.0;
    {
        std::ofstream f(dir / "m.jsonl");
        write_line(f, e);
    }
    EXPECT_THROW(load_manifest(dir / "m.jsonl"), ValidationError);
}

TEST(Manifest, MissingFeatureFileNamesTheVideo) {
    TempDir dir("manifest3");
    write_feature_file(dir / "a.swavft", FeatureMatrix(40, 3));
    write_feature_file(dir / "c.swavft", FeatureMatrix(40, 3));
    {
        std::ofstream f(dir / "m.jsonl");
        write_line(f, manifest_entry("a", "a.swavft", 10.0, 4.0));
        write_line(f, manifest_entry("b", "missing.swavft", 10.0, 4.0));
        write_line(f, manifest_entry("c", "c.swavft", 10.0, 4.0));
    }
    try {
        load_manifest(dir / "m.jsonl");
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
    }
    const auto partial = load_manifest_partial(dir / "m.jsonl");
    ASSERT_EQ(partial.records.size(), 2u);
    EXPECT_EQ(partial.records[0].video_id, "a");
    EXPECT_EQ(partial.records[1].video_id, "c");
    ASSERT_EQ(partial.failures.size(), 1u);
    EXPECT_EQ(partial.failures[0].video_id, "b");
    EXPECT_EQ(partial.failures[0].kind, "io_error");
    EXPECT_EQ(partial.failures[0].line, 2u);
}

TEST(Manifest, MalformedJsonReportsLine) {
    TempDir dir("manifest4");
    write_feature_file(dir / "a.swavft", FeatureMatrix(40, 3));
    {
        std::ofstream f(dir / "m.jsonl");
        write_line(f, manifest_entry("a", "a.swavft", 10.0, 4.0));
        f << "{not json\n";
    }
    try {
        load_manifest(dir / "m.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(Manifest, RoundTripPreservesRecords) {
    TempDir dir("manifest5");
    auto a = make_record("v1", 12.0, 4.0, 5, {{0.0, ViewKind::Exo}, {4.0, ViewKind::Ego}, {9.0, ViewKind::Exo}});
    a.narrations = {{"first step", 0.5, 2.0}, {"now closer", 4.5, 6.0}};
    auto b = make_record("v2", 8.0, 2.0, 5, {{0.0, ViewKind::Ego}}, 9);
    b.scenario.reset();
    b.ego_features = FeatureMatrix(16, 5, 1.0f);
    b.exo_features = FeatureMatrix(16, 5, -1.0f);
    write_manifest(dir / "m.jsonl", {a, b}, dir / "features");
    const auto back = load_manifest(dir / "m.jsonl");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0], a);
    EXPECT_EQ(back[1], b);
    EXPECT_TRUE(back[1].is_multi_view());
}

TEST(FeatureFile, RejectsBadMagic) {
    TempDir dir("feat");
    {
        std::ofstream f(dir / "x.swavft", std::ios::binary);
        f << "NOTAFEATFILE....";
    }
    EXPECT_THROW(read_feature_file(dir / "x.swavft"), IoError);
}

TEST(ExtractSample, NextNarrationOverlappingIntervalIsUsed) {
    auto r = make_record("v", 40.0, 4.0, 3, {{0.0, ViewKind::Exo}});
    const double t = 20.0;
    r.narrations = {{"pour the water", t + 1.0, t + 5.0}};
    WindowConfig w;
    const auto s = extract_sample(r, t, w);
    EXPECT_EQ(s.next_narration.text, "pour the water");
}

TEST(ExtractSample, NarrationAfterIntervalGivesEmptyText) {
    auto r = make_record("v", 40.0, 4.0, 3, {{0.0, ViewKind::Exo}});
    const double t = 20.0;
    r.narrations = {{"later", t + 3.0, t + 5.0}};
    const auto s = extract_sample(r, t, WindowConfig{});
    EXPECT_EQ(s.next_narration.text, "");
}

TEST(ExtractSample, TimesRelativeToEarliestPastNarration) {
    auto r = make_record("v", 120.0, 100.0, 2, {{0.0, ViewKind::Exo}});
    r.narrations = {{"start here", 100.0, 101.0}};
    WindowConfig w;
    w.past_frame_s = 8.0;
    w.sample_rate = 100.0;
    const double t = 104.0;
    const auto s = extract_sample(r, t, w);
    EXPECT_DOUBLE_EQ(s.reference_s, 100.0);
    // frame at absolute 103.27 s
    bool found = false;
    for (std::size_t i = 0; i < s.past_frame_times.size(); ++i) {
        if (std::abs(s.past_frame_times[i] + 100.0 - 103.27) < 1e-9) {
            EXPECT_NEAR(s.past_frame_times[i], 3.27, 1e-9);
            found = true;
        }
    }
    EXPECT_TRUE(found);
}

TEST(ExtractSample, FrameWindowAndSwitchFlag) {
    const auto r = make_record("v", 30.0, 4.0, 3, {{0.0, ViewKind::Exo}, {10.0, ViewKind::Ego}});
    WindowConfig w;
    w.past_frame_s = 8.0;
    const auto s = extract_sample(r, 10.0, w);
    EXPECT_EQ(s.past_frame_features.rows(), 32u);
    EXPECT_EQ(s.past_frame_views.back().kind, ViewKind::Exo);
    EXPECT_EQ(s.target.kind, ViewKind::Ego);
    EXPECT_TRUE(s.is_switch());
    const auto s2 = extract_sample(r, 14.0, w);
    EXPECT_FALSE(s2.is_switch());
}

TEST(ExtractSample, DeterministicAndTranslationInvariant) {
    auto r = make_record("v", 60.0, 4.0, 3, {{0.0, ViewKind::Exo}, {30.0, ViewKind::Ego}});
    r.narrations = {{"a b", 12.0, 14.0}, {"c d", 20.0, 22.5}, {"e", 31.0, 33.0}};
    WindowConfig w;
    const auto s1 = extract_sample(r, 30.0, w);
    const auto s2 = extract_sample(r, 30.0, w);
    EXPECT_EQ(s1, s2);

    // Shift the whole record by 8 s (prepend 32 frames of the first view).
    VideoRecord shifted = r;
    const double shift = 8.0;
    shifted.duration_s += shift;
    FeatureMatrix feats(r.num_frames() + 32, 3);
    for (std::size_t i = 0; i < r.num_frames(); ++i) {
        for (std::size_t c = 0; c < 3; ++c) feats(i + 32, c) = r.frame_features(i, c);
    }
    shifted.frame_features = feats;
    for (auto& n : shifted.narrations) {
        n.begin_s += shift;
        n.end_s += shift;
    }
    auto track = *r.view_track;
    for (auto& sp : track) {
        sp.begin_s += shift;
        sp.end_s += shift;
    }
    track.front().begin_s = 0.0;
    shifted.view_track = track;
    const auto s3 = extract_sample(shifted, 30.0 + shift, w);
    EXPECT_EQ(s3.past_frame_times, s1.past_frame_times);
    ASSERT_EQ(s3.past_narrations.size(), s1.past_narrations.size());
    for (std::size_t i = 0; i < s1.past_narrations.size(); ++i) {
        EXPECT_DOUBLE_EQ(s3.past_narrations[i].rel_mean_time, s1.past_narrations[i].rel_mean_time);
    }
    EXPECT_DOUBLE_EQ(s3.next_narration.rel_mean_time, s1.next_narration.rel_mean_time);
}

TEST(ExtractSample, InsufficientContextRejected) {
    const auto r = make_record("v", 30.0, 4.0, 3, {{0.0, ViewKind::Exo}});
    try {
        extract_sample(r, 0.0, WindowConfig{});
        FAIL();
    } catch (const SampleRejected& e) {
        EXPECT_EQ(e.reason(), SampleRejected::Reason::InsufficientContext);
    }
}

TEST(NarrationView, MajorityTieAndSingleShot) {
    // 1 fps: frames at 0..7 s.
    auto r = make_record("v", 8.0, 1.0, 2, {{0.0, ViewKind::Ego}, {6.0, ViewKind::Exo}});
    EXPECT_EQ(narration_view(r, {"x", 0.0, 7.5}).kind, ViewKind::Ego);  // 6 ego, 2 exo
    auto tie = make_record("v", 8.0, 1.0, 2, {{0.0, ViewKind::Ego}, {4.0, ViewKind::Exo}});
    EXPECT_EQ(narration_view(tie, {"x", 0.0, 7.5}).kind, ViewKind::Exo);  // 4 / 4
    EXPECT_EQ(narration_view(tie, {"x", 0.0, 7.5}, ViewKind::Ego).kind, ViewKind::Ego);
    EXPECT_EQ(narration_view(r, {"x", 6.2, 7.9}).kind, ViewKind::Exo);
}

TEST(Validate, RejectsBrokenRecords) {
    auto r = make_record("v", 10.0, 4.0, 2, {{0.0, ViewKind::Exo}});
    EXPECT_NO_THROW(validate(r));
    auto bad = r;
    bad.fps = 0.0;
    EXPECT_THROW(validate(bad), ValidationError);
    bad = r;
    bad.frame_features = FeatureMatrix(10, 2);
    EXPECT_THROW(validate(bad), ValidationError);
    bad = r;
    bad.narrations = {{"b", 5.0, 6.0}, {"a", 1.0, 2.0}};
    EXPECT_THROW(validate(bad), ValidationError);
}

TEST(Vocabulary, FrequencyOrderAndOov) {
    auto r = make_record("v", 10.0, 4.0, 2, {{0.0, ViewKind::Exo}});
    r.narrations = {{"b a a", 0.0, 1.0}, {"c b a", 1.0, 2.0}};
    const auto v = Vocabulary::build({r}, 3);
    EXPECT_EQ(v.size(), 3u);
    EXPECT_EQ(v.tokens()[0], Vocabulary::kOov);
    EXPECT_EQ(v.tokens()[1], "a");
    EXPECT_EQ(v.tokens()[2], "b");
    EXPECT_EQ(v.index("c"), 0);
    EXPECT_EQ(v.encode("A b zzz", 10), (std::vector<int>{1, 2, 0}));
    EXPECT_EQ(Vocabulary::from_json(v.to_json()), v);
    EXPECT_EQ(tokenize("I'm  going, NOW!"), (std::vector<std::string>{"i'm", "going", "now"}));
}
