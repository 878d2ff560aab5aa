#include "swav/synth_corpus.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace swav;

namespace {

bool has_token(const std::string& text, const std::string& tok) {
    const auto words = tokenize(text);
    return std::find(words.begin(), words.end(), tok) != words.end();
}

std::string narration_in(const VideoRecord& r, double begin, double end) {
    std::string out;
    for (const auto& n : r.narrations) {
        if (n.begin_s >= begin && n.end_s <= end) out += n.text + " ";
    }
    return out;
}

}  // namespace

TEST(SynthCorpus, SameSeedIsBitIdentical) {
    for (const auto& g : {SwitchGrammar::deterministic_toggle(), SwitchGrammar::split_cues()}) {
        const auto a = generate_corpus(g, 5, 17);
        const auto b = generate_corpus(g, 5, 17);
        ASSERT_EQ(a.records.size(), 5u);
        EXPECT_EQ(a.records, b.records);
        const auto c = generate_corpus(g, 5, 18);
        EXPECT_NE(a.records, c.records);
    }
}

TEST(SynthCorpus, CueTokenPrecedesEverySetEgoSegment) {
    SwitchGrammar g;
    g.cue_rules = {{{"closer"}, CueAction::SetEgo, 0.3, CueChannel::NextNarration},
                   {{"wide"}, CueAction::SetExo, 0.3, CueChannel::NextNarration}};
    g.hazard = 0.0;
    const auto corpus = generate_corpus(g, 40, 5);
    std::size_t checked = 0;
    for (const auto& r : corpus.records) {
        ASSERT_TRUE(r.view_track.has_value());
        for (const auto& span : *r.view_track) {
            if (span.begin_s == 0.0) continue;  // initial view has no cue
            const auto text = narration_in(r, span.begin_s, span.begin_s + g.delta_s);
            const auto& tok = span.label.kind == ViewKind::Ego ? "closer" : "wide";
            EXPECT_TRUE(has_token(text, tok)) << r.video_id << " @" << span.begin_s;
            ++checked;
        }
        // cue words never appear without firing
        for (const auto& n : r.narrations) {
            if (has_token(n.text, "closer")) {
                EXPECT_EQ(r.view_at(0.5 * (n.begin_s + n.end_s))->kind, ViewKind::Ego);
            }
        }
    }
    EXPECT_GT(checked, 50u);
}

TEST(SynthCorpus, HazardSwitchRate) {
    const auto corpus = generate_corpus(SwitchGrammar::pure_hazard(0.5), 500, 8);
    std::size_t steps = 0, switches = 0;
    for (const auto& r : corpus.records) {
        const auto slots = static_cast<std::size_t>(std::llround(r.duration_s / 2.0));
        steps += slots - 1;
        switches += r.view_track->size() - 1;
    }
    ASSERT_GE(steps, 10000u);
    EXPECT_NEAR(static_cast<double>(switches) / static_cast<double>(steps), 0.5, 0.02);
}

TEST(SynthCorpus, OracleIsExactWithoutNoise) {
    const auto corpus = generate_corpus(SwitchGrammar::split_cues(), 10, 2);
    std::size_t clips = 0;
    for (const auto& r : corpus.records) {
        for (std::size_t f0 = 0; f0 + 8 <= r.num_frames(); f0 += 8) {
            const ClipView clip{&r, f0, 8, r.frame_time(f0), r.frame_time(f0) + 2.0};
            const double p = corpus.oracle->classify(clip);
            const auto truth = r.view_at(r.frame_time(f0) + 1.0)->kind;
            EXPECT_EQ(p > 0.5 ? ViewKind::Ego : ViewKind::Exo, truth);
            ++clips;
        }
        const auto labels = pseudo_label_video(r, *corpus.oracle, PseudoLabelMode::ClipLevel);
        EXPECT_DOUBLE_EQ(frame_accuracy(labels, r), 1.0);
    }
    EXPECT_GT(clips, 100u);
}

TEST(SynthCorpus, BoundaryNoiseOnlyNearSwitches) {
    auto g = SwitchGrammar::pure_hazard(0.3);
    g.boundary_noise = 1.0;
    g.boundary_window_s = 0.5;
    const auto corpus = generate_corpus(g, 10, 4);
    std::size_t flipped = 0;
    for (const auto& r : corpus.records) {
        std::set<double> bounds;
        for (const auto& s : *r.view_track) bounds.insert(s.begin_s);
        for (std::size_t f0 = 4; f0 + 8 <= r.num_frames(); f0 += 8) {
            const double b = r.frame_time(f0);
            const ClipView clip{&r, f0, 8, b, b + 2.0};
            const double p = corpus.oracle->classify(clip);
            const auto mid = r.view_at(b + 1.0)->kind;
            const bool correct = (p > 0.5) == (mid == ViewKind::Ego);
            bool near = false;
            for (double x : bounds) near |= x > 0.0 && x > b - 0.5 && x < b + 2.5;
            if (!near) {
                EXPECT_TRUE(correct) << r.video_id << " @" << b;
            }
            flipped += !correct;
        }
    }
    EXPECT_GT(flipped, 0u);
}

TEST(SynthCorpus, MultiViewStreams) {
    auto g = SwitchGrammar::split_cues();
    g.multi_view = true;
    const auto corpus = generate_corpus(g, 2, 1);
    const auto& r = corpus.records[0];
    ASSERT_TRUE(r.ego_features && r.exo_features);
    for (std::size_t i = 0; i < r.num_frames(); ++i) {
        const auto kind = r.view_at(r.frame_time(i))->kind;
        const auto& src = kind == ViewKind::Ego ? *r.ego_features : *r.exo_features;
        bool same = true;
        for (std::size_t d = 0; d < r.feat_dim(); ++d) same &= src(i, d) == r.frame_features(i, d);
        // frame cues add an offset to the edited stream only
        if (!same) {
            EXPECT_GT(std::fmod(r.frame_time(i), 2.0), 0.9);
        }
    }
}

TEST(SynthCorpus, GrammarJsonRoundTripAndErrors) {
    const auto g = SwitchGrammar::split_cues();
    const auto back = grammar_from_json(to_json(g));
    EXPECT_EQ(to_json(back), to_json(g));
    EXPECT_EQ(to_json(grammar_from_json({{"preset", "pure_hazard"}, {"hazard", 0.25}})),
              to_json(SwitchGrammar::pure_hazard(0.25)));
    EXPECT_THROW(grammar_from_json({{"bogus", 1}}), ConfigError);
    EXPECT_THROW(grammar_from_json({{"preset", "nope"}}), ConfigError);
    SwitchGrammar empty;
    empty.narration_vocab.clear();
    EXPECT_THROW(generate_corpus(empty, 1, 1), ConfigError);
    SwitchGrammar bad;
    bad.hazard = 1.5;
    EXPECT_THROW(generate_corpus(bad, 1, 1), ConfigError);
    EXPECT_THROW(generate_corpus(SwitchGrammar{}, 0, 1), ConfigError);
}

TEST(SynthCorpus, LimitedLabelsAndVotes) {
    const auto corpus = generate_corpus(SwitchGrammar::split_cues(), 8, 6);
    WindowConfig w;
    const auto a = generate_limited_labels(corpus.records, 30, w, 1);
    EXPECT_EQ(a, generate_limited_labels(corpus.records, 30, w, 1));
    ASSERT_EQ(a.size(), 30u);
    for (const auto& l : a) {
        EXPECT_GE(l.t, w.past_frame_s);
        const auto it = std::find_if(corpus.records.begin(), corpus.records.end(),
                                     [&](const VideoRecord& r) { return r.video_id == l.video_id; });
        ASSERT_NE(it, corpus.records.end());
        EXPECT_EQ(it->view_at(l.t + 1.0)->kind, l.target);
    }
    EXPECT_THROW(generate_limited_labels(corpus.records, 100000, w, 1), ValidationError);

    const auto votes = generate_votes(a, 3);
    ASSERT_EQ(votes.size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(votes[i].votes.size(), 9u);
        EXPECT_EQ(votes[i].instance_id, instance_key(a[i].video_id, a[i].t));
    }
    // perfectly reliable annotators are unanimous
    for (const auto& v : generate_votes(a, 3, 9, 1.0)) {
        EXPECT_TRUE(std::all_of(v.votes.begin(), v.votes.end(), [&](ViewKind k) { return k == v.votes[0]; }));
    }
}
