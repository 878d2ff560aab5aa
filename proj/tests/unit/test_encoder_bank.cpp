#include "swav/encoder_bank.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace swav;

namespace {

Vocabulary vocab() {
    return Vocabulary({{"<oov>", 0}, {"cut", 1}, {"the", 2}, {"onion", 3}, {"closer", 4}, {"look", 5}});
}

ViewModel tiny_model(std::uint64_t seed = 1) { return init_model(ModelConfig::tiny(), vocab(), seed); }

void zero_tables(ViewModel& m) {
    for (const char* n : {"enc.view_table", "enc.temporal_table", "enc.frame_proj.bias", "enc.modality_frame",
                          "enc.modality_text", "enc.null_text", "enc.text_proj.bias"}) {
        m.params.value(n).fill(0.0);
    }
}

Mat row_diff(const Mat& a, const Mat& b) {
    Mat d(1, a.cols());
    for (std::size_t c = 0; c < a.cols(); ++c) d(0, c) = a(0, c) - b(0, c);
    return d;
}

Mat table_row(const ViewModel& m, const char* name, std::size_t r) {
    const auto& t = m.params.value(name);
    Mat out(1, t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) out(0, c) = t(r, c);
    return out;
}

void expect_near(const Mat& a, const Mat& b, double tol = 1e-12) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], tol) << i;
}

Sample sample_with(std::size_t frames, std::size_t past) {
    Sample s;
    s.video_id = "v";
    s.t = 10.0;
    s.delta = 2.0;
    s.past_frame_features = FeatureMatrix(frames, ModelConfig::tiny().encoder.feat_dim, 0.3f);
    for (std::size_t i = 0; i < frames; ++i) {
        s.past_frame_views.push_back({i % 2 ? ViewKind::Ego : ViewKind::Exo, 1.0});
        s.past_frame_times.push_back(0.25 * static_cast<double>(i));
    }
    for (std::size_t k = 0; k < past; ++k) {
        s.past_narrations.push_back({{"cut the onion", 1.0 * k, 1.0 * k + 0.5}, {ViewKind::Ego, 1.0}, 1.0 * k + 0.25});
    }
    s.next_narration = {"closer look", 3.0};
    s.target = {ViewKind::Ego, 1.0};
    return s;
}

}  // namespace

TEST(EncoderBank, ZeroFeatureZeroTablesGivesZero) {
    auto m = tiny_model();
    zero_tables(m);
    const EncoderBank bank(m);
    const std::vector<float> f(m.config.encoder.feat_dim, 0.0f);
    const auto v = bank.encode_frame_token(f, {ViewKind::Ego, 1.0}, 1.5).value();
    ASSERT_EQ(v.cols(), m.config.aggregator.model_dim);
    for (double x : v.values()) EXPECT_EQ(x, 0.0);
}

TEST(EncoderBank, TemporalBins) {
    const auto m = tiny_model();
    const EncoderBank bank(m);
    EXPECT_EQ(bank.temporal_bin(3.27), 32u);
    EXPECT_EQ(bank.temporal_bin(1.00), bank.temporal_bin(1.05));
    EXPECT_EQ(bank.temporal_bin(-2.0), 0u);
    EXPECT_EQ(bank.temporal_bin(1e6), m.config.encoder.max_bins - 1);
    std::size_t prev = 0;
    for (double t = 0.0; t < 8.0; t += 0.013) {
        const auto b = bank.temporal_bin(t);
        EXPECT_GE(b, prev);
        prev = b;
    }
}

TEST(EncoderBank, FrameViewDifferenceIsViewTableDifference) {
    const auto m = tiny_model();
    const EncoderBank bank(m);
    const std::vector<float> f{0.1f, -0.4f, 0.7f, 0.2f};
    ASSERT_EQ(f.size(), m.config.encoder.feat_dim);
    const auto ego = bank.encode_frame_token(f, {ViewKind::Ego, 1.0}, 2.0).value();
    const auto exo = bank.encode_frame_token(f, {ViewKind::Exo, 1.0}, 2.0).value();
    expect_near(row_diff(exo, ego), row_diff(table_row(m, "enc.view_table", 1), table_row(m, "enc.view_table", 0)));
}

TEST(EncoderBank, PastNarrationViewAndTimeComposition) {
    const auto m = tiny_model();
    const EncoderBank bank(m);
    const NarrationSegment seg{"cut the onion", 0.0, 1.0};
    const auto ego = bank.encode_past_narration_token(seg, {ViewKind::Ego, 1.0}, 1.0).value();
    const auto exo = bank.encode_past_narration_token(seg, {ViewKind::Exo, 1.0}, 1.0).value();
    expect_near(row_diff(exo, ego), row_diff(table_row(m, "enc.view_table", 1), table_row(m, "enc.view_table", 0)));

    const auto same_bin = bank.encode_past_narration_token(seg, {ViewKind::Ego, 1.0}, 1.05).value();
    expect_near(same_bin, ego, 0.0);

    const auto t1 = bank.encode_past_narration_token(seg, {ViewKind::Ego, 1.0}, 1.04).value();
    const auto t2 = bank.encode_past_narration_token(seg, {ViewKind::Ego, 1.0}, 1.16).value();
    const auto b1 = bank.temporal_bin(1.04), b2 = bank.temporal_bin(1.16);
    ASSERT_NE(b1, b2);
    expect_near(row_diff(t2, t1),
                row_diff(table_row(m, "enc.temporal_table", b2), table_row(m, "enc.temporal_table", b1)));
    EXPECT_THROW(bank.encode_past_narration_token({"   ", 0.0, 1.0}, {ViewKind::Ego, 1.0}, 0.5), ValidationError);
}

TEST(EncoderBank, NextNarrationHasNoViewEmbedding) {
    auto m = tiny_model();
    const EncoderBank bank(m);
    const auto next = bank.encode_next_narration_token("cut the onion", 2.0).value();
    EXPECT_EQ(next.cols(), m.config.aggregator.model_dim);
    for (ViewKind v : {ViewKind::Ego, ViewKind::Exo}) {
        const auto past = bank.encode_past_narration_token({"cut the onion", 1.5, 2.5}, {v, 1.0}, 2.0).value();
        expect_near(row_diff(past, next), table_row(m, "enc.view_table", static_cast<std::size_t>(class_index(v))));
    }
    zero_tables(m);
    const auto empty = bank.encode_next_narration_token("", 2.0).value();
    expect_near(empty, m.params.value("enc.null_text"), 0.0);
}

TEST(EncoderBank, AssembleCountsRolesAndPositions) {
    const auto m = tiny_model();
    const EncoderBank bank(m);
    const auto seq = bank.assemble(sample_with(4, 2));
    EXPECT_EQ(seq.length(), 8u);
    EXPECT_EQ(seq.cls_index, 7u);
    EXPECT_EQ(seq.vectors.rows(), 8u);
    const std::vector<TokenRole> expect{TokenRole::Frame,    TokenRole::Frame,    TokenRole::Frame,
                                        TokenRole::Frame,    TokenRole::PastNarr, TokenRole::PastNarr,
                                        TokenRole::NextNarr, TokenRole::Cls};
    EXPECT_EQ(seq.roles, expect);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(seq.positions[i], i);

    SelectorSample ss;
    ss.base = sample_with(4, 2);
    ss.ego_candidate_features = FeatureMatrix(2, m.config.encoder.feat_dim, 0.1f);
    ss.exo_candidate_features = FeatureMatrix(2, m.config.encoder.feat_dim, -0.1f);
    ModelConfig sc = m.config;
    sc.aggregator.candidate_rows = 4;
    const auto sel = init_model(sc, m.vocab, 1, Component::Selector);
    const auto sseq = EncoderBank(sel).assemble(ss);
    EXPECT_EQ(sseq.length(), 12u);
    EXPECT_EQ(sseq.cls_index, 11u);
    EXPECT_EQ(std::count(sseq.roles.begin(), sseq.roles.end(), TokenRole::CandEgo), 2);
    EXPECT_EQ(std::count(sseq.roles.begin(), sseq.roles.end(), TokenRole::CandExo), 2);
    for (std::size_t i = 0; i < sseq.length(); ++i) {
        if (sseq.roles[i] == TokenRole::CandEgo || sseq.roles[i] == TokenRole::CandExo) {
            EXPECT_GE(sseq.positions[i], sc.aggregator.max_seq_len);
        }
    }
    const auto hidden = EncoderBank(sel).assemble(ss, {}, true);
    EXPECT_EQ(hidden.length(), 12u);
    for (std::size_t i = 0; i < hidden.length(); ++i) {
        const bool cand = hidden.roles[i] == TokenRole::CandEgo || hidden.roles[i] == TokenRole::CandExo;
        EXPECT_EQ(hidden.key_mask[i], cand ? 0 : 1);
    }
}

TEST(EncoderBank, FrameTokensCarryFrameModality) {
    const auto m = tiny_model();
    const EncoderBank bank(m);
    const auto s = sample_with(3, 0);
    const auto seq = bank.assemble(s);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto pre = bank.encode_frame_token(s.past_frame_features.row(i), s.past_frame_views[i],
                                                 s.past_frame_times[i]).value();
        Mat tok(1, seq.vectors.cols());
        for (std::size_t c = 0; c < tok.cols(); ++c) tok(0, c) = seq.vectors.value()(i, c);
        expect_near(row_diff(tok, pre), m.params.value("enc.modality_frame"));
    }
}

TEST(EncoderBank, MaskOmitsRoles) {
    const auto m = tiny_model();
    const EncoderBank bank(m);
    const auto s = sample_with(4, 2);
    const auto no_f = bank.assemble(s, {false, true, true});
    EXPECT_EQ(no_f.length(), 4u);
    EXPECT_EQ(std::count(no_f.roles.begin(), no_f.roles.end(), TokenRole::Frame), 0);
    const auto only_next = bank.assemble(s, {false, false, true});
    EXPECT_EQ(only_next.roles, (std::vector<TokenRole>{TokenRole::NextNarr, TokenRole::Cls}));
    EXPECT_EQ(only_next.positions, (std::vector<std::size_t>{0, 1}));
}

TEST(EncoderBank, PastBudgetKeepsMostRecent) {
    ModelConfig c = ModelConfig::tiny();
    c.encoder.max_text_tokens = 2;
    c.encoder.max_past_text_tokens = 4;
    const auto m = init_model(c, vocab(), 1);
    const EncoderBank bank(m);
    std::vector<PastNarration> past;
    for (int k = 0; k < 3; ++k) past.push_back({{"cut the onion", 1.0 * k, 1.0 * k + 0.5}, {}, 0.0});
    const auto ids = bank.past_token_ids(past);
    EXPECT_TRUE(ids[0].empty());
    EXPECT_EQ(ids[1], (std::vector<int>{1, 2}));
    EXPECT_EQ(ids[2], (std::vector<int>{1, 2}));
    // Unknown words use the OOV row; text without any word still gets one OOV id.
    const auto oov = bank.past_token_ids({{{"zzz qqq", 0.0, 1.0}, {}, 0.0}, {{"?!", 1.0, 2.0}, {}, 0.0}});
    EXPECT_EQ(oov[0], (std::vector<int>{0, 0}));
    EXPECT_EQ(oov[1], std::vector<int>{0});
}

TEST(EncoderBank, RejectsLongSequencesAndWrongDims) {
    const auto m = tiny_model();
    const EncoderBank bank(m);
    EXPECT_THROW(bank.assemble(sample_with(m.config.aggregator.max_seq_len, 0)), ValidationError);
    Sample s = sample_with(2, 0);
    s.past_frame_features = FeatureMatrix(2, 7, 0.0f);
    EXPECT_THROW(bank.assemble(s), ValidationError);
}

TEST(EncoderBank, OutputsFinite) {
    const auto m = tiny_model();
    const auto seq = EncoderBank(m).assemble(sample_with(5, 3));
    for (double v : seq.vectors.value().values()) EXPECT_TRUE(std::isfinite(v));
}
