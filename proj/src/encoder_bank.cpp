#include "swav/encoder_bank.hpp"

#include "swav/vocabulary.hpp"

#include <algorithm>
#include <cmath>

namespace swav {

namespace {

Mat to_mat(const FeatureMatrix& f) {
    Mat m(f.rows(), f.cols());
    std::copy(f.values().begin(), f.values().end(), m.values().begin());
    return m;
}

bool blank(std::string_view text) {
    return std::all_of(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

struct Parts {
    std::vector<ag::Var> blocks;
    std::vector<TokenRole> roles;
    std::vector<std::size_t> positions;
    std::vector<char> key_mask;

    void push(ag::Var block, TokenRole role, std::size_t first_position, char visible) {
        for (std::size_t i = 0; i < block.rows(); ++i) {
            roles.push_back(role);
            positions.push_back(first_position + i);
            key_mask.push_back(visible);
        }
        blocks.push_back(std::move(block));
    }
};

}  // namespace

std::string_view to_string(TokenRole role) {
    switch (role) {
        case TokenRole::Frame: return "FRAME";
        case TokenRole::PastNarr: return "PAST_NARR";
        case TokenRole::NextNarr: return "NEXT_NARR";
        case TokenRole::CandEgo: return "CAND_EGO";
        case TokenRole::CandExo: return "CAND_EXO";
        case TokenRole::Cls: return "CLS";
    }
    return "?";
}

std::size_t EncoderBank::temporal_bin(double rel_time) const {
    const auto& e = model_->config.encoder;
    if (!(rel_time > 0.0)) return 0;
    const double b = std::floor(rel_time / e.bin_size_s + 1e-9);
    return static_cast<std::size_t>(std::min(b, static_cast<double>(e.max_bins - 1)));
}

void EncoderBank::check_dim(std::size_t cols) const {
    if (cols != model_->config.encoder.feat_dim) {
        throw ValidationError("frame feature dim " + std::to_string(cols) + " does not match encoder dim " +
                              std::to_string(model_->config.encoder.feat_dim));
    }
}

ag::Var EncoderBank::text_base_ids(const std::vector<int>& ids) const {
    const auto& p = model_->params;
    if (ids.empty()) return p.var("enc.null_text");
    return ag::linear(ag::gather_mean(p.var("enc.token_table"), {ids}), p.var("enc.text_proj.weight"),
                      p.var("enc.text_proj.bias"));
}

ag::Var EncoderBank::text_base(std::string_view text) const {
    return text_base_ids(model_->vocab.encode(text, model_->config.encoder.max_text_tokens));
}

ag::Var EncoderBank::frame_block(const FeatureMatrix& feats, const std::vector<int>* views,
                                 const std::vector<int>* bins) const {
    check_dim(feats.cols());
    const auto& p = model_->params;
    auto x = ag::linear(ag::Var::constant(to_mat(feats)), p.var("enc.frame_proj.weight"), p.var("enc.frame_proj.bias"));
    if (views) x = ag::add(x, ag::gather_rows(p.var("enc.view_table"), *views));
    if (bins) x = ag::add(x, ag::gather_rows(p.var("enc.temporal_table"), *bins));
    return x;
}

ag::Var EncoderBank::text_block(const std::vector<std::vector<int>>& ids) const {
    const auto& p = model_->params;
    return ag::linear(ag::gather_mean(p.var("enc.token_table"), ids), p.var("enc.text_proj.weight"),
                      p.var("enc.text_proj.bias"));
}

ag::Var EncoderBank::encode_frame_token(std::span<const float> feature, ViewLabel view, double rel_time) const {
    FeatureMatrix f(1, feature.size());
    std::copy(feature.begin(), feature.end(), f.row(0).begin());
    const std::vector<int> views{class_index(view.kind)};
    const std::vector<int> bins{static_cast<int>(temporal_bin(rel_time))};
    return frame_block(f, &views, &bins);
}

ag::Var EncoderBank::encode_past_narration_token(const NarrationSegment& seg, ViewLabel view,
                                                 double rel_mean_time) const {
    if (blank(seg.text)) throw ValidationError("past narration with empty text");
    auto ids = model_->vocab.encode(seg.text, model_->config.encoder.max_text_tokens);
    if (ids.empty()) ids.push_back(0);
    const auto& p = model_->params;
    auto x = ag::add(text_block({ids}), ag::gather_rows(p.var("enc.view_table"), {class_index(view.kind)}));
    return ag::add(x, ag::gather_rows(p.var("enc.temporal_table"), {static_cast<int>(temporal_bin(rel_mean_time))}));
}

ag::Var EncoderBank::encode_next_narration_token(std::string_view text, double rel_mean_time) const {
    const auto& p = model_->params;
    return ag::add(text_base(text),
                   ag::gather_rows(p.var("enc.temporal_table"), {static_cast<int>(temporal_bin(rel_mean_time))}));
}

std::vector<std::vector<int>> EncoderBank::past_token_ids(const std::vector<PastNarration>& past) const {
    const auto& e = model_->config.encoder;
    std::vector<std::vector<int>> out(past.size());
    std::size_t budget = e.max_past_text_tokens;
    for (std::size_t k = past.size(); k-- > 0;) {
        if (blank(past[k].segment.text)) throw ValidationError("past narration with empty text");
        auto ids = model_->vocab.encode(past[k].segment.text, e.max_text_tokens);
        if (ids.empty()) ids.push_back(0);
        if (ids.size() > budget) break;  // this one and everything older is dropped
        budget -= ids.size();
        out[k] = std::move(ids);
    }
    return out;
}

namespace {

void add_context(const EncoderBank& bank, const ViewModel& m, const Sample& s, const InputMask& mask, Parts& parts,
                 std::size_t& pos) {
    const auto& p = m.params;
    if (mask.frames && s.past_frame_features.rows() > 0) {
        std::vector<int> views, bins;
        for (const auto& v : s.past_frame_views) views.push_back(class_index(v.kind));
        for (double at : s.past_frame_times) bins.push_back(static_cast<int>(bank.temporal_bin(at)));
        if (s.past_frame_features.cols() != m.config.encoder.feat_dim) {
            throw ValidationError("frame feature dim mismatch");
        }
        auto x = ag::linear(ag::Var::constant(to_mat(s.past_frame_features)), p.var("enc.frame_proj.weight"),
                            p.var("enc.frame_proj.bias"));
        x = ag::add(x, ag::gather_rows(p.var("enc.view_table"), views));
        x = ag::add(x, ag::gather_rows(p.var("enc.temporal_table"), bins));
        x = ag::add_row(x, p.var("enc.modality_frame"));
        parts.push(x, TokenRole::Frame, pos, 1);
        pos += x.rows();
    }
    if (mask.past_narrations && !s.past_narrations.empty()) {
        const auto all_ids = bank.past_token_ids(s.past_narrations);
        std::vector<std::vector<int>> ids;
        std::vector<int> views, bins;
        for (std::size_t k = 0; k < all_ids.size(); ++k) {
            if (all_ids[k].empty()) continue;
            ids.push_back(all_ids[k]);
            views.push_back(class_index(s.past_narrations[k].view.kind));
            bins.push_back(static_cast<int>(bank.temporal_bin(s.past_narrations[k].rel_mean_time)));
        }
        if (!ids.empty()) {
            auto x = ag::linear(ag::gather_mean(p.var("enc.token_table"), ids), p.var("enc.text_proj.weight"),
                                p.var("enc.text_proj.bias"));
            x = ag::add(x, ag::gather_rows(p.var("enc.view_table"), views));
            x = ag::add(x, ag::gather_rows(p.var("enc.temporal_table"), bins));
            x = ag::add_row(x, p.var("enc.modality_text"));
            parts.push(x, TokenRole::PastNarr, pos, 1);
            pos += x.rows();
        }
    }
    if (mask.next_narration) {
        auto x = bank.encode_next_narration_token(s.next_narration.text, s.next_narration.rel_mean_time);
        x = ag::add_row(x, p.var("enc.modality_text"));
        parts.push(x, TokenRole::NextNarr, pos, 1);
        ++pos;
    }
}

TokenSequence finish(Parts parts, const ViewModel& m, std::size_t cls_position) {
    parts.push(m.params.var("enc.cls"), TokenRole::Cls, cls_position, 1);
    TokenSequence seq;
    seq.vectors = ag::concat_rows(parts.blocks);
    seq.roles = std::move(parts.roles);
    seq.positions = std::move(parts.positions);
    seq.key_mask = std::move(parts.key_mask);
    seq.cls_index = seq.roles.size() - 1;
    return seq;
}

void check_length(const ViewModel& m, std::size_t non_candidates) {
    if (non_candidates > m.config.aggregator.max_seq_len) {
        throw ValidationError("token sequence of length " + std::to_string(non_candidates) +
                              " exceeds max_seq_len " + std::to_string(m.config.aggregator.max_seq_len));
    }
}

}  // namespace

TokenSequence EncoderBank::assemble(const Sample& sample, const InputMask& mask) const {
    Parts parts;
    std::size_t pos = 0;
    add_context(*this, *model_, sample, mask, parts, pos);
    check_length(*model_, pos + 1);
    return finish(std::move(parts), *model_, pos);
}

TokenSequence EncoderBank::assemble(const SelectorSample& sample, const InputMask& mask,
                                    bool ignore_candidates) const {
    const auto& cfg = model_->config;
    const auto& p = model_->params;
    if (sample.ego_candidate_features.rows() == 0 || sample.exo_candidate_features.rows() == 0) {
        throw ValidationError("selector sample is missing a candidate stream");
    }
    Parts parts;
    std::size_t pos = 0;
    add_context(*this, *model_, sample.base, mask, parts, pos);
    check_length(*model_, pos + 1);

    const std::size_t n_cand = sample.ego_candidate_features.rows() + sample.exo_candidate_features.rows();
    if (n_cand > cfg.aggregator.candidate_rows) {
        throw ValidationError(std::to_string(n_cand) + " candidate tokens exceed the " +
                              std::to_string(cfg.aggregator.candidate_rows) + " candidate positional rows");
    }
    std::size_t cand_pos = cfg.aggregator.max_seq_len;
    const char visible = ignore_candidates ? 0 : 1;
    for (ViewKind kind : {ViewKind::Ego, ViewKind::Exo}) {
        const auto& feats = kind == ViewKind::Ego ? sample.ego_candidate_features : sample.exo_candidate_features;
        std::vector<int> views(feats.rows(), class_index(kind));
        std::vector<int> bins;
        const double step = sample.base.delta / static_cast<double>(feats.rows());
        for (std::size_t k = 0; k < feats.rows(); ++k) {
            const double rel = sample.base.t - sample.base.reference_s + static_cast<double>(k) * step;
            bins.push_back(static_cast<int>(temporal_bin(rel)));
        }
        auto x = frame_block(feats, cfg.encoder.candidate_view_embed ? &views : nullptr,
                             cfg.encoder.candidate_time_embed ? &bins : nullptr);
        x = ag::add_row(x, p.var("enc.modality_frame"));
        parts.push(x, kind == ViewKind::Ego ? TokenRole::CandEgo : TokenRole::CandExo, cand_pos, visible);
        cand_pos += feats.rows();
    }
    return finish(std::move(parts), *model_, pos);
}

}  // namespace swav
