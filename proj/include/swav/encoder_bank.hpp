#pragma once

// Token features for the aggregator. Every token is an additive composition:
// frames are proj(F) + view + time (+ frame modality), past narrations are
// text(N) + view + time (+ text modality) and the next narration is
// text(N') + time (+ text modality). The class token closes the sequence.

#include "swav/autograd.hpp"
#include "swav/data_model.hpp"
#include "swav/model.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace swav {

enum class TokenRole : std::uint8_t { Frame, PastNarr, NextNarr, CandEgo, CandExo, Cls };

std::string_view to_string(TokenRole role);

struct TokenSequence {
    ag::Var vectors;                   // L x model_dim, before positional embeddings
    std::vector<TokenRole> roles;
    std::vector<std::size_t> positions;  // row of the positional table for each token
    std::vector<char> key_mask;          // 0 hides the token from attention
    std::size_t cls_index = 0;

    std::size_t length() const { return roles.size(); }
};

/// Which token groups take part. Dropped groups are omitted, not zeroed.
struct InputMask {
    bool frames = true;
    bool past_narrations = true;
    bool next_narration = true;

    bool operator==(const InputMask&) const = default;
};

/// Borrowing view over the encoder tensors of a model.
class EncoderBank {
public:
    explicit EncoderBank(const ViewModel& model) : model_(&model) {}

    std::size_t model_dim() const { return model_->config.aggregator.model_dim; }
    std::size_t temporal_bin(double rel_time) const;

    /// Projected narration feature; text with no tokens maps to the null-text row.
    ag::Var text_base(std::string_view text) const;
    ag::Var encode_frame_token(std::span<const float> feature, ViewLabel view, double rel_time) const;
    /// Throws ValidationError on empty text.
    ag::Var encode_past_narration_token(const NarrationSegment& seg, ViewLabel view, double rel_mean_time) const;
    ag::Var encode_next_narration_token(std::string_view text, double rel_mean_time) const;

    /// Token ids kept for the past narrations: each is capped at max_text_tokens
    /// and the most recent narrations are kept within max_past_text_tokens.
    std::vector<std::vector<int>> past_token_ids(const std::vector<PastNarration>& past) const;

    TokenSequence assemble(const Sample& sample, const InputMask& mask = {}) const;
    /// Candidate tokens get positional rows from max_seq_len upwards. With
    /// `ignore_candidates` they stay in the sequence but are masked as keys.
    TokenSequence assemble(const SelectorSample& sample, const InputMask& mask = {},
                           bool ignore_candidates = false) const;

    const ViewModel& model() const { return *model_; }

private:
    ag::Var frame_block(const FeatureMatrix& feats, const std::vector<int>* views,
                        const std::vector<int>* bins) const;
    ag::Var text_block(const std::vector<std::vector<int>>& ids) const;
    ag::Var text_base_ids(const std::vector<int>& ids) const;
    void check_dim(std::size_t cols) const;

    const ViewModel* model_;
};

}  // namespace swav
