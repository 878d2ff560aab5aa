#pragma once

// Best-view selector: the detector backbone with ego/exo candidate frame
// tokens appended, fine-tuned on a small human-labeled set.

#include "swav/switch_detector.hpp"

#include <filesystem>
#include <map>

namespace swav {

struct LimitedLabel {
    std::string video_id;
    double t = 0.0;
    ViewKind target = ViewKind::Exo;

    bool operator==(const LimitedLabel&) const = default;
};

/// JSONL, one {"video_id", "t", "target_kind"} object per line.
std::vector<LimitedLabel> load_limited_labels(const std::filesystem::path& path);
void write_limited_labels(const std::filesystem::path& path, const std::vector<LimitedLabel>& labels);

/// Joins labels against the corpus; unknown video ids raise ValidationError.
std::vector<SelectorSample> build_selector_samples(const std::vector<VideoRecord>& records,
                                                   const std::vector<LimitedLabel>& labels,
                                                   const WindowConfig& window);

/// Number of candidate tokens (ego + exo) for a window.
std::size_t candidate_token_count(const WindowConfig& window);

/// Selector config derived from a detector config.
ModelConfig selector_config(const ModelConfig& detector, std::size_t candidate_rows);

/// Copies every detector tensor; positional rows the detector lacks are
/// freshly initialised from `seed`. Throws ConfigError when any
/// architecture field other than the candidate settings and a longer
/// max_seq_len differs.
ViewModel init_from_detector(const ViewModel& detector, const ModelConfig& selector_cfg, std::uint64_t seed);

/// Fresh selector that shares only the frozen tensors with `detector`.
ViewModel init_selector_from_scratch(const ViewModel& detector, const ModelConfig& selector_cfg, std::uint64_t seed);

ag::Var selector_logits(const ViewModel& model, const SelectorSample& sample, const InputMask& mask = {},
                        bool ignore_candidates = false);
Prediction selector_forward(const ViewModel& model, const SelectorSample& sample, const InputMask& mask = {},
                            bool ignore_candidates = false);

/// Keyword-rule narration labeler.
struct NarrationRules {
    std::vector<std::string> ego_words{"closer", "close", "closeup", "zoom", "look", "detail", "details"};
    std::vector<std::string> exo_words{"i", "we", "my", "our", "i'm", "i'll", "we're", "show", "setup"};
};

/// More ego than exo keyword hits gives ego; ties and empty text give exo.
ViewLabel narration_pseudo_label(std::string_view text, const NarrationRules& rules = {});

struct JointFinetuneConfig {
    double alpha = 0.3;
    NarrationRules rules;
};

struct JointLoss {
    ag::Var total;   // selection loss + alpha * narration loss
    double selection = 0.0;
    double narration = 0.0;
};

JointLoss selector_loss(const ViewModel& model, const SelectorSample& sample, ViewKind target,
                        const std::optional<JointFinetuneConfig>& joint, const InputMask& mask = {});

/// Mean joint loss over a batch; returns {total, selection, narration}.
std::array<double, 3> selector_batch_loss(const ViewModel& model, std::span<const SelectorSample> batch,
                                          const std::optional<JointFinetuneConfig>& joint);

/// Uniform subsample of size n, stratified by whether the instance is a
/// view switch. Original order is preserved.
std::vector<SelectorSample> subsample_labels(const std::vector<SelectorSample>& samples, std::size_t n,
                                             std::uint64_t seed);

TrainHistory finetune_selector(ViewModel& selector, const std::vector<SelectorSample>& train,
                               const std::vector<SelectorSample>& val, const TrainConfig& cfg,
                               const std::optional<JointFinetuneConfig>& joint = std::nullopt);

}  // namespace swav
