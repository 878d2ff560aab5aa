#pragma once

// Balanced same-view / view-switch metrics, annotator agreement and a paired
// bootstrap significance test.

#include "swav/data_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace swav {

struct Prediction;

/// Rank AUC of `scores` for positives (`positive[i] != 0`); a tied
/// positive/negative pair counts one half. Throws ValidationError
/// ("degenerate subset") unless both classes are present.
double auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

/// Area under the step precision/recall curve: the sum over distinct score
/// thresholds (descending) of precision times the recall gained there.
/// Throws ValidationError without positives.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positive);

/// Mean per-class recall over the classes present in `truth`.
double class_balanced_accuracy(std::span<const ViewKind> pred, std::span<const ViewKind> truth);

enum class ApMode { Macro, EgoPositive };

struct EvalInstance {
    ViewKind target = ViewKind::Exo;
    ViewKind last_view = ViewKind::Exo;
    std::string scenario;

    bool is_switch() const { return target != last_view; }
};

EvalInstance eval_instance(const Sample& s, std::string scenario = {});

struct SubsetMetrics {
    std::size_t n = 0;
    std::size_t n_ego = 0;
    std::size_t n_exo = 0;
    double accuracy = 0.0;        // class-balanced
    std::optional<double> auc;    // absent with a single class
    std::optional<double> ap;
};

struct SignificanceResult {
    std::string test_name = "paired_bootstrap_balanced_accuracy";
    std::string reference;
    double observed_diff = 0.0;
    double p_value = 1.0;
    std::size_t n_resamples = 0;
    std::uint64_t seed = 0;
};

struct EvalReport {
    std::string system;
    std::optional<SubsetMetrics> same_view;
    std::optional<SubsetMetrics> view_switch;
    std::optional<double> balanced_accuracy;
    std::optional<double> balanced_auc;
    std::optional<double> balanced_ap;
    std::map<std::string, std::optional<double>> scenario_balanced_ap;
    std::optional<SignificanceResult> significance;
    std::size_t n_instances = 0;
};

/// Splits by is_switch, scores each subset, and averages the two subsets.
/// Probabilities are P(ego) = probs[0].
EvalReport balanced_report(std::span<const Prediction> preds, std::span<const EvalInstance> instances,
                           ApMode ap_mode = ApMode::Macro, bool by_scenario = false);

nlohmann::json to_json(const EvalReport& r);
/// "scenario,balanced_ap" rows; absent values are written empty.
std::string scenario_csv(const EvalReport& r);

/// Two-rater Cohen's kappa. Throws ValidationError when expected agreement is 1.
double cohen_kappa(std::span<const ViewKind> a, std::span<const ViewKind> b);

/// "<video_id>@<t>" with t printed to the millisecond.
std::string instance_key(const std::string& video_id, double t);

struct AnnotationInstance {
    std::string instance_id;
    std::vector<ViewKind> votes;
    std::optional<ViewKind> accepted_label;
};

/// Keeps instances whose majority share reaches `threshold` and sets the
/// majority as accepted label. An even split never passes a threshold above 1/2.
std::vector<AnnotationInstance> filter_instances(const std::vector<AnnotationInstance>& instances, double threshold);

/// "7/9", "8/9", "9/9" or a decimal fraction.
double parse_agreement_threshold(const std::string& text);

std::vector<AnnotationInstance> load_votes(const std::filesystem::path& path);
void write_votes(const std::filesystem::path& path, const std::vector<AnnotationInstance>& instances);

/// Two-sided paired bootstrap on subset-balanced accuracy:
/// p = (#{|d* - d| >= |d|} + 1) / (n_resamples + 1). Throws ConfigError
/// below 100 resamples.
SignificanceResult significance(std::span<const ViewKind> pred_a, std::span<const ViewKind> pred_b,
                                std::span<const EvalInstance> instances, std::size_t n_resamples,
                                std::uint64_t seed);

}  // namespace swav
