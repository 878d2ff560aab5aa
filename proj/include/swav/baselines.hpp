#pragma once

// Comparison methods: constant and random guesses, last-frame copy, the
// first-person pronoun rule, nearest-neighbour retrieval over each input
// type, and narration/candidate similarity for view selection.

#include "swav/model.hpp"
#include "swav/switch_detector.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace swav {

enum class BaselineKind {
    AllEgo,
    AllExo,
    Random,
    LastFrame,
    Pronoun,
    RetrievalF,
    RetrievalN,
    RetrievalNPrime,
    VnSim,
};

std::string_view to_string(BaselineKind kind);
/// Case-insensitive; accepts "all_ego", "retrieval_nprime", "vn_sim", ...
BaselineKind parse_baseline(std::string_view name);
bool is_retrieval(BaselineKind kind);

/// Text features used by the retrieval and similarity baselines.
using TextEmbedder = std::function<std::vector<double>(std::string_view)>;

/// Mean of the frozen token-table rows; empty text gives a zero vector.
TextEmbedder token_table_embedder(const ViewModel& model);
/// L2-normalised bag of words over `vocab`.
TextEmbedder bag_of_words_embedder(const Vocabulary& vocab);

/// Retrieval key of a sample for one input type; a zero vector marks a
/// missing input.
std::vector<double> retrieval_key(BaselineKind kind, const Sample& s, const TextEmbedder& text);

struct RetrievalIndex {
    BaselineKind kind = BaselineKind::RetrievalF;
    std::size_t dim = 0;
    std::vector<double> keys;  // row-major, one row per item
    std::vector<ViewKind> targets;

    std::size_t size() const { return targets.size(); }
};

RetrievalIndex build_retrieval_index(BaselineKind kind, const std::vector<Sample>& train, const TextEmbedder& text);

struct BaselineSpec {
    BaselineKind kind = BaselineKind::AllExo;
    std::uint64_t rng_seed = 0;
    std::optional<RetrievalIndex> train_index;
    TextEmbedder text;                  // retrieval on narrations and VN_SIM
    const ViewModel* model = nullptr;   // VN_SIM projects frames and text with this model
    std::vector<std::string> pronouns{"i", "we", "my", "our", "i'm", "i'll", "we're"};
};

/// Hard-decision predictor: the chosen view gets logit 1, the other 0.
class BaselinePredictor {
public:
    explicit BaselinePredictor(BaselineSpec spec);

    Prediction predict(const Sample& sample);
    Prediction predict(const SelectorSample& sample);

    const BaselineSpec& spec() const { return spec_; }

private:
    ViewKind decide(const Sample& sample);

    BaselineSpec spec_;
    std::uint64_t draws_ = 0;
};

Prediction hard_prediction(ViewKind kind);

}  // namespace swav
