#pragma once

// Seeded synthetic corpora with a known latent switching process.
//
// Time is cut into slots of length delta. At each slot boundary the cue
// rules are tried in order; the first one that fires decides the next view
// and leaves its trace in one input channel (the narration of the coming
// slot, the narration of the previous slot, or a feature offset on the last
// frames before the boundary). When no rule fires the view switches with
// probability `hazard`. Each slot holds at most one narration, placed inside
// the slot.

#include "swav/evaluation.hpp"
#include "swav/pseudo_labeler.hpp"
#include "swav/view_selector.hpp"

#include <json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace swav {

enum class CueAction { SetEgo, SetExo, Toggle };
enum class CueChannel { NextNarration, PastNarration, Frames };

struct CueRule {
    std::vector<std::string> tokens;  // unused for frame cues
    CueAction action = CueAction::Toggle;
    double firing_prob = 1.0;
    CueChannel channel = CueChannel::NextNarration;
};

struct SwitchGrammar {
    std::vector<CueRule> cue_rules;
    double hazard = 0.1;

    std::size_t feat_dim = 16;
    double centroid_scale = 1.0;
    double noise_scale = 0.1;
    std::uint64_t centroid_seed = 7;  // shared by every corpus drawn from this grammar

    std::vector<std::string> narration_vocab;  // defaults to w00..w63
    double boundary_noise = 0.0;       // oracle clip flips near true boundaries
    double boundary_window_s = 0.5;

    double delta_s = 2.0;
    double fps = 4.0;
    std::size_t min_slots = 20;
    std::size_t max_slots = 30;
    double narration_prob = 0.7;
    std::size_t min_words = 3;
    std::size_t max_words = 8;
    double frame_cue_scale = 1.0;
    double frame_cue_s = 1.0;
    std::optional<ViewKind> initial_view;
    std::vector<std::string> scenarios{"cooking", "crafts", "repair"};
    bool multi_view = false;

    SwitchGrammar();
    void validate() const;

    /// One toggle cue in the coming narration, firing half the time; no hazard.
    static SwitchGrammar deterministic_toggle();
    /// Set-ego and set-exo cues in each of the three channels plus a small hazard.
    static SwitchGrammar split_cues();
    static SwitchGrammar pure_hazard(double hazard);
};

nlohmann::json to_json(const SwitchGrammar& g);
/// Unknown keys raise ConfigError; missing keys keep the defaults.
SwitchGrammar grammar_from_json(const nlohmann::json& j);

/// Knows the true view track of every generated video. Returns 0.9 / 0.1 for
/// ego / exo clips; clips within `boundary_window_s` of a true switch are
/// flipped with probability `boundary_noise` (a hash of video id and clip
/// start, so results do not depend on call order).
class OracleClassifier : public ClipClassifier {
public:
    OracleClassifier(const std::vector<VideoRecord>& records, double boundary_noise, double boundary_window_s,
                     std::uint64_t seed, double clip_len_s = 2.0);

    double clip_len_s() const override { return clip_len_; }
    double classify(const ClipView& clip) const override;

private:
    struct Truth {
        std::vector<ViewSpan> track;
        std::vector<double> boundaries;
    };
    std::map<std::string, Truth> truth_;
    double noise_;
    double window_;
    std::uint64_t seed_;
    double clip_len_;
};

struct SyntheticCorpus {
    std::vector<VideoRecord> records;  // with ground-truth view tracks
    std::shared_ptr<OracleClassifier> oracle;
};

SyntheticCorpus generate_corpus(const SwitchGrammar& grammar, std::size_t n_videos, std::uint64_t seed,
                                const std::string& id_prefix = "synth");

/// Ground-truth best-view labels at slot boundaries with full context,
/// drawn without replacement.
std::vector<LimitedLabel> generate_limited_labels(const std::vector<VideoRecord>& records, std::size_t n,
                                                  const WindowConfig& window, std::uint64_t seed);

/// Annotator votes for each label (instance id from instance_key). Each
/// instance draws its reliability uniformly from [min_accuracy, 1] and every
/// annotator independently reports the true view with that probability.
std::vector<AnnotationInstance> generate_votes(const std::vector<LimitedLabel>& labels, std::uint64_t seed,
                                               std::size_t n_annotators = 9, double min_accuracy = 0.55);

/// FNV-1a, used wherever a string must feed a seed.
std::uint64_t stable_hash(std::string_view text);

}  // namespace swav
