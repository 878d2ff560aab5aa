#pragma once

#include "swav/data_model.hpp"

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

namespace swav {

struct ShotBounds {
    double begin_s = 0.0;
    double end_s = 0.0;

    bool operator==(const ShotBounds&) const = default;
};

struct Shot {
    double begin_s = 0.0;
    double end_s = 0.0;
    std::vector<double> clip_probs;  // per-clip ego probability
    ViewLabel label;
};

enum class PseudoLabelMode { ShotLevel, ClipLevel };

std::string_view to_string(PseudoLabelMode mode);
PseudoLabelMode parse_pseudo_label_mode(std::string_view text);

struct PseudoLabelSet {
    std::string video_id;
    PseudoLabelMode mode = PseudoLabelMode::ShotLevel;
    std::vector<Shot> shots;
    std::vector<ViewLabel> frame_labels;

    /// Contiguous view track with one span per shot (clip-level runs for CLIP_LEVEL).
    std::vector<ViewSpan> view_track() const;
};

/// A clip handed to a classifier: its frames plus where it sits in the video.
struct ClipView {
    const VideoRecord* record = nullptr;
    std::size_t first_frame = 0;
    std::size_t frame_count = 0;
    double begin_s = 0.0;
    double end_s = 0.0;

    FeatureMatrix features() const;
};

/// Ego/exo clip classifier. Implementations that cannot be called from
/// several threads at once report so through `concurrent_safe`.
class ClipClassifier {
public:
    virtual ~ClipClassifier() = default;
    virtual double clip_len_s() const { return 2.0; }
    virtual bool concurrent_safe() const { return true; }
    /// Probability that the clip shows the ego view, in [0, 1].
    virtual double classify(const ClipView& clip) const = 0;
};

struct ShotDetectorConfig {
    double threshold = 0.15;
    double min_shot_len_s = 2.0;
};

/// Content-based cut detection over consecutive frames. Cuts closer than
/// `min_shot_len` to the previous kept cut (or to the video start) are dropped;
/// a final cut that would leave a tail shorter than `min_shot_len` is dropped.
std::vector<ShotBounds> detect_shots(const VideoRecord& record, double threshold, double min_shot_len);

/// Splits [begin_s, end_s) into consecutive clips of the classifier's clip
/// length (remainder dropped) and averages their ego probabilities.
Shot label_shot(const VideoRecord& record, double begin_s, double end_s, const ClipClassifier& classifier);

/// Aggregates per-clip ego probabilities into a shot label; ties go to exo.
ViewLabel aggregate_clip_probs(const std::vector<double>& clip_probs);

PseudoLabelSet pseudo_label_video(const VideoRecord& record, const ClipClassifier& classifier, PseudoLabelMode mode,
                                  const ShotDetectorConfig& detector = {});

/// Pseudo-labels every record, in parallel when the classifier allows it.
std::vector<PseudoLabelSet> pseudo_label_corpus(const std::vector<VideoRecord>& records,
                                                const ClipClassifier& classifier, PseudoLabelMode mode,
                                                const ShotDetectorConfig& detector = {});

/// Copy of `record` whose view track is replaced by the pseudo-labels.
VideoRecord with_pseudo_labels(const VideoRecord& record, const PseudoLabelSet& labels);

/// Fraction of frames whose pseudo-label kind matches the record's view track.
double frame_accuracy(const PseudoLabelSet& labels, const VideoRecord& reference);

nlohmann::json to_json(const PseudoLabelSet& labels);
/// Rebuilds shots and frame labels; frame labels are derived from the shots.
PseudoLabelSet pseudo_labels_from_json(const nlohmann::json& j, const VideoRecord& record);

}  // namespace swav
