#pragma once

#include "swav/errors.hpp"
#include "swav/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace swav {

enum class ViewKind : std::uint8_t { Ego = 0, Exo = 1 };

std::string_view to_string(ViewKind kind);
ViewKind parse_view_kind(std::string_view text);
inline ViewKind other(ViewKind k) { return k == ViewKind::Ego ? ViewKind::Exo : ViewKind::Ego; }
inline int class_index(ViewKind k) { return static_cast<int>(k); }

struct ViewLabel {
    ViewKind kind = ViewKind::Exo;
    double probability = 1.0;

    bool operator==(const ViewLabel&) const = default;
};

struct NarrationSegment {
    std::string text;
    double begin_s = 0.0;
    double end_s = 0.0;

    double mean_time() const { return 0.5 * (begin_s + end_s); }
    bool operator==(const NarrationSegment&) const = default;
};

struct ViewSpan {
    double begin_s = 0.0;
    double end_s = 0.0;
    ViewLabel label;

    bool operator==(const ViewSpan&) const = default;
};

/// One narrated video. `frame_features` is the edited (varying-view) stream.
/// Multi-view recordings additionally carry synchronized ego and exo streams.
struct VideoRecord {
    std::string video_id;
    double duration_s = 0.0;
    double fps = 0.0;
    FeatureMatrix frame_features;
    std::vector<NarrationSegment> narrations;
    std::optional<std::vector<ViewSpan>> view_track;
    std::optional<std::string> scenario;
    std::optional<FeatureMatrix> ego_features;
    std::optional<FeatureMatrix> exo_features;

    std::size_t num_frames() const { return frame_features.rows(); }
    std::size_t feat_dim() const { return frame_features.cols(); }
    double frame_time(std::size_t i) const { return static_cast<double>(i) / fps; }
    bool is_multi_view() const { return ego_features.has_value() && exo_features.has_value(); }

    /// Frame index covering absolute time `s`, clamped to the valid range.
    std::size_t frame_at(double s) const;
    /// View label covering `s`; nullopt when no track or `s` lies outside it.
    std::optional<ViewLabel> view_at(double s) const;

    bool operator==(const VideoRecord&) const = default;
};

/// Throws ValidationError naming the video when an invariant is broken.
void validate(const VideoRecord& record);

struct WindowConfig {
    double past_frame_s = 8.0;       // T^F
    double past_narration_s = 32.0;  // T^N
    double delta_s = 2.0;            // prediction interval
    double sample_rate = 4.0;        // past frame grid, frames per second
    ViewKind tie_break = ViewKind::Exo;
};

struct PastNarration {
    NarrationSegment segment;
    ViewLabel view;
    double rel_mean_time = 0.0;

    bool operator==(const PastNarration&) const = default;
};

struct NextNarration {
    std::string text;  // empty when nothing overlaps (t, t+delta]
    double rel_mean_time = 0.0;

    bool operator==(const NextNarration&) const = default;
};

struct Sample {
    std::string video_id;
    double t = 0.0;
    double delta = 0.0;
    double reference_s = 0.0;  // absolute time that relative times are measured from
    FeatureMatrix past_frame_features;
    std::vector<ViewLabel> past_frame_views;
    std::vector<double> past_frame_times;
    std::vector<PastNarration> past_narrations;
    NextNarration next_narration;
    ViewLabel target;

    ViewKind last_view() const { return past_frame_views.back().kind; }
    bool is_switch() const { return target.kind != last_view(); }

    bool operator==(const Sample&) const = default;
};

struct SelectorSample {
    Sample base;
    FeatureMatrix ego_candidate_features;
    FeatureMatrix exo_candidate_features;
};

class SampleRejected : public Error {
public:
    enum class Reason { InsufficientContext, UnlabeledTarget };
    SampleRejected(Reason reason, const std::string& msg) : Error(msg), reason_(reason) {}
    Reason reason() const { return reason_; }
    const char* kind() const noexcept override { return "sample_rejected"; }

private:
    Reason reason_;
};

Sample extract_sample(const VideoRecord& record, double t, const WindowConfig& cfg);
/// Past context only; `target` is left at its default.
Sample extract_context(const VideoRecord& record, double t, const WindowConfig& cfg);

/// Candidate frames come from the ego/exo streams on the sample-rate grid over
/// [t, t + delta). `target`, when given, overrides the record's view track.
SelectorSample extract_selector_sample(const VideoRecord& record, double t, const WindowConfig& cfg,
                                       std::optional<ViewKind> target = std::nullopt);

/// Majority view of the record frames inside [seg.begin_s, min(seg.end_s, clip_end)].
ViewLabel narration_view(const VideoRecord& record, const NarrationSegment& seg,
                         ViewKind tie_break = ViewKind::Exo,
                         std::optional<double> clip_end = std::nullopt);

// Feature files: "SWAVFT01", u32 rows, u32 dim, row-major little-endian float32.
FeatureMatrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& features);

struct ManifestFailure {
    std::size_t line = 0;
    std::string video_id;
    std::string kind;
    std::string message;
};

struct ManifestLoad {
    std::vector<VideoRecord> records;
    std::vector<ManifestFailure> failures;
};

/// Strict loader: the first failing line throws.
std::vector<VideoRecord> load_manifest(const std::filesystem::path& path);
/// Lenient loader: records that fail are reported and skipped.
ManifestLoad load_manifest_partial(const std::filesystem::path& path);

/// Writes the manifest plus one feature file per stream under `feature_dir`
/// (relative paths are stored when `feature_dir` sits below the manifest).
void write_manifest(const std::filesystem::path& path, const std::vector<VideoRecord>& records,
                    const std::filesystem::path& feature_dir);

}  // namespace swav
