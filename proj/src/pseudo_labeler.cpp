#include "swav/pseudo_labeler.hpp"

#include "swav/kernels.hpp"

#include <cmath>
#include <exception>
#include <numeric>

namespace swav {

namespace {

constexpr double kEps = 1e-9;

std::size_t first_frame_at_or_after(const VideoRecord& r, double s) {
    const double idx = std::ceil(s * r.fps - kEps);
    return idx <= 0.0 ? 0 : std::min(static_cast<std::size_t>(idx), r.num_frames());
}

std::size_t frames_per_clip(const VideoRecord& r, const ClipClassifier& c) {
    const auto n = static_cast<std::size_t>(std::llround(c.clip_len_s() * r.fps));
    if (n == 0) throw std::invalid_argument("clip length shorter than one frame");
    return n;
}

double classify_checked(const ClipClassifier& classifier, const ClipView& clip) {
    const double p = classifier.classify(clip);
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("classifier output outside [0,1]");
    return p;
}

void fill_frame_labels(PseudoLabelSet& out, const VideoRecord& record) {
    out.frame_labels.clear();
    out.frame_labels.reserve(record.num_frames());
    std::size_t s = 0;
    for (std::size_t i = 0; i < record.num_frames(); ++i) {
        const double at = record.frame_time(i);
        while (s + 1 < out.shots.size() && at >= out.shots[s].end_s - kEps) ++s;
        out.frame_labels.push_back(out.shots[s].label);
    }
}

}  // namespace

std::string_view to_string(PseudoLabelMode mode) { return mode == PseudoLabelMode::ShotLevel ? "shot" : "clip"; }

PseudoLabelMode parse_pseudo_label_mode(std::string_view text) {
    if (text == "shot") return PseudoLabelMode::ShotLevel;
    if (text == "clip") return PseudoLabelMode::ClipLevel;
    throw std::invalid_argument("unknown pseudo-label mode '" + std::string(text) + "'");
}

std::vector<ViewSpan> PseudoLabelSet::view_track() const {
    std::vector<ViewSpan> track;
    for (const auto& shot : shots) track.push_back({shot.begin_s, shot.end_s, shot.label});
    return track;
}

FeatureMatrix ClipView::features() const {
    FeatureMatrix out(frame_count, record->feat_dim());
    for (std::size_t i = 0; i < frame_count; ++i) {
        const auto src = record->frame_features.row(first_frame + i);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

std::vector<ShotBounds> detect_shots(const VideoRecord& record, double threshold, double min_shot_len) {
    if (record.frame_features.empty()) throw ValidationError(record.video_id + ": empty feature matrix");
    if (record.num_frames() < 2) throw ValidationError(record.video_id + ": shot detection needs two frames");
    if (!(threshold > 0.0)) throw std::invalid_argument("detect_shots: threshold must be > 0");

    std::vector<double> dist(record.num_frames());
    kernels::frame_distances(record.frame_features.values(), record.num_frames(), record.feat_dim(), dist);

    std::vector<double> cuts;
    double last = 0.0;
    for (std::size_t i = 1; i < dist.size(); ++i) {
        if (dist[i] <= threshold) continue;
        const double at = record.frame_time(i);
        if (at - last + kEps < min_shot_len) continue;
        cuts.push_back(at);
        last = at;
    }
    while (!cuts.empty() && record.duration_s - cuts.back() + kEps < min_shot_len) cuts.pop_back();

    std::vector<ShotBounds> shots;
    double begin = 0.0;
    for (double c : cuts) {
        shots.push_back({begin, c});
        begin = c;
    }
    shots.push_back({begin, record.duration_s});
    return shots;
}

ViewLabel aggregate_clip_probs(const std::vector<double>& clip_probs) {
    if (clip_probs.empty()) throw ValidationError("no clips to aggregate");
    const double mean = std::accumulate(clip_probs.begin(), clip_probs.end(), 0.0) /
                        static_cast<double>(clip_probs.size());
    if (mean > 0.5) return {ViewKind::Ego, mean};
    return {ViewKind::Exo, 1.0 - mean};
}

Shot label_shot(const VideoRecord& record, double begin_s, double end_s, const ClipClassifier& classifier) {
    const std::size_t fpc = frames_per_clip(record, classifier);
    const std::size_t first = first_frame_at_or_after(record, begin_s);
    const std::size_t stop = first_frame_at_or_after(record, end_s);
    const std::size_t n_clips = stop > first ? (stop - first) / fpc : 0;
    if (n_clips == 0) {
        throw ValidationError(record.video_id + ": shot below clip length at " + std::to_string(begin_s) + "s");
    }
    Shot shot{begin_s, end_s, {}, {}};
    for (std::size_t k = 0; k < n_clips; ++k) {
        const std::size_t f0 = first + k * fpc;
        const double b = record.frame_time(f0);
        shot.clip_probs.push_back(classify_checked(classifier, {&record, f0, fpc, b, b + classifier.clip_len_s()}));
    }
    shot.label = aggregate_clip_probs(shot.clip_probs);
    return shot;
}

PseudoLabelSet pseudo_label_video(const VideoRecord& record, const ClipClassifier& classifier, PseudoLabelMode mode,
                                  const ShotDetectorConfig& detector) {
    PseudoLabelSet out;
    out.video_id = record.video_id;
    out.mode = mode;
    if (mode == PseudoLabelMode::ShotLevel) {
        for (const auto& b : detect_shots(record, detector.threshold, detector.min_shot_len_s)) {
            out.shots.push_back(label_shot(record, b.begin_s, b.end_s, classifier));
        }
    } else {
        const std::size_t fpc = frames_per_clip(record, classifier);
        const std::size_t n_clips = record.num_frames() / fpc;
        if (n_clips == 0) throw ValidationError(record.video_id + ": video shorter than one clip");
        for (std::size_t k = 0; k < n_clips; ++k) {
            const std::size_t f0 = k * fpc;
            const double b = record.frame_time(f0);
            const double e = k + 1 == n_clips ? record.duration_s : record.frame_time(f0 + fpc);
            const double p = classify_checked(classifier, {&record, f0, fpc, b, b + classifier.clip_len_s()});
            out.shots.push_back({b, e, {p}, aggregate_clip_probs({p})});
        }
    }
    fill_frame_labels(out, record);
    return out;
}

std::vector<PseudoLabelSet> pseudo_label_corpus(const std::vector<VideoRecord>& records,
                                                const ClipClassifier& classifier, PseudoLabelMode mode,
                                                const ShotDetectorConfig& detector) {
    std::vector<PseudoLabelSet> out(records.size());
    std::vector<std::exception_ptr> errors(records.size());
    const auto n = static_cast<std::ptrdiff_t>(records.size());
    auto one = [&](std::ptrdiff_t i) {
        try {
            out[i] = pseudo_label_video(records[i], classifier, mode, detector);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (classifier.concurrent_safe()) {
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
    } else {
        for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

VideoRecord with_pseudo_labels(const VideoRecord& record, const PseudoLabelSet& labels) {
    VideoRecord out = record;
    out.view_track = labels.view_track();
    return out;
}

double frame_accuracy(const PseudoLabelSet& labels, const VideoRecord& reference) {
    if (labels.frame_labels.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.frame_labels.size(); ++i) {
        auto truth = reference.view_at(reference.frame_time(i));
        if (truth && truth->kind == labels.frame_labels[i].kind) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(labels.frame_labels.size());
}

nlohmann::json to_json(const PseudoLabelSet& labels) {
    nlohmann::json j;
    j["video_id"] = labels.video_id;
    j["mode"] = std::string(to_string(labels.mode));
    j["shots"] = nlohmann::json::array();
    for (const auto& s : labels.shots) {
        j["shots"].push_back({{"begin_s", s.begin_s},
                              {"end_s", s.end_s},
                              {"kind", std::string(to_string(s.label.kind))},
                              {"prob", s.label.probability}});
    }
    return j;
}

PseudoLabelSet pseudo_labels_from_json(const nlohmann::json& j, const VideoRecord& record) {
    PseudoLabelSet out;
    out.video_id = j.at("video_id").get<std::string>();
    out.mode = parse_pseudo_label_mode(j.at("mode").get<std::string>());
    for (const auto& s : j.at("shots")) {
        out.shots.push_back({s.at("begin_s").get<double>(),
                             s.at("end_s").get<double>(),
                             {},
                             {parse_view_kind(s.at("kind").get<std::string>()), s.at("prob").get<double>()}});
    }
    if (out.shots.empty()) throw ValidationError(out.video_id + ": pseudo-label set without shots");
    fill_frame_labels(out, record);
    return out;
}

}  // namespace swav
