#include "swav/data_model.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace swav {

namespace {

constexpr double kTimeEps = 1e-9;
constexpr std::array<char, 8> kFeatureMagic = {'S', 'W', 'A', 'V', 'F', 'T', '0', '1'};

using nlohmann::json;

void put_u32(std::ostream& os, std::uint32_t v) {
    std::array<unsigned char, 4> b = {static_cast<unsigned char>(v & 0xFF),
                                      static_cast<unsigned char>((v >> 8) & 0xFF),
                                      static_cast<unsigned char>((v >> 16) & 0xFF),
                                      static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

struct Counts {
    std::size_t ego = 0;
    std::size_t exo = 0;
    double ego_prob = 0.0;
    double exo_prob = 0.0;
};

ViewLabel majority(const Counts& c, ViewKind tie_break) {
    ViewKind kind = tie_break;
    if (c.ego > c.exo) kind = ViewKind::Ego;
    if (c.exo > c.ego) kind = ViewKind::Exo;
    const std::size_t n = kind == ViewKind::Ego ? c.ego : c.exo;
    const double p = kind == ViewKind::Ego ? c.ego_prob : c.exo_prob;
    return {kind, n > 0 ? p / static_cast<double>(n) : 1.0};
}

void count(Counts& c, const ViewLabel& label) {
    if (label.kind == ViewKind::Ego) {
        ++c.ego;
        c.ego_prob += label.probability;
    } else {
        ++c.exo;
        c.exo_prob += label.probability;
    }
}

std::optional<ViewLabel> target_view(const VideoRecord& record, double t, const WindowConfig& cfg) {
    const double end = t + cfg.delta_s;
    if (!record.view_track || end > record.duration_s + kTimeEps) return std::nullopt;
    if (record.num_frames() == 0) return std::nullopt;
    const auto first = static_cast<std::size_t>(std::floor(t * record.fps + kTimeEps)) + 1;
    const auto last = std::min(static_cast<std::size_t>(std::floor(end * record.fps + kTimeEps)),
                               record.num_frames() - 1);
    Counts c;
    for (std::size_t i = first; i <= last; ++i) {
        auto v = record.view_at(record.frame_time(i));
        if (!v) return std::nullopt;
        count(c, *v);
    }
    if (c.ego + c.exo == 0) return std::nullopt;
    return majority(c, cfg.tie_break);
}

Sample context_impl(const VideoRecord& record, double t, const WindowConfig& cfg) {
    if (t < 0.0) throw std::invalid_argument("extract_sample: negative t");
    if (!record.view_track) throw ValidationError(record.video_id + ": record has no view track");
    Sample s;
    s.video_id = record.video_id;
    s.t = t;
    s.delta = cfg.delta_s;

    const auto n_grid = static_cast<long>(std::llround(cfg.past_frame_s * cfg.sample_rate));
    std::vector<double> abs_times;
    for (long k = n_grid; k >= 1; --k) {
        const double at = t - static_cast<double>(k) / cfg.sample_rate;
        if (at < -kTimeEps) continue;
        abs_times.push_back(std::max(at, 0.0));
    }
    if (abs_times.empty()) {
        throw SampleRejected(SampleRejected::Reason::InsufficientContext,
                             record.video_id + ": insufficient context at t=" + std::to_string(t));
    }

    s.past_frame_features = FeatureMatrix(abs_times.size(), record.feat_dim());
    for (std::size_t j = 0; j < abs_times.size(); ++j) {
        const auto src = record.frame_features.row(record.frame_at(abs_times[j]));
        std::copy(src.begin(), src.end(), s.past_frame_features.row(j).begin());
        auto v = record.view_at(abs_times[j]);
        if (!v) throw ValidationError(record.video_id + ": view track does not cover past frame");
        s.past_frame_views.push_back(*v);
    }

    std::vector<const NarrationSegment*> past;
    for (const auto& seg : record.narrations) {
        if (seg.begin_s < t && seg.end_s > t - cfg.past_narration_s) past.push_back(&seg);
    }
    const double ref = past.empty() ? abs_times.front() : past.front()->begin_s;
    s.reference_s = ref;

    for (double at : abs_times) s.past_frame_times.push_back(at - ref);
    for (const auto* seg : past) {
        ViewLabel view;
        try {
            view = narration_view(record, *seg, cfg.tie_break, t);
        } catch (const ValidationError&) {
            view = record.view_at(std::min(seg->begin_s, std::nextafter(t, 0.0))).value_or(ViewLabel{});
        }
        const double rel_mean = 0.5 * ((seg->begin_s - ref) + (seg->end_s - ref));
        s.past_narrations.push_back({*seg, view, rel_mean});
    }

    const double end = t + cfg.delta_s;
    const NarrationSegment* next = nullptr;
    double best = 0.0;
    for (const auto& seg : record.narrations) {
        const double overlap = std::min(seg.end_s, end) - std::max(seg.begin_s, t);
        if (overlap > best) {
            best = overlap;
            next = &seg;
        }
    }
    if (next) {
        s.next_narration = {next->text, 0.5 * ((next->begin_s - ref) + (next->end_s - ref))};
    } else {
        s.next_narration = {"", 0.5 * ((t - ref) + (end - ref))};
    }
    return s;
}

FeatureMatrix candidate_frames(const FeatureMatrix& stream, const VideoRecord& record, double t,
                               const WindowConfig& cfg) {
    const auto n = static_cast<std::size_t>(std::llround(cfg.delta_s * cfg.sample_rate));
    FeatureMatrix out(n, stream.cols());
    for (std::size_t k = 0; k < n; ++k) {
        const double at = t + static_cast<double>(k) / cfg.sample_rate;
        auto idx = std::min(static_cast<std::size_t>(std::floor(at * record.fps + kTimeEps)),
                            stream.rows() - 1);
        const auto src = stream.row(idx);
        std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

VideoRecord parse_record(const json& j, const std::filesystem::path& base, std::size_t line) {
    VideoRecord r;
    try {
        r.video_id = j.at("video_id").get<std::string>();
        r.duration_s = j.at("duration_s").get<double>();
        r.fps = j.at("fps").get<double>();
        for (const auto& n : j.at("narrations")) {
            r.narrations.push_back(
                {n.at("text").get<std::string>(), n.at("begin_s").get<double>(), n.at("end_s").get<double>()});
        }
        if (j.contains("views") && !j.at("views").is_null()) {
            std::vector<ViewSpan> track;
            for (const auto& v : j.at("views")) {
                track.push_back({v.at("begin_s").get<double>(), v.at("end_s").get<double>(),
                                 {parse_view_kind(v.at("kind").get<std::string>()), v.value("prob", 1.0)}});
            }
            r.view_track = std::move(track);
        }
        if (j.contains("scenario") && !j.at("scenario").is_null()) r.scenario = j.at("scenario").get<std::string>();
        // paths are read below, after the structural fields parsed cleanly
        (void)j.at("features").get<std::string>();
    } catch (const json::exception& e) {
        throw ParseError(e.what(), line);
    } catch (const std::invalid_argument& e) {
        throw ParseError(e.what(), line);
    }

    auto load = [&](const std::string& key) {
        const auto path = resolve(base, j.at(key).get<std::string>());
        try {
            return read_feature_file(path);
        } catch (const IoError& e) {
            throw IoError(r.video_id + ": " + e.what());
        }
    };
    r.frame_features = load("features");
    if (j.contains("ego_features")) r.ego_features = load("ego_features");
    if (j.contains("exo_features")) r.exo_features = load("exo_features");
    validate(r);
    return r;
}

template <typename OnRecord, typename OnFailure>
void scan_manifest(const std::filesystem::path& path, OnRecord&& on_record, OnFailure&& on_failure) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::string text;
    std::size_t line = 0;
    std::optional<std::size_t> dim;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            on_failure(ManifestFailure{line, "", "parse_error", ParseError(e.what(), line).what()},
                       ParseError(e.what(), line));
            continue;
        }
        const std::string id = j.is_object() ? j.value("video_id", std::string{}) : std::string{};
        try {
            VideoRecord r = parse_record(j, base, line);
            if (dim && *dim != r.feat_dim()) {
                throw ValidationError(r.video_id + ": feature dim " + std::to_string(r.feat_dim()) +
                                      " differs from corpus dim " + std::to_string(*dim));
            }
            dim = r.feat_dim();
            on_record(std::move(r));
        } catch (const Error& e) {
            on_failure(ManifestFailure{line, id, e.kind(), e.what()}, e);
        }
    }
}

}  // namespace

Sample extract_context(const VideoRecord& record, double t, const WindowConfig& cfg) {
    return context_impl(record, t, cfg);
}

std::string_view to_string(ViewKind kind) { return kind == ViewKind::Ego ? "ego" : "exo"; }

ViewKind parse_view_kind(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "ego" || lower == "0") return ViewKind::Ego;
    if (lower == "exo" || lower == "1") return ViewKind::Exo;
    throw std::invalid_argument("unknown view kind '" + std::string(text) + "'");
}

std::size_t VideoRecord::frame_at(double s) const {
    if (num_frames() == 0) return 0;
    const double idx = std::floor(s * fps + kTimeEps);
    if (idx <= 0.0) return 0;
    return std::min(static_cast<std::size_t>(idx), num_frames() - 1);
}

std::optional<ViewLabel> VideoRecord::view_at(double s) const {
    if (!view_track || view_track->empty()) return std::nullopt;
    const auto& track = *view_track;
    auto it = std::upper_bound(track.begin(), track.end(), s,
                               [](double v, const ViewSpan& span) { return v < span.begin_s; });
    if (it == track.begin()) return std::nullopt;
    --it;
    if (s < it->end_s || (std::next(it) == track.end() && s <= it->end_s + kTimeEps)) return it->label;
    return std::nullopt;
}

void validate(const VideoRecord& r) {
    auto fail = [&](const std::string& msg) { throw ValidationError(r.video_id + ": " + msg); };
    if (r.video_id.empty()) throw ValidationError("empty video_id");
    if (!(r.duration_s > 0.0)) fail("duration_s must be > 0");
    if (!(r.fps > 0.0)) fail("fps must be > 0");
    const double expected = std::floor(r.duration_s * r.fps + kTimeEps);
    const double n = static_cast<double>(r.num_frames());
    if (std::abs(n - expected) > 1.0) {
        fail("frame count " + std::to_string(r.num_frames()) + " inconsistent with duration x fps");
    }
    for (std::size_t i = 0; i < r.narrations.size(); ++i) {
        const auto& seg = r.narrations[i];
        if (seg.begin_s < 0.0) fail("narration begin_s < 0");
        if (!(seg.end_s > seg.begin_s)) fail("narration end_s must exceed begin_s");
        if (i > 0 && seg.begin_s < r.narrations[i - 1].begin_s) fail("narrations not sorted by begin_s");
    }
    if (r.view_track) {
        const auto& track = *r.view_track;
        if (track.empty()) fail("empty view track");
        const double tol = 1e-6 * std::max(1.0, r.duration_s);
        if (std::abs(track.front().begin_s) > tol) fail("view track does not start at 0");
        for (std::size_t i = 0; i < track.size(); ++i) {
            const auto& span = track[i];
            if (!(span.end_s > span.begin_s)) fail("empty view span");
            if (span.label.probability < 0.0 || span.label.probability > 1.0) fail("view probability outside [0,1]");
            if (i > 0 && std::abs(span.begin_s - track[i - 1].end_s) > tol) fail("view track has gap or overlap");
        }
        if (std::abs(track.back().end_s - r.duration_s) > tol) fail("view track does not cover duration");
    }
    for (const auto* stream : {&r.ego_features, &r.exo_features}) {
        if (!*stream) continue;
        if ((*stream)->rows() != r.num_frames() || (*stream)->cols() != r.feat_dim()) {
            fail("candidate stream shape differs from frame features");
        }
    }
    if (r.ego_features.has_value() != r.exo_features.has_value()) fail("multi-view record needs both streams");
}

Sample extract_sample(const VideoRecord& record, double t, const WindowConfig& cfg) {
    Sample s = context_impl(record, t, cfg);
    auto target = target_view(record, t, cfg);
    if (!target) {
        throw SampleRejected(SampleRejected::Reason::UnlabeledTarget,
                             record.video_id + ": unlabeled target at t=" + std::to_string(t));
    }
    s.target = *target;
    return s;
}

SelectorSample extract_selector_sample(const VideoRecord& record, double t, const WindowConfig& cfg,
                                       std::optional<ViewKind> target) {
    if (!record.is_multi_view()) throw ValidationError(record.video_id + ": missing candidate view streams");
    SelectorSample out;
    if (target) {
        out.base = context_impl(record, t, cfg);
        out.base.target = {*target, 1.0};
    } else {
        out.base = extract_sample(record, t, cfg);
    }
    out.ego_candidate_features = candidate_frames(*record.ego_features, record, t, cfg);
    out.exo_candidate_features = candidate_frames(*record.exo_features, record, t, cfg);
    if (out.ego_candidate_features.rows() == 0) throw ValidationError("empty candidate window");
    return out;
}

ViewLabel narration_view(const VideoRecord& record, const NarrationSegment& seg, ViewKind tie_break,
                         std::optional<double> clip_end) {
    Counts c;
    const double begin = std::max(seg.begin_s, 0.0);
    auto first = static_cast<std::size_t>(std::ceil(begin * record.fps - kTimeEps));
    for (std::size_t i = first; i < record.num_frames(); ++i) {
        const double at = record.frame_time(i);
        if (at > seg.end_s + kTimeEps) break;
        if (clip_end && at >= *clip_end) break;
        auto v = record.view_at(at);
        if (!v) throw ValidationError(record.video_id + ": view track does not cover narration");
        count(c, *v);
    }
    if (c.ego + c.exo == 0) throw ValidationError(record.video_id + ": empty narration interval");
    return majority(c, tie_break);
}

FeatureMatrix read_feature_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open feature file " + path.string());
    std::array<unsigned char, 16> header{};
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (in.gcount() != static_cast<std::streamsize>(header.size())) {
        throw IoError("truncated feature header in " + path.string());
    }
    if (std::memcmp(header.data(), kFeatureMagic.data(), kFeatureMagic.size()) != 0) {
        throw IoError("bad feature magic in " + path.string());
    }
    const std::uint32_t rows = get_u32(header.data() + 8);
    const std::uint32_t dim = get_u32(header.data() + 12);
    const std::size_t n = static_cast<std::size_t>(rows) * dim;
    std::vector<unsigned char> payload(n * 4);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
        throw IoError("truncated feature payload in " + path.string());
    }
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<float>(get_u32(payload.data() + 4 * i));
    return FeatureMatrix(rows, dim, std::move(values));
}

void write_feature_file(const std::filesystem::path& path, const FeatureMatrix& features) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write feature file " + path.string());
    out.write(kFeatureMagic.data(), kFeatureMagic.size());
    put_u32(out, static_cast<std::uint32_t>(features.rows()));
    put_u32(out, static_cast<std::uint32_t>(features.cols()));
    for (float v : features.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<VideoRecord> load_manifest(const std::filesystem::path& path) {
    std::vector<VideoRecord> records;
    scan_manifest(
        path, [&](VideoRecord r) { records.push_back(std::move(r)); },
        [](const ManifestFailure&, const Error& e) {
            if (auto* pe = dynamic_cast<const ParseError*>(&e)) throw *pe;
            if (auto* ie = dynamic_cast<const IoError*>(&e)) throw *ie;
            if (auto* ve = dynamic_cast<const ValidationError*>(&e)) throw *ve;
            throw Error(e.what());
        });
    return records;
}

ManifestLoad load_manifest_partial(const std::filesystem::path& path) {
    ManifestLoad out;
    scan_manifest(
        path, [&](VideoRecord r) { out.records.push_back(std::move(r)); },
        [&](const ManifestFailure& f, const Error&) { out.failures.push_back(f); });
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<VideoRecord>& records,
                    const std::filesystem::path& feature_dir) {
    std::filesystem::create_directories(feature_dir);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto base = std::filesystem::absolute(path).parent_path();
    auto stored = [&](const std::filesystem::path& p) {
        const auto abs = std::filesystem::absolute(p);
        auto rel = abs.lexically_relative(base);
        if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
        return abs.generic_string();
    };

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& r : records) {
        json j;
        j["video_id"] = r.video_id;
        j["duration_s"] = r.duration_s;
        j["fps"] = r.fps;
        const auto feat = feature_dir / (r.video_id + ".swavft");
        write_feature_file(feat, r.frame_features);
        j["features"] = stored(feat);
        if (r.is_multi_view()) {
            const auto ego = feature_dir / (r.video_id + ".ego.swavft");
            const auto exo = feature_dir / (r.video_id + ".exo.swavft");
            write_feature_file(ego, *r.ego_features);
            write_feature_file(exo, *r.exo_features);
            j["ego_features"] = stored(ego);
            j["exo_features"] = stored(exo);
        }
        j["narrations"] = json::array();
        for (const auto& n : r.narrations) {
            j["narrations"].push_back({{"text", n.text}, {"begin_s", n.begin_s}, {"end_s", n.end_s}});
        }
        if (r.view_track) {
            j["views"] = json::array();
            for (const auto& v : *r.view_track) {
                j["views"].push_back({{"begin_s", v.begin_s},
                                      {"end_s", v.end_s},
                                      {"kind", std::string(to_string(v.label.kind))},
                                      {"prob", v.label.probability}});
            }
        }
        if (r.scenario) j["scenario"] = *r.scenario;
        out << j.dump() << '\n';
    }
}

}  // namespace swav
