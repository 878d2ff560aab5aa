#include "swav/synth_corpus.hpp"

#include "swav/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

namespace swav {

namespace {

using nlohmann::json;

constexpr double kEps = 1e-9;

std::vector<float> gaussian_vector(std::uint64_t seed, std::size_t dim, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(scale * n(rng));
    return v;
}

ViewKind apply(CueAction a, ViewKind current) {
    switch (a) {
        case CueAction::SetEgo: return ViewKind::Ego;
        case CueAction::SetExo: return ViewKind::Exo;
        case CueAction::Toggle: return other(current);
    }
    return current;
}

std::string_view action_name(CueAction a) {
    switch (a) {
        case CueAction::SetEgo: return "set_ego";
        case CueAction::SetExo: return "set_exo";
        case CueAction::Toggle: return "toggle";
    }
    return "?";
}

std::string_view channel_name(CueChannel c) {
    switch (c) {
        case CueChannel::NextNarration: return "next_narration";
        case CueChannel::PastNarration: return "past_narration";
        case CueChannel::Frames: return "frames";
    }
    return "?";
}

CueAction parse_action(const std::string& s) {
    if (s == "set_ego") return CueAction::SetEgo;
    if (s == "set_exo") return CueAction::SetExo;
    if (s == "toggle") return CueAction::Toggle;
    throw ConfigError("unknown cue action '" + s + "'");
}

CueChannel parse_channel(const std::string& s) {
    if (s == "next_narration") return CueChannel::NextNarration;
    if (s == "past_narration") return CueChannel::PastNarration;
    if (s == "frames") return CueChannel::Frames;
    throw ConfigError("unknown cue channel '" + s + "'");
}

bool bernoulli(std::mt19937_64& rng, double p) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
}

double unit_from_seed(std::uint64_t s) { return static_cast<double>(s >> 11) * 0x1.0p-53; }

ViewKind track_at(const std::vector<ViewSpan>& track, double s) {
    for (const auto& span : track) {
        if (s >= span.begin_s - kEps && s < span.end_s - kEps) return span.label.kind;
    }
    return track.back().label.kind;
}

}  // namespace

std::uint64_t stable_hash(std::string_view text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

SwitchGrammar::SwitchGrammar() {
    for (int i = 0; i < 64; ++i) {
        char buf[8];
        std::snprintf(buf, sizeof buf, "w%02d", i);
        narration_vocab.emplace_back(buf);
    }
}

void SwitchGrammar::validate() const {
    auto prob = [](double p, const char* what) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
    };
    prob(hazard, "hazard");
    prob(boundary_noise, "boundary_noise");
    prob(narration_prob, "narration_prob");
    if (narration_vocab.empty()) throw ConfigError("grammar has an empty narration vocabulary");
    if (feat_dim == 0) throw ConfigError("feat_dim must be positive");
    if (!(centroid_scale > 0.0) || noise_scale < 0.0) throw ConfigError("bad centroid or noise scale");
    if (!(delta_s > 0.0) || !(fps > 0.0)) throw ConfigError("delta_s and fps must be positive");
    if (min_slots < 2 || max_slots < min_slots) throw ConfigError("bad slot range");
    if (min_words == 0 || max_words < min_words) throw ConfigError("bad narration length range");
    if (scenarios.empty()) throw ConfigError("grammar needs at least one scenario");
    const std::set<std::string> vocab(narration_vocab.begin(), narration_vocab.end());
    for (const auto& r : cue_rules) {
        prob(r.firing_prob, "firing_prob");
        if (r.channel != CueChannel::Frames && r.tokens.empty()) throw ConfigError("narration cue without tokens");
        for (const auto& t : r.tokens) {
            if (vocab.count(t)) throw ConfigError("cue token '" + t + "' is also a filler word");
        }
    }
}

SwitchGrammar SwitchGrammar::deterministic_toggle() {
    SwitchGrammar g;
    g.cue_rules = {{{"cutaway"}, CueAction::Toggle, 0.5, CueChannel::NextNarration}};
    g.hazard = 0.0;
    return g;
}

SwitchGrammar SwitchGrammar::split_cues() {
    SwitchGrammar g;
    g.cue_rules = {
        {{"closer"}, CueAction::SetEgo, 0.1, CueChannel::NextNarration},
        {{"overview"}, CueAction::SetExo, 0.1, CueChannel::NextNarration},
        {{"inspect"}, CueAction::SetEgo, 0.1, CueChannel::PastNarration},
        {{"stepback"}, CueAction::SetExo, 0.1, CueChannel::PastNarration},
        {{}, CueAction::SetEgo, 0.1, CueChannel::Frames},
        {{}, CueAction::SetExo, 0.1, CueChannel::Frames},
    };
    g.hazard = 0.05;
    return g;
}

SwitchGrammar SwitchGrammar::pure_hazard(double h) {
    SwitchGrammar g;
    g.hazard = h;
    return g;
}

json to_json(const SwitchGrammar& g) {
    json rules = json::array();
    for (const auto& r : g.cue_rules) {
        rules.push_back({{"tokens", r.tokens},
                         {"action", std::string(action_name(r.action))},
                         {"firing_prob", r.firing_prob},
                         {"channel", std::string(channel_name(r.channel))}});
    }
    return {{"cue_rules", rules},
            {"hazard", g.hazard},
            {"feat_dim", g.feat_dim},
            {"centroid_scale", g.centroid_scale},
            {"noise_scale", g.noise_scale},
            {"centroid_seed", g.centroid_seed},
            {"narration_vocab", g.narration_vocab},
            {"boundary_noise", g.boundary_noise},
            {"boundary_window_s", g.boundary_window_s},
            {"delta_s", g.delta_s},
            {"fps", g.fps},
            {"min_slots", g.min_slots},
            {"max_slots", g.max_slots},
            {"narration_prob", g.narration_prob},
            {"min_words", g.min_words},
            {"max_words", g.max_words},
            {"frame_cue_scale", g.frame_cue_scale},
            {"frame_cue_s", g.frame_cue_s},
            {"initial_view", g.initial_view ? json(std::string(to_string(*g.initial_view))) : json(nullptr)},
            {"scenarios", g.scenarios},
            {"multi_view", g.multi_view}};
}

SwitchGrammar grammar_from_json(const json& j) {
    SwitchGrammar g;
    const json defaults = to_json(g);
    if (j.contains("preset")) {
        const auto p = j.at("preset").get<std::string>();
        if (p == "deterministic_toggle") g = SwitchGrammar::deterministic_toggle();
        else if (p == "split_cues") g = SwitchGrammar::split_cues();
        else if (p == "pure_hazard") g = SwitchGrammar::pure_hazard(j.value("hazard", 0.5));
        else throw ConfigError("unknown grammar preset '" + p + "'");
    }
    for (const auto& [k, v] : j.items()) {
        if (k != "preset" && !defaults.contains(k)) throw ConfigError("unknown grammar key '" + k + "'");
    }
    try {
        if (j.contains("cue_rules")) {
            g.cue_rules.clear();
            for (const auto& r : j.at("cue_rules")) {
                for (const auto& [k, v] : r.items()) {
                    if (k != "tokens" && k != "action" && k != "firing_prob" && k != "channel") {
                        throw ConfigError("unknown cue rule key '" + k + "'");
                    }
                }
                CueRule rule;
                rule.tokens = r.value("tokens", std::vector<std::string>{});
                rule.action = parse_action(r.value("action", std::string("toggle")));
                rule.firing_prob = r.value("firing_prob", 1.0);
                rule.channel = parse_channel(r.value("channel", std::string("next_narration")));
                g.cue_rules.push_back(std::move(rule));
            }
        }
        g.hazard = j.value("hazard", g.hazard);
        g.feat_dim = j.value("feat_dim", g.feat_dim);
        g.centroid_scale = j.value("centroid_scale", g.centroid_scale);
        g.noise_scale = j.value("noise_scale", g.noise_scale);
        g.centroid_seed = j.value("centroid_seed", g.centroid_seed);
        if (j.contains("narration_vocab")) g.narration_vocab = j.at("narration_vocab").get<std::vector<std::string>>();
        g.boundary_noise = j.value("boundary_noise", g.boundary_noise);
        g.boundary_window_s = j.value("boundary_window_s", g.boundary_window_s);
        g.delta_s = j.value("delta_s", g.delta_s);
        g.fps = j.value("fps", g.fps);
        g.min_slots = j.value("min_slots", g.min_slots);
        g.max_slots = j.value("max_slots", g.max_slots);
        g.narration_prob = j.value("narration_prob", g.narration_prob);
        g.min_words = j.value("min_words", g.min_words);
        g.max_words = j.value("max_words", g.max_words);
        g.frame_cue_scale = j.value("frame_cue_scale", g.frame_cue_scale);
        g.frame_cue_s = j.value("frame_cue_s", g.frame_cue_s);
        if (j.contains("initial_view") && !j.at("initial_view").is_null()) {
            g.initial_view = parse_view_kind(j.at("initial_view").get<std::string>());
        }
        if (j.contains("scenarios")) g.scenarios = j.at("scenarios").get<std::vector<std::string>>();
        g.multi_view = j.value("multi_view", g.multi_view);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("grammar: ") + e.what());
    }
    g.validate();
    return g;
}

OracleClassifier::OracleClassifier(const std::vector<VideoRecord>& records, double boundary_noise,
                                   double boundary_window_s, std::uint64_t seed, double clip_len_s)
    : noise_(boundary_noise), window_(boundary_window_s), seed_(seed), clip_len_(clip_len_s) {
    for (const auto& r : records) {
        if (!r.view_track || r.view_track->empty()) throw ValidationError(r.video_id + ": oracle needs a view track");
        Truth t;
        t.track = *r.view_track;
        for (std::size_t i = 1; i < t.track.size(); ++i) {
            if (t.track[i].label.kind != t.track[i - 1].label.kind) t.boundaries.push_back(t.track[i].begin_s);
        }
        truth_[r.video_id] = std::move(t);
    }
}

double OracleClassifier::classify(const ClipView& clip) const {
    auto it = truth_.find(clip.record->video_id);
    if (it == truth_.end()) throw ValidationError("oracle has no ground truth for " + clip.record->video_id);
    const auto& truth = it->second;
    std::size_t ego = 0, exo = 0;
    for (std::size_t i = 0; i < clip.frame_count; ++i) {
        const double at = clip.record->frame_time(clip.first_frame + i);
        (track_at(truth.track, at) == ViewKind::Ego ? ego : exo) += 1;
    }
    bool is_ego = ego > exo;
    const bool near = std::any_of(truth.boundaries.begin(), truth.boundaries.end(), [&](double b) {
        return b >= clip.begin_s - window_ - kEps && b <= clip.end_s + window_ + kEps;
    });
    if (near && noise_ > 0.0) {
        const auto h = kernels::mix_seed(kernels::mix_seed(seed_, stable_hash(clip.record->video_id)),
                                         clip.first_frame);
        if (unit_from_seed(h) < noise_) is_ego = !is_ego;
    }
    return is_ego ? 0.9 : 0.1;
}

SyntheticCorpus generate_corpus(const SwitchGrammar& g, std::size_t n_videos, std::uint64_t seed,
                                const std::string& id_prefix) {
    g.validate();
    if (n_videos == 0) throw ConfigError("n_videos must be at least 1");
    const auto ego_mean = gaussian_vector(kernels::mix_seed(g.centroid_seed, 0), g.feat_dim, g.centroid_scale);
    const auto exo_mean = gaussian_vector(kernels::mix_seed(g.centroid_seed, 1), g.feat_dim, g.centroid_scale);
    if (ego_mean == exo_mean) throw ConfigError("view centroids coincide");
    std::vector<std::vector<float>> cue_vectors;
    for (std::size_t r = 0; r < g.cue_rules.size(); ++r) {
        cue_vectors.push_back(gaussian_vector(kernels::mix_seed(g.centroid_seed, 100 + r), g.feat_dim,
                                              g.frame_cue_scale));
    }

    SyntheticCorpus out;
    for (std::size_t v = 0; v < n_videos; ++v) {
        std::mt19937_64 rng(kernels::mix_seed(seed, v));
        std::normal_distribution<double> noise(0.0, 1.0);
        const auto n_slots = std::uniform_int_distribution<std::size_t>(g.min_slots, g.max_slots)(rng);

        std::vector<ViewKind> view(n_slots);
        std::vector<int> fired(n_slots, -1);  // rule deciding boundary k
        view[0] = g.initial_view ? *g.initial_view : (bernoulli(rng, 0.5) ? ViewKind::Ego : ViewKind::Exo);
        for (std::size_t k = 1; k < n_slots; ++k) {
            for (std::size_t r = 0; r < g.cue_rules.size(); ++r) {
                const bool f = bernoulli(rng, g.cue_rules[r].firing_prob);
                if (f && fired[k] < 0) fired[k] = static_cast<int>(r);
            }
            const bool hazard = bernoulli(rng, g.hazard);
            if (fired[k] >= 0) {
                view[k] = apply(g.cue_rules[static_cast<std::size_t>(fired[k])].action, view[k - 1]);
            } else {
                view[k] = hazard ? other(view[k - 1]) : view[k - 1];
            }
        }

        VideoRecord rec;
        char id[64];
        std::snprintf(id, sizeof id, "%s_%05zu", id_prefix.c_str(), v);
        rec.video_id = id;
        rec.fps = g.fps;
        rec.duration_s = static_cast<double>(n_slots) * g.delta_s;
        rec.scenario = g.scenarios[std::uniform_int_distribution<std::size_t>(0, g.scenarios.size() - 1)(rng)];

        std::uniform_int_distribution<std::size_t> word(0, g.narration_vocab.size() - 1);
        std::uniform_int_distribution<std::size_t> length(g.min_words, g.max_words);
        std::uniform_real_distribution<double> margin(0.1, 0.4);
        for (std::size_t k = 0; k < n_slots; ++k) {
            std::vector<std::string> cues;
            if (fired[k] >= 0 && g.cue_rules[static_cast<std::size_t>(fired[k])].channel == CueChannel::NextNarration) {
                const auto& t = g.cue_rules[static_cast<std::size_t>(fired[k])].tokens;
                cues.insert(cues.end(), t.begin(), t.end());
            }
            if (k + 1 < n_slots && fired[k + 1] >= 0 &&
                g.cue_rules[static_cast<std::size_t>(fired[k + 1])].channel == CueChannel::PastNarration) {
                const auto& t = g.cue_rules[static_cast<std::size_t>(fired[k + 1])].tokens;
                cues.insert(cues.end(), t.begin(), t.end());
            }
            const bool has = bernoulli(rng, g.narration_prob);
            if (!has && cues.empty()) continue;
            std::vector<std::string> words(length(rng));
            for (auto& w : words) w = g.narration_vocab[word(rng)];
            for (const auto& c : cues) {
                const auto at = std::uniform_int_distribution<std::size_t>(0, words.size())(rng);
                words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), c);
            }
            std::string text;
            for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
            const double a = margin(rng);
            const double b = margin(rng);
            const double begin = static_cast<double>(k) * g.delta_s;
            rec.narrations.push_back({text, begin + a, begin + g.delta_s - b});
        }

        const auto n_frames = static_cast<std::size_t>(std::llround(rec.duration_s * g.fps));
        rec.frame_features = FeatureMatrix(n_frames, g.feat_dim);
        if (g.multi_view) {
            rec.ego_features = FeatureMatrix(n_frames, g.feat_dim);
            rec.exo_features = FeatureMatrix(n_frames, g.feat_dim);
        }
        for (std::size_t i = 0; i < n_frames; ++i) {
            const double at = rec.frame_time(i);
            const auto slot = std::min(n_slots - 1, static_cast<std::size_t>(std::floor(at / g.delta_s + kEps)));
            if (g.multi_view) {
                for (std::size_t d = 0; d < g.feat_dim; ++d) {
                    (*rec.ego_features)(i, d) = static_cast<float>(ego_mean[d] + g.noise_scale * noise(rng));
                    (*rec.exo_features)(i, d) = static_cast<float>(exo_mean[d] + g.noise_scale * noise(rng));
                }
                const auto& src = view[slot] == ViewKind::Ego ? *rec.ego_features : *rec.exo_features;
                std::copy(src.row(i).begin(), src.row(i).end(), rec.frame_features.row(i).begin());
            } else {
                const auto& mean = view[slot] == ViewKind::Ego ? ego_mean : exo_mean;
                for (std::size_t d = 0; d < g.feat_dim; ++d) {
                    rec.frame_features(i, d) = static_cast<float>(mean[d] + g.noise_scale * noise(rng));
                }
            }
            // frame cues sit on the last frames before the boundary they announce
            const std::size_t next = slot + 1;
            if (next < n_slots && fired[next] >= 0 &&
                g.cue_rules[static_cast<std::size_t>(fired[next])].channel == CueChannel::Frames &&
                at >= static_cast<double>(next) * g.delta_s - g.frame_cue_s - kEps) {
                const auto& cue = cue_vectors[static_cast<std::size_t>(fired[next])];
                for (std::size_t d = 0; d < g.feat_dim; ++d) rec.frame_features(i, d) += cue[d];
            }
        }

        std::vector<ViewSpan> track;
        for (std::size_t k = 0; k < n_slots; ++k) {
            const double b = static_cast<double>(k) * g.delta_s;
            if (!track.empty() && track.back().label.kind == view[k]) {
                track.back().end_s = b + g.delta_s;
            } else {
                track.push_back({b, b + g.delta_s, {view[k], 1.0}});
            }
        }
        rec.view_track = std::move(track);
        validate(rec);
        out.records.push_back(std::move(rec));
    }
    out.oracle = std::make_shared<OracleClassifier>(out.records, g.boundary_noise, g.boundary_window_s,
                                                    kernels::mix_seed(seed, 0xC11Full));
    return out;
}

std::vector<LimitedLabel> generate_limited_labels(const std::vector<VideoRecord>& records, std::size_t n,
                                                  const WindowConfig& window, std::uint64_t seed) {
    std::vector<LimitedLabel> pool;
    for (const auto& r : records) {
        if (!r.view_track) throw ValidationError(r.video_id + ": labels need a view track");
        for (long k = 0;; ++k) {
            const double t = static_cast<double>(k) * window.delta_s;
            if (t + window.delta_s > r.duration_s + kEps) break;
            if (t + kEps < window.past_frame_s) continue;
            const auto v = r.view_at(t + 0.5 * window.delta_s);
            if (!v) continue;
            pool.push_back({r.video_id, t, v->kind});
        }
    }
    if (n > pool.size()) {
        throw ValidationError("asked for " + std::to_string(n) + " labels but only " + std::to_string(pool.size()) +
                              " instances exist");
    }
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    std::vector<LimitedLabel> out;
    for (auto i : idx) out.push_back(pool[i]);
    return out;
}

std::vector<AnnotationInstance> generate_votes(const std::vector<LimitedLabel>& labels, std::uint64_t seed,
                                               std::size_t n_annotators, double min_accuracy) {
    if (n_annotators == 0) throw ConfigError("need at least one annotator");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> acc(min_accuracy, 1.0);
    std::vector<AnnotationInstance> out;
    for (const auto& l : labels) {
        AnnotationInstance a;
        a.instance_id = instance_key(l.video_id, l.t);
        const double p = acc(rng);
        for (std::size_t k = 0; k < n_annotators; ++k) a.votes.push_back(bernoulli(rng, p) ? l.target : other(l.target));
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace swav
