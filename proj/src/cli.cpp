#include "swav/cli.hpp"

#include "swav/baselines.hpp"
#include "swav/evaluation.hpp"
#include "swav/kernels.hpp"
#include "swav/pseudo_labeler.hpp"
#include "swav/synth_corpus.hpp"
#include "swav/view_selector.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>

namespace swav::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "usage_error"; }
};

// Subtrees whose keys are validated by their own parsers.
const std::set<std::string> kFreeForm{"model", "synth.grammar"};

void merge_strict(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (const auto& [k, v] : user.items()) {
        const std::string path = prefix.empty() ? k : prefix + "." + k;
        if (!base.contains(k)) throw ConfigError("unknown config key '" + path + "'");
        json& slot = base[k];
        if (kFreeForm.count(path)) {
            if (!v.is_object()) throw ConfigError("config section '" + path + "' must be an object");
            slot = v;
        } else if (slot.is_object()) {
            merge_strict(slot, v, path);
        } else if (slot.is_null() || v.is_null() || (slot.is_number() && v.is_number()) ||
                   slot.type() == v.type()) {
            slot = v;
        } else {
            throw ConfigError("config key '" + path + "' has the wrong type");
        }
    }
}

std::size_t get_count(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<std::size_t>();
    if (v.is_number_float() && v.get<double>() >= 0 && std::floor(v.get<double>()) == v.get<double>()) {
        return static_cast<std::size_t>(v.get<double>());
    }
    throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
}

double get_num(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(std::string("config key '") + key + "' must be a number");
    return v.get<double>();
}

std::optional<std::string> get_path(const json& cfg, const char* key) {
    const auto& v = cfg.at("paths").at(key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_string()) throw ConfigError(std::string("paths.") + key + " must be a string");
    return v.get<std::string>();
}

std::string require_path(const json& cfg, const char* key, const char* flag) {
    auto p = get_path(cfg, key);
    if (!p) throw UsageError(std::string(flag) + " is required");
    return *p;
}

json window_json(const WindowConfig& w, double stride) {
    return {{"past_frame_s", w.past_frame_s},
            {"past_narration_s", w.past_narration_s},
            {"delta_s", w.delta_s},
            {"sample_rate", w.sample_rate},
            {"stride_s", stride},
            {"tie_break", std::string(to_string(w.tie_break))}};
}

WindowConfig window_from(const json& w) {
    WindowConfig c;
    c.past_frame_s = get_num(w, "past_frame_s");
    c.past_narration_s = get_num(w, "past_narration_s");
    c.delta_s = get_num(w, "delta_s");
    c.sample_rate = get_num(w, "sample_rate");
    try {
        c.tie_break = parse_view_kind(w.at("tie_break").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("window.tie_break: ") + e.what());
    }
    if (!(c.past_frame_s > 0) || !(c.past_narration_s >= 0) || !(c.delta_s > 0) || !(c.sample_rate > 0)) {
        throw ConfigError("window lengths and sample_rate must be positive");
    }
    return c;
}

double stride_from(const json& w) {
    const double s = get_num(w, "stride_s");
    if (!(s > 0)) throw ConfigError("window.stride_s must be positive");
    return s;
}

TrainConfig train_from(const json& cfg) {
    const auto& t = cfg.at("train");
    TrainConfig c;
    c.epochs = get_count(t, "epochs");
    c.batch_size = get_count(t, "batch_size");
    c.lr = get_num(t, "lr");
    c.weight_decay = get_num(t, "weight_decay");
    c.beta1 = get_num(t, "beta1");
    c.beta2 = get_num(t, "beta2");
    c.adam_eps = get_num(t, "adam_eps");
    c.grad_clip = get_num(t, "grad_clip");
    c.patience = get_count(t, "patience");
    if (!t.at("target_val_bacc").is_null()) c.target_val_bacc = get_num(t, "target_val_bacc");
    c.seed = cfg.at("seed").get<std::uint64_t>();
    if (c.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    return c;
}

ApMode ap_mode_from(const std::string& s) {
    if (s == "macro") return ApMode::Macro;
    if (s == "ego_positive") return ApMode::EgoPositive;
    throw ConfigError("eval.ap_mode must be 'macro' or 'ego_positive'");
}

InputMask mask_from_drops(const std::vector<std::string>& drops) {
    InputMask m;
    for (const auto& d : drops) {
        if (d == "F") m.frames = false;
        else if (d == "N") m.past_narrations = false;
        else if (d == "Nprime") m.next_narration = false;
        else throw UsageError("--drop accepts F, N or Nprime, got '" + d + "'");
    }
    if (!m.frames && !m.past_narrations && !m.next_narration) {
        throw UsageError("--drop cannot remove all three inputs");
    }
    return m;
}

json drops_json(const InputMask& m) {
    json d = json::array();
    if (!m.frames) d.push_back("F");
    if (!m.past_narrations) d.push_back("N");
    if (!m.next_narration) d.push_back("Nprime");
    return d;
}

InputMask mask_from_json(const json& run_config) {
    if (!run_config.contains("drop")) return {};
    return mask_from_drops(run_config.at("drop").get<std::vector<std::string>>());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config ") + path.string() + ": " + e.what(), 1);
    }
}

struct Run {
    std::string command;
    fs::path dir;
    json config;
    std::uint64_t seed = 0;
    std::ofstream log_file;

    void log(const std::string& line) {
        log_file << line << '\n';
        log_file.flush();
    }
};

std::map<std::string, std::string> scenario_map(const std::vector<VideoRecord>& records) {
    std::map<std::string, std::string> m;
    for (const auto& r : records) m[r.video_id] = r.scenario.value_or("unknown");
    return m;
}

std::vector<EvalInstance> instances_for(const std::vector<Sample>& samples,
                                        const std::map<std::string, std::string>& scen) {
    std::vector<EvalInstance> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        auto it = scen.find(s.video_id);
        out.push_back(eval_instance(s, it == scen.end() ? "unknown" : it->second));
    }
    return out;
}

std::vector<Sample> bases(const std::vector<SelectorSample>& s) {
    std::vector<Sample> out;
    out.reserve(s.size());
    for (const auto& x : s) out.push_back(x.base);
    return out;
}

// Raises max_seq_len / max_bins when the data needs more room, and adopts
// the feature width of the data.
json fit_model_config(ModelConfig& mc, const std::vector<Sample>& samples, const WindowConfig& w) {
    json notes = json::object();
    if (!samples.empty()) {
        const std::size_t fd = samples.front().past_frame_features.cols();
        if (fd != mc.encoder.feat_dim) {
            notes["feat_dim"] = fd;
            mc.encoder.feat_dim = fd;
        }
    }
    std::size_t need = 0;
    for (const auto& s : samples) need = std::max(need, s.past_frame_features.rows() + s.past_narrations.size() + 2);
    if (need > mc.aggregator.max_seq_len) {
        notes["max_seq_len"] = need;
        mc.aggregator.max_seq_len = need;
    }
    const auto bins = static_cast<std::size_t>(
        std::ceil((w.past_narration_s + w.delta_s) / mc.encoder.bin_size_s - 1e-9)) + 1;
    if (bins > mc.encoder.max_bins) {
        notes["max_bins"] = bins;
        mc.encoder.max_bins = bins;
    }
    return notes;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << v;
    return os.str();
}

void log_history(Run& run, const TrainHistory& h) {
    for (const auto& e : h.epochs) {
        run.log("epoch " + std::to_string(e.epoch) + " train_loss " + fmt_double(e.train_loss) + " val_loss " +
                fmt_double(e.val_loss) + " val_bacc " + fmt_double(e.val_bacc));
    }
    run.log("best_epoch " + std::to_string(h.best_epoch) + " best_val_bacc " + fmt_double(h.best_val_bacc) +
            (h.stopped_early ? " (stopped early)" : ""));
}

// ---------------------------------------------------------------- synth-gen

json cmd_synth_gen(Run& run) {
    const auto& s = run.config.at("synth");
    const SwitchGrammar g = grammar_from_json(s.at("grammar"));
    const std::size_t n_videos = get_count(s, "n_videos");
    if (n_videos == 0) throw UsageError("--n-videos must be positive");
    const std::size_t labels_n = get_count(s, "labels_n");
    const bool votes = s.at("votes").get<bool>();
    if (votes && labels_n == 0) throw UsageError("--votes needs --labels N");

    const auto corpus = generate_corpus(g, n_videos, run.seed, s.at("id_prefix").get<std::string>());
    write_manifest(run.dir / "manifest.jsonl", corpus.records, run.dir / "features");

    std::size_t n_frames = 0, n_narr = 0, n_switch = 0, n_bound = 0;
    for (const auto& r : corpus.records) {
        n_frames += r.num_frames();
        n_narr += r.narrations.size();
        const auto& tr = *r.view_track;
        for (std::size_t i = 1; i < tr.size(); ++i) n_switch += tr[i].label.kind != tr[i - 1].label.kind;
        const auto slots = static_cast<std::size_t>(std::floor(r.duration_s / g.delta_s + 1e-9));
        n_bound += slots > 0 ? slots - 1 : 0;
    }
    json m = {{"n_videos", corpus.records.size()},
              {"n_frames", n_frames},
              {"n_narrations", n_narr},
              {"n_switches", n_switch},
              {"switch_rate", n_bound ? static_cast<double>(n_switch) / static_cast<double>(n_bound) : 0.0},
              {"grammar", to_json(g)},
              {"outputs", {"manifest.jsonl", "features/"}}};
    run.log("generated " + std::to_string(corpus.records.size()) + " videos, " + std::to_string(n_switch) +
            " switches");

    if (labels_n > 0) {
        const auto labels = generate_limited_labels(corpus.records, labels_n, window_from(run.config.at("window")),
                                                    kernels::mix_seed(run.seed, 1));
        write_limited_labels(run.dir / "labels.jsonl", labels);
        m["n_labels"] = labels.size();
        m["outputs"].push_back("labels.jsonl");
        if (votes) {
            const auto v = generate_votes(labels, kernels::mix_seed(run.seed, 2), get_count(s, "n_annotators"),
                                          get_num(s, "min_annotator_accuracy"));
            write_votes(run.dir / "votes.jsonl", v);
            m["n_vote_instances"] = v.size();
            m["outputs"].push_back("votes.jsonl");
        }
    }
    return m;
}

// ------------------------------------------------------------- pseudo-label

json cmd_pseudo_label(Run& run) {
    const auto& p = run.config.at("pseudo_label");
    const auto records = load_manifest(require_path(run.config, "manifest", "--manifest"));
    for (const auto& r : records) {
        if (!r.view_track) throw ValidationError("video " + r.video_id + " has no view track for the oracle");
    }
    PseudoLabelMode mode;
    try {
        mode = parse_pseudo_label_mode(p.at("mode").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("--mode: ") + e.what());
    }
    const OracleClassifier oracle(records, get_num(p, "boundary_noise"), get_num(p, "boundary_window_s"), run.seed,
                                  get_num(p, "clip_len_s"));
    const ShotDetectorConfig det{get_num(p, "threshold"), get_num(p, "min_shot_len_s")};
    const auto sets = pseudo_label_corpus(records, oracle, mode, det);

    std::ofstream f(run.dir / "pseudo_labels.jsonl");
    if (!f) throw IoError("cannot write pseudo_labels.jsonl");
    std::vector<VideoRecord> relabeled;
    double acc_sum = 0.0;
    std::size_t n_shots = 0, n_frames = 0, n_correct_frames = 0;
    json per_video = json::array();
    for (std::size_t i = 0; i < records.size(); ++i) {
        f << to_json(sets[i]).dump() << '\n';
        const double acc = frame_accuracy(sets[i], records[i]);
        acc_sum += acc;
        n_shots += sets[i].shots.size();
        n_frames += records[i].num_frames();
        n_correct_frames += static_cast<std::size_t>(std::llround(acc * static_cast<double>(records[i].num_frames())));
        per_video.push_back({{"video_id", records[i].video_id}, {"frame_accuracy", acc},
                             {"n_shots", sets[i].shots.size()}});
        relabeled.push_back(with_pseudo_labels(records[i], sets[i]));
    }
    write_manifest(run.dir / "manifest.jsonl", relabeled, run.dir / "features");
    const double mean_acc = records.empty() ? 0.0 : acc_sum / static_cast<double>(records.size());
    run.log("mode " + std::string(to_string(mode)) + " mean frame accuracy " + fmt_double(mean_acc));
    return {{"mode", std::string(to_string(mode))},
            {"n_videos", records.size()},
            {"n_shots", n_shots},
            {"mean_frame_accuracy", mean_acc},
            {"pooled_frame_accuracy",
             n_frames ? static_cast<double>(n_correct_frames) / static_cast<double>(n_frames) : 0.0},
            {"per_video", per_video},
            {"outputs", {"pseudo_labels.jsonl", "manifest.jsonl", "features/"}}};
}

// ------------------------------------------------------------ train-detector

struct DetectorRun {
    ViewModel model;
    TrainHistory history;
    json metrics;
};

DetectorRun run_detector(Run& run, const WindowConfig& w, double stride, const InputMask& mask,
                         const fs::path& ckpt_path) {
    const auto records = load_manifest(require_path(run.config, "manifest", "--manifest"));
    auto scen = scenario_map(records);
    std::vector<Sample> train, val;
    if (auto vm = get_path(run.config, "val_manifest")) {
        const auto vrec = load_manifest(*vm);
        for (const auto& [k, v] : scenario_map(vrec)) scen[k] = v;
        train = build_samples(records, w, stride);
        val = build_samples(vrec, w, stride);
    } else {
        auto split = split_by_video(build_samples(records, w, stride),
                                    get_num(run.config.at("train"), "val_fraction"), run.seed);
        train = std::move(split.train);
        val = std::move(split.val);
    }
    if (train.empty()) throw ValidationError("no training samples: videos are shorter than the context window");

    ModelConfig mc = model_config_from_json(run.config.at("model"));
    std::vector<Sample> all = train;
    all.insert(all.end(), val.begin(), val.end());
    const json adjusted = fit_model_config(mc, all, w);
    if (!adjusted.empty()) run.log("model config adjusted to the data: " + adjusted.dump());
    const auto vocab = Vocabulary::build(records, get_count(run.config.at("vocab"), "max_size"));

    TrainConfig tc = train_from(run.config);
    tc.mask = mask;
    DetectorRun out{init_model(mc, vocab, run.seed), {}, {}};
    run.log("train " + std::to_string(train.size()) + " samples, val " + std::to_string(val.size()));
    out.history = train_detector(out.model, train, val, tc);
    log_history(run, out.history);

    json report = nullptr;
    if (!val.empty()) {
        std::vector<Prediction> preds;
        preds.reserve(val.size());
        for (const auto& s : val) preds.push_back(detector_forward(out.model, s, mask));
        const auto inst = instances_for(val, scen);
        auto r = balanced_report(preds, inst,
                                 ap_mode_from(run.config.at("eval").at("ap_mode").get<std::string>()));
        r.system = "model";
        report = to_json(r);
    }

    CheckpointMeta meta;
    meta.history = to_json(out.history);
    meta.run_config = {{"window", window_json(w, stride)}, {"drop", drops_json(mask)}, {"train", to_json(tc)}};
    save_checkpoint(ckpt_path, out.model, meta);

    out.metrics = {{"n_train", train.size()},
                   {"n_val", val.size()},
                   {"window", window_json(w, stride)},
                   {"drop", drops_json(mask)},
                   {"model_config", to_json(mc)},
                   {"model_adjustments", adjusted},
                   {"trainable_parameters", out.model.params.parameter_count(true)},
                   {"history", to_json(out.history)},
                   {"validation", report}};
    return out;
}

json cmd_train_detector(Run& run) {
    const auto& wj = run.config.at("window");
    auto d = run_detector(run, window_from(wj), stride_from(wj), {}, run.dir / "detector.ckpt");
    d.metrics["checkpoint"] = "detector.ckpt";
    return d.metrics;
}

json cmd_ablate(Run& run) {
    const auto drops = run.config.at("ablate").at("drop").get<std::vector<std::string>>();
    const InputMask mask = mask_from_drops(drops);
    const auto& wj = run.config.at("window");
    auto d = run_detector(run, window_from(wj), stride_from(wj), mask, run.dir / "detector.ckpt");
    json kept = json::array();
    if (mask.frames) kept.push_back("F");
    if (mask.past_narrations) kept.push_back("N");
    if (mask.next_narration) kept.push_back("Nprime");
    d.metrics["inputs"] = kept;
    d.metrics["checkpoint"] = "detector.ckpt";
    return d.metrics;
}

// --------------------------------------------------------- finetune-selector

struct SelectorSplit {
    std::vector<SelectorSample> train, val, test;
};

// Whole videos per part; a fraction of zero leaves the part empty.
std::pair<std::vector<SelectorSample>, std::vector<SelectorSample>> split_videos(
    const std::vector<SelectorSample>& samples, double fraction, std::uint64_t seed) {
    std::set<std::string> id_set;
    for (const auto& s : samples) id_set.insert(s.base.video_id);
    std::vector<std::string> ids(id_set.begin(), id_set.end());
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
    if (fraction > 0.0 && ids.size() > 1) n = std::clamp<std::size_t>(n, 1, ids.size() - 1);
    const std::set<std::string> held(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    std::pair<std::vector<SelectorSample>, std::vector<SelectorSample>> out;
    for (const auto& s : samples) (held.count(s.base.video_id) ? out.second : out.first).push_back(s);
    return out;
}

struct SelectorRun {
    json metrics;
};

SelectorRun run_selector(Run& run, std::optional<std::size_t> labels_n, const fs::path& ckpt_path) {
    const auto& sel = run.config.at("selector");
    const bool from_scratch = sel.at("from_scratch").get<bool>();
    const auto det_path = get_path(run.config, "detector");
    if (!det_path && !from_scratch) throw UsageError("--detector is required unless --from-scratch is given");
    std::optional<JointFinetuneConfig> joint;
    if (!sel.at("alpha").is_null()) {
        const double a = get_num(sel, "alpha");
        if (!(a >= 0.0)) throw UsageError("--alpha must be non-negative");
        joint = JointFinetuneConfig{a, {}};
    }

    const auto records = load_manifest(require_path(run.config, "manifest", "--manifest"));
    for (const auto& r : records) {
        if (!r.is_multi_view()) throw ValidationError("video " + r.video_id + " lacks ego/exo streams");
    }
    const auto scen = scenario_map(records);

    std::optional<ViewModel> detector;
    CheckpointMeta det_meta;
    WindowConfig w = window_from(run.config.at("window"));
    double stride = stride_from(run.config.at("window"));
    if (det_path) {
        detector = load_checkpoint(*det_path, &det_meta);
        if (detector->component != Component::Detector) throw ConfigError("--detector must be a detector checkpoint");
        if (det_meta.run_config.contains("window")) {
            w = window_from(det_meta.run_config.at("window"));
            stride = stride_from(det_meta.run_config.at("window"));
        }
    }

    const auto labels = load_limited_labels(require_path(run.config, "labels", "--labels"));
    const auto samples = build_selector_samples(records, labels, w);
    SelectorSplit split;
    if (auto tl = get_path(run.config, "test_labels")) {
        split.test = build_selector_samples(records, load_limited_labels(*tl), w);
        auto tv = split_videos(samples, get_num(run.config.at("train"), "val_fraction"), kernels::mix_seed(run.seed, 3));
        split.train = std::move(tv.first);
        split.val = std::move(tv.second);
    } else {
        auto tt = split_videos(samples, get_num(sel, "test_fraction"), run.seed);
        split.test = std::move(tt.second);
        auto tv = split_videos(tt.first, get_num(run.config.at("train"), "val_fraction"), kernels::mix_seed(run.seed, 3));
        split.train = std::move(tv.first);
        split.val = std::move(tv.second);
    }
    const std::size_t available = split.train.size();
    if (labels_n) split.train = subsample_labels(split.train, *labels_n, kernels::mix_seed(run.seed, 4));
    if (split.train.empty()) throw ValidationError("no selector training labels");

    if (!detector) {
        ModelConfig mc = model_config_from_json(run.config.at("model"));
        auto all = bases(samples);
        fit_model_config(mc, all, w);
        detector = init_model(mc, Vocabulary::build(records, get_count(run.config.at("vocab"), "max_size")),
                              kernels::mix_seed(run.seed, 5));
    }
    const ModelConfig sel_cfg = selector_config(detector->config, candidate_token_count(w));
    ViewModel selector = from_scratch ? init_selector_from_scratch(*detector, sel_cfg, run.seed)
                                      : init_from_detector(*detector, sel_cfg, run.seed);
    const TrainConfig tc = train_from(run.config);
    run.log("selector train " + std::to_string(split.train.size()) + " of " + std::to_string(available) +
            ", val " + std::to_string(split.val.size()) + ", test " + std::to_string(split.test.size()) +
            (from_scratch ? ", from scratch" : ", from detector"));
    const auto hist = finetune_selector(selector, split.train, split.val, tc, joint);
    log_history(run, hist);

    json report = nullptr;
    if (!split.test.empty()) {
        std::vector<Prediction> preds;
        for (const auto& s : split.test) preds.push_back(selector_forward(selector, s));
        auto r = balanced_report(preds, instances_for(bases(split.test), scen),
                                 ap_mode_from(run.config.at("eval").at("ap_mode").get<std::string>()));
        r.system = "model";
        report = to_json(r);
    }
    CheckpointMeta meta;
    meta.history = to_json(hist);
    meta.run_config = {{"window", window_json(w, stride)},
                       {"train", to_json(tc)},
                       {"alpha", joint ? json(joint->alpha) : json(nullptr)},
                       {"from_scratch", from_scratch}};
    save_checkpoint(ckpt_path, selector, meta);
    return {{{"n_train", split.train.size()},
             {"n_train_available", available},
             {"n_val", split.val.size()},
             {"n_test", split.test.size()},
             {"labels_n", labels_n ? json(*labels_n) : json(nullptr)},
             {"from_scratch", from_scratch},
             {"alpha", joint ? json(joint->alpha) : json(nullptr)},
             {"window", window_json(w, stride)},
             {"history", to_json(hist)},
             {"test", report}}};
}

std::optional<std::size_t> labels_n_from(const json& sel) {
    if (sel.at("labels_n").is_null()) return std::nullopt;
    return get_count(sel, "labels_n");
}

json cmd_finetune_selector(Run& run) {
    auto r = run_selector(run, labels_n_from(run.config.at("selector")), run.dir / "selector.ckpt");
    r.metrics["checkpoint"] = "selector.ckpt";
    return r.metrics;
}

// --------------------------------------------------------------------- eval

struct System {
    std::string name;
    std::function<Prediction(const Sample&)> on_sample;
    std::function<Prediction(const SelectorSample&)> on_selector;
};

struct EvalContext {
    std::optional<ViewModel> model;
    CheckpointMeta meta;
    std::optional<std::vector<Sample>> retrieval_train;
    std::optional<Vocabulary> train_vocab;
};

System make_system(const std::string& spec, Run& run, EvalContext& ctx, const WindowConfig& w, double stride,
                   bool selector_mode) {
    if (spec == "model") {
        if (!ctx.model) throw UsageError("--system model needs --checkpoint");
        const ViewModel* m = &*ctx.model;
        const bool is_sel = m->component == Component::Selector;
        if (is_sel != selector_mode) {
            throw UsageError(selector_mode ? "--labels evaluation needs a selector checkpoint"
                                           : "a selector checkpoint needs --labels");
        }
        const InputMask mask = mask_from_json(ctx.meta.run_config);
        return {"model", [m, mask](const Sample& s) { return detector_forward(*m, s, mask); },
                [m, mask](const SelectorSample& s) { return selector_forward(*m, s, mask); }};
    }
    const std::string prefix = "baseline:";
    if (spec.rfind(prefix, 0) != 0) throw UsageError("--system must be 'model' or 'baseline:<name>'");
    BaselineKind kind;
    try {
        kind = parse_baseline(spec.substr(prefix.size()));
    } catch (const std::exception& e) {
        throw UsageError(std::string("--system: ") + e.what());
    }
    BaselineSpec bs;
    bs.kind = kind;
    bs.rng_seed = run.seed;
    if (ctx.model) bs.text = token_table_embedder(*ctx.model);
    if (kind == BaselineKind::VnSim) {
        if (!ctx.model) throw UsageError("baseline:vn_sim needs --checkpoint");
        if (!selector_mode) throw UsageError("baseline:vn_sim needs --labels");
        bs.model = &*ctx.model;
    }
    if (is_retrieval(kind)) {
        if (!ctx.retrieval_train) {
            const auto tm = get_path(run.config, "train_manifest");
            if (!tm) throw UsageError("retrieval baselines need --train-manifest");
            const auto trec = load_manifest(*tm);
            ctx.retrieval_train = build_samples(trec, w, stride);
            ctx.train_vocab = Vocabulary::build(trec, get_count(run.config.at("vocab"), "max_size"));
        }
        if (!bs.text) bs.text = bag_of_words_embedder(*ctx.train_vocab);
        bs.train_index = build_retrieval_index(kind, *ctx.retrieval_train, bs.text);
    }
    auto pred = std::make_shared<BaselinePredictor>(std::move(bs));
    return {spec, [pred](const Sample& s) { return pred->predict(s); },
            [pred](const SelectorSample& s) { return pred->predict(s); }};
}

json cmd_eval(Run& run) {
    const auto& ev = run.config.at("eval");
    const std::string system_spec = ev.at("system").get<std::string>();
    const bool by_scenario = ev.at("by_scenario").get<bool>();
    const auto votes_path = get_path(run.config, "votes");
    const bool has_threshold = !ev.at("agreement_threshold").is_null();
    if (has_threshold != votes_path.has_value()) {
        throw UsageError("--agreement-threshold and --votes must be given together");
    }
    const auto records = load_manifest(require_path(run.config, "manifest", "--manifest"));
    const auto scen = scenario_map(records);

    EvalContext ctx;
    WindowConfig w = window_from(run.config.at("window"));
    double stride = stride_from(run.config.at("window"));
    if (auto cp = get_path(run.config, "checkpoint")) {
        ctx.model = load_checkpoint(*cp, &ctx.meta);
        if (ctx.meta.run_config.contains("window")) {
            w = window_from(ctx.meta.run_config.at("window"));
            stride = stride_from(ctx.meta.run_config.at("window"));
        }
    }
    const auto labels_path = get_path(run.config, "labels");
    const bool selector_mode = labels_path.has_value();

    std::vector<Sample> samples;
    std::vector<SelectorSample> sel_samples;
    if (selector_mode) sel_samples = build_selector_samples(records, load_limited_labels(*labels_path), w);
    else samples = build_samples(records, w, stride);

    json agreement = nullptr;
    if (has_threshold) {
        const auto& tv = ev.at("agreement_threshold");
        double thr;
        try {
            thr = tv.is_string() ? parse_agreement_threshold(tv.get<std::string>()) : tv.get<double>();
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("--agreement-threshold: ") + e.what());
        }
        const auto all_votes = load_votes(*votes_path);
        const auto accepted = filter_instances(all_votes, thr);
        std::map<std::string, ViewKind> keep;
        for (const auto& a : accepted) keep[a.instance_id] = *a.accepted_label;
        const std::size_t before = selector_mode ? sel_samples.size() : samples.size();
        auto retarget = [&keep](Sample& s) {
            auto it = keep.find(instance_key(s.video_id, s.t));
            if (it == keep.end()) return false;
            s.target = ViewLabel{it->second, 1.0};
            return true;
        };
        if (selector_mode) {
            std::vector<SelectorSample> kept;
            for (auto& s : sel_samples) if (retarget(s.base)) kept.push_back(std::move(s));
            sel_samples = std::move(kept);
        } else {
            std::vector<Sample> kept;
            for (auto& s : samples) if (retarget(s)) kept.push_back(std::move(s));
            samples = std::move(kept);
        }
        agreement = {{"threshold", thr},
                     {"n_vote_instances", all_votes.size()},
                     {"n_accepted_votes", accepted.size()},
                     {"n_before", before},
                     {"n_after", selector_mode ? sel_samples.size() : samples.size()}};
        run.log("agreement filter kept " + agreement["n_after"].dump() + " of " + std::to_string(before));
    }
    const std::vector<Sample> base_samples = selector_mode ? bases(sel_samples) : samples;
    if (base_samples.empty()) throw ValidationError("no evaluation instances");
    const auto inst = instances_for(base_samples, scen);

    auto predict_all = [&](System& sys) {
        std::vector<Prediction> p;
        p.reserve(base_samples.size());
        if (selector_mode) for (const auto& s : sel_samples) p.push_back(sys.on_selector(s));
        else for (const auto& s : samples) p.push_back(sys.on_sample(s));
        return p;
    };
    System sys = make_system(system_spec, run, ctx, w, stride, selector_mode);
    const auto preds = predict_all(sys);
    auto report = balanced_report(preds, inst, ap_mode_from(ev.at("ap_mode").get<std::string>()), by_scenario);
    report.system = system_spec;

    if (!ev.at("significance_against").is_null()) {
        const auto ref = ev.at("significance_against").get<std::string>();
        System other = make_system(ref, run, ctx, w, stride, selector_mode);
        const auto ref_preds = predict_all(other);
        std::vector<ViewKind> a, b;
        for (const auto& p : preds) a.push_back(p.predicted.kind);
        for (const auto& p : ref_preds) b.push_back(p.predicted.kind);
        auto sig = significance(a, b, inst, get_count(ev, "n_resamples"), run.seed);
        sig.reference = ref;
        report.significance = sig;
    }
    if (by_scenario) write_text(run.dir / "scenarios.csv", scenario_csv(report));
    run.log("balanced accuracy " + (report.balanced_accuracy ? fmt_double(*report.balanced_accuracy) : "n/a"));
    json m = to_json(report);
    m["task"] = selector_mode ? "view_selection" : "switch_detection";
    m["window"] = window_json(w, stride);
    m["agreement"] = agreement;
    return m;
}

// -------------------------------------------------------------------- sweep

json cmd_sweep(Run& run) {
    const auto& sw = run.config.at("sweep");
    auto tf = sw.at("tf").get<std::vector<double>>();
    auto tn = sw.at("tn").get<std::vector<double>>();
    const auto ln = sw.at("labels_n").get<std::vector<std::size_t>>();
    if (!ln.empty() && (!tf.empty() || !tn.empty())) {
        throw UsageError("--labels-n cannot be combined with --tf or --tn");
    }
    if (ln.empty() && tf.empty() && tn.empty()) throw UsageError("sweep needs --tf, --tn or --labels-n");

    json rows = json::array();
    std::size_t idx = 0;
    auto point_dir = [&run, &idx]() {
        char name[32];
        std::snprintf(name, sizeof name, "point_%03zu", idx++);
        fs::create_directories(run.dir / name);
        return std::string(name);
    };
    if (!ln.empty()) {
        for (const std::size_t n : ln) {
            const auto dir = point_dir();
            run.log("labels_n " + std::to_string(n));
            auto r = run_selector(run, n, run.dir / dir / "selector.ckpt");
            r.metrics["point"] = dir;
            rows.push_back(r.metrics);
        }
        return {{"parameter", "labels_n"}, {"points", rows}};
    }
    const auto& wj = run.config.at("window");
    const WindowConfig base = window_from(wj);
    if (tf.empty()) tf.push_back(base.past_frame_s);
    if (tn.empty()) tn.push_back(base.past_narration_s);
    for (const double f : tf) {
        for (const double n : tn) {
            WindowConfig w = base;
            w.past_frame_s = f;
            w.past_narration_s = n;
            if (!(f > 0) || !(n >= 0)) throw UsageError("--tf must be positive and --tn non-negative");
            const auto dir = point_dir();
            run.log("point T^F=" + fmt_double(f) + " T^N=" + fmt_double(n));
            auto d = run_detector(run, w, stride_from(wj), {}, run.dir / dir / "detector.ckpt");
            d.metrics["point"] = dir;
            rows.push_back(d.metrics);
        }
    }
    return {{"parameter", "window"}, {"points", rows}};
}

// ---------------------------------------------------------------- dispatch

struct Flags {
    std::string config_path;
    std::string run_dir;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> paths;
    std::size_t n_videos = 0, labels = 0, epochs = 0, labels_n_one = 0;
    std::string grammar, mode, system, agreement, significance_against, ap_mode;
    double boundary_noise = 0, threshold = 0, alpha = 0, tf_one = 0, tn_one = 0;
    std::vector<double> tf, tn;
    std::vector<std::size_t> labels_n;
    std::vector<std::string> drop;
};

struct Sub {
    CLI::App* app;
    std::map<std::string, CLI::Option*> opts;
    bool given(const std::string& name) const {
        auto it = opts.find(name);
        return it != opts.end() && it->second->count() > 0;
    }
};

}  // namespace

json default_config() {
    return {
        {"seed", 0},
        {"window",
         {{"past_frame_s", 8.0}, {"past_narration_s", 32.0}, {"delta_s", 2.0}, {"sample_rate", 4.0},
          {"stride_s", 2.0}, {"tie_break", "exo"}}},
        {"model", {{"preset", "desk"}}},
        {"vocab", {{"max_size", 4096}}},
        {"train",
         {{"epochs", 50}, {"batch_size", 16}, {"lr", 1e-3}, {"weight_decay", 0.01}, {"beta1", 0.9},
          {"beta2", 0.999}, {"adam_eps", 1e-8}, {"grad_clip", 1.0}, {"patience", 5}, {"target_val_bacc", nullptr},
          {"val_fraction", 0.2}}},
        {"selector", {{"alpha", nullptr}, {"labels_n", 5000}, {"from_scratch", false}, {"test_fraction", 0.3}}},
        {"eval",
         {{"system", "model"}, {"n_resamples", 10000}, {"ap_mode", "macro"}, {"agreement_threshold", nullptr},
          {"by_scenario", false}, {"significance_against", nullptr}}},
        {"pseudo_label",
         {{"mode", "shot"}, {"threshold", 0.15}, {"min_shot_len_s", 2.0}, {"boundary_noise", 0.0},
          {"boundary_window_s", 0.5}, {"clip_len_s", 2.0}}},
        {"synth",
         {{"n_videos", 100}, {"grammar", {{"preset", "deterministic_toggle"}}}, {"labels_n", 0}, {"votes", false},
          {"id_prefix", "synth"}, {"n_annotators", 9}, {"min_annotator_accuracy", 0.55}}},
        {"ablate", {{"drop", json::array()}}},
        {"sweep", {{"tf", json::array()}, {"tn", json::array()}, {"labels_n", json::array()}}},
        {"paths",
         {{"manifest", nullptr}, {"val_manifest", nullptr}, {"train_manifest", nullptr}, {"labels", nullptr},
          {"test_labels", nullptr}, {"checkpoint", nullptr}, {"detector", nullptr}, {"votes", nullptr}}},
    };
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Ego/exo view-switch detection and view selection", "swav"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "swav 1.0");
    Flags f;
    std::map<std::string, Sub> subs;

    auto add_sub = [&](const std::string& name, const std::string& desc) -> Sub& {
        Sub s{app.add_subcommand(name, desc), {}};
        s.opts["config"] = s.app->add_option("--config", f.config_path, "JSON config file")->check(CLI::ExistingFile);
        s.opts["run-dir"] = s.app->add_option("--run-dir", f.run_dir, "Output directory")->required();
        s.opts["seed"] = s.app->add_option("--seed", f.seed, "Random seed");
        return subs[name] = s;
    };
    auto path_opt = [&](Sub& s, const std::string& flag, const std::string& key, const std::string& desc) {
        s.opts[key] = s.app->add_option("--" + flag, f.paths[key], desc);
    };

    {
        auto& s = add_sub("synth-gen", "Generate a synthetic corpus with known switch rules");
        s.opts["n-videos"] = s.app->add_option("--n-videos", f.n_videos, "Number of videos");
        s.opts["grammar"] = s.app->add_option("--grammar", f.grammar, "Grammar preset")
                                ->check(CLI::IsMember({"deterministic_toggle", "split_cues", "pure_hazard"}));
        s.opts["multi-view"] = s.app->add_flag("--multi-view", "Also write synchronized ego and exo streams");
        s.opts["boundary-noise"] = s.app->add_option("--boundary-noise", f.boundary_noise, "Oracle flip rate");
        s.opts["labels"] = s.app->add_option("--labels", f.labels, "Number of best-view labels to draw");
        s.opts["votes"] = s.app->add_flag("--votes", "Also simulate annotator votes for the labels");
    }
    {
        auto& s = add_sub("pseudo-label", "Pseudo-label view tracks of a manifest");
        path_opt(s, "manifest", "manifest", "Input manifest");
        s.opts["mode"] = s.app->add_option("--mode", f.mode, "shot or clip")->check(CLI::IsMember({"shot", "clip"}));
        s.opts["boundary-noise"] = s.app->add_option("--boundary-noise", f.boundary_noise, "Oracle flip rate");
        s.opts["threshold"] = s.app->add_option("--threshold", f.threshold, "Shot cut threshold");
    }
    auto training_opts = [&](Sub& s) {
        path_opt(s, "manifest", "manifest", "Training manifest");
        path_opt(s, "val-manifest", "val_manifest", "Validation manifest (default: split by video)");
        s.opts["epochs"] = s.app->add_option("--epochs", f.epochs, "Maximum epochs");
    };
    {
        auto& s = add_sub("train-detector", "Pretext training of the view-switch detector");
        training_opts(s);
        s.opts["tf"] = s.app->add_option("--tf", f.tf_one, "Past frame window (s)");
        s.opts["tn"] = s.app->add_option("--tn", f.tn_one, "Past narration window (s)");
    }
    auto selector_opts = [&](Sub& s) {
        path_opt(s, "labels", "labels", "Best-view labels (JSONL)");
        path_opt(s, "test-labels", "test_labels", "Held-out labels (default: split by video)");
        path_opt(s, "detector", "detector", "Pretrained detector checkpoint");
        s.opts["from-scratch"] = s.app->add_flag("--from-scratch", "Do not start from the detector weights");
        s.opts["alpha"] = s.app->add_option("--alpha", f.alpha, "Weight of the narration loss (joint fine-tuning)");
    };
    {
        auto& s = add_sub("finetune-selector", "Fine-tune the view selector on limited labels");
        path_opt(s, "manifest", "manifest", "Multi-view manifest");
        selector_opts(s);
        s.opts["epochs"] = s.app->add_option("--epochs", f.epochs, "Maximum epochs");
        s.opts["labels-n"] = s.app->add_option("--labels-n", f.labels_n_one, "Number of training labels");
    }
    {
        auto& s = add_sub("eval", "Balanced evaluation of a model or baseline");
        path_opt(s, "manifest", "manifest", "Test manifest");
        path_opt(s, "checkpoint", "checkpoint", "Model checkpoint");
        path_opt(s, "train-manifest", "train_manifest", "Training manifest for retrieval baselines");
        path_opt(s, "labels", "labels", "Evaluate view selection at these labels");
        path_opt(s, "votes", "votes", "Annotator votes (JSONL)");
        s.opts["system"] = s.app->add_option("--system", f.system, "model or baseline:<name>");
        s.opts["agreement-threshold"] =
            s.app->add_option("--agreement-threshold", f.agreement, "Minimum annotator agreement, e.g. 8/9");
        s.opts["by-scenario"] = s.app->add_flag("--by-scenario", "Balanced AP per scenario");
        s.opts["significance-against"] =
            s.app->add_option("--significance-against", f.significance_against, "Reference system");
        s.opts["ap-mode"] = s.app->add_option("--ap-mode", f.ap_mode, "macro or ego_positive")
                                ->check(CLI::IsMember({"macro", "ego_positive"}));
    }
    {
        auto& s = add_sub("ablate", "Train and evaluate the detector without some inputs");
        training_opts(s);
        s.opts["drop"] = s.app->add_option("--drop", f.drop, "F, N or Nprime (repeatable)")->delimiter(',');
    }
    {
        auto& s = add_sub("sweep", "Context-length or label-count sweep");
        training_opts(s);
        selector_opts(s);
        s.opts["tf"] = s.app->add_option("--tf", f.tf, "Past frame windows (s)")->delimiter(',');
        s.opts["tn"] = s.app->add_option("--tn", f.tn, "Past narration windows (s)")->delimiter(',');
        s.opts["labels-n"] = s.app->add_option("--labels-n", f.labels_n, "Label counts")->delimiter(',');
    }

    std::string command;
    auto fail = [&](const std::string& kind, const std::string& msg, int code, const fs::path* dir) {
        const json rec = {{"error", {{"kind", kind}, {"message", msg}, {"command", command}, {"exit_code", code}}}};
        err << rec.dump() << '\n';
        if (dir) {
            try {
                write_json(*dir / "error.json", rec);
            } catch (const std::exception&) {
            }
        }
        return code;
    };

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << app.version() << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        if (!app.get_subcommands().empty()) command = app.get_subcommands().front()->get_name();
        return fail("usage_error", e.what(), 2, nullptr);
    }
    command = app.get_subcommands().front()->get_name();
    const Sub& s = subs.at(command);

    Run run;
    run.command = command;
    bool dir_ready = false;
    try {
        // created first so that config errors also leave an error.json behind
        run.dir = f.run_dir;
        std::error_code ec;
        fs::create_directories(run.dir, ec);
        if (ec) throw IoError("cannot create run directory " + run.dir.string() + ": " + ec.message());
        dir_ready = true;

        json cfg = default_config();
        if (!f.config_path.empty()) merge_strict(cfg, read_json_file(f.config_path), "");
        auto set = [&cfg](std::initializer_list<const char*> path, json v) {
            json* node = &cfg;
            for (auto p : path) node = &(*node)[p];
            *node = std::move(v);
        };
        if (s.given("seed")) set({"seed"}, f.seed);
        for (const auto& [key, value] : f.paths) {
            if (s.given(key)) set({"paths", key.c_str()}, value);
        }
        if (s.given("epochs")) set({"train", "epochs"}, f.epochs);
        if (command == "synth-gen") {
            if (s.given("n-videos")) set({"synth", "n_videos"}, f.n_videos);
            if (s.given("grammar")) set({"synth", "grammar"}, json{{"preset", f.grammar}});
            if (s.given("multi-view")) set({"synth", "grammar", "multi_view"}, true);
            if (s.given("boundary-noise")) set({"synth", "grammar", "boundary_noise"}, f.boundary_noise);
            if (s.given("labels")) set({"synth", "labels_n"}, f.labels);
            if (s.given("votes")) set({"synth", "votes"}, true);
        } else if (command == "pseudo-label") {
            if (s.given("mode")) set({"pseudo_label", "mode"}, f.mode);
            if (s.given("boundary-noise")) set({"pseudo_label", "boundary_noise"}, f.boundary_noise);
            if (s.given("threshold")) set({"pseudo_label", "threshold"}, f.threshold);
        } else if (command == "train-detector") {
            if (s.given("tf")) set({"window", "past_frame_s"}, f.tf_one);
            if (s.given("tn")) set({"window", "past_narration_s"}, f.tn_one);
        } else if (command == "eval") {
            if (s.given("system")) set({"eval", "system"}, f.system);
            if (s.given("agreement-threshold")) set({"eval", "agreement_threshold"}, f.agreement);
            if (s.given("by-scenario")) set({"eval", "by_scenario"}, true);
            if (s.given("significance-against")) set({"eval", "significance_against"}, f.significance_against);
            if (s.given("ap-mode")) set({"eval", "ap_mode"}, f.ap_mode);
        } else if (command == "ablate") {
            if (s.given("drop")) {
                std::set<std::string> uniq(f.drop.begin(), f.drop.end());
                set({"ablate", "drop"}, std::vector<std::string>(uniq.begin(), uniq.end()));
            }
        } else if (command == "sweep") {
            if (s.given("tf")) set({"sweep", "tf"}, f.tf);
            if (s.given("tn")) set({"sweep", "tn"}, f.tn);
            if (s.given("labels-n")) set({"sweep", "labels_n"}, f.labels_n);
        }
        if (command == "finetune-selector" || command == "sweep") {
            if (s.given("from-scratch")) set({"selector", "from_scratch"}, true);
            if (s.given("alpha")) set({"selector", "alpha"}, f.alpha);
            if (s.given("labels-n") && command == "finetune-selector") set({"selector", "labels_n"}, f.labels_n_one);
        }
        if (!cfg.at("seed").is_number_unsigned() && !cfg.at("seed").is_number_integer()) {
            throw ConfigError("seed must be an integer");
        }

        run.config = cfg;
        run.seed = cfg.at("seed").get<std::uint64_t>();
        write_json(run.dir / "config.json", cfg);
        run.log_file.open(run.dir / "log.txt", std::ios::trunc);
        if (!run.log_file) throw IoError("cannot write log.txt");
        run.log("command " + command + " seed " + std::to_string(run.seed));

        json metrics;
        if (command == "synth-gen") metrics = cmd_synth_gen(run);
        else if (command == "pseudo-label") metrics = cmd_pseudo_label(run);
        else if (command == "train-detector") metrics = cmd_train_detector(run);
        else if (command == "finetune-selector") metrics = cmd_finetune_selector(run);
        else if (command == "eval") metrics = cmd_eval(run);
        else if (command == "ablate") metrics = cmd_ablate(run);
        else metrics = cmd_sweep(run);

        metrics["command"] = command;
        metrics["seed"] = run.seed;
        metrics["config"] = cfg;
        write_json(run.dir / "metrics.json", metrics);
        run.log("done");
        out << json{{"command", command}, {"status", "ok"}, {"metrics", "metrics.json"}}.dump() << '\n';
        return 0;
    } catch (const UsageError& e) {
        return fail(e.kind(), e.what(), 2, dir_ready ? &run.dir : nullptr);
    } catch (const ConfigError& e) {
        return fail(e.kind(), e.what(), 2, dir_ready ? &run.dir : nullptr);
    } catch (const Error& e) {
        return fail(e.kind(), e.what(), 1, dir_ready ? &run.dir : nullptr);
    } catch (const json::exception& e) {
        return fail("config_error", e.what(), 2, dir_ready ? &run.dir : nullptr);
    } catch (const std::exception& e) {
        return fail("error", e.what(), 1, dir_ready ? &run.dir : nullptr);
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace swav::cli
