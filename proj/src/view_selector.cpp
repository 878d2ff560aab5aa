#include "swav/view_selector.hpp"

#include "swav/vocabulary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace swav {

namespace {

using nlohmann::json;

bool same_architecture(const ModelConfig& det, const ModelConfig& sel) {
    auto de = det.encoder;
    auto se = sel.encoder;
    de.candidate_view_embed = se.candidate_view_embed;
    de.candidate_time_embed = se.candidate_time_embed;
    auto da = det.aggregator;
    auto sa = sel.aggregator;
    da.candidate_rows = sa.candidate_rows;
    da.max_seq_len = sa.max_seq_len;
    return de == se && da == sa && det.head == sel.head && sel.aggregator.max_seq_len >= det.aggregator.max_seq_len;
}

}  // namespace

std::vector<LimitedLabel> load_limited_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label file " + path.string());
    std::vector<LimitedLabel> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            for (const auto& [k, v] : j.items()) {
                if (k != "video_id" && k != "t" && k != "target_kind") throw ParseError("unknown key " + k, n);
            }
            LimitedLabel l;
            l.video_id = j.at("video_id").get<std::string>();
            l.t = j.at("t").get<double>();
            l.target = parse_view_kind(j.at("target_kind").get<std::string>());
            out.push_back(std::move(l));
        } catch (const json::exception& e) {
            throw ParseError(e.what(), n);
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), n);
        }
    }
    return out;
}

void write_limited_labels(const std::filesystem::path& path, const std::vector<LimitedLabel>& labels) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write label file " + path.string());
    for (const auto& l : labels) {
        out << json{{"video_id", l.video_id}, {"t", l.t}, {"target_kind", std::string(to_string(l.target))}}.dump()
            << '\n';
    }
}

std::vector<SelectorSample> build_selector_samples(const std::vector<VideoRecord>& records,
                                                   const std::vector<LimitedLabel>& labels,
                                                   const WindowConfig& window) {
    std::map<std::string, const VideoRecord*> by_id;
    for (const auto& r : records) by_id[r.video_id] = &r;
    std::vector<SelectorSample> out;
    out.reserve(labels.size());
    for (const auto& l : labels) {
        auto it = by_id.find(l.video_id);
        if (it == by_id.end()) throw ValidationError("label refers to unknown video " + l.video_id);
        out.push_back(extract_selector_sample(*it->second, l.t, window, l.target));
    }
    return out;
}

std::size_t candidate_token_count(const WindowConfig& window) {
    return 2 * static_cast<std::size_t>(std::llround(window.delta_s * window.sample_rate));
}

ModelConfig selector_config(const ModelConfig& detector, std::size_t candidate_rows) {
    ModelConfig c = detector;
    c.aggregator.candidate_rows = candidate_rows;
    return c;
}

ViewModel init_from_detector(const ViewModel& detector, const ModelConfig& selector_cfg, std::uint64_t seed) {
    if (!same_architecture(detector.config, selector_cfg)) {
        throw ConfigError("selector config is not compatible with the detector: detector " +
                          to_json(detector.config).dump() + " selector " + to_json(selector_cfg).dump());
    }
    ViewModel sel = init_model(selector_cfg, detector.vocab, seed, Component::Selector);
    for (const auto& name : detector.params.names()) {
        const auto& src = detector.params.value(name);
        auto& dst = sel.params.value(name);
        if (name == "agg.pos_table") {
            for (std::size_t r = 0; r < src.rows(); ++r) {
                std::copy(src.row(r).begin(), src.row(r).end(), dst.row(r).begin());
            }
            continue;
        }
        if (src.rows() != dst.rows() || src.cols() != dst.cols()) throw ConfigError("shape mismatch for " + name);
        dst = src;
    }
    return sel;
}

ViewModel init_selector_from_scratch(const ViewModel& detector, const ModelConfig& selector_cfg,
                                     std::uint64_t seed) {
    if (!same_architecture(detector.config, selector_cfg)) {
        throw ConfigError("selector config is not compatible with the detector");
    }
    ViewModel sel = init_model(selector_cfg, detector.vocab, seed, Component::Selector);
    for (const auto& name : detector.params.names()) {
        if (!detector.params.trainable(name)) sel.params.value(name) = detector.params.value(name);
    }
    return sel;
}

ag::Var selector_logits(const ViewModel& model, const SelectorSample& sample, const InputMask& mask,
                        bool ignore_candidates) {
    return aggregate_logits(model, EncoderBank(model).assemble(sample, mask, ignore_candidates));
}

Prediction selector_forward(const ViewModel& model, const SelectorSample& sample, const InputMask& mask,
                            bool ignore_candidates) {
    return to_prediction(selector_logits(model, sample, mask, ignore_candidates));
}

ViewLabel narration_pseudo_label(std::string_view text, const NarrationRules& rules) {
    std::size_t ego = 0, exo = 0;
    for (const auto& tok : tokenize(text)) {
        if (std::find(rules.ego_words.begin(), rules.ego_words.end(), tok) != rules.ego_words.end()) ++ego;
        if (std::find(rules.exo_words.begin(), rules.exo_words.end(), tok) != rules.exo_words.end()) ++exo;
    }
    if (ego + exo == 0) return {ViewKind::Exo, 0.5};
    const double share = static_cast<double>(std::max(ego, exo)) / static_cast<double>(ego + exo);
    return {ego > exo ? ViewKind::Ego : ViewKind::Exo, share};
}

JointLoss selector_loss(const ViewModel& model, const SelectorSample& sample, ViewKind target,
                        const std::optional<JointFinetuneConfig>& joint, const InputMask& mask) {
    auto logits = selector_logits(model, sample, mask);
    auto sel = ag::cross_entropy(logits, static_cast<std::size_t>(class_index(target)));
    JointLoss out{sel, sel.value()(0, 0), 0.0};
    if (joint) {
        if (joint->alpha < 0.0) throw ConfigError("alpha must be non-negative");
        const auto nl = narration_pseudo_label(sample.base.next_narration.text, joint->rules);
        auto narr = ag::cross_entropy(logits, static_cast<std::size_t>(class_index(nl.kind)));
        out.narration = narr.value()(0, 0);
        out.total = ag::axpy(sel, narr, joint->alpha);
    }
    return out;
}

std::array<double, 3> selector_batch_loss(const ViewModel& model, std::span<const SelectorSample> batch,
                                          const std::optional<JointFinetuneConfig>& joint) {
    if (batch.empty()) throw std::invalid_argument("selector_batch_loss: empty batch");
    std::array<double, 3> sum{0.0, 0.0, 0.0};
    for (const auto& s : batch) {
        const auto l = selector_loss(model, s, s.base.target.kind, joint);
        sum[0] += l.total.value()(0, 0);
        sum[1] += l.selection;
        sum[2] += l.narration;
    }
    for (auto& v : sum) v /= static_cast<double>(batch.size());
    return sum;
}

std::vector<SelectorSample> subsample_labels(const std::vector<SelectorSample>& samples, std::size_t n,
                                             std::uint64_t seed) {
    if (n >= samples.size()) return samples;
    std::vector<std::size_t> sw, same;
    for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].base.is_switch() ? sw : same).push_back(i);
    std::mt19937_64 rng(seed);
    std::shuffle(sw.begin(), sw.end(), rng);
    std::shuffle(same.begin(), same.end(), rng);
    auto n_sw = static_cast<std::size_t>(
        std::llround(static_cast<double>(n) * static_cast<double>(sw.size()) / static_cast<double>(samples.size())));
    n_sw = std::min(n_sw, sw.size());
    if (n - n_sw > same.size()) n_sw = n - same.size();
    std::vector<std::size_t> keep(sw.begin(), sw.begin() + static_cast<std::ptrdiff_t>(n_sw));
    keep.insert(keep.end(), same.begin(), same.begin() + static_cast<std::ptrdiff_t>(n - n_sw));
    std::sort(keep.begin(), keep.end());
    std::vector<SelectorSample> out;
    out.reserve(n);
    for (auto i : keep) out.push_back(samples[i]);
    return out;
}

TrainHistory finetune_selector(ViewModel& selector, const std::vector<SelectorSample>& train,
                               const std::vector<SelectorSample>& val, const TrainConfig& cfg,
                               const std::optional<JointFinetuneConfig>& joint) {
    if (train.empty()) throw ValidationError("empty limited-label set");
    TrainTask task;
    task.n_train = train.size();
    task.n_val = val.size();
    const InputMask mask = cfg.mask;
    task.train_loss = [&train, joint, mask](const ViewModel& m, std::size_t i) {
        return selector_loss(m, train[i], train[i].base.target.kind, joint, mask).total;
    };
    task.val_logits = [&val, mask](const ViewModel& m, std::size_t i) { return selector_logits(m, val[i], mask); };
    for (const auto& s : val) {
        task.val_truth.push_back(static_cast<std::uint8_t>(class_index(s.base.target.kind)));
        task.val_group.push_back(s.base.is_switch() ? 1 : 0);
    }
    return fit(selector, task, cfg);
}

}  // namespace swav
