#include "swav/evaluation.hpp"

#include "swav/kernels.hpp"
#include "swav/switch_detector.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace swav {

namespace {

using nlohmann::json;

void check_sizes(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

std::vector<std::size_t> by_score_desc(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json subset_json(const std::optional<SubsetMetrics>& s) {
    if (!s) return nullptr;
    return {{"n", s->n}, {"n_ego", s->n_ego}, {"n_exo", s->n_exo}, {"accuracy", s->accuracy},
            {"auc", opt(s->auc)}, {"ap", opt(s->ap)}};
}

std::optional<double> mean2(const std::optional<double>& a, const std::optional<double>& b) {
    if (!a || !b) return std::nullopt;
    return 0.5 * (*a + *b);
}

SubsetMetrics score_subset(std::span<const Prediction> preds, std::span<const EvalInstance> inst,
                           const std::vector<std::size_t>& idx, ApMode mode) {
    SubsetMetrics m;
    m.n = idx.size();
    std::vector<ViewKind> pred, truth;
    std::vector<double> p_ego, p_exo;
    std::vector<std::uint8_t> is_ego, is_exo;
    for (auto i : idx) {
        pred.push_back(preds[i].predicted.kind);
        truth.push_back(inst[i].target);
        p_ego.push_back(preds[i].probs[0]);
        p_exo.push_back(preds[i].probs[1]);
        is_ego.push_back(inst[i].target == ViewKind::Ego ? 1 : 0);
        is_exo.push_back(inst[i].target == ViewKind::Exo ? 1 : 0);
        (inst[i].target == ViewKind::Ego ? m.n_ego : m.n_exo) += 1;
    }
    m.accuracy = class_balanced_accuracy(pred, truth);
    if (m.n_ego > 0 && m.n_exo > 0) {
        m.auc = auc(p_ego, is_ego);
        if (mode == ApMode::Macro) {
            m.ap = 0.5 * (average_precision(p_ego, is_ego) + average_precision(p_exo, is_exo));
        }
    }
    if (mode == ApMode::EgoPositive && m.n_ego > 0) m.ap = average_precision(p_ego, is_ego);
    return m;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
    check_sizes(scores.size(), positive.size(), "auc");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double n_pos = 0.0, n_neg = 0.0, rank_sum = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        // average 1-based rank of the tie block, a half-integer at most
        const double rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (positive[idx[k]]) {
                rank_sum += rank;
                n_pos += 1.0;
            } else {
                n_neg += 1.0;
            }
        }
        i = j;
    }
    if (n_pos == 0.0 || n_neg == 0.0) throw ValidationError("degenerate subset: AUC needs both classes");
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positive) {
    check_sizes(scores.size(), positive.size(), "average_precision");
    const auto total_pos = std::count_if(positive.begin(), positive.end(), [](auto p) { return p != 0; });
    if (total_pos == 0) throw ValidationError("average precision needs at least one positive");
    const auto idx = by_score_desc(scores);
    const auto n_pos = static_cast<double>(total_pos);
    std::size_t tp = 0, fp = 0;
    double ap = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i, gained = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            if (positive[idx[j]]) {
                ++tp;
                ++gained;
            } else {
                ++fp;
            }
            ++j;
        }
        if (gained > 0) {
            ap += (static_cast<double>(gained) / n_pos) * (static_cast<double>(tp) / static_cast<double>(tp + fp));
        }
        i = j;
    }
    return ap;
}

double class_balanced_accuracy(std::span<const ViewKind> pred, std::span<const ViewKind> truth) {
    check_sizes(pred.size(), truth.size(), "class_balanced_accuracy");
    std::size_t total[2] = {0, 0}, hit[2] = {0, 0};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int c = class_index(truth[i]);
        ++total[c];
        if (pred[i] == truth[i]) ++hit[c];
    }
    double sum = 0.0;
    int classes = 0;
    for (int c = 0; c < 2; ++c) {
        if (total[c] == 0) continue;
        sum += static_cast<double>(hit[c]) / static_cast<double>(total[c]);
        ++classes;
    }
    if (classes == 0) throw ValidationError("accuracy of an empty set");
    return sum / classes;
}

EvalInstance eval_instance(const Sample& s, std::string scenario) {
    return {s.target.kind, s.last_view(), std::move(scenario)};
}

EvalReport balanced_report(std::span<const Prediction> preds, std::span<const EvalInstance> instances,
                           ApMode ap_mode, bool by_scenario) {
    check_sizes(preds.size(), instances.size(), "balanced_report");
    EvalReport r;
    r.n_instances = instances.size();
    std::vector<std::size_t> same, sw;
    for (std::size_t i = 0; i < instances.size(); ++i) (instances[i].is_switch() ? sw : same).push_back(i);
    if (!same.empty()) r.same_view = score_subset(preds, instances, same, ap_mode);
    if (!sw.empty()) r.view_switch = score_subset(preds, instances, sw, ap_mode);
    if (r.same_view && r.view_switch) {
        r.balanced_accuracy = 0.5 * (r.same_view->accuracy + r.view_switch->accuracy);
        r.balanced_auc = mean2(r.same_view->auc, r.view_switch->auc);
        r.balanced_ap = mean2(r.same_view->ap, r.view_switch->ap);
    }
    if (by_scenario) {
        std::map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < instances.size(); ++i) groups[instances[i].scenario].push_back(i);
        for (const auto& [name, idx] : groups) {
            std::vector<Prediction> p;
            std::vector<EvalInstance> in;
            for (auto i : idx) {
                p.push_back(preds[i]);
                in.push_back(instances[i]);
            }
            r.scenario_balanced_ap[name] = balanced_report(p, in, ap_mode, false).balanced_ap;
        }
    }
    return r;
}

json to_json(const EvalReport& r) {
    json scen = json::object();
    for (const auto& [name, v] : r.scenario_balanced_ap) scen[name] = opt(v);
    json sig = nullptr;
    if (r.significance) {
        const auto& s = *r.significance;
        sig = {{"test_name", s.test_name}, {"reference", s.reference}, {"observed_diff", s.observed_diff},
               {"p_value", s.p_value}, {"n_resamples", s.n_resamples}, {"seed", s.seed}};
    }
    return {{"system", r.system},
            {"n_instances", r.n_instances},
            {"same_view", subset_json(r.same_view)},
            {"view_switch", subset_json(r.view_switch)},
            {"balanced", {{"accuracy", opt(r.balanced_accuracy)}, {"auc", opt(r.balanced_auc)}, {"ap", opt(r.balanced_ap)}}},
            {"scenario_balanced_ap", scen},
            {"significance", sig}};
}

std::string scenario_csv(const EvalReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "scenario,balanced_ap\n";
    for (const auto& [name, v] : r.scenario_balanced_ap) {
        os << name << ',';
        if (v) os << *v;
        os << '\n';
    }
    return os.str();
}

double cohen_kappa(std::span<const ViewKind> a, std::span<const ViewKind> b) {
    check_sizes(a.size(), b.size(), "cohen_kappa");
    if (a.empty()) throw ValidationError("kappa of empty vote vectors");
    const double n = static_cast<double>(a.size());
    double agree = 0.0, a_ego = 0.0, b_ego = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) agree += 1.0;
        if (a[i] == ViewKind::Ego) a_ego += 1.0;
        if (b[i] == ViewKind::Ego) b_ego += 1.0;
    }
    const double po = agree / n;
    const double pe = (a_ego / n) * (b_ego / n) + (1.0 - a_ego / n) * (1.0 - b_ego / n);
    if (pe >= 1.0) throw ValidationError("kappa undefined: expected agreement is 1");
    return (po - pe) / (1.0 - pe);
}

std::string instance_key(const std::string& video_id, double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "@%.3f", t);
    return video_id + buf;
}

std::vector<AnnotationInstance> filter_instances(const std::vector<AnnotationInstance>& instances,
                                                 double threshold) {
    if (!(threshold > 0.0 && threshold <= 1.0)) throw ConfigError("agreement threshold must lie in (0, 1]");
    std::vector<AnnotationInstance> out;
    for (const auto& inst : instances) {
        if (inst.votes.empty()) continue;
        const auto ego = static_cast<std::size_t>(std::count(inst.votes.begin(), inst.votes.end(), ViewKind::Ego));
        const std::size_t exo = inst.votes.size() - ego;
        const double share = static_cast<double>(std::max(ego, exo)) / static_cast<double>(inst.votes.size());
        if (share < threshold - 1e-12) continue;
        if (ego == exo && threshold > 0.5) continue;
        auto kept = inst;
        kept.accepted_label = ego > exo ? ViewKind::Ego : ViewKind::Exo;
        out.push_back(std::move(kept));
    }
    return out;
}

double parse_agreement_threshold(const std::string& text) {
    double v = 0.0;
    try {
        const auto slash = text.find('/');
        if (slash != std::string::npos) {
            std::size_t used_a = 0, used_b = 0;
            const double a = std::stod(text.substr(0, slash), &used_a);
            const double b = std::stod(text.substr(slash + 1), &used_b);
            if (used_a != slash || used_b != text.size() - slash - 1 || b <= 0.0) throw std::invalid_argument("");
            v = a / b;
        } else {
            std::size_t used = 0;
            v = std::stod(text, &used);
            if (used != text.size()) throw std::invalid_argument("");
        }
    } catch (const std::exception&) {
        throw ConfigError("bad agreement threshold '" + text + "'");
    }
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("agreement threshold must lie in (0, 1]");
    return v;
}

std::vector<AnnotationInstance> load_votes(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open votes file " + path.string());
    std::vector<AnnotationInstance> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            AnnotationInstance a;
            a.instance_id = j.at("instance_id").get<std::string>();
            for (const auto& v : j.at("votes")) a.votes.push_back(parse_view_kind(v.get<std::string>()));
            out.push_back(std::move(a));
        } catch (const json::exception& e) {
            throw ParseError(e.what(), n);
        } catch (const std::invalid_argument& e) {
            throw ParseError(e.what(), n);
        }
    }
    return out;
}

void write_votes(const std::filesystem::path& path, const std::vector<AnnotationInstance>& instances) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write votes file " + path.string());
    for (const auto& a : instances) {
        json votes = json::array();
        for (auto v : a.votes) votes.push_back(std::string(to_string(v)));
        out << json{{"instance_id", a.instance_id}, {"votes", votes}}.dump() << '\n';
    }
}

SignificanceResult significance(std::span<const ViewKind> pred_a, std::span<const ViewKind> pred_b,
                                std::span<const EvalInstance> instances, std::size_t n_resamples,
                                std::uint64_t seed) {
    check_sizes(pred_a.size(), instances.size(), "significance");
    check_sizes(pred_b.size(), instances.size(), "significance");
    if (n_resamples < 100) throw ConfigError("significance needs at least 100 resamples");
    if (instances.empty()) throw ValidationError("significance on an empty set");
    std::vector<std::uint8_t> a, b, truth, group;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        a.push_back(static_cast<std::uint8_t>(class_index(pred_a[i])));
        b.push_back(static_cast<std::uint8_t>(class_index(pred_b[i])));
        truth.push_back(static_cast<std::uint8_t>(class_index(instances[i].target)));
        group.push_back(instances[i].is_switch() ? 1 : 0);
    }
    std::vector<std::size_t> all(instances.size());
    std::iota(all.begin(), all.end(), 0);
    const double d = kernels::balanced_accuracy_indexed(a, truth, group, all) -
                     kernels::balanced_accuracy_indexed(b, truth, group, all);
    std::vector<double> diffs(n_resamples);
    kernels::bootstrap_diffs({a, b, truth, group}, seed, diffs);
    std::size_t extreme = 0;
    for (double ds : diffs) {
        if (std::abs(ds - d) >= std::abs(d)) ++extreme;
    }
    SignificanceResult r;
    r.observed_diff = d;
    r.p_value = static_cast<double>(extreme + 1) / static_cast<double>(n_resamples + 1);
    r.n_resamples = n_resamples;
    r.seed = seed;
    return r;
}

}  // namespace swav
