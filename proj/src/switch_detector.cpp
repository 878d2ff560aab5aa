#include "swav/switch_detector.hpp"

#include "swav/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace swav {

namespace {

constexpr double kGridEps = 1e-9;

double log_sum_exp(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

class AdamW {
public:
    AdamW(const ViewModel& model, const TrainConfig& cfg) : cfg_(cfg) {
        for (const auto& name : model.params.trainable_names()) {
            const auto& v = model.params.value(name);
            state_.emplace(name, Moments{Mat(v.rows(), v.cols()), Mat(v.rows(), v.cols())});
        }
    }

    void step(ViewModel& model, double grad_scale) {
        ++t_;
        auto& p = model.params;
        double norm2 = 0.0;
        for (auto& [name, st] : state_) {
            for (double g : p.var(name).grad().values()) norm2 += (g * grad_scale) * (g * grad_scale);
        }
        double clip = 1.0;
        const double norm = std::sqrt(norm2);
        if (!std::isfinite(norm)) throw TrainingDiverged("non-finite gradient norm");
        if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) clip = cfg_.grad_clip / norm;

        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, st] : state_) {
            const bool decay = name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
            auto& w = p.value(name).values();
            const auto& g = p.var(name).grad().values();
            auto& m = st.m.values();
            auto& v = st.v.values();
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = g[i] * grad_scale * clip;
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.adam_eps);
                if (decay) w[i] -= cfg_.lr * cfg_.weight_decay * w[i];
                w[i] -= cfg_.lr * update;
            }
        }
    }

private:
    struct Moments {
        Mat m;
        Mat v;
    };
    TrainConfig cfg_;
    std::map<std::string, Moments> state_;
    std::size_t t_ = 0;
};

std::map<std::string, Mat> snapshot(const ViewModel& model) {
    std::map<std::string, Mat> out;
    for (const auto& name : model.params.trainable_names()) out.emplace(name, model.params.value(name));
    return out;
}

void restore(ViewModel& model, const std::map<std::string, Mat>& snap) {
    for (const auto& [name, v] : snap) model.params.value(name) = v;
}

std::vector<double> sample_grid(double duration, const WindowConfig& w, double stride) {
    if (!(stride > 0.0)) throw std::invalid_argument("stride must be positive");
    std::vector<double> out;
    for (long k = 0;; ++k) {
        const double t = static_cast<double>(k) * stride;
        if (t + w.delta_s > duration + kGridEps) break;
        if (t + kGridEps >= w.past_frame_s) out.push_back(t);
    }
    return out;
}

}  // namespace

Prediction make_prediction(double logit_ego, double logit_exo) {
    Prediction p;
    p.logits = {logit_ego, logit_exo};
    const double m = std::max(logit_ego, logit_exo);
    const double e0 = std::exp(logit_ego - m);
    const double e1 = std::exp(logit_exo - m);
    p.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
    if (p.probs[0] > p.probs[1]) {
        p.predicted = {ViewKind::Ego, p.probs[0]};
    } else {
        p.predicted = {ViewKind::Exo, p.probs[1]};
    }
    return p;
}

Prediction to_prediction(const ag::Var& logits) {
    return make_prediction(logits.value()(0, 0), logits.value()(0, 1));
}

ag::Var aggregate_logits(const ViewModel& model, const TokenSequence& seq) {
    const auto& a = model.config.aggregator;
    const auto& p = model.params;
    std::vector<int> pos(seq.positions.begin(), seq.positions.end());
    auto x = ag::add(seq.vectors, ag::gather_rows(p.var("agg.pos_table"), pos));
    for (std::size_t l = 0; l < a.num_layers; ++l) {
        const std::string pre = "agg.layer" + std::to_string(l);
        auto h = ag::layer_norm(x, p.var(pre + ".ln1.gamma"), p.var(pre + ".ln1.beta"), a.ln_eps);
        auto q = ag::linear(h, p.var(pre + ".attn.q.weight"), p.var(pre + ".attn.q.bias"));
        auto k = ag::linear(h, p.var(pre + ".attn.k.weight"), p.var(pre + ".attn.k.bias"));
        auto v = ag::linear(h, p.var(pre + ".attn.v.weight"), p.var(pre + ".attn.v.bias"));
        auto att = ag::attention(q, k, v, a.num_heads, seq.key_mask);
        x = ag::add(x, ag::linear(att, p.var(pre + ".attn.o.weight"), p.var(pre + ".attn.o.bias")));
        h = ag::layer_norm(x, p.var(pre + ".ln2.gamma"), p.var(pre + ".ln2.beta"), a.ln_eps);
        h = ag::gelu(ag::linear(h, p.var(pre + ".ffn.in.weight"), p.var(pre + ".ffn.in.bias")));
        x = ag::add(x, ag::linear(h, p.var(pre + ".ffn.out.weight"), p.var(pre + ".ffn.out.bias")));
    }
    auto c = ag::select_row(x, seq.cls_index);
    c = ag::layer_norm(c, p.var("agg.final_ln.gamma"), p.var("agg.final_ln.beta"), a.ln_eps);
    for (std::size_t i = 0; i < model.config.head.hidden_dims.size(); ++i) {
        const std::string name = "head.fc" + std::to_string(i);
        c = ag::gelu(ag::linear(c, p.var(name + ".weight"), p.var(name + ".bias")));
    }
    auto logits = ag::linear(c, p.var("head.out.weight"), p.var("head.out.bias"));
    for (double v : logits.value().values()) {
        if (!std::isfinite(v)) throw TrainingDiverged("non-finite activation in the view head");
    }
    return logits;
}

Prediction detector_forward(const ViewModel& model, const Sample& sample, const InputMask& mask) {
    return to_prediction(aggregate_logits(model, EncoderBank(model).assemble(sample, mask)));
}

double loss_detector(const Prediction& pred, ViewKind target) {
    return log_sum_exp(pred.logits[0], pred.logits[1]) - pred.logits[class_index(target)];
}

double loss_detector(std::span<const Prediction> preds, std::span<const ViewKind> targets) {
    if (preds.size() != targets.size()) throw std::invalid_argument("loss_detector: size mismatch");
    if (preds.empty()) throw std::invalid_argument("loss_detector: empty batch");
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) sum += loss_detector(preds[i], targets[i]);
    return sum / static_cast<double>(preds.size());
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j = {{"epochs", c.epochs},
                        {"batch_size", c.batch_size},
                        {"lr", c.lr},
                        {"weight_decay", c.weight_decay},
                        {"beta1", c.beta1},
                        {"beta2", c.beta2},
                        {"adam_eps", c.adam_eps},
                        {"grad_clip", c.grad_clip},
                        {"patience", c.patience},
                        {"seed", c.seed},
                        {"mask",
                         {{"frames", c.mask.frames},
                          {"past_narrations", c.mask.past_narrations},
                          {"next_narration", c.mask.next_narration}}}};
    j["target_val_bacc"] = c.target_val_bacc ? nlohmann::json(*c.target_val_bacc) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json to_json(const TrainHistory& h) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : h.epochs) {
        epochs.push_back(
            {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_bacc", e.val_bacc}});
    }
    return {{"epochs", epochs},
            {"best_epoch", h.best_epoch},
            {"best_val_bacc", h.best_val_bacc},
            {"stopped_early", h.stopped_early}};
}

TrainHistory fit(ViewModel& model, const TrainTask& task, const TrainConfig& cfg) {
    if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
    if (task.val_truth.size() != task.n_val || task.val_group.size() != task.n_val) {
        throw std::invalid_argument("fit: validation labels do not match n_val");
    }
    TrainHistory hist;
    if (cfg.epochs == 0 || task.n_train == 0) return hist;

    AdamW opt(model, cfg);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(task.n_train);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> val_idx(task.n_val);
    std::iota(val_idx.begin(), val_idx.end(), 0);

    std::map<std::string, Mat> best;
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            model.params.zero_grad();
            for (std::size_t b = start; b < end; ++b) {
                auto loss = task.train_loss(model, order[b]);
                const double v = loss.value()(0, 0);
                if (!std::isfinite(v)) {
                    throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch));
                }
                loss_sum += v;
                ag::backward(loss);
            }
            opt.step(model, 1.0 / static_cast<double>(end - start));
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / static_cast<double>(order.size());
        if (task.n_val > 0) {
            std::vector<std::uint8_t> pred(task.n_val);
            double vloss = 0.0;
            for (std::size_t i = 0; i < task.n_val; ++i) {
                const auto p = to_prediction(task.val_logits(model, i));
                pred[i] = static_cast<std::uint8_t>(class_index(p.predicted.kind));
                vloss += loss_detector(p, static_cast<ViewKind>(task.val_truth[i]));
            }
            st.val_loss = vloss / static_cast<double>(task.n_val);
            st.val_bacc = kernels::balanced_accuracy_indexed(pred, task.val_truth, task.val_group, val_idx);
        }
        hist.epochs.push_back(st);

        if (task.n_val == 0) {
            hist.best_epoch = epoch;
            continue;
        }
        if (hist.best_epoch == 0 || st.val_bacc > hist.best_val_bacc) {
            hist.best_epoch = epoch;
            hist.best_val_bacc = st.val_bacc;
            best = snapshot(model);
            since_best = 0;
        } else {
            ++since_best;
        }
        if (cfg.target_val_bacc && hist.best_val_bacc >= *cfg.target_val_bacc) {
            hist.stopped_early = epoch < cfg.epochs;
            break;
        }
        if (cfg.patience > 0 && since_best >= cfg.patience) {
            hist.stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    if (!best.empty()) restore(model, best);
    return hist;
}

std::vector<Sample> build_samples(const VideoRecord& record, const WindowConfig& window, double stride) {
    std::vector<Sample> out;
    for (double t : sample_grid(record.duration_s, window, stride)) {
        try {
            out.push_back(extract_sample(record, t, window));
        } catch (const SampleRejected&) {
        }
    }
    return out;
}

std::vector<Sample> build_samples(const std::vector<VideoRecord>& records, const WindowConfig& window,
                                  double stride) {
    std::vector<Sample> out;
    for (const auto& r : records) {
        auto s = build_samples(r, window, stride);
        out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    return out;
}

SampleSplit split_by_video(const std::vector<Sample>& samples, double val_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must lie in [0, 1)");
    std::vector<std::string> ids;
    for (const auto& s : samples) {
        if (std::find(ids.begin(), ids.end(), s.video_id) == ids.end()) ids.push_back(s.video_id);
    }
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(ids.size())));
    if (val_fraction > 0.0 && ids.size() > 1) n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
    const std::set<std::string> val_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
    SampleSplit out;
    for (const auto& s : samples) (val_ids.count(s.video_id) ? out.val : out.train).push_back(s);
    return out;
}

TrainHistory train_detector(ViewModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                            const TrainConfig& cfg) {
    TrainTask task;
    task.n_train = train.size();
    task.n_val = val.size();
    const InputMask mask = cfg.mask;
    task.train_loss = [&train, mask](const ViewModel& m, std::size_t i) {
        auto logits = aggregate_logits(m, EncoderBank(m).assemble(train[i], mask));
        return ag::cross_entropy(logits, static_cast<std::size_t>(class_index(train[i].target.kind)));
    };
    task.val_logits = [&val, mask](const ViewModel& m, std::size_t i) {
        return aggregate_logits(m, EncoderBank(m).assemble(val[i], mask));
    };
    for (const auto& s : val) {
        task.val_truth.push_back(static_cast<std::uint8_t>(class_index(s.target.kind)));
        task.val_group.push_back(s.is_switch() ? 1 : 0);
    }
    return fit(model, task, cfg);
}

std::vector<TimedPrediction> predict_sequence(const VideoRecord& record, const WindowConfig& window, double stride,
                                              DecodeMode mode, const SamplePredictor& predictor) {
    const auto grid = sample_grid(record.duration_s, window, stride);
    std::vector<TimedPrediction> out;
    if (mode == DecodeMode::TeacherForcing) {
        if (!record.view_track) throw ValidationError(record.video_id + ": teacher forcing needs a view track");
        for (double t : grid) out.push_back({t, predictor(extract_context(record, t, window))});
        return out;
    }
    if (grid.empty()) return out;

    VideoRecord work = record;
    std::vector<ViewSpan> prefix;
    const double first = grid.front();
    if (record.view_track) {
        for (const auto& s : *record.view_track) {
            if (s.begin_s >= first) break;
            prefix.push_back({s.begin_s, std::min(s.end_s, first), s.label});
        }
    }
    if (prefix.empty() || prefix.back().end_s < first) {
        prefix.push_back({prefix.empty() ? 0.0 : prefix.back().end_s, first, ViewLabel{}});
    }
    for (double t : grid) {
        auto track = prefix;
        track.push_back({t, record.duration_s, ViewLabel{}});  // placeholder, never read before t
        work.view_track = std::move(track);
        const auto pred = predictor(extract_context(work, t, window));
        out.push_back({t, pred});
        prefix.push_back({t, t + stride, {pred.predicted.kind, 1.0}});
    }
    return out;
}

std::vector<TimedPrediction> predict_sequence(const ViewModel& model, const VideoRecord& record,
                                              const WindowConfig& window, double stride, DecodeMode mode) {
    return predict_sequence(record, window, stride, mode,
                            [&model](const Sample& s) { return detector_forward(model, s); });
}

}  // namespace swav
