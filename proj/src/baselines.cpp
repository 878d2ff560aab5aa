#include "swav/baselines.hpp"

#include "swav/kernels.hpp"
#include "swav/vocabulary.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

namespace swav {

namespace {

constexpr std::array<std::pair<BaselineKind, std::string_view>, 9> kNames{{
    {BaselineKind::AllEgo, "all_ego"},
    {BaselineKind::AllExo, "all_exo"},
    {BaselineKind::Random, "random"},
    {BaselineKind::LastFrame, "last_frame"},
    {BaselineKind::Pronoun, "pronoun"},
    {BaselineKind::RetrievalF, "retrieval_f"},
    {BaselineKind::RetrievalN, "retrieval_n"},
    {BaselineKind::RetrievalNPrime, "retrieval_nprime"},
    {BaselineKind::VnSim, "vn_sim"},
}};

bool all_zero(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

double cosine(std::span<const double> a, std::span<const double> b) {
    double out = 0.0;
    kernels::serial::cosine_scores(a, b, 1, std::span<double>(&out, 1));
    return out;
}

}  // namespace

std::string_view to_string(BaselineKind kind) {
    for (const auto& [k, n] : kNames) {
        if (k == kind) return n;
    }
    return "?";
}

BaselineKind parse_baseline(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const auto& [k, n] : kNames) {
        if (n == lower) return k;
    }
    throw ConfigError("unknown baseline '" + std::string(name) + "'");
}

bool is_retrieval(BaselineKind kind) {
    return kind == BaselineKind::RetrievalF || kind == BaselineKind::RetrievalN ||
           kind == BaselineKind::RetrievalNPrime;
}

TextEmbedder token_table_embedder(const ViewModel& model) {
    const Mat table = model.params.value("enc.token_table");
    const Vocabulary vocab = model.vocab;
    const std::size_t max_tokens = model.config.encoder.max_text_tokens;
    return [table, vocab, max_tokens](std::string_view text) {
        std::vector<double> out(table.cols(), 0.0);
        const auto ids = vocab.encode(text, max_tokens);
        if (ids.empty()) return out;
        for (int id : ids) {
            for (std::size_t j = 0; j < table.cols(); ++j) out[j] += table(static_cast<std::size_t>(id), j);
        }
        for (auto& v : out) v /= static_cast<double>(ids.size());
        return out;
    };
}

TextEmbedder bag_of_words_embedder(const Vocabulary& vocab) {
    return [vocab](std::string_view text) {
        std::vector<double> out(vocab.size(), 0.0);
        for (const auto& tok : tokenize(text)) out[static_cast<std::size_t>(vocab.index(tok))] += 1.0;
        double norm = 0.0;
        for (double v : out) norm += v * v;
        if (norm > 0.0) {
            norm = std::sqrt(norm);
            for (auto& v : out) v /= norm;
        }
        return out;
    };
}

std::vector<double> retrieval_key(BaselineKind kind, const Sample& s, const TextEmbedder& text) {
    switch (kind) {
        case BaselineKind::RetrievalF:
            return {s.past_frame_features.values().begin(), s.past_frame_features.values().end()};
        case BaselineKind::RetrievalN: {
            if (!text) throw ConfigError("narration retrieval needs a text embedder");
            std::vector<double> acc;
            for (const auto& p : s.past_narrations) {
                auto e = text(p.segment.text);
                if (acc.empty()) acc.assign(e.size(), 0.0);
                for (std::size_t j = 0; j < e.size(); ++j) acc[j] += e[j];
            }
            if (acc.empty()) return text("");
            for (auto& v : acc) v /= static_cast<double>(s.past_narrations.size());
            return acc;
        }
        case BaselineKind::RetrievalNPrime:
            if (!text) throw ConfigError("narration retrieval needs a text embedder");
            return text(s.next_narration.text);
        default:
            throw std::invalid_argument("retrieval_key: not a retrieval baseline");
    }
}

RetrievalIndex build_retrieval_index(BaselineKind kind, const std::vector<Sample>& train, const TextEmbedder& text) {
    if (!is_retrieval(kind)) throw std::invalid_argument("build_retrieval_index: not a retrieval baseline");
    RetrievalIndex idx;
    idx.kind = kind;
    for (const auto& s : train) {
        auto key = retrieval_key(kind, s, text);
        if (idx.targets.empty()) idx.dim = key.size();
        if (key.size() != idx.dim) throw ValidationError("retrieval keys of differing length");
        idx.keys.insert(idx.keys.end(), key.begin(), key.end());
        idx.targets.push_back(s.target.kind);
    }
    return idx;
}

Prediction hard_prediction(ViewKind kind) {
    return kind == ViewKind::Ego ? make_prediction(1.0, 0.0) : make_prediction(0.0, 1.0);
}

BaselinePredictor::BaselinePredictor(BaselineSpec spec) : spec_(std::move(spec)) {
    if (is_retrieval(spec_.kind)) {
        if (!spec_.train_index || spec_.train_index->size() == 0) {
            throw ValidationError("retrieval baseline with an empty train index");
        }
        if (spec_.train_index->kind != spec_.kind) throw ConfigError("train index built for another input type");
    }
    if (spec_.kind == BaselineKind::VnSim && !spec_.model) throw ConfigError("VN_SIM needs a model for projections");
}

ViewKind BaselinePredictor::decide(const Sample& s) {
    switch (spec_.kind) {
        case BaselineKind::AllEgo: return ViewKind::Ego;
        case BaselineKind::AllExo: return ViewKind::Exo;
        case BaselineKind::Random:
            return (kernels::mix_seed(spec_.rng_seed, draws_++) & 1u) ? ViewKind::Exo : ViewKind::Ego;
        case BaselineKind::LastFrame: return s.last_view();
        case BaselineKind::Pronoun: {
            for (const auto& tok : tokenize(s.next_narration.text)) {
                if (std::find(spec_.pronouns.begin(), spec_.pronouns.end(), tok) != spec_.pronouns.end()) {
                    return ViewKind::Exo;
                }
            }
            return ViewKind::Ego;
        }
        case BaselineKind::RetrievalF:
        case BaselineKind::RetrievalN:
        case BaselineKind::RetrievalNPrime: {
            const auto& idx = *spec_.train_index;
            const auto q = retrieval_key(spec_.kind, s, spec_.text);
            if (q.size() != idx.dim) throw ValidationError("retrieval query has the wrong length");
            if (all_zero(q)) return ViewKind::Exo;
            std::vector<double> scores(idx.size());
            kernels::cosine_scores(q, idx.keys, idx.size(), scores);
            const auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
            return idx.targets[static_cast<std::size_t>(best)];
        }
        case BaselineKind::VnSim:
            throw ValidationError("VN_SIM needs a selector sample with candidate streams");
    }
    return ViewKind::Exo;
}

Prediction BaselinePredictor::predict(const Sample& sample) { return hard_prediction(decide(sample)); }

Prediction BaselinePredictor::predict(const SelectorSample& sample) {
    if (spec_.kind != BaselineKind::VnSim) return predict(sample.base);
    if (sample.base.next_narration.text.empty()) return hard_prediction(ViewKind::Exo);
    const auto& m = *spec_.model;
    const auto text = EncoderBank(m).text_base(sample.base.next_narration.text);
    std::array<double, 2> mean{0.0, 0.0};
    for (ViewKind kind : {ViewKind::Ego, ViewKind::Exo}) {
        const auto& feats = kind == ViewKind::Ego ? sample.ego_candidate_features : sample.exo_candidate_features;
        if (feats.rows() == 0) throw ValidationError("VN_SIM needs both candidate streams");
        Mat x(feats.rows(), feats.cols());
        std::copy(feats.values().begin(), feats.values().end(), x.values().begin());
        const auto proj = ag::linear(ag::Var::constant(std::move(x)), m.params.var("enc.frame_proj.weight"),
                                     m.params.var("enc.frame_proj.bias"));
        double sum = 0.0;
        for (std::size_t r = 0; r < feats.rows(); ++r) {
            const auto row = proj.value().row(r);
            sum += cosine(std::span<const double>(row.data(), row.size()), text.value().values());
        }
        mean[class_index(kind)] = sum / static_cast<double>(feats.rows());
    }
    return hard_prediction(mean[0] > mean[1] ? ViewKind::Ego : ViewKind::Exo);
}

}  // namespace swav
