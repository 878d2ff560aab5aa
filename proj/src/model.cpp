#include "swav/model.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace swav {

namespace {

using nlohmann::json;

constexpr std::array<char, 8> kCheckpointMagic = {'S', 'W', 'A', 'V', 'C', 'K', '0', '1'};

template <typename T>
void put_le(std::ostream& os, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::istream& is) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = is.get();
        if (c == EOF) throw IoError("truncated checkpoint");
        v |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Mat uniform(std::size_t rows, std::size_t cols, double bound) {
        Mat m(rows, cols);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : m.values()) v = dist(rng_);
        return m;
    }
    Mat xavier(std::size_t fan_in, std::size_t fan_out) {
        return uniform(fan_in, fan_out, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
    }
    // Uniform with the given standard deviation.
    Mat table(std::size_t rows, std::size_t cols, double std) { return uniform(rows, cols, std * std::sqrt(3.0)); }

private:
    std::mt19937_64 rng_;
};

void add_linear(ParamStore& p, Initializer& init, const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", init.xavier(in, out), true);
    p.add(name + ".bias", Mat(1, out), true);
}

void add_norm(ParamStore& p, const std::string& name, std::size_t dim) {
    p.add(name + ".gamma", Mat(1, dim, 1.0), true);
    p.add(name + ".beta", Mat(1, dim), true);
}

}  // namespace

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
    ModelConfig c;
    c.encoder.feat_dim = 768;
    c.encoder.text_dim = 4096;
    c.aggregator.num_layers = 8;
    c.aggregator.num_heads = 8;
    c.aggregator.model_dim = 768;
    c.aggregator.ffn_dim = 3072;
    c.aggregator.max_seq_len = 128;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.encoder.feat_dim = 4;
    c.encoder.text_dim = 6;
    c.encoder.max_bins = 64;
    c.encoder.table_init_std = 0.5;
    c.aggregator.num_layers = 2;
    c.aggregator.num_heads = 2;
    c.aggregator.model_dim = 8;
    c.aggregator.ffn_dim = 16;
    c.aggregator.max_seq_len = 32;
    c.head.hidden_dims = {8, 4};
    return c;
}

void ModelConfig::validate() const {
    if (aggregator.model_dim == 0 || aggregator.num_heads == 0 || aggregator.model_dim % aggregator.num_heads != 0) {
        throw ConfigError("model_dim must be a positive multiple of num_heads");
    }
    if (head.num_classes != 2) throw ConfigError("the view head has exactly two classes");
    if (encoder.feat_dim == 0 || encoder.text_dim == 0) throw ConfigError("encoder dims must be positive");
    if (encoder.max_bins == 0 || !(encoder.bin_size_s > 0.0)) throw ConfigError("temporal bins must be positive");
    if (aggregator.max_seq_len < 2) throw ConfigError("max_seq_len too small");
}

json to_json(const ModelConfig& c) {
    return {{"encoder",
             {{"feat_dim", c.encoder.feat_dim},
              {"text_dim", c.encoder.text_dim},
              {"bin_size_s", c.encoder.bin_size_s},
              {"max_bins", c.encoder.max_bins},
              {"max_text_tokens", c.encoder.max_text_tokens},
              {"max_past_text_tokens", c.encoder.max_past_text_tokens},
              {"candidate_view_embed", c.encoder.candidate_view_embed},
              {"candidate_time_embed", c.encoder.candidate_time_embed},
              {"table_init_std", c.encoder.table_init_std}}},
            {"aggregator",
             {{"num_layers", c.aggregator.num_layers},
              {"num_heads", c.aggregator.num_heads},
              {"model_dim", c.aggregator.model_dim},
              {"ffn_dim", c.aggregator.ffn_dim},
              {"max_seq_len", c.aggregator.max_seq_len},
              {"candidate_rows", c.aggregator.candidate_rows},
              {"ln_eps", c.aggregator.ln_eps}}},
            {"head", {{"hidden_dims", c.head.hidden_dims}, {"num_classes", c.head.num_classes}}}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    auto read = [](const json& obj, const char* section, auto& dst, std::initializer_list<const char*> known,
                   auto&& assign) {
        if (!obj.contains(section)) return;
        const auto& s = obj.at(section);
        for (const auto& [k, v] : s.items()) {
            bool ok = false;
            for (const char* name : known) ok = ok || k == name;
            if (!ok) throw ConfigError(std::string("unknown model key ") + section + "." + k);
        }
        assign(s, dst);
    };
    for (const auto& [k, v] : j.items()) {
        if (k != "encoder" && k != "aggregator" && k != "head" && k != "preset") {
            throw ConfigError("unknown model key " + k);
        }
    }
    if (j.contains("preset")) {
        const auto p = j.at("preset").get<std::string>();
        if (p == "desk") c = ModelConfig::desk();
        else if (p == "full") c = ModelConfig::full();
        else if (p == "tiny") c = ModelConfig::tiny();
        else throw ConfigError("unknown model preset " + p);
    }
    try {
        read(j, "encoder", c.encoder,
             {"feat_dim", "text_dim", "bin_size_s", "max_bins", "max_text_tokens", "max_past_text_tokens",
              "candidate_view_embed", "candidate_time_embed", "table_init_std"},
             [](const json& s, EncoderConfig& e) {
                 e.feat_dim = s.value("feat_dim", e.feat_dim);
                 e.text_dim = s.value("text_dim", e.text_dim);
                 e.bin_size_s = s.value("bin_size_s", e.bin_size_s);
                 e.max_bins = s.value("max_bins", e.max_bins);
                 e.max_text_tokens = s.value("max_text_tokens", e.max_text_tokens);
                 e.max_past_text_tokens = s.value("max_past_text_tokens", e.max_past_text_tokens);
                 e.candidate_view_embed = s.value("candidate_view_embed", e.candidate_view_embed);
                 e.candidate_time_embed = s.value("candidate_time_embed", e.candidate_time_embed);
                 e.table_init_std = s.value("table_init_std", e.table_init_std);
             });
        read(j, "aggregator", c.aggregator,
             {"num_layers", "num_heads", "model_dim", "ffn_dim", "max_seq_len", "candidate_rows", "ln_eps"},
             [](const json& s, AggregatorConfig& a) {
                 a.num_layers = s.value("num_layers", a.num_layers);
                 a.num_heads = s.value("num_heads", a.num_heads);
                 a.model_dim = s.value("model_dim", a.model_dim);
                 a.ffn_dim = s.value("ffn_dim", a.ffn_dim);
                 a.max_seq_len = s.value("max_seq_len", a.max_seq_len);
                 a.candidate_rows = s.value("candidate_rows", a.candidate_rows);
                 a.ln_eps = s.value("ln_eps", a.ln_eps);
             });
        read(j, "head", c.head, {"hidden_dims", "num_classes"}, [](const json& s, HeadConfig& h) {
            if (s.contains("hidden_dims")) h.hidden_dims = s.at("hidden_dims").get<std::vector<std::size_t>>();
            h.num_classes = s.value("num_classes", h.num_classes);
        });
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

void ParamStore::add(const std::string& name, Mat value, bool trainable) {
    if (params_.count(name)) throw std::logic_error("duplicate parameter " + name);
    params_.emplace(name, Param{ag::Var::leaf(std::move(value), trainable), trainable});
}

const ag::Var& ParamStore::var(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second.var;
}

Mat& ParamStore::value(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second.var.mutable_value();
}

const Mat& ParamStore::value(const std::string& name) const { return var(name).value(); }

bool ParamStore::trainable(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second.trainable;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    for (const auto& [n, p] : params_) out.push_back(n);
    return out;
}

std::vector<std::string> ParamStore::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [n, p] : params_) {
        if (p.trainable) out.push_back(n);
    }
    return out;
}

std::size_t ParamStore::parameter_count(bool trainable_only) const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) {
        if (!trainable_only || p.trainable) n += p.var.value().size();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [n, p] : params_) {
        if (p.trainable) p.var.ensure_grad().fill(0.0);
    }
}

ParamStore ParamStore::clone() const {
    ParamStore out;
    for (const auto& [n, p] : params_) out.add(n, p.var.value(), p.trainable);
    return out;
}

bool ParamStore::values_equal(const ParamStore& other) const {
    if (params_.size() != other.params_.size()) return false;
    for (const auto& [n, p] : params_) {
        auto it = other.params_.find(n);
        if (it == other.params_.end() || !(it->second.var.value() == p.var.value())) return false;
    }
    return true;
}

std::string_view to_string(Component c) { return c == Component::Detector ? "detector" : "selector"; }

ViewModel ViewModel::clone() const { return ViewModel{component, config, vocab, params.clone(), seed}; }

ViewModel init_model(const ModelConfig& config, const Vocabulary& vocab, std::uint64_t seed, Component component) {
    config.validate();
    ViewModel m{component, config, vocab, {}, seed};
    Initializer init(seed);
    const auto& e = config.encoder;
    const auto& a = config.aggregator;
    const std::size_t d = a.model_dim;
    auto& p = m.params;

    add_linear(p, init, "enc.frame_proj", e.feat_dim, d);
    p.add("enc.token_table", init.uniform(vocab.size(), e.text_dim, 1.0), false);
    add_linear(p, init, "enc.text_proj", e.text_dim, d);
    p.add("enc.null_text", init.table(1, d, e.table_init_std), true);
    p.add("enc.view_table", init.table(2, d, e.table_init_std), true);
    p.add("enc.temporal_table", init.table(e.max_bins, d, e.table_init_std), true);
    p.add("enc.modality_frame", init.table(1, d, e.table_init_std), true);
    p.add("enc.modality_text", init.table(1, d, e.table_init_std), true);
    p.add("enc.cls", init.table(1, d, e.table_init_std), true);

    p.add("agg.pos_table", init.table(a.max_seq_len + a.candidate_rows, d, e.table_init_std), true);
    for (std::size_t l = 0; l < a.num_layers; ++l) {
        const std::string pre = "agg.layer" + std::to_string(l);
        add_norm(p, pre + ".ln1", d);
        for (const char* w : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) add_linear(p, init, pre + w, d, d);
        add_norm(p, pre + ".ln2", d);
        add_linear(p, init, pre + ".ffn.in", d, a.ffn_dim);
        add_linear(p, init, pre + ".ffn.out", a.ffn_dim, d);
    }
    add_norm(p, "agg.final_ln", d);

    std::size_t in = d;
    for (std::size_t i = 0; i < config.head.hidden_dims.size(); ++i) {
        add_linear(p, init, "head.fc" + std::to_string(i), in, config.head.hidden_dims[i]);
        in = config.head.hidden_dims[i];
    }
    add_linear(p, init, "head.out", in, config.head.num_classes);
    return m;
}

void save_checkpoint(const std::filesystem::path& path, const ViewModel& model, const CheckpointMeta& meta) {
    json header;
    header["format_version"] = kCheckpointVersion;
    header["component"] = std::string(to_string(model.component));
    header["config"] = to_json(model.config);
    header["vocabulary"] = model.vocab.to_json();
    header["seed"] = model.seed;
    header["history"] = meta.history;
    header["run_config"] = meta.run_config;
    header["tensors"] = json::array();
    for (const auto& name : model.params.names()) {
        const auto& v = model.params.value(name);
        header["tensors"].push_back(
            {{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}, {"trainable", model.params.trainable(name)}});
    }
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& name : model.params.names()) {
        for (double v : model.params.value(name).values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ViewModel load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != 8 || magic != kCheckpointMagic) throw IoError("not a checkpoint: " + path.string());
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto len = get_le<std::uint64_t>(in);
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (static_cast<std::uint64_t>(in.gcount()) != len) throw IoError("truncated checkpoint header");

    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("corrupt checkpoint header: ") + e.what());
    }
    ViewModel m;
    m.component = header.at("component").get<std::string>() == "selector" ? Component::Selector : Component::Detector;
    m.config = model_config_from_json(header.at("config"));
    m.vocab = Vocabulary::from_json(header.at("vocabulary"));
    m.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& t : header.at("tensors")) {
        const auto rows = t.at("rows").get<std::size_t>();
        const auto cols = t.at("cols").get<std::size_t>();
        Mat v(rows, cols);
        for (auto& x : v.values()) x = std::bit_cast<double>(get_le<std::uint64_t>(in));
        m.params.add(t.at("name").get<std::string>(), std::move(v), t.at("trainable").get<bool>());
    }
    if (meta) {
        meta->history = header.value("history", json::object());
        meta->run_config = header.value("run_config", json::object());
    }
    return m;
}

ViewModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected, CheckpointMeta* meta) {
    ViewModel m = load_checkpoint(path, meta);
    if (!(m.config == expected)) {
        throw ConfigError("checkpoint config mismatch: stored " + to_json(m.config).dump() + " expected " +
                          to_json(expected).dump());
    }
    return m;
}

}  // namespace swav
