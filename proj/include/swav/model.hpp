#pragma once

// Model configuration, the named parameter store and the checkpoint
// container shared by the switch detector and the view selector.

#include "swav/autograd.hpp"
#include "swav/vocabulary.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace swav {

struct EncoderConfig {
    std::size_t feat_dim = 16;
    std::size_t text_dim = 128;     // width of the frozen token table
    double bin_size_s = 0.1;
    std::size_t max_bins = 341;     // covers T^N + delta at 0.1 s
    std::size_t max_text_tokens = 512;
    std::size_t max_past_text_tokens = 1024;
    bool candidate_view_embed = false;
    bool candidate_time_embed = false;
    double table_init_std = 0.02;

    bool operator==(const EncoderConfig&) const = default;
};

struct AggregatorConfig {
    std::size_t num_layers = 2;
    std::size_t num_heads = 2;
    std::size_t model_dim = 64;
    std::size_t ffn_dim = 128;
    std::size_t max_seq_len = 96;    // frame + narration + CLS tokens
    std::size_t candidate_rows = 0;  // extra positional rows for selector candidates
    double ln_eps = 1e-5;

    bool operator==(const AggregatorConfig&) const = default;
};

struct HeadConfig {
    std::vector<std::size_t> hidden_dims{256, 64};
    std::size_t num_classes = 2;

    bool operator==(const HeadConfig&) const = default;
};

struct ModelConfig {
    EncoderConfig encoder;
    AggregatorConfig aggregator;
    HeadConfig head;

    /// 2 layers, 2 heads, width 64.
    static ModelConfig desk();
    /// 8 layers, 8 heads, width 768.
    static ModelConfig full();
    /// Width 8, used for finite-difference checks.
    static ModelConfig tiny();

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Param {
    ag::Var var;
    bool trainable = true;
};

/// Named tensors in a fixed (lexicographic) order.
class ParamStore {
public:
    void add(const std::string& name, Mat value, bool trainable);
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    const ag::Var& var(const std::string& name) const;
    Mat& value(const std::string& name);
    const Mat& value(const std::string& name) const;
    bool trainable(const std::string& name) const;

    std::vector<std::string> names() const;
    std::vector<std::string> trainable_names() const;
    std::size_t parameter_count(bool trainable_only) const;

    void zero_grad();
    /// Deep copy with fresh leaf nodes.
    ParamStore clone() const;
    bool values_equal(const ParamStore& other) const;

private:
    std::map<std::string, Param> params_;
};

enum class Component { Detector, Selector };

std::string_view to_string(Component c);

struct ViewModel {
    Component component = Component::Detector;
    ModelConfig config;
    Vocabulary vocab;
    ParamStore params;
    std::uint64_t seed = 0;

    ViewModel clone() const;
};

/// Fresh parameters: xavier-uniform linear weights, zero biases, unit layer
/// norms, zero-mean uniform embedding tables with std `table_init_std`, and a
/// frozen uniform(-1, 1) token table.
ViewModel init_model(const ModelConfig& config, const Vocabulary& vocab, std::uint64_t seed,
                     Component component = Component::Detector);

struct CheckpointMeta {
    nlohmann::json history = nlohmann::json::object();
    nlohmann::json run_config = nlohmann::json::object();
};

// Checkpoint container: "SWAVCK01", u32 format version, u64 header length,
// JSON header (component, config, vocabulary, seed, tensor table, metadata),
// then little-endian float64 tensor payloads in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ViewModel& model, const CheckpointMeta& meta = {});
ViewModel load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);
/// Throws ConfigError when the stored config differs from `expected`.
ViewModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected,
                          CheckpointMeta* meta = nullptr);

}  // namespace swav
