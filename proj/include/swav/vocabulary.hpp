#pragma once

#include "swav/data_model.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace swav {

/// Lowercased words; characters other than letters, digits and apostrophes split.
std::vector<std::string> tokenize(std::string_view text);

/// Whitespace-token vocabulary. Index 0 is the out-of-vocabulary bucket.
class Vocabulary {
public:
    static constexpr const char* kOov = "<oov>";

    Vocabulary();
    explicit Vocabulary(const std::map<std::string, int>& token_to_index);

    /// Most frequent tokens first (ties alphabetical), capped at max_size entries
    /// including the OOV bucket.
    static Vocabulary build(const std::vector<VideoRecord>& corpus, std::size_t max_size);

    int index(const std::string& token) const;
    std::vector<int> encode(std::string_view text, std::size_t max_tokens) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int, std::less<>> index_;
};

}  // namespace swav
