#include "swav/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace swav {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '\'' || c >= 0x80) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocabulary::Vocabulary() : tokens_{kOov} { index_[kOov] = 0; }

Vocabulary::Vocabulary(const std::map<std::string, int>& token_to_index) {
    tokens_.assign(token_to_index.size(), {});
    for (const auto& [tok, idx] : token_to_index) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= tokens_.size() || !tokens_[idx].empty()) {
            throw ValidationError("vocabulary indices must be a permutation of 0..n-1");
        }
        tokens_[idx] = tok;
        index_[tok] = idx;
    }
    if (tokens_.empty() || tokens_[0] != kOov) throw ValidationError("vocabulary index 0 must be <oov>");
}

Vocabulary Vocabulary::build(const std::vector<VideoRecord>& corpus, std::size_t max_size) {
    std::map<std::string, std::size_t> freq;
    for (const auto& r : corpus) {
        for (const auto& n : r.narrations) {
            for (auto& t : tokenize(n.text)) ++freq[t];
        }
    }
    freq.erase(kOov);
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [tok, n] : ranked) {
        if (v.tokens_.size() >= max_size) break;
        v.index_[tok] = static_cast<int>(v.tokens_.size());
        v.tokens_.push_back(tok);
    }
    return v;
}

int Vocabulary::index(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text, std::size_t max_tokens) const {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) {
        if (ids.size() >= max_tokens) break;
        ids.push_back(index(t));
    }
    return ids;
}

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    std::map<std::string, int> m;
    for (const auto& [k, v] : j.items()) m[k] = v.get<int>();
    return Vocabulary(m);
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary " + path.string());
    out << to_json().dump(1) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), 1);
    }
}

}  // namespace swav
