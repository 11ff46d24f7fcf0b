#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace unitedqa {

/// Lowercases and splits on whitespace and punctuation. No stemming, no
/// stopword removal, so an independent reimplementation is a few lines.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (unsigned char ch : text) {
        if (std::isspace(ch) || std::ispunct(ch)) {
            if (!current.empty()) {
                tokens.push_back(current);
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(ch)));
        }
    }
    if (!current.empty()) tokens.push_back(current);
    return tokens;
}

/// Token-id mapping shared by both readers. Ids 0..5 are reserved special
/// tokens; corpus terms follow in sorted order, so a vocabulary is a pure
/// function of the term set.
class Vocabulary {
  public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnk = 1;
    static constexpr std::size_t kCls = 2;
    static constexpr std::size_t kSep = 3;
    static constexpr std::size_t kBos = 4;
    static constexpr std::size_t kEos = 5;

    Vocabulary() : id_to_token_{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"} {
        for (std::size_t i = 0; i < id_to_token_.size(); ++i) token_to_id_[id_to_token_[i]] = i;
    }

    static Vocabulary from_terms(const std::set<std::string>& terms) {
        Vocabulary v;
        for (const auto& t : terms) {
            if (v.token_to_id_.count(t)) continue;
            v.token_to_id_[t] = v.id_to_token_.size();
            v.id_to_token_.push_back(t);
        }
        return v;
    }

    std::size_t size() const { return id_to_token_.size(); }

    std::size_t id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnk : it->second;
    }

    const std::string& token(std::size_t id) const { return id_to_token_.at(id); }

    std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
        std::vector<std::size_t> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(id(t));
        return out;
    }

  private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, std::size_t> token_to_id_;
};

}  // namespace unitedqa
