#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "unitedqa/checkpoint.hpp"
#include "unitedqa/errors.hpp"
#include "unitedqa/tokenizer.hpp"

namespace unitedqa {

struct Document {
    std::string id;
    std::string title;
    std::string text;
};

/// Disjoint window of up to `width` tokens from one source document.
struct Passage {
    std::string passage_id;
    std::string source_doc_id;
    std::string title;
    std::vector<std::string> tokens;
    std::string text;
    std::size_t rank = 0;  // 1-based, set after retrieval
};

struct RankedPassage {
    std::size_t ordinal;  // position in the index's passage table
    std::string passage_id;
    double score;
    std::size_t rank = 0;  // 1-based
};

struct RetrievalResult {
    std::string question_id;
    std::vector<RankedPassage> ranked;  // scores non-increasing
    std::size_t k_requested = 0;
};

/// Splits a document into disjoint consecutive windows of `width` tokens;
/// the final window may be shorter. No token is dropped or duplicated.
inline std::vector<Passage> split_passages(const Document& doc, std::size_t width = 100) {
    if (width == 0) throw std::invalid_argument("split_passages: width must be >= 1");
    const std::vector<std::string> tokens = tokenize(doc.text);
    std::vector<Passage> out;
    for (std::size_t start = 0; start < tokens.size(); start += width) {
        const std::size_t end = std::min(start + width, tokens.size());
        Passage p;
        p.source_doc_id = doc.id;
        p.title = doc.title;
        p.passage_id = doc.id + ":" + std::to_string(start / width);
        p.tokens.assign(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                        tokens.begin() + static_cast<std::ptrdiff_t>(end));
        for (std::size_t i = 0; i < p.tokens.size(); ++i) {
            if (i) p.text += ' ';
            p.text += p.tokens[i];
        }
        out.push_back(std::move(p));
    }
    return out;
}

/// Immutable bag-of-words inverted index over passages. Postings are sorted
/// by passage ordinal (their build order), which also defines the
/// tie-breaking order for equal scores.
class PassageIndex {
  public:
    struct Posting {
        std::size_t ordinal;
        std::size_t tf;
    };

    friend PassageIndex build_index(std::vector<Passage> passages);

    std::size_t passage_count() const { return passages_.size(); }
    const Passage& passage(std::size_t ordinal) const { return passages_.at(ordinal); }
    const std::vector<Passage>& passages() const { return passages_; }
    double average_length() const { return avg_length_; }
    std::size_t vocabulary_size() const { return postings_.size(); }

    bool has_passage(const std::string& passage_id) const { return id_to_ordinal_.count(passage_id) > 0; }

    std::size_t ordinal_of(const std::string& passage_id) const {
        auto it = id_to_ordinal_.find(passage_id);
        if (it == id_to_ordinal_.end())
            throw std::invalid_argument("PassageIndex: unknown passage_id " + passage_id);
        return it->second;
    }

    std::size_t document_frequency(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? 0 : it->second.size();
    }

    const std::vector<Posting>* postings(const std::string& term) const {
        auto it = postings_.find(term);
        return it == postings_.end() ? nullptr : &it->second;
    }

    const std::set<std::string>& terms() const { return terms_; }

    /// BM25 parameters: Robertson defaults, idf in the always-nonnegative
    /// +1-inside-log form.
    static constexpr double kK1 = 1.2;
    static constexpr double kB = 0.75;

    double idf(const std::string& term) const {
        const double df = static_cast<double>(document_frequency(term));
        const double n = static_cast<double>(passages_.size());
        return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    }

    std::string serialize() const {
        std::string out = "UQIX";
        detail::put_u32(out, 1);
        detail::put_u64(out, passages_.size());
        auto put_str = [&out](const std::string& s) {
            detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
            out += s;
        };
        for (const auto& p : passages_) {
            put_str(p.passage_id);
            put_str(p.source_doc_id);
            put_str(p.title);
            detail::put_u64(out, p.tokens.size());
            for (const auto& t : p.tokens) put_str(t);
        }
        detail::put_u64(out, postings_.size());
        for (const auto& [term, plist] : postings_) {  // std::map: sorted term order
            put_str(term);
            detail::put_u64(out, plist.size());
            for (const auto& post : plist) {
                detail::put_u64(out, post.ordinal);
                detail::put_u64(out, post.tf);
            }
        }
        return out;
    }

    static PassageIndex deserialize(const std::string& bytes) {
        std::size_t pos = 0;
        if (bytes.size() < 8 || bytes.compare(0, 4, "UQIX") != 0)
            throw InputError("index: bad magic");
        pos = 4;
        if (detail::get_u32(bytes, pos) != 1) throw InputError("index: unsupported version");
        auto get_str = [&bytes, &pos]() {
            const std::uint32_t len = detail::get_u32(bytes, pos);
            if (pos + len > bytes.size()) throw InputError("index: truncated");
            std::string s = bytes.substr(pos, len);
            pos += len;
            return s;
        };
        PassageIndex idx;
        const std::uint64_t n_passages = detail::get_u64(bytes, pos);
        idx.passages_.reserve(n_passages);
        for (std::uint64_t i = 0; i < n_passages; ++i) {
            Passage p;
            p.passage_id = get_str();
            p.source_doc_id = get_str();
            p.title = get_str();
            const std::uint64_t n_tokens = detail::get_u64(bytes, pos);
            p.tokens.reserve(n_tokens);
            for (std::uint64_t t = 0; t < n_tokens; ++t) p.tokens.push_back(get_str());
            for (std::size_t t = 0; t < p.tokens.size(); ++t) {
                if (t) p.text += ' ';
                p.text += p.tokens[t];
            }
            idx.id_to_ordinal_[p.passage_id] = idx.passages_.size();
            idx.passages_.push_back(std::move(p));
        }
        const std::uint64_t n_terms = detail::get_u64(bytes, pos);
        for (std::uint64_t i = 0; i < n_terms; ++i) {
            std::string term = get_str();
            const std::uint64_t n_post = detail::get_u64(bytes, pos);
            std::vector<Posting> plist;
            plist.reserve(n_post);
            for (std::uint64_t j = 0; j < n_post; ++j) {
                Posting post;
                post.ordinal = static_cast<std::size_t>(detail::get_u64(bytes, pos));
                post.tf = static_cast<std::size_t>(detail::get_u64(bytes, pos));
                plist.push_back(post);
            }
            idx.terms_.insert(term);
            idx.postings_.emplace(std::move(term), std::move(plist));
        }
        if (pos != bytes.size()) throw InputError("index: trailing bytes");
        idx.finalize();
        return idx;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw InputError("index: cannot open for writing: " + path);
        const std::string bytes = serialize();
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw InputError("index: write failed: " + path);
    }

    static PassageIndex load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw InputError("index: cannot open: " + path);
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return deserialize(bytes);
    }

  private:
    void finalize() {
        double total = 0.0;
        for (const auto& p : passages_) total += static_cast<double>(p.tokens.size());
        avg_length_ = passages_.empty() ? 0.0 : total / static_cast<double>(passages_.size());
    }

    std::vector<Passage> passages_;
    std::unordered_map<std::string, std::size_t> id_to_ordinal_;
    std::map<std::string, std::vector<Posting>> postings_;
    std::set<std::string> terms_;
    double avg_length_ = 0.0;
};

inline PassageIndex build_index(std::vector<Passage> passages) {
    PassageIndex idx;
    for (auto& p : passages) {
        if (idx.id_to_ordinal_.count(p.passage_id))
            throw InputError("build_index: duplicate passage_id " + p.passage_id);
        idx.id_to_ordinal_[p.passage_id] = idx.passages_.size();
        idx.passages_.push_back(std::move(p));
    }
    for (std::size_t ord = 0; ord < idx.passages_.size(); ++ord) {
        std::map<std::string, std::size_t> tf;
        for (const auto& tok : idx.passages_[ord].tokens) ++tf[tok];
        for (const auto& [term, count] : tf) {
            idx.postings_[term].push_back({ord, count});  // ordinals ascending by loop order
            idx.terms_.insert(term);
        }
    }
    idx.finalize();
    return idx;
}

/// BM25 with k1=1.2, b=0.75 and idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5)).
/// Repeated query terms contribute once. Zero when nothing overlaps.
inline double bm25_score(const PassageIndex& index, const std::vector<std::string>& question_tokens,
                         const std::string& passage_id) {
    const std::size_t ord = index.ordinal_of(passage_id);
    const Passage& p = index.passage(ord);
    const double len_norm =
        1.0 - PassageIndex::kB +
        PassageIndex::kB * static_cast<double>(p.tokens.size()) /
            (index.average_length() > 0.0 ? index.average_length() : 1.0);
    std::set<std::string> seen;
    double score = 0.0;
    for (const auto& term : question_tokens) {
        if (!seen.insert(term).second) continue;
        const auto* plist = index.postings(term);
        if (!plist) continue;
        auto it = std::lower_bound(plist->begin(), plist->end(), ord,
                                   [](const PassageIndex::Posting& post, std::size_t o) {
                                       return post.ordinal < o;
                                   });
        if (it == plist->end() || it->ordinal != ord) continue;
        const double tf = static_cast<double>(it->tf);
        score += index.idf(term) * tf * (PassageIndex::kK1 + 1.0) /
                 (tf + PassageIndex::kK1 * len_norm);
    }
    return score;
}

/// Top-k passages by BM25 score; ties broken by passage build order (which
/// is also passage_id creation order). Ranks are assigned 1..k. An empty
/// index yields an empty result.
inline RetrievalResult retrieve(const PassageIndex& index,
                                const std::vector<std::string>& question_tokens, std::size_t k = 100) {
    if (k == 0) throw std::invalid_argument("retrieve: k must be >= 1");
    RetrievalResult result;
    result.k_requested = k;
    const std::size_t n = index.passage_count();
    if (n == 0) return result;
    std::vector<double> scores(n, 0.0);
    std::set<std::string> seen;
    const double avg = index.average_length() > 0.0 ? index.average_length() : 1.0;
    for (const auto& term : question_tokens) {
        if (!seen.insert(term).second) continue;
        const auto* plist = index.postings(term);
        if (!plist) continue;
        const double idf = index.idf(term);
        for (const auto& post : *plist) {
            const double tf = static_cast<double>(post.tf);
            const double len_norm =
                1.0 - PassageIndex::kB +
                PassageIndex::kB *
                    static_cast<double>(index.passage(post.ordinal).tokens.size()) / avg;
            scores[post.ordinal] +=
                idf * tf * (PassageIndex::kK1 + 1.0) / (tf + PassageIndex::kK1 * len_norm);
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    const std::size_t take = std::min(k, n);
    result.ranked.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        result.ranked.push_back(
            {order[i], index.passage(order[i]).passage_id, scores[order[i]], i + 1});
    return result;
}

/// Retrieval strategy seam. BM25 is the only implementation here; a dense
/// retriever over the same passage store can plug in behind this surface.
class Retriever {
  public:
    virtual ~Retriever() = default;
    virtual RetrievalResult retrieve_top_k(const std::vector<std::string>& question_tokens,
                                           std::size_t k) const = 0;
};

class Bm25Retriever final : public Retriever {
  public:
    explicit Bm25Retriever(const PassageIndex& index) : index_(&index) {}

    RetrievalResult retrieve_top_k(const std::vector<std::string>& question_tokens,
                                   std::size_t k) const override {
        return retrieve(*index_, question_tokens, k);
    }

  private:
    const PassageIndex* index_;
};

/// Reads a JSON-lines corpus: {"id": string, "title": string, "text": string}
/// per line. Malformed lines are reported with their 1-based line number.
inline std::vector<Document> read_corpus_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("corpus: cannot open: " + path);
    std::vector<Document> docs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InputError("corpus: line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("text"))
            throw InputError("corpus: line " + std::to_string(line_no) +
                             ": expected object with id and text");
        Document d;
        d.id = j.at("id").get<std::string>();
        d.title = j.value("title", "");
        d.text = j.at("text").get<std::string>();
        docs.push_back(std::move(d));
    }
    return docs;
}

}  // namespace unitedqa
