#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "finrank/corpus.hpp"

namespace finrank::index {

struct Bm25Params {
    double k1 = 0.82;
    double b = 0.68;

    void validate() const;
};

struct Posting {
    std::uint32_t doc = 0; ///< dense document index, ordered by doc id
    std::uint32_t tf = 0;

    bool operator==(const Posting&) const = default;
};

/// Term -> postings plus the collection statistics BM25 needs.
///
/// Documents get dense indices in ascending id order, so postings sorted by
/// index are also sorted by doc id. Immutable after construction.
class InvertedIndex {
public:
    using Document = std::pair<std::string, std::vector<std::string>>;

    static InvertedIndex build(std::span<const Document> docs);
    /// Tokenizes every answer with the whitespace tokenizer.
    static InvertedIndex build(const corpus::AnswerCorpus& corpus);

    std::size_t n_docs() const { return doc_ids_.size(); }
    double avg_len() const { return avg_len_; }
    std::size_t n_terms() const { return postings_.size(); }

    std::uint32_t df(std::string_view term) const;
    /// nullptr for terms never seen.
    const std::vector<Posting>* postings(std::string_view term) const;
    std::uint32_t tf(std::string_view term, std::uint32_t doc) const;

    std::optional<std::uint32_t> doc_index(std::string_view doc_id) const;
    const std::string& doc_id(std::uint32_t doc) const { return doc_ids_.at(doc); }
    std::uint32_t doc_len(std::uint32_t doc) const { return doc_len_.at(doc); }

    const std::map<std::string, std::vector<Posting>, std::less<>>& terms() const { return postings_; }

    /// "FRIX" binary layout, little-endian.
    std::string serialize() const;
    static InvertedIndex deserialize(std::string_view bytes);
    void save(const std::string& path) const;
    static InvertedIndex load(const std::string& path);

    bool operator==(const InvertedIndex& o) const {
        return doc_ids_ == o.doc_ids_ && doc_len_ == o.doc_len_ && avg_len_ == o.avg_len_ && postings_ == o.postings_;
    }

private:
    void rebuild_lookup();

    std::vector<std::string> doc_ids_;
    std::vector<std::uint32_t> doc_len_;
    double avg_len_ = 0.0;
    std::map<std::string, std::vector<Posting>, std::less<>> postings_;
    std::unordered_map<std::string, std::uint32_t> doc_lookup_;
};

inline constexpr std::uint32_t kIndexFormatVersion = 1;

/// One term's RSV contribution: log(N/df) * (k1+1)tf / (k1((1-b)+b*L/Lave) + tf).
double term_weight(std::size_t n_docs, std::uint32_t df, std::uint32_t tf, double doc_len, double avg_len,
                   const Bm25Params& params);

/// RSV of an indexed document. Repeated query terms count once per occurrence.
double bm25_score(const InvertedIndex& index, std::span<const std::string> query_tokens, std::string_view doc_id,
                  const Bm25Params& params = {});

/// RSV of arbitrary text against the index's collection statistics. Equals
/// bm25_score when the text is an indexed document's text.
double bm25_score_text(const InvertedIndex& index, std::span<const std::string> query_tokens,
                       std::span<const std::string> doc_tokens, const Bm25Params& params = {});

/// Top-k documents with positive score, by score descending then id ascending.
RankedList retrieve(const InvertedIndex& index, std::span<const std::string> query_tokens, std::size_t k,
                    const Bm25Params& params = {});

} // namespace finrank::index
