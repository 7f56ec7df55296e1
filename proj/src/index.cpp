#include "finrank/index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "finrank/binary_io.hpp"
#include "finrank/error.hpp"
#include "finrank/textenc.hpp"

namespace finrank::index {

namespace {

constexpr std::string_view kMagic = "FRIX";

} // namespace

void Bm25Params::validate() const {
    if (!(k1 >= 0.0) || !std::isfinite(k1)) {
        throw InvalidArgument("k1 must be >= 0");
    }
    if (!(b >= 0.0 && b <= 1.0)) {
        throw InvalidArgument("b must lie in [0, 1]");
    }
}

InvertedIndex InvertedIndex::build(std::span<const Document> docs) {
    if (docs.empty()) {
        throw InvalidArgument("cannot index an empty corpus");
    }
    std::vector<const Document*> order;
    order.reserve(docs.size());
    for (const auto& d : docs) {
        order.push_back(&d);
    }
    std::sort(order.begin(), order.end(), [](const Document* a, const Document* b) { return a->first < b->first; });

    InvertedIndex idx;
    std::uint64_t total = 0;
    for (std::uint32_t i = 0; i < order.size(); ++i) {
        const auto& [id, tokens] = *order[i];
        if (i > 0 && id == order[i - 1]->first) {
            throw DataError("duplicate document id " + id);
        }
        if (tokens.empty()) {
            throw DataError("document " + id + " has no tokens");
        }
        std::map<std::string_view, std::uint32_t> counts;
        for (const auto& t : tokens) {
            ++counts[t];
        }
        for (const auto& [term, tf] : counts) {
            auto it = idx.postings_.find(term);
            if (it == idx.postings_.end()) {
                it = idx.postings_.emplace(std::string(term), std::vector<Posting>{}).first;
            }
            it->second.push_back({i, tf});
        }
        idx.doc_ids_.push_back(id);
        idx.doc_len_.push_back(static_cast<std::uint32_t>(tokens.size()));
        total += tokens.size();
    }
    idx.avg_len_ = static_cast<double>(total) / static_cast<double>(idx.doc_ids_.size());
    idx.rebuild_lookup();
    return idx;
}

InvertedIndex InvertedIndex::build(const corpus::AnswerCorpus& corpus) {
    std::vector<Document> docs;
    docs.reserve(corpus.size());
    for (const auto& [id, answer] : corpus) {
        docs.emplace_back(id, textenc::tokenize(answer.text));
    }
    return build(docs);
}

void InvertedIndex::rebuild_lookup() {
    doc_lookup_.clear();
    for (std::uint32_t i = 0; i < doc_ids_.size(); ++i) {
        doc_lookup_.emplace(doc_ids_[i], i);
    }
}

std::uint32_t InvertedIndex::df(std::string_view term) const {
    const auto* p = postings(term);
    return p ? static_cast<std::uint32_t>(p->size()) : 0;
}

const std::vector<Posting>* InvertedIndex::postings(std::string_view term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
}

std::uint32_t InvertedIndex::tf(std::string_view term, std::uint32_t doc) const {
    const auto* p = postings(term);
    if (!p) {
        return 0;
    }
    auto it = std::lower_bound(p->begin(), p->end(), doc, [](const Posting& x, std::uint32_t d) { return x.doc < d; });
    return (it != p->end() && it->doc == doc) ? it->tf : 0;
}

std::optional<std::uint32_t> InvertedIndex::doc_index(std::string_view doc_id) const {
    auto it = doc_lookup_.find(std::string(doc_id));
    if (it == doc_lookup_.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string InvertedIndex::serialize() const {
    io::ByteWriter w;
    w.put_bytes(kMagic);
    w.put<std::uint32_t>(kIndexFormatVersion);
    w.put<std::uint64_t>(doc_ids_.size());
    w.put<double>(avg_len_);
    for (std::size_t i = 0; i < doc_ids_.size(); ++i) {
        w.put_string(doc_ids_[i]);
        w.put<std::uint32_t>(doc_len_[i]);
    }
    w.put<std::uint64_t>(postings_.size());
    for (const auto& [term, list] : postings_) {
        w.put_string(term);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(list.size()));
    }
    for (const auto& [term, list] : postings_) {
        for (const auto& p : list) {
            w.put<std::uint32_t>(p.doc);
            w.put<std::uint32_t>(p.tf);
        }
    }
    return w.take();
}

InvertedIndex InvertedIndex::deserialize(std::string_view bytes) {
    io::ByteReader r(bytes, "index");
    if (r.get_bytes(4) != kMagic) {
        throw FormatError(FormatError::Kind::bad_magic, "index: bad magic");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kIndexFormatVersion) {
        throw FormatError(FormatError::Kind::unsupported_version,
                          "index: unsupported format version " + std::to_string(version));
    }
    const auto malformed = [](const std::string& why) {
        return FormatError(FormatError::Kind::malformed, "index: " + why);
    };

    InvertedIndex idx;
    const auto n_docs = r.get<std::uint64_t>();
    if (n_docs == 0 || n_docs > r.remaining()) {
        throw malformed("implausible document count");
    }
    idx.avg_len_ = r.get<double>();
    std::uint64_t total = 0;
    for (std::uint64_t i = 0; i < n_docs; ++i) {
        idx.doc_ids_.push_back(r.get_string());
        idx.doc_len_.push_back(r.get<std::uint32_t>());
        total += idx.doc_len_.back();
        if (i > 0 && !(idx.doc_ids_[i - 1] < idx.doc_ids_[i])) {
            throw malformed("document ids not strictly ascending");
        }
    }
    if (idx.avg_len_ != static_cast<double>(total) / static_cast<double>(n_docs)) {
        throw malformed("average length disagrees with length table");
    }
    const auto n_terms = r.get<std::uint64_t>();
    if (n_terms > r.remaining()) {
        throw malformed("implausible term count");
    }
    std::vector<std::pair<std::string, std::uint32_t>> dictionary;
    dictionary.reserve(n_terms);
    for (std::uint64_t i = 0; i < n_terms; ++i) {
        auto term = r.get_string();
        auto df = r.get<std::uint32_t>();
        if (!dictionary.empty() && !(dictionary.back().first < term)) {
            throw malformed("terms not strictly ascending");
        }
        if (df == 0 || df > n_docs) {
            throw malformed("bad document frequency for term " + term);
        }
        dictionary.emplace_back(std::move(term), df);
    }
    for (auto& [term, df] : dictionary) {
        std::vector<Posting> list(df);
        for (std::uint32_t j = 0; j < df; ++j) {
            list[j].doc = r.get<std::uint32_t>();
            list[j].tf = r.get<std::uint32_t>();
            if (list[j].doc >= n_docs || list[j].tf == 0 || (j > 0 && list[j].doc <= list[j - 1].doc)) {
                throw malformed("bad posting for term " + term);
            }
        }
        if (!idx.postings_.emplace(std::move(term), std::move(list)).second) {
            throw malformed("duplicate term");
        }
    }
    if (!r.at_end()) {
        throw malformed("trailing bytes");
    }
    idx.rebuild_lookup();
    return idx;
}

void InvertedIndex::save(const std::string& path) const { io::write_file(path, serialize()); }

InvertedIndex InvertedIndex::load(const std::string& path) { return deserialize(io::read_file(path)); }

double term_weight(std::size_t n_docs, std::uint32_t df, std::uint32_t tf, double doc_len, double avg_len,
                   const Bm25Params& params) {
    if (tf == 0 || df == 0) {
        return 0.0;
    }
    const double idf = std::log(static_cast<double>(n_docs) / static_cast<double>(df));
    const double t = static_cast<double>(tf);
    const double norm = params.k1 * ((1.0 - params.b) + params.b * (doc_len / avg_len));
    return idf * ((params.k1 + 1.0) * t) / (norm + t);
}

double bm25_score(const InvertedIndex& index, std::span<const std::string> query_tokens, std::string_view doc_id,
                  const Bm25Params& params) {
    const auto doc = index.doc_index(doc_id);
    if (!doc) {
        throw InvalidArgument("unknown document id " + std::string(doc_id));
    }
    params.validate();
    const double len = index.doc_len(*doc);
    double score = 0.0;
    for (const auto& term : query_tokens) {
        score += term_weight(index.n_docs(), index.df(term), index.tf(term, *doc), len, index.avg_len(), params);
    }
    return score;
}

double bm25_score_text(const InvertedIndex& index, std::span<const std::string> query_tokens,
                       std::span<const std::string> doc_tokens, const Bm25Params& params) {
    std::map<std::string_view, std::uint32_t> counts;
    for (const auto& t : doc_tokens) {
        ++counts[t];
    }
    const double len = static_cast<double>(doc_tokens.size());
    double score = 0.0;
    for (const auto& term : query_tokens) {
        auto it = counts.find(term);
        if (it == counts.end()) {
            continue;
        }
        score += term_weight(index.n_docs(), index.df(term), it->second, len, index.avg_len(), params);
    }
    return score;
}

RankedList retrieve(const InvertedIndex& index, std::span<const std::string> query_tokens, std::size_t k,
                    const Bm25Params& params) {
    if (k == 0) {
        throw InvalidArgument("retrieve needs k >= 1");
    }
    params.validate();
    std::vector<double> acc(index.n_docs(), 0.0);
    std::vector<std::uint32_t> touched;
    for (const auto& term : query_tokens) {
        const auto* list = index.postings(term);
        if (!list) {
            continue;
        }
        const auto df = static_cast<std::uint32_t>(list->size());
        for (const auto& p : *list) {
            if (acc[p.doc] == 0.0) {
                touched.push_back(p.doc);
            }
            acc[p.doc] += term_weight(index.n_docs(), df, p.tf, index.doc_len(p.doc), index.avg_len(), params);
        }
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

    RankedList hits;
    for (auto d : touched) {
        if (acc[d] > 0.0) {
            hits.push_back({index.doc_id(d), acc[d]});
        }
    }
    const auto cmp = [](const ScoredId& a, const ScoredId& b) {
        return a.score != b.score ? a.score > b.score : a.id < b.id;
    };
    const auto keep = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), cmp);
    hits.resize(keep);
    return hits;
}

} // namespace finrank::index
