#include "finrank/textenc.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>

#include "finrank/binary_io.hpp"
#include "finrank/error.hpp"
#include "finrank/rng.hpp"

namespace finrank::textenc {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i > start) {
            out.emplace_back(text.substr(start, i - start));
        }
    }
    return out;
}

Vocabulary::Vocabulary() {
    for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) {
        push(t);
    }
}

void Vocabulary::push(std::string token) {
    const auto id = static_cast<TokenId>(tokens_.size());
    if (!ids_.emplace(token, id).second) {
        throw DataError("duplicate vocabulary token " + token);
    }
    tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::build(std::span<const std::vector<std::string>> token_lists, std::size_t min_count) {
    if (min_count < 1) {
        throw InvalidArgument("min_count must be >= 1");
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& tokens : token_lists) {
        for (const auto& t : tokens) {
            ++counts[t];
        }
    }
    Vocabulary vocab;
    std::vector<std::pair<std::string, std::size_t>> admitted;
    for (auto& [tok, n] : counts) {
        if (n >= min_count && !vocab.contains(tok)) {
            admitted.emplace_back(tok, n);
        }
    }
    std::stable_sort(admitted.begin(), admitted.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (auto& [tok, n] : admitted) {
        vocab.push(tok);
    }
    return vocab;
}

TokenId Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw InvalidArgument("token id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = io::fnv1a("");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        h = io::fnv1a(tokens_[i], h);
        h = io::fnv1a("\t" + std::to_string(i) + "\n", h);
    }
    return h;
}

void Vocabulary::save(const std::string& path) const {
    std::string body;
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        body += tokens_[i] + '\t' + std::to_string(i) + '\n';
    }
    io::write_file(path, body);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    Vocabulary vocab;
    vocab.tokens_.clear();
    vocab.ids_.clear();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected token<TAB>id");
        }
        if (line.substr(tab + 1) != std::to_string(lineno - 1)) {
            throw DataError(path + ":" + std::to_string(lineno) + ": ids must be contiguous from 0");
        }
        vocab.push(line.substr(0, tab));
    }
    static const char* reserved[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (TokenId i = 0; i < kNumReserved; ++i) {
        if (vocab.tokens_.size() <= static_cast<std::size_t>(i) || vocab.tokens_[i] != reserved[i]) {
            throw DataError(path + ": reserved tokens missing or reordered");
        }
    }
    return vocab;
}

std::vector<TokenId> to_ids(std::span<const std::string> tokens, const Vocabulary& vocab) {
    std::vector<TokenId> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        ids.push_back(vocab.id(t));
    }
    return ids;
}

SeqEncoding encode_single(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t max_len) {
    if (max_len < 1) {
        throw InvalidArgument("max_len must be >= 1");
    }
    SeqEncoding enc;
    enc.ids.assign(max_len, kPad);
    enc.mask.assign(max_len, 0);
    const auto n = std::min(tokens.size(), max_len);
    for (std::size_t i = 0; i < n; ++i) {
        enc.ids[i] = vocab.id(tokens[i]);
        enc.mask[i] = 1;
    }
    return enc;
}

PairEncoding encode_pair_ids(std::span<const TokenId> question, std::span<const TokenId> answer,
                             std::size_t max_len) {
    if (max_len < 4) {
        throw InvalidArgument("pair encoding needs max_len >= 4, got " + std::to_string(max_len));
    }
    const std::size_t budget = max_len - 3;
    const std::size_t a_keep = std::min(answer.size(), budget > question.size() ? budget - question.size() : 0);
    const std::size_t q_keep = std::min(question.size(), budget - a_keep);

    PairEncoding enc;
    enc.ids.reserve(max_len);
    enc.ids.push_back(kCls);
    enc.ids.insert(enc.ids.end(), question.begin(), question.begin() + static_cast<std::ptrdiff_t>(q_keep));
    enc.ids.push_back(kSep);
    const auto first_b = enc.ids.size();
    enc.ids.insert(enc.ids.end(), answer.begin(), answer.begin() + static_cast<std::ptrdiff_t>(a_keep));
    enc.ids.push_back(kSep);
    const auto used = enc.ids.size();

    enc.segment_ids.assign(max_len, 0);
    std::fill(enc.segment_ids.begin() + static_cast<std::ptrdiff_t>(first_b),
              enc.segment_ids.begin() + static_cast<std::ptrdiff_t>(used), 1);
    enc.mask.assign(max_len, 0);
    std::fill(enc.mask.begin(), enc.mask.begin() + static_cast<std::ptrdiff_t>(used), 1);
    enc.ids.resize(max_len, kPad);
    return enc;
}

PairEncoding encode_pair(std::span<const std::string> question, std::span<const std::string> answer,
                         const Vocabulary& vocab, std::size_t max_len) {
    const auto q = to_ids(question, vocab);
    const auto a = to_ids(answer, vocab);
    return encode_pair_ids(q, a, max_len);
}

PairEncoding encode_single_segment(std::span<const TokenId> text, std::size_t max_len) {
    if (max_len < 3) {
        throw InvalidArgument("single-segment encoding needs max_len >= 3");
    }
    const auto keep = std::min(text.size(), max_len - 2);
    PairEncoding enc;
    enc.ids.push_back(kCls);
    enc.ids.insert(enc.ids.end(), text.begin(), text.begin() + static_cast<std::ptrdiff_t>(keep));
    enc.ids.push_back(kSep);
    enc.mask.assign(max_len, 0);
    std::fill(enc.mask.begin(), enc.mask.begin() + static_cast<std::ptrdiff_t>(enc.ids.size()), 1);
    enc.segment_ids.assign(max_len, 0);
    enc.ids.resize(max_len, kPad);
    return enc;
}

EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    EmbeddingMatrix table(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(dim));
    Rng rng(seed);
    for (Eigen::Index i = 0; i < table.size(); ++i) {
        table.data()[i] = rng.uniform(-0.05, 0.05);
    }

    std::string line;
    std::size_t lineno = 0;
    std::vector<double> values;
    while (std::getline(in, line)) {
        ++lineno;
        auto fields = tokenize(line);
        if (fields.empty()) {
            continue;
        }
        if (fields.size() != dim + 1) {
            throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                            " values, got " + std::to_string(fields.size() - 1));
        }
        values.clear();
        for (std::size_t j = 1; j < fields.size(); ++j) {
            double v = 0.0;
            const auto& f = fields[j];
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw DataError(path + ":" + std::to_string(lineno) + ": bad number '" + f + "'");
            }
            values.push_back(v);
        }
        if (!vocab.contains(fields[0])) {
            continue;
        }
        const auto row = vocab.id(fields[0]);
        for (std::size_t j = 0; j < dim; ++j) {
            table(row, static_cast<Eigen::Index>(j)) = values[j];
        }
    }
    table.row(kPad).setZero();
    return table;
}

} // namespace finrank::textenc
