#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace finrank::textenc {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kNumReserved = 5;

/// Whitespace split of already-cleaned text.
std::vector<std::string> tokenize(std::string_view text);

/// Token <-> id map. Ids 0..4 are PAD, UNK, CLS, SEP, MASK.
class Vocabulary {
public:
    Vocabulary();

    /// Admits tokens with count >= min_count, ordered by (count desc, token asc).
    static Vocabulary build(std::span<const std::vector<std::string>> token_lists, std::size_t min_count = 1);

    TokenId id(std::string_view token) const;
    const std::string& token(TokenId id) const;
    std::size_t size() const { return tokens_.size(); }
    bool contains(std::string_view token) const;

    /// Fingerprint of the full token/id table; checkpoints pin it.
    std::uint64_t hash() const;

    /// `token<TAB>id` lines in id order.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    void push(std::string token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
};

struct SeqEncoding {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> mask;
};

struct PairEncoding {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> segment_ids;
    std::vector<std::uint8_t> mask;
};

std::vector<TokenId> to_ids(std::span<const std::string> tokens, const Vocabulary& vocab);

/// Truncates the tail past max_len, pads with PAD, maps OOV to UNK.
SeqEncoding encode_single(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t max_len);

/// [CLS] question [SEP] answer [SEP], padded to max_len. Over-length input
/// loses answer tail first, then question tail. Needs max_len >= 4.
PairEncoding encode_pair(std::span<const std::string> question, std::span<const std::string> answer,
                         const Vocabulary& vocab, std::size_t max_len);
PairEncoding encode_pair_ids(std::span<const TokenId> question, std::span<const TokenId> answer,
                             std::size_t max_len);

/// [CLS] text [SEP] for masked-LM pre-training.
PairEncoding encode_single_segment(std::span<const TokenId> text, std::size_t max_len);

using EmbeddingMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Reads `token v1 ... v_dim` lines. Rows of vocabulary tokens missing from
/// the file are uniform in [-0.05, 0.05]; the PAD row is zero.
EmbeddingMatrix load_embeddings(const std::string& path, const Vocabulary& vocab, std::size_t dim,
                                std::uint64_t seed);

} // namespace finrank::textenc
