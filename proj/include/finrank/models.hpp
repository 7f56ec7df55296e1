#pragma once

#include <cstdint>
#include <string>

#include "finrank/autograd.hpp"
#include "finrank/neural.hpp"
#include "finrank/rng.hpp"
#include "finrank/textenc.hpp"

namespace finrank::neural {

/// Transformer encoder shape. Desk defaults; the 12/768/12/3072/512 base
/// configuration is equally valid.
struct EncoderConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t max_len = 128;
    std::size_t vocab_size = 0;
    std::size_t n_segments = 2;
    double dropout = 0.1;
    double ln_eps = 1e-12;

    void validate() const;
    std::size_t d_k() const { return d_model / n_heads; }

    static EncoderConfig base(std::size_t vocab_size);
};

/// Which optional heads to allocate next to the encoder body.
struct EncoderHeads {
    bool relevance = true;
    bool mlm = false;
};

/// Encoder body under `enc.`, relevance head `head.` (d x 2), MLM head `mlm.`.
ParameterStore make_encoder_params(const EncoderConfig& config, std::uint64_t seed, EncoderHeads heads = {});
void add_encoder_heads(ParameterStore& params, const EncoderConfig& config, EncoderHeads heads, std::uint64_t seed);

struct EncoderStates {
    Var cls;    ///< 1 x d_model, state at position 0
    Var states; ///< n_real x d_model, states of the unpadded prefix
};

/// Token + position + segment embeddings through n_layers of
/// (self-attention, feed-forward), each followed by residual add + layer norm.
/// Dropout runs only when `dropout_rng` is non-null.
EncoderStates encoder_forward(Tape& tape, const ParameterStore& params, const EncoderConfig& config,
                              const textenc::PairEncoding& input, Rng* dropout_rng = nullptr);

/// 1 x 2 logits from the [CLS] state.
Var relevance_logits(Tape& tape, const ParameterStore& params, Var cls);
/// 1 x 1 probability of the "relevant" class (softmax component 1).
Var relevance_probability(Tape& tape, const ParameterStore& params, const EncoderConfig& config,
                          const textenc::PairEncoding& input, Rng* dropout_rng = nullptr);
double relevance_probability(const ParameterStore& params, const EncoderConfig& config,
                             const textenc::PairEncoding& input);
/// Vocabulary logits for the given rows of `states`.
Var mlm_logits(Tape& tape, const ParameterStore& params, Var states, std::span<const std::size_t> rows);

struct MaskedInput {
    textenc::PairEncoding input;
    std::vector<MaskedTarget> targets;
};

/// Selects ~rate of the real, non-special positions (at least one when any
/// exist). Selected positions become [MASK] 80%, a random token 10%, or stay
/// unchanged 10%.
MaskedInput mask_tokens(const textenc::PairEncoding& input, std::size_t vocab_size, Rng& rng, double rate = 0.15);

/// Siamese biLSTM shape.
struct QaLstmConfig {
    std::size_t vocab_size = 0;
    std::size_t embedding_dim = 100;
    std::size_t hidden = 256;
    std::size_t max_len = 128;
    double dropout = 0.2;

    void validate() const;
};

/// `lstm.emb`, and per direction `lstm.{fwd,bwd}.{w_ih,w_hh,bias}` with gate
/// blocks ordered input, forget, cell, output.
ParameterStore make_qalstm_params(const QaLstmConfig& config, std::uint64_t seed);

/// Embedding -> forward and backward LSTM -> concatenated states -> max over
/// unmasked positions -> dropout. Returns 1 x 2*hidden.
Var bilstm_forward(Tape& tape, const ParameterStore& params, const QaLstmConfig& config,
                   const textenc::SeqEncoding& input, Rng* dropout_rng = nullptr);
Matrix bilstm_encode(const ParameterStore& params, const QaLstmConfig& config, const textenc::SeqEncoding& input);

} // namespace finrank::neural
