#include "finrank/models.hpp"

#include <algorithm>

#include "finrank/error.hpp"

namespace finrank::neural {

namespace {

Matrix zeros(std::size_t r, std::size_t c) {
    return Matrix::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

std::string layer_prefix(std::size_t i) { return "enc.layer" + std::to_string(i) + "."; }

} // namespace

// ---------------------------------------------------------------- encoder

void EncoderConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || max_len == 0) {
        throw InvalidArgument("encoder dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw InvalidArgument("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                              std::to_string(n_heads) + ")");
    }
    if (vocab_size <= static_cast<std::size_t>(textenc::kNumReserved)) {
        throw InvalidArgument("vocab_size must exceed the reserved tokens");
    }
    if (n_segments < 2) {
        throw InvalidArgument("n_segments must be >= 2");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw InvalidArgument("dropout must lie in [0, 1)");
    }
}

EncoderConfig EncoderConfig::base(std::size_t vocab_size) {
    EncoderConfig c;
    c.n_layers = 12;
    c.d_model = 768;
    c.n_heads = 12;
    c.d_ff = 3072;
    c.max_len = 512;
    c.vocab_size = vocab_size;
    return c;
}

void add_encoder_heads(ParameterStore& params, const EncoderConfig& config, EncoderHeads heads, std::uint64_t seed) {
    ParameterStore fresh;
    if (heads.relevance && !params.contains("head.weight")) {
        fresh.add("head.weight", zeros(config.d_model, 2));
        fresh.add("head.bias", zeros(1, 2));
    }
    if (heads.mlm && !params.contains("mlm.weight")) {
        fresh.add("mlm.weight", zeros(config.d_model, config.vocab_size));
        fresh.add("mlm.bias", zeros(1, config.vocab_size));
    }
    initialize(fresh, seed);
    for (auto& [name, m] : fresh) {
        params.add(name, std::move(m));
    }
}

ParameterStore make_encoder_params(const EncoderConfig& config, std::uint64_t seed, EncoderHeads heads) {
    config.validate();
    ParameterStore p;
    const auto d = config.d_model;
    p.add("enc.tok_emb", zeros(config.vocab_size, d));
    p.add("enc.pos_emb", zeros(config.max_len, d));
    p.add("enc.seg_emb", zeros(config.n_segments, d));
    for (std::size_t i = 0; i < config.n_layers; ++i) {
        const auto pre = layer_prefix(i);
        add_attention_params(p, pre + "attn.", d);
        p.add(pre + "ln1.gain", zeros(1, d));
        p.add(pre + "ln1.bias", zeros(1, d));
        p.add(pre + "ffn.in.weight", zeros(d, config.d_ff));
        p.add(pre + "ffn.in.bias", zeros(1, config.d_ff));
        p.add(pre + "ffn.out.weight", zeros(config.d_ff, d));
        p.add(pre + "ffn.out.bias", zeros(1, d));
        p.add(pre + "ln2.gain", zeros(1, d));
        p.add(pre + "ln2.bias", zeros(1, d));
    }
    if (heads.relevance) {
        p.add("head.weight", zeros(d, 2));
        p.add("head.bias", zeros(1, 2));
    }
    if (heads.mlm) {
        p.add("mlm.weight", zeros(d, config.vocab_size));
        p.add("mlm.bias", zeros(1, config.vocab_size));
    }
    initialize(p, seed);
    p.at("enc.tok_emb").row(textenc::kPad).setZero();
    return p;
}

EncoderStates encoder_forward(Tape& tape, const ParameterStore& params, const EncoderConfig& config,
                              const textenc::PairEncoding& input, Rng* dropout_rng) {
    const auto n = input.ids.size();
    if (n == 0 || n > config.max_len || input.mask.size() != n || input.segment_ids.size() != n) {
        throw InvalidArgument("encoder input must have 1..max_len positions with matching mask and segments");
    }
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (input.ids[i] < 0 || static_cast<std::size_t>(input.ids[i]) >= config.vocab_size) {
            throw InvalidArgument("token id " + std::to_string(input.ids[i]) + " outside vocabulary of " +
                                  std::to_string(config.vocab_size));
        }
        if (input.segment_ids[i] >= config.n_segments) {
            throw InvalidArgument("segment id out of range");
        }
        if (input.mask[i]) {
            used = i + 1;
        }
    }
    if (used == 0) {
        throw InvalidArgument("encoder input has no unmasked positions");
    }
    // Positions after the last real token never influence earlier ones
    // (they are masked as keys), so the padded tail is skipped.
    std::span<const textenc::TokenId> ids(input.ids.data(), used);
    std::vector<std::int32_t> positions(used), segments(used);
    std::vector<std::uint8_t> key_mask(input.mask.begin(), input.mask.begin() + static_cast<std::ptrdiff_t>(used));
    const bool dense = std::all_of(key_mask.begin(), key_mask.end(), [](auto m) { return m != 0; });
    for (std::size_t i = 0; i < used; ++i) {
        positions[i] = static_cast<std::int32_t>(i);
        segments[i] = input.segment_ids[i];
    }
    std::span<const std::uint8_t> mask_view = dense ? std::span<const std::uint8_t>{} : std::span(key_mask);

    const auto p = [&](const std::string& name) { return tape.parameter(params, name); };
    Var x = add(add(gather_rows(p("enc.tok_emb"), ids), gather_rows(p("enc.pos_emb"), positions)),
                gather_rows(p("enc.seg_emb"), segments));
    x = dropout(x, config.dropout, dropout_rng);

    for (std::size_t i = 0; i < config.n_layers; ++i) {
        const auto pre = layer_prefix(i);
        Var attn = multi_head_attention(tape, params, pre + "attn.", x, config.n_heads, mask_view);
        x = layer_norm(add(x, dropout(attn, config.dropout, dropout_rng)), p(pre + "ln1.gain"), p(pre + "ln1.bias"),
                       config.ln_eps);
        Var hidden = gelu(linear(x, p(pre + "ffn.in.weight"), p(pre + "ffn.in.bias")));
        Var ffn = linear(hidden, p(pre + "ffn.out.weight"), p(pre + "ffn.out.bias"));
        x = layer_norm(add(x, dropout(ffn, config.dropout, dropout_rng)), p(pre + "ln2.gain"), p(pre + "ln2.bias"),
                       config.ln_eps);
    }
    return {slice_rows(x, 0, 1), x};
}

Var relevance_logits(Tape& tape, const ParameterStore& params, Var cls) {
    return linear(cls, tape.parameter(params, "head.weight"), tape.parameter(params, "head.bias"));
}

Var relevance_probability(Tape& tape, const ParameterStore& params, const EncoderConfig& config,
                          const textenc::PairEncoding& input, Rng* dropout_rng) {
    auto enc = encoder_forward(tape, params, config, input, dropout_rng);
    Var cls = dropout(enc.cls, config.dropout, dropout_rng);
    return slice_cols(softmax_rows(relevance_logits(tape, params, cls)), 1, 1);
}

double relevance_probability(const ParameterStore& params, const EncoderConfig& config,
                             const textenc::PairEncoding& input) {
    Tape t;
    return relevance_probability(t, params, config, input).scalar();
}

Var mlm_logits(Tape& tape, const ParameterStore& params, Var states, std::span<const std::size_t> rows) {
    std::vector<Var> picked;
    picked.reserve(rows.size());
    for (auto r : rows) {
        picked.push_back(slice_rows(states, static_cast<Eigen::Index>(r), 1));
    }
    Var selected = picked.size() == 1 ? picked.front() : concat_rows(picked);
    return linear(selected, tape.parameter(params, "mlm.weight"), tape.parameter(params, "mlm.bias"));
}

MaskedInput mask_tokens(const textenc::PairEncoding& input, std::size_t vocab_size, Rng& rng, double rate) {
    MaskedInput out{input, {}};
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < input.ids.size(); ++i) {
        if (input.mask[i] && input.ids[i] >= textenc::kNumReserved) {
            candidates.push_back(i);
        }
    }
    if (candidates.empty()) {
        return out;
    }
    std::vector<std::size_t> chosen;
    for (auto pos : candidates) {
        if (rng.bernoulli(rate)) {
            chosen.push_back(pos);
        }
    }
    if (chosen.empty()) {
        chosen.push_back(candidates[rng.below(candidates.size())]);
    }
    const auto n_regular = vocab_size - static_cast<std::size_t>(textenc::kNumReserved);
    for (auto pos : chosen) {
        out.targets.push_back({pos, input.ids[pos]});
        const double r = rng.uniform();
        if (r < 0.8) {
            out.input.ids[pos] = textenc::kMask;
        } else if (r < 0.9 && n_regular > 0) {
            out.input.ids[pos] = static_cast<textenc::TokenId>(textenc::kNumReserved + rng.below(n_regular));
        }
    }
    return out;
}

// ---------------------------------------------------------------- QA-LSTM

void QaLstmConfig::validate() const {
    if (embedding_dim == 0 || hidden == 0 || max_len == 0) {
        throw InvalidArgument("QA-LSTM dimensions must be positive");
    }
    if (vocab_size <= static_cast<std::size_t>(textenc::kNumReserved)) {
        throw InvalidArgument("vocab_size must exceed the reserved tokens");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw InvalidArgument("dropout must lie in [0, 1)");
    }
}

ParameterStore make_qalstm_params(const QaLstmConfig& config, std::uint64_t seed) {
    config.validate();
    ParameterStore p;
    const auto h4 = 4 * config.hidden;
    p.add("lstm.emb", zeros(config.vocab_size, config.embedding_dim));
    for (const char* dir : {"fwd", "bwd"}) {
        const std::string pre = std::string("lstm.") + dir + ".";
        p.add(pre + "w_ih", zeros(config.embedding_dim, h4));
        p.add(pre + "w_hh", zeros(config.hidden, h4));
        p.add(pre + "bias", zeros(1, h4));
    }
    initialize(p, seed);
    p.at("lstm.emb").row(textenc::kPad).setZero();
    return p;
}

namespace {

// Runs one LSTM direction over `steps` (row indices into x_proj) and returns
// the hidden state for each step, in the order given.
std::vector<Var> lstm_pass(Tape& tape, Var x_proj, Var w_hh, std::size_t hidden, std::span<const Eigen::Index> steps) {
    const auto h = static_cast<Eigen::Index>(hidden);
    Var state_h = tape.constant(Matrix::Zero(1, h));
    Var state_c = tape.constant(Matrix::Zero(1, h));
    std::vector<Var> out;
    out.reserve(steps.size());
    for (auto t : steps) {
        Var gates = add(slice_rows(x_proj, t, 1), matmul(state_h, w_hh));
        Var ifo = sigmoid(gates);
        Var in_gate = slice_cols(ifo, 0, h);
        Var forget_gate = slice_cols(ifo, h, h);
        Var cell_in = tanh(slice_cols(gates, 2 * h, h));
        Var out_gate = slice_cols(ifo, 3 * h, h);
        state_c = add(mul(forget_gate, state_c), mul(in_gate, cell_in));
        state_h = mul(out_gate, tanh(state_c));
        out.push_back(state_h);
    }
    return out;
}

} // namespace

Var bilstm_forward(Tape& tape, const ParameterStore& params, const QaLstmConfig& config,
                   const textenc::SeqEncoding& input, Rng* dropout_rng) {
    if (input.mask.size() != input.ids.size()) {
        throw InvalidArgument("sequence mask length differs from ids");
    }
    std::vector<std::int32_t> ids;
    for (std::size_t i = 0; i < input.ids.size(); ++i) {
        if (!input.mask[i]) {
            continue;
        }
        if (input.ids[i] < 0 || static_cast<std::size_t>(input.ids[i]) >= config.vocab_size) {
            throw InvalidArgument("token id " + std::to_string(input.ids[i]) + " outside vocabulary");
        }
        ids.push_back(input.ids[i]);
    }
    if (ids.empty()) {
        throw InvalidArgument("cannot pool a fully masked sequence");
    }
    const auto p = [&](const std::string& name) { return tape.parameter(params, name); };
    Var emb = gather_rows(p("lstm.emb"), ids);

    const auto n = static_cast<Eigen::Index>(ids.size());
    std::vector<Eigen::Index> forward(static_cast<std::size_t>(n)), backward(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        forward[static_cast<std::size_t>(i)] = i;
        backward[static_cast<std::size_t>(i)] = n - 1 - i;
    }
    Var fwd_proj = linear(emb, p("lstm.fwd.w_ih"), p("lstm.fwd.bias"));
    Var bwd_proj = linear(emb, p("lstm.bwd.w_ih"), p("lstm.bwd.bias"));
    auto fwd_states = lstm_pass(tape, fwd_proj, p("lstm.fwd.w_hh"), config.hidden, forward);
    auto bwd_states = lstm_pass(tape, bwd_proj, p("lstm.bwd.w_hh"), config.hidden, backward);
    std::reverse(bwd_states.begin(), bwd_states.end());

    Var fwd_all = n == 1 ? fwd_states.front() : concat_rows(fwd_states);
    Var bwd_all = n == 1 ? bwd_states.front() : concat_rows(bwd_states);
    Var pooled = max_rows(concat_cols({fwd_all, bwd_all}));
    return dropout(pooled, config.dropout, dropout_rng);
}

Matrix bilstm_encode(const ParameterStore& params, const QaLstmConfig& config, const textenc::SeqEncoding& input) {
    Tape t;
    return bilstm_forward(t, params, config, input).value();
}

} // namespace finrank::neural
