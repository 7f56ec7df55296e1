#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "finrank/autograd.hpp"
#include "finrank/rng.hpp"
#include "finrank/textenc.hpp"

namespace finrank::neural {

// ---------------------------------------------------------------- scalar math

double sigmoid(double z);
/// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> z);
double cosine_similarity(std::span<const double> u, std::span<const double> v);

// ---------------------------------------------------------------- losses

inline constexpr double kProbClamp = 1e-7;

/// max{0, margin - cos_pos + cos_neg}
double loss_hinge(double cos_pos, double cos_neg, double margin);

struct LossTotals {
    double sum = 0.0;
    double mean = 0.0;
};

/// -sum log s_j over positives - sum log(1 - s_j) over negatives, with s clamped.
LossTotals loss_pointwise(std::span<const double> probs, std::span<const int> labels);

struct PairwiseWeights {
    double lambda_ce = 0.5;
    double lambda_hinge = 0.5;
    double margin = 0.2;
};

/// -l1 (log y_pos + log(1 - y_neg)) + l2 max{0, m - y_pos + y_neg}
double loss_pairwise(double y_pos, double y_neg, const PairwiseWeights& w = {});

struct MaskedTarget {
    std::size_t position = 0;
    textenc::TokenId target = 0;
};

/// Mean over targets of -log softmax(logits.row(position))[target].
double loss_mlm(const Matrix& logits, std::span<const MaskedTarget> targets);

// Differentiable counterparts; all return 1x1.
Var hinge_loss(Var cos_pos, Var cos_neg, double margin);
/// probs is k x 1; per-sample terms are summed.
Var pointwise_loss(Var probs, std::span<const int> labels);
Var pairwise_loss(Var y_pos, Var y_neg, const PairwiseWeights& w = {});
/// logits rows are indexed by MaskedTarget::position.
Var mlm_loss(Var logits, std::span<const MaskedTarget> targets);

// ---------------------------------------------------------------- layers

/// Inverted dropout. Identity when rng is null (eval mode) or rate == 0.
Var dropout(Var x, double rate, Rng* rng);

/// softmax(Q K^T / sqrt(d_k)) V with masked keys given weight 0.
Var attention(Var q, Var k, Var v, std::span<const std::uint8_t> key_mask = {});
Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const std::uint8_t> key_mask = {});

/// Parameter names `<prefix>{q,k,v,o}.weight` (d x d) and `.bias` (1 x d).
Var multi_head_attention(Tape& tape, const ParameterStore& params, const std::string& prefix, Var x,
                         std::size_t n_heads, std::span<const std::uint8_t> key_mask = {});
Matrix multi_head_attention(const ParameterStore& params, const std::string& prefix, const Matrix& x,
                            std::size_t n_heads, std::span<const std::uint8_t> key_mask = {});
void add_attention_params(ParameterStore& params, const std::string& prefix, std::size_t d_model);

/// Uniform [-0.05, 0.05] in name order; names ending in `ln*.gain` get 1 and
/// `ln*.bias` get 0. Draws are rounded to float32. Callers zero the PAD
/// embedding row afterwards.
void initialize(ParameterStore& params, std::uint64_t seed);

// ---------------------------------------------------------------- optimizer

struct AdamState {
    ParameterStore m;
    ParameterStore v;
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_params(const ParameterStore& params);
};

struct LrSchedule {
    double base_lr = 3e-6;
    std::int64_t warmup_steps = 10000;

    /// base_lr * min(step / warmup, 1); no warmup when warmup_steps == 0.
    double at(std::int64_t step) const;
};

/// min(configured, ceil(0.1 * total_steps)).
std::int64_t effective_warmup(std::int64_t configured, std::int64_t total_steps);

/// Bias-corrected Adam with decoupled weight decay. Increments state.step first.
void adam_step(ParameterStore& params, const ParameterStore& grads, AdamState& state, const LrSchedule& schedule,
               double weight_decay);

} // namespace finrank::neural
