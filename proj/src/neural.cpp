#include "finrank/neural.hpp"

#include <algorithm>
#include <cmath>

#include "finrank/error.hpp"

namespace finrank::neural {

double sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) {
        throw InvalidArgument("softmax of an empty vector");
    }
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> out(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - mx);
        total += out[i];
    }
    for (auto& v : out) {
        v /= total;
    }
    return out;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw InvalidArgument("cosine_similarity: length mismatch");
    }
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) {
        throw NumericalError("cosine similarity of a zero vector");
    }
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

// ---------------------------------------------------------------- losses

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

} // namespace

double loss_hinge(double cos_pos, double cos_neg, double margin) {
    return std::max(0.0, margin - cos_pos + cos_neg);
}

LossTotals loss_pointwise(std::span<const double> probs, std::span<const int> labels) {
    if (probs.size() != labels.size()) {
        throw InvalidArgument("loss_pointwise: probs and labels differ in length");
    }
    LossTotals out;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double s = clamp_prob(probs[i]);
        out.sum -= labels[i] == 1 ? std::log(s) : std::log(1.0 - s);
    }
    out.mean = probs.empty() ? 0.0 : out.sum / static_cast<double>(probs.size());
    return out;
}

double loss_pairwise(double y_pos, double y_neg, const PairwiseWeights& w) {
    const double ce = std::log(clamp_prob(y_pos)) + std::log(1.0 - clamp_prob(y_neg));
    return -w.lambda_ce * ce + w.lambda_hinge * std::max(0.0, w.margin - y_pos + y_neg);
}

double loss_mlm(const Matrix& logits, std::span<const MaskedTarget> targets) {
    if (targets.empty()) {
        throw InvalidArgument("loss_mlm needs at least one masked position");
    }
    double total = 0.0;
    for (const auto& t : targets) {
        const auto row = static_cast<Eigen::Index>(t.position);
        if (row >= logits.rows() || t.target < 0 || t.target >= logits.cols()) {
            throw InvalidArgument("loss_mlm: target out of range");
        }
        const double mx = logits.row(row).maxCoeff();
        const double lse = mx + std::log((logits.row(row).array() - mx).exp().sum());
        total += lse - logits(row, t.target);
    }
    return total / static_cast<double>(targets.size());
}

Var hinge_loss(Var cos_pos, Var cos_neg, double margin) {
    return relu(add_scalar(sub(cos_neg, cos_pos), margin));
}

Var pointwise_loss(Var probs, std::span<const int> labels) {
    if (probs.cols() != 1 || probs.rows() != static_cast<Eigen::Index>(labels.size())) {
        throw InvalidArgument("pointwise_loss: probs must be k x 1 with k labels");
    }
    Tape& t = *probs.tape;
    Matrix pos(probs.rows(), 1), neg(probs.rows(), 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        pos(static_cast<Eigen::Index>(i), 0) = labels[i] == 1 ? 1.0 : 0.0;
        neg(static_cast<Eigen::Index>(i), 0) = labels[i] == 1 ? 0.0 : 1.0;
    }
    Var s = clamp(probs, kProbClamp, 1.0 - kProbClamp);
    Var log_s = log(s);
    Var log_not_s = log(add_scalar(scale(s, -1.0), 1.0));
    Var total = add(sum(mul(log_s, t.constant(std::move(pos)))), sum(mul(log_not_s, t.constant(std::move(neg)))));
    return scale(total, -1.0);
}

Var pairwise_loss(Var y_pos, Var y_neg, const PairwiseWeights& w) {
    Var p = clamp(y_pos, kProbClamp, 1.0 - kProbClamp);
    Var n = clamp(y_neg, kProbClamp, 1.0 - kProbClamp);
    Var ce = add(log(p), log(add_scalar(scale(n, -1.0), 1.0)));
    Var hinge = relu(add_scalar(sub(y_neg, y_pos), w.margin));
    return add(scale(ce, -w.lambda_ce), scale(hinge, w.lambda_hinge));
}

Var mlm_loss(Var logits, std::span<const MaskedTarget> targets) {
    if (targets.empty()) {
        throw InvalidArgument("mlm_loss needs at least one masked position");
    }
    std::vector<std::pair<Eigen::Index, Eigen::Index>> entries;
    for (const auto& tg : targets) {
        entries.emplace_back(static_cast<Eigen::Index>(tg.position), tg.target);
    }
    Var picked = pick(log_softmax_rows(logits), entries);
    return scale(sum(picked), -1.0 / static_cast<double>(targets.size()));
}

// ---------------------------------------------------------------- layers

Var dropout(Var x, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) {
        return x;
    }
    if (rate >= 1.0) {
        throw InvalidArgument("dropout rate must be < 1");
    }
    const double keep_scale = 1.0 / (1.0 - rate);
    Matrix mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = rng->bernoulli(1.0 - rate) ? keep_scale : 0.0;
    }
    return apply_mask(x, mask);
}

Var attention(Var q, Var k, Var v, std::span<const std::uint8_t> key_mask) {
    if (q.cols() != k.cols() || k.rows() != v.rows()) {
        throw InvalidArgument("attention: Q (n x d_k), K (m x d_k), V (m x d_v) required");
    }
    if (!key_mask.empty() && static_cast<Eigen::Index>(key_mask.size()) != k.rows()) {
        throw InvalidArgument("attention: key mask length must equal number of keys");
    }
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Var weights = softmax_rows(scale(matmul_bt(q, k), inv_sqrt_dk), key_mask);
    return matmul(weights, v);
}

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, std::span<const std::uint8_t> key_mask) {
    Tape t;
    return attention(t.constant(q), t.constant(k), t.constant(v), key_mask).value();
}

Var multi_head_attention(Tape& tape, const ParameterStore& params, const std::string& prefix, Var x,
                         std::size_t n_heads, std::span<const std::uint8_t> key_mask) {
    const auto d_model = x.cols();
    if (n_heads == 0 || d_model % static_cast<Eigen::Index>(n_heads) != 0) {
        throw InvalidArgument("d_model must be divisible by n_heads");
    }
    const auto p = [&](const char* name) { return tape.parameter(params, prefix + name); };
    Var q = linear(x, p("q.weight"), p("q.bias"));
    Var k = linear(x, p("k.weight"), p("k.bias"));
    Var v = linear(x, p("v.weight"), p("v.bias"));
    const auto d_k = d_model / static_cast<Eigen::Index>(n_heads);
    std::vector<Var> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        const auto off = static_cast<Eigen::Index>(h) * d_k;
        heads.push_back(attention(slice_cols(q, off, d_k), slice_cols(k, off, d_k), slice_cols(v, off, d_k), key_mask));
    }
    Var joined = n_heads == 1 ? heads.front() : concat_cols(heads);
    return linear(joined, p("o.weight"), p("o.bias"));
}

Matrix multi_head_attention(const ParameterStore& params, const std::string& prefix, const Matrix& x,
                            std::size_t n_heads, std::span<const std::uint8_t> key_mask) {
    Tape t;
    return multi_head_attention(t, params, prefix, t.constant(x), n_heads, key_mask).value();
}

void add_attention_params(ParameterStore& params, const std::string& prefix, std::size_t d_model) {
    const auto d = static_cast<Eigen::Index>(d_model);
    for (const char* proj : {"q", "k", "v", "o"}) {
        params.add(prefix + proj + ".weight", Matrix::Zero(d, d));
        params.add(prefix + proj + ".bias", Matrix::Zero(1, d));
    }
}

namespace {

// `<...>.ln<k>.<leaf>`
bool is_layer_norm(const std::string& name, std::string_view leaf) {
    const auto dot = name.rfind('.');
    if (dot == std::string::npos || dot == 0 || std::string_view(name).substr(dot + 1) != leaf) {
        return false;
    }
    const auto prev = name.rfind('.', dot - 1);
    const auto start = prev == std::string::npos ? 0 : prev + 1;
    return name.compare(start, 2, "ln") == 0;
}

} // namespace

void initialize(ParameterStore& params, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, m] : params) {
        if (is_layer_norm(name, "gain")) {
            m.setOnes();
        } else if (is_layer_norm(name, "bias")) {
            m.setZero();
        } else {
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                // Values are float32-representable so a checkpoint of an untouched
                // initialization reloads unchanged.
                m.data()[i] = static_cast<float>(rng.uniform(-0.05, 0.05));
            }
        }
    }
}

// ---------------------------------------------------------------- optimizer

AdamState AdamState::for_params(const ParameterStore& params) {
    AdamState s;
    s.m = params.zeros_like();
    s.v = params.zeros_like();
    return s;
}

double LrSchedule::at(std::int64_t step) const {
    if (warmup_steps <= 0) {
        return base_lr;
    }
    return base_lr * std::min(static_cast<double>(step) / static_cast<double>(warmup_steps), 1.0);
}

std::int64_t effective_warmup(std::int64_t configured, std::int64_t total_steps) {
    const auto tenth = static_cast<std::int64_t>(std::ceil(0.1 * static_cast<double>(total_steps)));
    return std::min(configured, tenth);
}

void adam_step(ParameterStore& params, const ParameterStore& grads, AdamState& state, const LrSchedule& schedule,
               double weight_decay) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw InvalidArgument("adam_step: parameter, gradient and moment sets differ");
    }
    ++state.step;
    const double lr = schedule.at(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        const auto& g = grads.at(name);
        auto& m = state.m.at(name);
        auto& v = state.v.at(name);
        if (g.rows() != p.rows() || g.cols() != p.cols() || m.rows() != p.rows() || m.cols() != p.cols()) {
            throw InvalidArgument("adam_step: shape mismatch for " + name);
        }
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseAbs2();
        const auto m_hat = m.array() / c1;
        const auto v_hat = v.array() / c2;
        p.array() -= lr * (m_hat / (v_hat.sqrt() + state.eps) + weight_decay * p.array());
    }
}

} // namespace finrank::neural
