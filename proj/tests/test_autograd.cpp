#include <doctest.h>

#include <cmath>
#include <limits>

#include "finrank/autograd.hpp"
#include "finrank/error.hpp"
#include "finrank/neural.hpp"
#include "finrank/rng.hpp"
#include "support.hpp"

using namespace finrank;
using namespace finrank::neural;

namespace {

using LossFn = std::function<Var(Tape&, const ParameterStore&)>;

ParameterStore random_store(std::initializer_list<std::tuple<const char*, int, int>> shapes, std::uint64_t seed,
                            double scale = 1.0) {
    Rng rng(seed);
    ParameterStore p;
    for (const auto& [name, r, c] : shapes) {
        Matrix m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            m.data()[i] = rng.uniform(-scale, scale);
        }
        p.add(name, m);
    }
    return p;
}

void require_agreement(ParameterStore params, const LossFn& loss) {
    const auto r = testing::check_gradients(params, loss, 50, 1);
    INFO("worst parameter: " << r.worst_param);
    CHECK(r.checked > 0);
    CHECK(r.worst_rel_error <= 1e-3);
}

} // namespace

TEST_CASE("elementwise and matrix ops pass finite differences") {
    auto params = random_store({{"a", 3, 4}, {"b", 4, 2}, {"c", 3, 2}, {"r", 1, 2}}, 11);
    require_agreement(params, [](Tape& t, const ParameterStore& p) {
        Var a = t.parameter(p, "a"), b = t.parameter(p, "b"), c = t.parameter(p, "c"), r = t.parameter(p, "r");
        Var x = add_row(matmul(a, b), r);
        Var y = mul(tanh(x), sigmoid(c));
        Var z = sub(scale(y, 1.7), add_scalar(gelu(c), 0.3));
        return mean(add(z, slice_cols(matmul_bt(c, c), 0, 2)));
    });
}

TEST_CASE("softmax, log-softmax and layer norm pass finite differences") {
    auto params = random_store({{"x", 3, 5}, {"g", 1, 5}, {"b", 1, 5}}, 12);
    require_agreement(params, [](Tape& t, const ParameterStore& p) {
        Var x = t.parameter(p, "x");
        Var ln = layer_norm(x, t.parameter(p, "g"), t.parameter(p, "b"), 1e-12);
        const std::vector<std::uint8_t> mask{1, 0, 1, 1, 1};
        Var sm = softmax_rows(ln, mask);
        Var lsm = log_softmax_rows(x);
        const std::vector<std::pair<Eigen::Index, Eigen::Index>> entries{{0, 1}, {2, 4}, {1, 0}};
        return add(sum(mul(sm, x)), sum(pick(lsm, entries)));
    });
}

TEST_CASE("gather, slicing, concat and pooling pass finite differences") {
    auto params = random_store({{"table", 6, 3}, {"w", 3, 3}}, 13);
    require_agreement(params, [](Tape& t, const ParameterStore& p) {
        const std::vector<std::int32_t> ids{4, 1, 4, 0};
        Var e = gather_rows(t.parameter(p, "table"), ids);
        Var h = matmul(e, t.parameter(p, "w"));
        Var top = slice_rows(h, 0, 2);
        Var bottom = slice_rows(h, 2, 2);
        Var joined = concat_cols({top, bottom});
        Var stacked = concat_rows({joined, scale(joined, -0.5)});
        return sum(max_rows(stacked));
    });
}

TEST_CASE("cosine, clamp, log and relu pass finite differences") {
    auto params = random_store({{"u", 1, 4}, {"v", 1, 4}}, 14);
    require_agreement(params, [](Tape& t, const ParameterStore& p) {
        Var u = t.parameter(p, "u"), v = t.parameter(p, "v");
        Var c = cosine(u, v);
        Var s = sigmoid(add(u, v));
        return add(c, add(sum(log(clamp(s, 1e-7, 1.0 - 1e-7))), sum(relu(add_scalar(u, 0.013)))));
    });
}

TEST_CASE("losses and attention pass finite differences") {
    auto params = random_store({{"q", 3, 2}, {"k", 4, 2}, {"v", 4, 3}, {"logits", 2, 5}, {"p", 2, 1}}, 15);
    require_agreement(params, [](Tape& t, const ParameterStore& p) {
        const std::vector<std::uint8_t> mask{1, 1, 0, 1};
        Var att = attention(t.parameter(p, "q"), t.parameter(p, "k"), t.parameter(p, "v"), mask);
        const std::vector<MaskedTarget> targets{{0, 3}, {1, 0}};
        Var mlm = mlm_loss(t.parameter(p, "logits"), targets);
        Var probs = sigmoid(t.parameter(p, "p"));
        const std::vector<int> labels{1, 0};
        Var point = pointwise_loss(probs, labels);
        Var pair = pairwise_loss(slice_rows(probs, 0, 1), slice_rows(probs, 1, 1), {0.5, 0.5, 1.5});
        return add(add(mean(att), mlm), add(point, pair));
    });
}

TEST_CASE("constant loss has zero gradients") {
    ParameterStore p;
    p.add("w", Matrix::Constant(2, 2, 3.0));
    Tape t;
    Var w = t.parameter(p, "w");
    Var loss = add_scalar(scale(sum(w), 0.0), 4.0);
    t.backward(loss);
    CHECK(t.gradients().at("w") == Matrix::Zero(2, 2));
}

TEST_CASE("cosine(u, u) is stationary") {
    ParameterStore p;
    p.add("u", (Matrix(1, 3) << 0.3, -1.2, 2.5).finished());
    Tape t;
    Var u = t.parameter(p, "u");
    t.backward(cosine(u, u));
    CHECK(t.gradients().at("u").cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("parameters used twice accumulate gradients") {
    ParameterStore p;
    p.add("w", (Matrix(1, 1) << 3.0).finished());
    Tape t;
    Var w = t.parameter(p, "w");
    t.backward(mul(w, w));
    CHECK(t.gradients().at("w")(0, 0) == 6.0);
}

TEST_CASE("non-finite gradients raise NumericalError") {
    ParameterStore p;
    // log of a subnormal is finite, its derivative overflows
    p.add("w", (Matrix(1, 1) << 1e-320).finished());
    Tape t;
    Var w = t.parameter(p, "w");
    t.backward(sum(log(w)));
    CHECK_THROWS_AS(t.gradients(), NumericalError);

    p.at("w")(0, 0) = 1e200;
    Tape t2;
    Var w2 = t2.parameter(p, "w");
    CHECK_THROWS_AS(t2.backward(sum(mul(mul(w2, w2), w2))), NumericalError);
}

TEST_CASE("shape mismatches raise InvalidArgument") {
    Tape t;
    Var a = t.constant(Matrix::Zero(2, 3));
    Var b = t.constant(Matrix::Zero(2, 2));
    CHECK_THROWS_AS(add(a, b), InvalidArgument);
    CHECK_THROWS_AS(matmul(a, b), InvalidArgument);
    CHECK_THROWS_AS(cosine(a, b), InvalidArgument);
}
