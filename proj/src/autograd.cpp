#include "finrank/autograd.hpp"

#include <cmath>
#include <numbers>

#include "finrank/error.hpp"

namespace finrank::neural {

namespace {

std::string shape_of(const Matrix& m) {
    return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

void require_same_shape(const char* op, Var a, Var b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_of(a.value()) + " vs " +
                              shape_of(b.value()));
    }
}

void require_same_tape(Var a, Var b) {
    if (a.tape != b.tape) {
        throw InvalidArgument("operands live on different tapes");
    }
}

} // namespace

// ---------------------------------------------------------------- ParameterStore

Matrix& ParameterStore::add(const std::string& name, Matrix value) {
    auto [it, inserted] = tensors_.emplace(name, std::move(value));
    if (!inserted) {
        throw InvalidArgument("duplicate parameter " + name);
    }
    return it->second;
}

Matrix& ParameterStore::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw InvalidArgument("unknown parameter " + name);
    }
    return it->second;
}

const Matrix& ParameterStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw InvalidArgument("unknown parameter " + name);
    }
    return it->second;
}

std::size_t ParameterStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors_) {
        n += static_cast<std::size_t>(m.size());
    }
    return n;
}

ParameterStore ParameterStore::zeros_like() const {
    ParameterStore out;
    for (const auto& [name, m] : tensors_) {
        out.add(name, Matrix::Zero(m.rows(), m.cols()));
    }
    return out;
}

bool ParameterStore::operator==(const ParameterStore& o) const {
    if (tensors_.size() != o.tensors_.size()) {
        return false;
    }
    for (auto a = tensors_.begin(), b = o.tensors_.begin(); a != tensors_.end(); ++a, ++b) {
        if (a->first != b->first || a->second.rows() != b->second.rows() || a->second.cols() != b->second.cols() ||
            a->second != b->second) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------- Tape

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
    Node n;
    n.own = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const ParameterStore& store, const std::string& name) {
    if (auto it = params_.find(name); it != params_.end()) {
        return {this, it->second};
    }
    Node n;
    n.bound = &store.at(name);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size() - 1);
    params_.emplace(name, id);
    return {this, id};
}

Var Tape::push(Matrix value, std::initializer_list<int> parents, BackwardFn backward) {
    return push(std::move(value), std::vector<int>(parents), std::move(backward));
}

Var Tape::push(Matrix value, const std::vector<int>& parents, BackwardFn backward) {
    Node n;
    n.own = std::move(value);
    for (int p : parents) {
        if (nodes_[static_cast<std::size_t>(p)].needs_grad) {
            n.needs_grad = true;
            break;
        }
    }
    if (n.needs_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Tape::value(int id) const {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    return n.bound ? *n.bound : n.own;
}

void Tape::accumulate(int id, const Matrix& grad) {
    accumulate_with(id, [&](Matrix& g) { g += grad; });
}

void Tape::backward(Var root) {
    if (root.tape != this) {
        throw InvalidArgument("backward on a foreign variable");
    }
    if (value(root.id).size() != 1) {
        throw InvalidArgument("backward needs a scalar root, got " + shape_of(value(root.id)));
    }
    if (!std::isfinite(value(root.id)(0, 0))) {
        throw NumericalError("non-finite loss");
    }
    auto& r = nodes_[static_cast<std::size_t>(root.id)];
    if (!r.needs_grad) {
        return;
    }
    r.grad = Matrix::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward && n.grad.size() != 0) {
            n.backward(*this, n.grad);
            n.grad.resize(0, 0);
        }
    }
}

ParameterStore Tape::gradients() const {
    ParameterStore out;
    for (const auto& [name, id] : params_) {
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        Matrix g = n.grad.size() ? n.grad : Matrix::Zero(n.bound->rows(), n.bound->cols());
        if (!g.allFinite()) {
            throw NumericalError("non-finite gradient for " + name);
        }
        out.add(name, std::move(g));
    }
    return out;
}

void Tape::add_gradients_to(ParameterStore& grads) const {
    for (const auto& [name, id] : params_) {
        const auto& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.size() == 0) {
            continue;
        }
        if (!n.grad.allFinite()) {
            throw NumericalError("non-finite gradient for " + name);
        }
        grads.at(name) += n.grad;
    }
}

// ---------------------------------------------------------------- ops

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    if (a.cols() != b.rows()) {
        throw InvalidArgument("matmul: " + shape_of(a.value()) + " x " + shape_of(b.value()));
    }
    const int ia = a.id, ib = b.id;
    return a.tape->push(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d.noalias() += g * t.value(ib).transpose(); });
        t.accumulate_with(ib, [&](Matrix& d) { d.noalias() += t.value(ia).transpose() * g; });
    });
}

Var matmul_bt(Var a, Var b) {
    require_same_tape(a, b);
    if (a.cols() != b.cols()) {
        throw InvalidArgument("matmul_bt: " + shape_of(a.value()) + " x " + shape_of(b.value()) + "^T");
    }
    const int ia = a.id, ib = b.id;
    return a.tape->push(a.value() * b.value().transpose(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d.noalias() += g * t.value(ib); });
        t.accumulate_with(ib, [&](Matrix& d) { d.noalias() += g.transpose() * t.value(ia); });
    });
}

Var add(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("add", a, b);
    const int ia = a.id, ib = b.id;
    return a.tape->push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("sub", a, b);
    const int ia = a.id, ib = b.id;
    return a.tape->push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate_with(ib, [&](Matrix& d) { d -= g; });
    });
}

Var mul(Var a, Var b) {
    require_same_tape(a, b);
    require_same_shape("mul", a, b);
    const int ia = a.id, ib = b.id;
    return a.tape->push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d += g.cwiseProduct(t.value(ib)); });
        t.accumulate_with(ib, [&](Matrix& d) { d += g.cwiseProduct(t.value(ia)); });
    });
}

Var scale(Var a, double s) {
    const int ia = a.id;
    return a.tape->push(a.value() * s, {ia}, [ia, s](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d += g * s; });
    });
}

Var add_scalar(Var a, double s) {
    const int ia = a.id;
    Matrix out = a.value().array() + s;
    return a.tape->push(std::move(out), {ia}, [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var add_row(Var a, Var row) {
    require_same_tape(a, row);
    if (row.rows() != 1 || row.cols() != a.cols()) {
        throw InvalidArgument("add_row: " + shape_of(a.value()) + " + " + shape_of(row.value()));
    }
    const int ia = a.id, ir = row.id;
    Matrix out = a.value().rowwise() + row.value().row(0);
    return a.tape->push(std::move(out), {ia, ir}, [ia, ir](Tape& t, const Matrix& g) {
        t.accumulate(ia, g);
        t.accumulate_with(ir, [&](Matrix& d) { d += g.colwise().sum(); });
    });
}

Var tanh(Var a) {
    const int ia = a.id;
    const int iy = a.tape->next_id();
    Matrix y = a.value().array().tanh();
    return a.tape->push(std::move(y), {ia}, [ia, iy](Tape& t, const Matrix& g) {
        const auto& yv = t.value(iy);
        t.accumulate_with(ia, [&](Matrix& d) { d.array() += g.array() * (1.0 - yv.array().square()); });
    });
}

Var sigmoid(Var a) {
    const int ia = a.id;
    const int iy = a.tape->next_id();
    Matrix y = (1.0 + (-a.value().array()).exp()).inverse();
    return a.tape->push(std::move(y), {ia}, [ia, iy](Tape& t, const Matrix& g) {
        const auto& yv = t.value(iy);
        t.accumulate_with(ia, [&](Matrix& d) { d.array() += g.array() * yv.array() * (1.0 - yv.array()); });
    });
}

Var relu(Var a) {
    const int ia = a.id;
    return a.tape->push(a.value().cwiseMax(0.0), {ia}, [ia](Tape& t, const Matrix& g) {
        const auto& x = t.value(ia);
        t.accumulate_with(ia, [&](Matrix& d) { d.array() += (x.array() > 0.0).select(g.array(), 0.0); });
    });
}

Var gelu(Var a) {
    const int ia = a.id;
    const auto& x = a.value();
    Matrix y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); });
    return a.tape->push(std::move(y), {ia}, [ia](Tape& t, const Matrix& g) {
        const auto& xv = t.value(ia);
        Matrix dydx = xv.unaryExpr([](double v) {
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
            return cdf + v * pdf;
        });
        t.accumulate_with(ia, [&](Matrix& d) { d += g.cwiseProduct(dydx); });
    });
}

Var log(Var a) {
    const int ia = a.id;
    if ((a.value().array() <= 0.0).any()) {
        throw NumericalError("log of a non-positive value");
    }
    return a.tape->push(a.value().array().log().matrix(), {ia}, [ia](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d.array() += g.array() / t.value(ia).array(); });
    });
}

Var clamp(Var a, double lo, double hi) {
    const int ia = a.id;
    Matrix y = a.value().cwiseMax(lo).cwiseMin(hi);
    return a.tape->push(std::move(y), {ia}, [ia, lo, hi](Tape& t, const Matrix& g) {
        const auto& x = t.value(ia);
        t.accumulate_with(ia, [&](Matrix& d) {
            d.array() += ((x.array() > lo) && (x.array() < hi)).select(g.array(), 0.0);
        });
    });
}

Var sum(Var a) {
    const int ia = a.id;
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape->push(std::move(out), {ia}, [ia](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d.array() += g(0, 0); });
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) {
        throw InvalidArgument("mean of an empty tensor");
    }
    return scale(sum(a), 1.0 / n);
}

Var gather_rows(Var table, std::span<const std::int32_t> ids) {
    const auto& tv = table.value();
    Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tv.rows()) {
            throw InvalidArgument("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                                  std::to_string(tv.rows()) + " rows");
        }
        out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
    }
    const int it = table.id;
    std::vector<std::int32_t> rows(ids.begin(), ids.end());
    return table.tape->push(std::move(out), {it}, [it, rows = std::move(rows)](Tape& t, const Matrix& g) {
        t.accumulate_with(it, [&](Matrix& d) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                d.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
            }
        });
    });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.rows()) {
        throw InvalidArgument("slice_rows out of range");
    }
    const int ia = a.id;
    Matrix out = a.value().middleRows(start, count);
    return a.tape->push(std::move(out), {ia}, [ia, start, count](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d.middleRows(start, count) += g; });
    });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) {
        throw InvalidArgument("slice_cols out of range");
    }
    const int ia = a.id;
    Matrix out = a.value().middleCols(start, count);
    return a.tape->push(std::move(out), {ia}, [ia, start, count](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d.middleCols(start, count) += g; });
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw InvalidArgument("concat_cols of nothing");
    }
    Eigen::Index cols = 0;
    const auto rows = parts.front().rows();
    std::vector<int> ids;
    std::vector<Eigen::Index> widths;
    for (const auto& p : parts) {
        require_same_tape(p, parts.front());
        if (p.rows() != rows) {
            throw InvalidArgument("concat_cols: row count mismatch");
        }
        ids.push_back(p.id);
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return parts.front().tape->push(std::move(out), ids, [ids, widths](Tape& t, const Matrix& g) {
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            t.accumulate_with(ids[i], [&](Matrix& d) { d += g.middleCols(off, widths[i]); });
            off += widths[i];
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw InvalidArgument("concat_rows of nothing");
    }
    Eigen::Index rows = 0;
    const auto cols = parts.front().cols();
    std::vector<int> ids;
    std::vector<Eigen::Index> heights;
    for (const auto& p : parts) {
        require_same_tape(p, parts.front());
        if (p.cols() != cols) {
            throw InvalidArgument("concat_rows: column count mismatch");
        }
        ids.push_back(p.id);
        heights.push_back(p.rows());
        rows += p.rows();
    }
    Matrix out(rows, cols);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return parts.front().tape->push(std::move(out), ids, [ids, heights](Tape& t, const Matrix& g) {
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            t.accumulate_with(ids[i], [&](Matrix& d) { d += g.middleRows(off, heights[i]); });
            off += heights[i];
        }
    });
}

Var softmax_rows(Var a, std::span<const std::uint8_t> key_mask) {
    const auto& x = a.value();
    if (!key_mask.empty() && static_cast<Eigen::Index>(key_mask.size()) != x.cols()) {
        throw InvalidArgument("softmax_rows: mask length does not match columns");
    }
    const auto valid = [&](Eigen::Index c) { return key_mask.empty() || key_mask[static_cast<std::size_t>(c)] != 0; };
    Matrix y = Matrix::Zero(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            if (valid(c)) {
                mx = std::max(mx, x(r, c));
            }
        }
        if (!std::isfinite(mx)) {
            throw InvalidArgument("softmax_rows: row has no valid positions");
        }
        double z = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            if (valid(c)) {
                y(r, c) = std::exp(x(r, c) - mx);
                z += y(r, c);
            }
        }
        y.row(r) /= z;
    }
    const int ia = a.id, iy = a.tape->next_id();
    return a.tape->push(std::move(y), {ia}, [ia, iy](Tape& t, const Matrix& g) {
        const auto& yv = t.value(iy);
        Eigen::VectorXd dot = (g.cwiseProduct(yv)).rowwise().sum();
        t.accumulate_with(ia, [&](Matrix& d) {
            d.array() += yv.array() * (g.colwise() - dot).array();
        });
    });
}

Var log_softmax_rows(Var a) {
    const auto& x = a.value();
    Eigen::VectorXd mx = x.rowwise().maxCoeff();
    Matrix shifted = x.colwise() - mx;
    Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
    Matrix y = shifted.colwise() - lse;
    const int ia = a.id, iy = a.tape->next_id();
    return a.tape->push(std::move(y), {ia}, [ia, iy](Tape& t, const Matrix& g) {
        Matrix p = t.value(iy).array().exp();
        Eigen::VectorXd gs = g.rowwise().sum();
        t.accumulate_with(ia, [&](Matrix& d) { d += g - (p.array().colwise() * gs.array()).matrix(); });
    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    const auto& xv = x.value();
    const auto n = xv.cols();
    if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
        throw InvalidArgument("layer_norm: gain/bias must be 1 x " + std::to_string(n));
    }
    Eigen::VectorXd mu = xv.rowwise().mean();
    Matrix centered = xv.colwise() - mu;
    Eigen::VectorXd inv_std =
        ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps).sqrt().inverse();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();

    Var keep = x.tape->constant(std::move(xhat));
    const int ix = x.id, ig = gain.id, ib = bias.id, ih = keep.id;
    return x.tape->push(std::move(y), {ix, ig, ib}, [ix, ig, ib, ih, inv_std, n](Tape& t, const Matrix& g) {
        const auto& xh = t.value(ih);
        t.accumulate_with(ig, [&](Matrix& d) { d += g.cwiseProduct(xh).colwise().sum(); });
        t.accumulate_with(ib, [&](Matrix& d) { d += g.colwise().sum(); });
        t.accumulate_with(ix, [&](Matrix& d) {
            Matrix dxhat = g.array().rowwise() * t.value(ig).row(0).array();
            Eigen::VectorXd m1 = dxhat.rowwise().mean();
            Eigen::VectorXd m2 = dxhat.cwiseProduct(xh).rowwise().sum() / static_cast<double>(n);
            Matrix inner = (dxhat.colwise() - m1) - (xh.array().colwise() * m2.array()).matrix();
            d += (inner.array().colwise() * inv_std.array()).matrix();
        });
    });
}

Var max_rows(Var a) {
    const auto& x = a.value();
    if (x.rows() == 0) {
        throw InvalidArgument("max_rows over zero rows");
    }
    Matrix out(1, x.cols());
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::Index r;
        out(0, c) = x.col(c).maxCoeff(&r);
        arg[static_cast<std::size_t>(c)] = r;
    }
    const int ia = a.id;
    return a.tape->push(std::move(out), {ia}, [ia, arg = std::move(arg)](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) {
            for (std::size_t c = 0; c < arg.size(); ++c) {
                d(arg[c], static_cast<Eigen::Index>(c)) += g(0, static_cast<Eigen::Index>(c));
            }
        });
    });
}

Var pick(Var a, std::span<const std::pair<Eigen::Index, Eigen::Index>> entries) {
    const auto& x = a.value();
    Matrix out(static_cast<Eigen::Index>(entries.size()), 1);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto [r, c] = entries[i];
        if (r < 0 || r >= x.rows() || c < 0 || c >= x.cols()) {
            throw InvalidArgument("pick: entry out of range");
        }
        out(static_cast<Eigen::Index>(i), 0) = x(r, c);
    }
    const int ia = a.id;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> where(entries.begin(), entries.end());
    return a.tape->push(std::move(out), {ia}, [ia, where = std::move(where)](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) {
            for (std::size_t i = 0; i < where.size(); ++i) {
                d(where[i].first, where[i].second) += g(static_cast<Eigen::Index>(i), 0);
            }
        });
    });
}

Var apply_mask(Var a, const Matrix& mask) {
    if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
        throw InvalidArgument("apply_mask: shape mismatch");
    }
    const int ia = a.id;
    return a.tape->push(a.value().cwiseProduct(mask), {ia}, [ia, mask](Tape& t, const Matrix& g) {
        t.accumulate_with(ia, [&](Matrix& d) { d += g.cwiseProduct(mask); });
    });
}

Var cosine(Var u, Var v) {
    require_same_tape(u, v);
    require_same_shape("cosine", u, v);
    const double nu = u.value().norm();
    const double nv = v.value().norm();
    if (nu == 0.0 || nv == 0.0) {
        throw NumericalError("cosine similarity of a zero vector");
    }
    const double dot = u.value().cwiseProduct(v.value()).sum();
    const double c = dot / (nu * nv);
    Matrix out(1, 1);
    out(0, 0) = c;
    const int iu = u.id, iv = v.id;
    return u.tape->push(std::move(out), {iu, iv}, [iu, iv, nu, nv, c](Tape& t, const Matrix& g) {
        const double s = g(0, 0);
        const auto& uv = t.value(iu);
        const auto& vv = t.value(iv);
        t.accumulate_with(iu, [&](Matrix& d) { d += s * (vv / (nu * nv) - c * uv / (nu * nu)); });
        t.accumulate_with(iv, [&](Matrix& d) { d += s * (uv / (nu * nv) - c * vv / (nv * nv)); });
    });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

} // namespace finrank::neural
