#include "osrlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace osrlab {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

double stable_log_sigmoid(double x) {
    // -softplus(-x)
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

double sigmoid_of_neg(double x) {
    // sigma(-x), stable on both tails
    if (x >= 0.0) {
        double e = std::exp(-x);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(x));
}

}  // namespace

double pairwise_sum(const double* x, std::size_t n) {
    if (n == 0) return 0.0;
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += x[i];
        return s;
    }
    std::size_t half = n / 2;
    return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

Var Tape::push(Op op, std::int32_t a, std::int32_t b, double c0, Tensor value, bool tracked) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c0 = c0;
    n.tracked = tracked;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::input(Tensor v) { return push(Op::Leaf, -1, -1, 0.0, std::move(v), true); }

Var Tape::constant(Tensor v) { return push(Op::Const, -1, -1, 0.0, std::move(v), false); }

Var Tape::param(Parameter& p) {
    Var v = push(Op::Leaf, -1, -1, 0.0, p.value, true);
    param_leaves_.emplace_back(&p, v.idx);
    return v;
}

Var Tape::unary(Op op, Var a, double c0) {
    const Node& na = nodes_[a.idx];
    Tensor out = eval(op, &na.value, nullptr, c0);
    return push(op, a.idx, -1, c0, std::move(out), na.tracked);
}

Var Tape::binary(Op op, Var a, Var b) {
    const Node& na = nodes_[a.idx];
    const Node& nb = nodes_[b.idx];
    Tensor out = eval(op, &na.value, &nb.value, 0.0);
    return push(op, a.idx, b.idx, 0.0, std::move(out), na.tracked || nb.tracked);
}

Var Tape::add(Var a, Var b) { return binary(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::Mul, a, b); }
Var Tape::scale(Var a, double c) { return unary(Op::Scale, a, c); }
Var Tape::add_const(Var a, double c) { return unary(Op::AddConst, a, c); }
Var Tape::matmul(Var a, Var b) { return binary(Op::MatMul, a, b); }
Var Tape::matmul_nt(Var a, Var b) { return binary(Op::MatMulNT, a, b); }
Var Tape::add_rowvec(Var a, Var b) { return binary(Op::AddRowVec, a, b); }
Var Tape::tanh_(Var a) { return unary(Op::Tanh, a); }
Var Tape::sigmoid_(Var a) { return unary(Op::Sigmoid, a); }
Var Tape::log_(Var a) { return unary(Op::Log, a); }
Var Tape::cos_(Var a) { return unary(Op::Cos, a); }
Var Tape::acos_clamped(Var a) { return unary(Op::AcosClamped, a); }
Var Tape::min_const(Var a, double c) { return unary(Op::MinConst, a, c); }
Var Tape::log_sigmoid(Var a) { return unary(Op::LogSigmoid, a); }
Var Tape::logsumexp_rows(Var a) { return unary(Op::LogSumExpRows, a); }
Var Tape::normalize_rows(Var a, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("normalize_rows: eps must be > 0");
    return unary(Op::NormalizeRows, a, eps);
}
Var Tape::l2norm(Var a) { return unary(Op::L2Norm, a); }
Var Tape::sum(Var a) { return unary(Op::Sum, a); }

Tensor Tape::eval(Op op, const Tensor* a, const Tensor* b, double c0) {
    switch (op) {
        case Op::Leaf:
        case Op::Const:
            return *a;
        case Op::Add: {
            check_same_shape(*a, *b, "add");
            Tensor out = *a;
            for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b->data[i];
            return out;
        }
        case Op::Sub: {
            check_same_shape(*a, *b, "sub");
            Tensor out = *a;
            for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b->data[i];
            return out;
        }
        case Op::Mul: {
            check_same_shape(*a, *b, "mul");
            Tensor out = *a;
            for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b->data[i];
            return out;
        }
        case Op::Scale: {
            Tensor out = *a;
            for (double& v : out.data) v *= c0;
            return out;
        }
        case Op::AddConst: {
            Tensor out = *a;
            for (double& v : out.data) v += c0;
            return out;
        }
        case Op::MatMul: {
            const std::size_t m = a->rows(), k = a->cols(), k2 = b->rows(), n = b->cols();
            if (k != k2) throw std::invalid_argument("matmul: inner dimension mismatch");
            Tensor out = Tensor::zeros({m, n});
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = a->data.data() + i * k;
                double* orow = out.data.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = arow[p];
                    if (av == 0.0) continue;
                    const double* brow = b->data.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
                }
            }
            return out;
        }
        case Op::MatMulNT: {
            const std::size_t m = a->rows(), k = a->cols(), n = b->rows(), k2 = b->cols();
            if (k != k2) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
            Tensor out = Tensor::zeros({m, n});
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = a->data.data() + i * k;
                double* orow = out.data.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) {
                    const double* brow = b->data.data() + j * k;
                    double s = 0.0;
                    for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
                    orow[j] = s;
                }
            }
            return out;
        }
        case Op::AddRowVec: {
            const std::size_t m = a->rows(), n = a->cols();
            if (b->numel() != n) throw std::invalid_argument("add_rowvec: width mismatch");
            Tensor out = *a;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += b->data[j];
            return out;
        }
        case Op::Tanh: {
            Tensor out = *a;
            for (double& v : out.data) v = std::tanh(v);
            return out;
        }
        case Op::Sigmoid: {
            Tensor out = *a;
            for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
            return out;
        }
        case Op::Log: {
            Tensor out = *a;
            for (double& v : out.data) v = std::log(v);
            return out;
        }
        case Op::Cos: {
            Tensor out = *a;
            for (double& v : out.data) v = std::cos(v);
            return out;
        }
        case Op::AcosClamped: {
            Tensor out = *a;
            for (double& v : out.data) v = std::acos(std::clamp(v, -1.0 + kAcosClampEps, 1.0 - kAcosClampEps));
            return out;
        }
        case Op::MinConst: {
            Tensor out = *a;
            for (double& v : out.data) v = std::min(v, c0);
            return out;
        }
        case Op::LogSigmoid: {
            Tensor out = *a;
            for (double& v : out.data) v = stable_log_sigmoid(v);
            return out;
        }
        case Op::LogSumExpRows: {
            const std::size_t m = a->rows(), n = a->cols();
            Tensor out = Tensor::zeros({m, 1});
            for (std::size_t i = 0; i < m; ++i) {
                const double* row = a->data.data() + i * n;
                double mx = row[0];
                for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
                out.data[i] = mx + std::log(s);
            }
            return out;
        }
        case Op::NormalizeRows: {
            const std::size_t m = a->rows(), n = a->cols();
            Tensor out = *a;
            for (std::size_t i = 0; i < m; ++i) {
                double* row = out.data.data() + i * n;
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += row[j] * row[j];
                const double denom = std::max(std::sqrt(s), c0);
                for (std::size_t j = 0; j < n; ++j) row[j] /= denom;
            }
            return out;
        }
        case Op::L2Norm: {
            double s = 0.0;
            for (double v : a->data) s += v * v;
            return Tensor::scalar(std::sqrt(s));
        }
        case Op::Sum: {
            double s = 0.0;
            for (double v : a->data) s += v;
            return Tensor::scalar(s);
        }
    }
    throw std::logic_error("Tape::eval: unhandled op");
}

void Tape::reset_grads() {
    for (Node& n : nodes_) {
        if (n.grad.shape != n.value.shape || n.grad.data.size() != n.value.data.size())
            n.grad = Tensor::zeros(n.value.shape);
        else
            n.grad.fill(0.0);
    }
}

void Tape::backward(Var out) {
    if (!out.valid() || static_cast<std::size_t>(out.idx) >= nodes_.size())
        throw std::invalid_argument("backward: invalid node");
    if (nodes_[out.idx].value.numel() != 1)
        throw std::invalid_argument("backward: output is not a scalar");
    reset_grads();
    nodes_[out.idx].grad.data[0] = 1.0;
    sweep_backward(out.idx);
}

void Tape::backward_component(Var out, std::size_t j) {
    if (!out.valid() || static_cast<std::size_t>(out.idx) >= nodes_.size())
        throw std::invalid_argument("backward_component: invalid node");
    if (j >= nodes_[out.idx].value.numel())
        throw std::invalid_argument("backward_component: component out of range");
    reset_grads();
    nodes_[out.idx].grad.data[j] = 1.0;
    sweep_backward(out.idx);
}

void Tape::sweep_backward(std::int32_t from) {
    for (std::int32_t i = from; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.tracked) continue;
        const Tensor& g = n.grad;
        Node* pa = n.a >= 0 ? &nodes_[n.a] : nullptr;
        Node* pb = n.b >= 0 ? &nodes_[n.b] : nullptr;
        const bool ta = pa && pa->tracked;
        const bool tb = pb && pb->tracked;
        switch (n.op) {
            case Op::Leaf:
            case Op::Const:
                break;
            case Op::Add:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) pa->grad.data[t] += g.data[t];
                if (tb)
                    for (std::size_t t = 0; t < g.numel(); ++t) pb->grad.data[t] += g.data[t];
                break;
            case Op::Sub:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) pa->grad.data[t] += g.data[t];
                if (tb)
                    for (std::size_t t = 0; t < g.numel(); ++t) pb->grad.data[t] -= g.data[t];
                break;
            case Op::Mul:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) pa->grad.data[t] += g.data[t] * pb->value.data[t];
                if (tb)
                    for (std::size_t t = 0; t < g.numel(); ++t) pb->grad.data[t] += g.data[t] * pa->value.data[t];
                break;
            case Op::Scale:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) pa->grad.data[t] += n.c0 * g.data[t];
                break;
            case Op::AddConst:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) pa->grad.data[t] += g.data[t];
                break;
            case Op::MatMul: {
                const std::size_t m = pa->value.rows(), k = pa->value.cols(), nn = pb->value.cols();
                if (ta) {
                    // gA[i,p] += sum_j g[i,j] B[p,j]
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = g.data.data() + i * nn;
                        double* garow = pa->grad.data.data() + i * k;
                        for (std::size_t p = 0; p < k; ++p) {
                            const double* brow = pb->value.data.data() + p * nn;
                            double s = 0.0;
                            for (std::size_t j = 0; j < nn; ++j) s += grow[j] * brow[j];
                            garow[p] += s;
                        }
                    }
                }
                if (tb) {
                    // gB[p,j] += sum_i A[i,p] g[i,j]
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* arow = pa->value.data.data() + i * k;
                        const double* grow = g.data.data() + i * nn;
                        for (std::size_t p = 0; p < k; ++p) {
                            const double av = arow[p];
                            if (av == 0.0) continue;
                            double* gbrow = pb->grad.data.data() + p * nn;
                            for (std::size_t j = 0; j < nn; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
                break;
            }
            case Op::MatMulNT: {
                const std::size_t m = pa->value.rows(), k = pa->value.cols(), nn = pb->value.rows();
                if (ta) {
                    // gA[i,p] += sum_j g[i,j] B[j,p]
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = g.data.data() + i * nn;
                        double* garow = pa->grad.data.data() + i * k;
                        for (std::size_t j = 0; j < nn; ++j) {
                            const double gv = grow[j];
                            if (gv == 0.0) continue;
                            const double* brow = pb->value.data.data() + j * k;
                            for (std::size_t p = 0; p < k; ++p) garow[p] += gv * brow[p];
                        }
                    }
                }
                if (tb) {
                    // gB[j,p] += sum_i g[i,j] A[i,p]
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* grow = g.data.data() + i * nn;
                        const double* arow = pa->value.data.data() + i * k;
                        for (std::size_t j = 0; j < nn; ++j) {
                            const double gv = grow[j];
                            if (gv == 0.0) continue;
                            double* gbrow = pb->grad.data.data() + j * k;
                            for (std::size_t p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
                        }
                    }
                }
                break;
            }
            case Op::AddRowVec: {
                const std::size_t m = n.value.rows(), nn = n.value.cols();
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) pa->grad.data[t] += g.data[t];
                if (tb)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < nn; ++j) pb->grad.data[j] += g.data[i * nn + j];
                break;
            }
            case Op::Tanh:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) {
                        const double y = n.value.data[t];
                        pa->grad.data[t] += g.data[t] * (1.0 - y * y);
                    }
                break;
            case Op::Sigmoid:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) {
                        const double y = n.value.data[t];
                        pa->grad.data[t] += g.data[t] * y * (1.0 - y);
                    }
                break;
            case Op::Log:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t)
                        pa->grad.data[t] += g.data[t] / pa->value.data[t];
                break;
            case Op::Cos:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t)
                        pa->grad.data[t] -= g.data[t] * std::sin(pa->value.data[t]);
                break;
            case Op::AcosClamped:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t) {
                        const double x = pa->value.data[t];
                        if (std::abs(x) < 1.0 - kAcosClampEps) {
                            pa->grad.data[t] -= g.data[t] / std::sqrt(1.0 - x * x);
                        }
                        // clamped region: zero gradient
                    }
                break;
            case Op::MinConst:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t)
                        if (pa->value.data[t] <= n.c0) pa->grad.data[t] += g.data[t];
                break;
            case Op::LogSigmoid:
                if (ta)
                    for (std::size_t t = 0; t < g.numel(); ++t)
                        pa->grad.data[t] += g.data[t] * sigmoid_of_neg(pa->value.data[t]);
                break;
            case Op::LogSumExpRows: {
                const std::size_t m = pa->value.rows(), nn = pa->value.cols();
                if (ta)
                    for (std::size_t i = 0; i < m; ++i) {
                        const double gv = g.data[i];
                        if (gv == 0.0) continue;
                        const double lse = n.value.data[i];
                        const double* arow = pa->value.data.data() + i * nn;
                        double* garow = pa->grad.data.data() + i * nn;
                        for (std::size_t j = 0; j < nn; ++j) garow[j] += gv * std::exp(arow[j] - lse);
                    }
                break;
            }
            case Op::NormalizeRows: {
                const std::size_t m = pa->value.rows(), nn = pa->value.cols();
                if (ta)
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* vrow = pa->value.data.data() + i * nn;
                        const double* yrow = n.value.data.data() + i * nn;
                        const double* grow = g.data.data() + i * nn;
                        double* garow = pa->grad.data.data() + i * nn;
                        double norm = 0.0;
                        for (std::size_t j = 0; j < nn; ++j) norm += vrow[j] * vrow[j];
                        norm = std::sqrt(norm);
                        if (norm >= n.c0) {
                            double gy = 0.0;
                            for (std::size_t j = 0; j < nn; ++j) gy += grow[j] * yrow[j];
                            for (std::size_t j = 0; j < nn; ++j)
                                garow[j] += (grow[j] - gy * yrow[j]) / norm;
                        } else {
                            // denominator saturated at eps, a plain scaling
                            for (std::size_t j = 0; j < nn; ++j) garow[j] += grow[j] / n.c0;
                        }
                    }
                break;
            }
            case Op::L2Norm:
                if (ta) {
                    const double y = n.value.data[0];
                    if (y > 0.0) {
                        const double gv = g.data[0] / y;
                        for (std::size_t t = 0; t < pa->value.numel(); ++t)
                            pa->grad.data[t] += gv * pa->value.data[t];
                    }
                }
                break;
            case Op::Sum:
                if (ta)
                    for (std::size_t t = 0; t < pa->value.numel(); ++t) pa->grad.data[t] += g.data[0];
                break;
        }
    }
}

void Tape::add_param_grads() {
    for (auto& [p, idx] : param_leaves_) {
        const Tensor& g = nodes_[idx].grad;
        if (g.data.size() != p->grad.data.size()) continue;  // backward not run yet
        for (std::size_t t = 0; t < g.numel(); ++t) p->grad.data[t] += g.data[t];
    }
}

bool Tape::replay_matches() const {
    std::vector<Tensor> recomputed(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op == Op::Leaf || n.op == Op::Const) {
            recomputed[i] = n.value;
        } else {
            const Tensor* a = n.a >= 0 ? &recomputed[n.a] : nullptr;
            const Tensor* b = n.b >= 0 ? &recomputed[n.b] : nullptr;
            recomputed[i] = eval(n.op, a, b, n.c0);
        }
        if (recomputed[i].shape != n.value.shape) return false;
        if (std::memcmp(recomputed[i].data.data(), n.value.data.data(),
                        n.value.numel() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

std::vector<Tensor> param_gradients(Tape& tape, Var scalar_out, std::span<Parameter* const> params) {
    for (Parameter* p : params) p->zero_grad();
    tape.backward(scalar_out);
    tape.add_param_grads();
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (Parameter* p : params) out.push_back(p->grad);
    return out;
}

Tensor jacobian(const std::function<Var(Tape&, Var)>& build, const Tensor& x) {
    Tape tape;
    Var xv = tape.input(x);
    Var out = build(tape, xv);
    const std::size_t d_out = tape.value(out).numel();
    const std::size_t d_in = x.numel();
    Tensor jac = Tensor::zeros({d_out, d_in});
    for (std::size_t j = 0; j < d_out; ++j) {
        tape.backward_component(out, j);
        const Tensor& gx = tape.grad(xv);
        for (std::size_t i = 0; i < d_in; ++i) jac.data[j * d_in + i] = gx.data[i];
    }
    return jac;
}

Tensor fd_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("fd_jacobian: step size must be > 0");
    const std::size_t d_in = x.numel();
    Tensor xp = x, xm = x;
    Tensor f0 = f(x);
    const std::size_t d_out = f0.numel();
    Tensor jac = Tensor::zeros({d_out, d_in});
    for (std::size_t i = 0; i < d_in; ++i) {
        xp.data[i] = x.data[i] + h;
        xm.data[i] = x.data[i] - h;
        Tensor fp = f(xp);
        Tensor fm = f(xm);
        if (fp.numel() != d_out || fm.numel() != d_out)
            throw std::invalid_argument("fd_jacobian: output dimension changed");
        for (std::size_t j = 0; j < d_out; ++j)
            jac.data[j * d_in + i] = (fp.data[j] - fm.data[j]) / (2.0 * h);
        xp.data[i] = x.data[i];
        xm.data[i] = x.data[i];
    }
    return jac;
}

}  // namespace osrlab
