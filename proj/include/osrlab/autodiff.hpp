#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "osrlab/tensor.hpp"

namespace osrlab {

// Trainable tensor with its gradient accumulator. The accumulator must be
// zeroed between optimizer steps; Tape::add_param_grads adds into it.
struct Parameter {
    Tensor value;
    Tensor grad;
    bool decay_eligible = true;

    explicit Parameter(Tensor v, bool decay = true)
        : value(std::move(v)), grad(Tensor::zeros(value.shape)), decay_eligible(decay) {}

    void zero_grad() { grad.fill(0.0); }
};

struct Var {
    std::int32_t idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward() walks it in reverse.
// A tape is single-threaded; distinct tapes over immutable values may be
// evaluated concurrently.
class Tape {
public:
    enum class Op : std::uint8_t {
        Leaf,
        Const,
        Add,
        Sub,
        Mul,
        Scale,       // c0 * x
        AddConst,    // x + c0
        MatMul,      // A[m,k] * B[k,n]
        MatMulNT,    // A[m,k] * B[n,k]^T
        AddRowVec,   // A[m,n] + b[n] broadcast over rows
        Tanh,
        Sigmoid,
        Log,
        Cos,
        AcosClamped,  // acos(clamp(x, -1+eps, 1-eps)); zero gradient outside
        MinConst,     // min(x, c0)
        LogSigmoid,   // numerically stable log(sigmoid(x))
        LogSumExpRows,
        NormalizeRows,  // row / max(||row||_2, c0)
        L2Norm,         // whole tensor -> scalar
        Sum,            // whole tensor -> scalar
    };

    static constexpr double kAcosClampEps = 1e-7;

    // --- leaves -------------------------------------------------------------
    Var input(Tensor v);     // tracked: gradients flow to it
    Var constant(Tensor v);  // untracked: gradient flow stops here
    // Tracked leaf bound to a Parameter; add_param_grads() accumulates its
    // gradient into p.grad after backward().
    Var param(Parameter& p);

    // --- primitives ---------------------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);
    Var add_rowvec(Var a, Var b);
    Var tanh_(Var a);
    Var sigmoid_(Var a);
    Var log_(Var a);
    Var cos_(Var a);
    Var acos_clamped(Var a);
    Var min_const(Var a, double c);
    Var log_sigmoid(Var a);
    Var logsumexp_rows(Var a);
    Var normalize_rows(Var a, double eps);
    Var l2norm(Var a);
    Var sum(Var a);

    // --- reverse pass -------------------------------------------------------
    // Backward from a scalar node with seed 1. Throws if out is not a scalar.
    void backward(Var out);
    // Backward treating component j of a vector-valued node as the scalar
    // output (seed e_j). Grads are reset each call, so one forward pass can
    // serve several reverse passes.
    void backward_component(Var out, std::size_t j);

    // Add every registered parameter leaf's gradient into Parameter::grad.
    // Parameters never placed on this tape are untouched, i.e. their
    // accumulated gradient stays whatever it was (zero after zero_grad()).
    void add_param_grads();

    const Tensor& value(Var v) const { return nodes_[v.idx].value; }
    const Tensor& grad(Var v) const { return nodes_[v.idx].grad; }
    std::size_t size() const { return nodes_.size(); }

    // Recompute every node value from the leaves and compare bit-for-bit with
    // what the forward pass produced.
    bool replay_matches() const;

private:
    struct Node {
        Op op;
        std::int32_t a = -1;
        std::int32_t b = -1;
        double c0 = 0.0;
        bool tracked = false;
        Tensor value;
        Tensor grad;
    };

    Var push(Op op, std::int32_t a, std::int32_t b, double c0, Tensor value, bool tracked);
    Var unary(Op op, Var a, double c0 = 0.0);
    Var binary(Op op, Var a, Var b);
    static Tensor eval(Op op, const Tensor* a, const Tensor* b, double c0);
    void reset_grads();
    void sweep_backward(std::int32_t from);

    std::vector<Node> nodes_;
    std::vector<std::pair<Parameter*, std::int32_t>> param_leaves_;
};

// Exact reverse-mode gradients of a scalar node with respect to an explicit
// parameter set. Parameters not reachable on the tape get zero gradients.
std::vector<Tensor> param_gradients(Tape& tape, Var scalar_out, std::span<Parameter* const> params);

// d f_j / d x_i as a (d_out x d_in) matrix, one reverse pass per output
// component. `build` constructs the graph for f on the given tape.
Tensor jacobian(const std::function<Var(Tape&, Var)>& build, const Tensor& x);

// Central-difference Jacobian oracle: column i is (f(x+h e_i) - f(x-h e_i)) / 2h.
Tensor fd_jacobian(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace osrlab
