#pragma once

#include <optional>
#include <string>
#include <vector>

#include "osrlab/autodiff.hpp"
#include "osrlab/rng.hpp"
#include "osrlab/tensor.hpp"

namespace osrlab {

constexpr double kNormalizeEps = 1e-12;
constexpr double kPi = 3.14159265358979323846;

struct MlpConfig {
    std::size_t input_dim = 2;
    std::vector<std::size_t> hidden_dims = {32, 32};
    std::size_t embed_dim = 16;
    double init_scale = 1.0;
    // activation is tanh throughout: the theory assumes a smooth network and
    // the finite-difference oracle needs one.

    void validate() const;
};

// v / max(||v||_2, eps); the eps guard means a zero vector maps to zero.
Tensor unit_normalize(const Tensor& v, double eps = kNormalizeEps);

// Dot product of two unit vectors, clamped to [-1, 1]. Inputs more than 1e-6
// away from unit norm are rejected.
double cosine_sim(const Tensor& f, const Tensor& w);

// cos(min(arccos(cos_val) + m, pi)); the clamp at pi keeps the output >= -1
// for any admissible margin. Requires cos_val in [-1,1] and m in [0, pi/2).
double margin_similarity(double cos_val, double m);

// Tanh MLP embedding f: R^d -> R^{d_z}. The raw output is denoted f-hat;
// the normalized output (default) lives on the unit sphere.
class EmbeddingNet {
public:
    EmbeddingNet(MlpConfig cfg, Rng& rng);
    // deserialization path: explicit layer tensors
    EmbeddingNet(MlpConfig cfg, std::vector<Tensor> weights, std::vector<Tensor> biases);

    const MlpConfig& config() const { return cfg_; }
    std::size_t input_dim() const { return cfg_.input_dim; }
    std::size_t embed_dim() const { return cfg_.embed_dim; }
    std::size_t num_layers() const { return layers_.size(); }

    std::vector<Parameter*> parameters();
    const Parameter& layer_weight(std::size_t i) const { return layers_[i].w; }
    const Parameter& layer_bias(std::size_t i) const { return layers_[i].b; }

    // Plain forward with no tape. x is a single sample [d] or a batch [B, d].
    Tensor forward(const Tensor& x, bool normalized = true) const;

    // Tape forward for training: parameters enter as bound leaves, so
    // gradients reach them via Tape::add_param_grads().
    Var build_forward_train(Tape& tape, Var x, bool normalized = true);

    // Tape forward over frozen weights: parameters enter as constants, so
    // only the input carries gradient. Used for input-Jacobian work.
    Var build_forward_frozen(Tape& tape, Var x, bool normalized = true) const;

private:
    struct Layer {
        Parameter w;  // [in, out]
        Parameter b;  // [out]
    };
    Var build_forward(Tape& tape, Var x, bool normalized, bool train) const;

    MlpConfig cfg_;
    mutable std::vector<Layer> layers_;
};

// K learnable unit prototypes, one per known class, stored as rows of a
// [K, d_z] parameter. Excluded from weight decay; rows are re-projected to
// unit norm after every optimizer step.
class PrototypeBank {
public:
    PrototypeBank(std::size_t k, std::size_t dim, Rng& rng);
    PrototypeBank(std::size_t k, std::size_t dim, Tensor weights);

    std::size_t size() const { return k_; }
    std::size_t dim() const { return dim_; }
    Parameter& weights() { return weights_; }
    const Parameter& weights() const { return weights_; }

    Tensor prototype(std::size_t k) const;
    void project_unit_rows();
    double max_unit_norm_error() const;

    // Cosine similarities f . w_k for a batch of normalized embeddings
    // [B, d_z] -> [B, K]; margin chain appended when requested.
    Var build_similarities(Tape& tape, Var f_normalized, double margin, bool apply_margin);
    Var build_similarities_frozen(Tape& tape, Var f_normalized, double margin, bool apply_margin) const;

private:
    std::size_t k_;
    std::size_t dim_;
    mutable Parameter weights_;
};

// Margin chain on a similarity node: cos(min(acos(s) + m, pi)).
Var apply_margin_chain(Tape& tape, Var sims, double margin);

// s_k for every class; margin applied when the flag is set. Non-tape path,
// exact at cos = +-1 (no derivative clamp involved).
Tensor class_similarities(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                          double m, bool apply_margin);

// 4-way linear head on the raw embedding for rotation prediction.
struct RotationHead {
    Parameter w;  // [d_z, 4]
    Parameter b;  // [4]
    RotationHead(std::size_t embed_dim, Rng& rng);
    RotationHead(Tensor w_, Tensor b_);
    Var build_logits(Tape& tape, Var raw_embedding);
};

// ---------------------------------------------------------------------------
// Checkpoint file: little-endian binary, bit-exact round trip.
// ---------------------------------------------------------------------------
struct Checkpoint {
    MlpConfig config;
    EmbeddingNet net;
    PrototypeBank bank;
    std::optional<RotationHead> head;
};

void save_checkpoint(const std::string& path, const EmbeddingNet& net, const PrototypeBank& bank,
                     const RotationHead* head = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace osrlab
