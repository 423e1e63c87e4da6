#include "osrlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace osrlab {

void MlpConfig::validate() const {
    if (input_dim < 1) throw std::invalid_argument("MlpConfig: input_dim must be >= 1");
    if (embed_dim < 2) throw std::invalid_argument("MlpConfig: embed_dim must be >= 2");
    for (std::size_t h : hidden_dims)
        if (h < 1) throw std::invalid_argument("MlpConfig: hidden dims must be >= 1");
    if (!(init_scale > 0.0)) throw std::invalid_argument("MlpConfig: init_scale must be > 0");
}

Tensor unit_normalize(const Tensor& v, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("unit_normalize: eps must be > 0");
    Tensor out = v;
    const double denom = std::max(l2_norm(v), eps);
    for (double& x : out.data) x /= denom;
    return out;
}

double cosine_sim(const Tensor& f, const Tensor& w) {
    if (f.numel() != w.numel()) throw std::invalid_argument("cosine_sim: dimension mismatch");
    if (std::abs(l2_norm(f) - 1.0) > 1e-6 || std::abs(l2_norm(w) - 1.0) > 1e-6)
        throw std::invalid_argument("cosine_sim: inputs must be unit vectors");
    return std::clamp(dot(f, w), -1.0, 1.0);
}

double margin_similarity(double cos_val, double m) {
    if (!(m >= 0.0 && m < kPi / 2.0))
        throw std::invalid_argument("margin_similarity: margin must be in [0, pi/2)");
    if (cos_val < -1.0 || cos_val > 1.0)
        throw std::invalid_argument("margin_similarity: cos_val must be in [-1, 1]");
    const double angle = std::acos(cos_val) + m;
    return std::cos(std::min(angle, kPi));
}

// ---------------------------------------------------------------------------
// EmbeddingNet
// ---------------------------------------------------------------------------

EmbeddingNet::EmbeddingNet(MlpConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::vector<std::size_t> dims;
    dims.push_back(cfg_.input_dim);
    for (std::size_t h : cfg_.hidden_dims) dims.push_back(h);
    dims.push_back(cfg_.embed_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
        // Glorot-uniform scaled by init_scale
        const double limit = cfg_.init_scale * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w = Tensor::zeros({fan_in, fan_out});
        for (double& v : w.data) v = rng.uniform(-limit, limit);
        Tensor b = Tensor::zeros({fan_out});
        layers_.push_back(Layer{Parameter(std::move(w), true), Parameter(std::move(b), true)});
    }
}

EmbeddingNet::EmbeddingNet(MlpConfig cfg, std::vector<Tensor> weights, std::vector<Tensor> biases)
    : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (weights.size() != biases.size() || weights.size() != cfg_.hidden_dims.size() + 1)
        throw std::invalid_argument("EmbeddingNet: layer tensor count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l)
        layers_.push_back(Layer{Parameter(std::move(weights[l]), true), Parameter(std::move(biases[l]), true)});
}

std::vector<Parameter*> EmbeddingNet::parameters() {
    std::vector<Parameter*> out;
    for (Layer& l : layers_) {
        out.push_back(&l.w);
        out.push_back(&l.b);
    }
    return out;
}

Tensor EmbeddingNet::forward(const Tensor& x, bool normalized) const {
    if (x.cols() != cfg_.input_dim) throw std::invalid_argument("EmbeddingNet::forward: input dim mismatch");
    const std::size_t batch = x.rows();
    Tensor h = x.rank() <= 1 ? Tensor::matrix(1, x.numel(), x.data) : x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Tensor& w = layers_[l].w.value;
        const Tensor& b = layers_[l].b.value;
        const std::size_t in = w.rows(), out = w.cols();
        Tensor next = Tensor::zeros({batch, out});
        for (std::size_t i = 0; i < batch; ++i) {
            const double* hrow = h.data.data() + i * in;
            double* nrow = next.data.data() + i * out;
            for (std::size_t j = 0; j < out; ++j) nrow[j] = b.data[j];
            for (std::size_t p = 0; p < in; ++p) {
                const double hv = hrow[p];
                if (hv == 0.0) continue;
                const double* wrow = w.data.data() + p * out;
                for (std::size_t j = 0; j < out; ++j) nrow[j] += hv * wrow[j];
            }
            if (l + 1 < layers_.size())
                for (std::size_t j = 0; j < out; ++j) nrow[j] = std::tanh(nrow[j]);
        }
        h = std::move(next);
    }
    if (normalized) {
        const std::size_t dz = cfg_.embed_dim;
        for (std::size_t i = 0; i < batch; ++i) {
            double* row = h.data.data() + i * dz;
            double s = 0.0;
            for (std::size_t j = 0; j < dz; ++j) s += row[j] * row[j];
            const double denom = std::max(std::sqrt(s), kNormalizeEps);
            for (std::size_t j = 0; j < dz; ++j) row[j] /= denom;
        }
    }
    if (x.rank() <= 1) return Tensor::row(std::move(h.data));
    return h;
}

Var EmbeddingNet::build_forward(Tape& tape, Var x, bool normalized, bool train) const {
    if (tape.value(x).cols() != cfg_.input_dim)
        throw std::invalid_argument("EmbeddingNet::build_forward: input dim mismatch");
    Var h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Var w = train ? tape.param(layers_[l].w) : tape.constant(layers_[l].w.value);
        Var b = train ? tape.param(layers_[l].b) : tape.constant(layers_[l].b.value);
        h = tape.add_rowvec(tape.matmul(h, w), b);
        if (l + 1 < layers_.size()) h = tape.tanh_(h);
    }
    if (normalized) h = tape.normalize_rows(h, kNormalizeEps);
    return h;
}

Var EmbeddingNet::build_forward_train(Tape& tape, Var x, bool normalized) {
    return build_forward(tape, x, normalized, true);
}

Var EmbeddingNet::build_forward_frozen(Tape& tape, Var x, bool normalized) const {
    return build_forward(tape, x, normalized, false);
}

// ---------------------------------------------------------------------------
// PrototypeBank
// ---------------------------------------------------------------------------

PrototypeBank::PrototypeBank(std::size_t k, std::size_t dim, Rng& rng)
    : k_(k), dim_(dim), weights_(Tensor::zeros({k, dim}), /*decay=*/false) {
    if (k < 1 || dim < 2) throw std::invalid_argument("PrototypeBank: need K >= 1, dim >= 2");
    // rows uniform on the sphere: normalized Gaussian vectors
    for (std::size_t i = 0; i < k_; ++i) {
        double s = 0.0;
        double* row = weights_.value.data.data() + i * dim_;
        do {
            s = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) {
                row[j] = rng.normal();
                s += row[j] * row[j];
            }
        } while (s == 0.0);
        const double inv = 1.0 / std::sqrt(s);
        for (std::size_t j = 0; j < dim_; ++j) row[j] *= inv;
    }
}

PrototypeBank::PrototypeBank(std::size_t k, std::size_t dim, Tensor weights)
    : k_(k), dim_(dim), weights_(std::move(weights), /*decay=*/false) {
    if (weights_.value.rows() != k_ || weights_.value.cols() != dim_)
        throw std::invalid_argument("PrototypeBank: weight shape mismatch");
}

Tensor PrototypeBank::prototype(std::size_t k) const {
    if (k >= k_) throw std::invalid_argument("PrototypeBank: index out of range");
    std::vector<double> row(weights_.value.data.begin() + k * dim_,
                            weights_.value.data.begin() + (k + 1) * dim_);
    return Tensor::row(std::move(row));
}

void PrototypeBank::project_unit_rows() {
    for (std::size_t i = 0; i < k_; ++i) {
        double* row = weights_.value.data.data() + i * dim_;
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) s += row[j] * row[j];
        const double norm = std::sqrt(s);
        if (norm > 0.0) {
            for (std::size_t j = 0; j < dim_; ++j) row[j] /= norm;
        }
    }
}

double PrototypeBank::max_unit_norm_error() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < k_; ++i) {
        const double* row = weights_.value.data.data() + i * dim_;
        double s = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) s += row[j] * row[j];
        worst = std::max(worst, std::abs(1.0 - std::sqrt(s)));
    }
    return worst;
}

Var apply_margin_chain(Tape& tape, Var sims, double margin) {
    if (!(margin >= 0.0 && margin < kPi / 2.0))
        throw std::invalid_argument("apply_margin_chain: margin must be in [0, pi/2)");
    if (margin == 0.0) return sims;  // exact equivalence with the plain path
    Var theta = tape.acos_clamped(sims);
    Var shifted = tape.add_const(theta, margin);
    Var clamped = tape.min_const(shifted, kPi);
    return tape.cos_(clamped);
}

Var PrototypeBank::build_similarities(Tape& tape, Var f_normalized, double margin, bool apply_margin) {
    Var w = tape.param(weights_);
    Var sims = tape.matmul_nt(f_normalized, w);
    return apply_margin ? apply_margin_chain(tape, sims, margin) : sims;
}

Var PrototypeBank::build_similarities_frozen(Tape& tape, Var f_normalized, double margin,
                                             bool apply_margin) const {
    Var w = tape.constant(weights_.value);
    Var sims = tape.matmul_nt(f_normalized, w);
    return apply_margin ? apply_margin_chain(tape, sims, margin) : sims;
}

Tensor class_similarities(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                          double m, bool apply_margin) {
    Tensor f = net.forward(x, /*normalized=*/true);
    Tensor out = Tensor::zeros({bank.size()});
    for (std::size_t k = 0; k < bank.size(); ++k) {
        const double* w = bank.weights().value.data.data() + k * bank.dim();
        double s = 0.0;
        for (std::size_t j = 0; j < bank.dim(); ++j) s += f.data[j] * w[j];
        s = std::clamp(s, -1.0, 1.0);
        out.data[k] = apply_margin ? margin_similarity(s, m) : s;
    }
    return out;
}

// ---------------------------------------------------------------------------
// RotationHead
// ---------------------------------------------------------------------------

RotationHead::RotationHead(std::size_t embed_dim, Rng& rng)
    : w(Tensor::zeros({embed_dim, 4}), true), b(Tensor::zeros({4}), true) {
    const double limit = std::sqrt(6.0 / static_cast<double>(embed_dim + 4));
    for (double& v : w.value.data) v = rng.uniform(-limit, limit);
}

RotationHead::RotationHead(Tensor w_, Tensor b_) : w(std::move(w_), true), b(std::move(b_), true) {}

Var RotationHead::build_logits(Tape& tape, Var raw_embedding) {
    return tape.add_rowvec(tape.matmul(raw_embedding, tape.param(w)), tape.param(b));
}

// ---------------------------------------------------------------------------
// Checkpoint IO
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kCkptMagic = 0x4f53524cu;  // "OSRL"
constexpr std::uint32_t kCkptVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated");
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: truncated");
    return v;
}
double read_f64(std::istream& is) {
    double v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: truncated");
    return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
    const std::uint32_t rank = read_u32(is);
    if (rank > 2) throw std::runtime_error("checkpoint: bad tensor rank");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_u64(is));
    Tensor t = Tensor::zeros(shape);
    if (!is.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double))))
        throw std::runtime_error("checkpoint: truncated");
    return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const EmbeddingNet& net, const PrototypeBank& bank,
                     const RotationHead* head) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    write_u32(os, kCkptMagic);
    write_u32(os, kCkptVersion);
    const MlpConfig& cfg = net.config();
    write_u64(os, cfg.input_dim);
    write_u64(os, cfg.hidden_dims.size());
    for (std::size_t h : cfg.hidden_dims) write_u64(os, h);
    write_u64(os, cfg.embed_dim);
    write_f64(os, cfg.init_scale);
    write_u64(os, net.num_layers());
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        write_tensor(os, net.layer_weight(l).value);
        write_tensor(os, net.layer_bias(l).value);
    }
    write_u64(os, bank.size());
    write_tensor(os, bank.weights().value);
    write_u32(os, head != nullptr ? 1u : 0u);
    if (head != nullptr) {
        write_tensor(os, head->w.value);
        write_tensor(os, head->b.value);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    if (read_u32(is) != kCkptMagic) throw std::runtime_error("checkpoint: bad magic");
    if (read_u32(is) != kCkptVersion) throw std::runtime_error("checkpoint: unsupported version");
    MlpConfig cfg;
    cfg.input_dim = static_cast<std::size_t>(read_u64(is));
    cfg.hidden_dims.resize(static_cast<std::size_t>(read_u64(is)));
    for (auto& h : cfg.hidden_dims) h = static_cast<std::size_t>(read_u64(is));
    cfg.embed_dim = static_cast<std::size_t>(read_u64(is));
    cfg.init_scale = read_f64(is);
    const std::size_t n_layers = static_cast<std::size_t>(read_u64(is));
    std::vector<Tensor> ws, bs;
    for (std::size_t l = 0; l < n_layers; ++l) {
        ws.push_back(read_tensor(is));
        bs.push_back(read_tensor(is));
    }
    EmbeddingNet net(cfg, std::move(ws), std::move(bs));
    const std::size_t k = static_cast<std::size_t>(read_u64(is));
    Tensor bank_w = read_tensor(is);
    PrototypeBank bank(k, cfg.embed_dim, std::move(bank_w));
    std::optional<RotationHead> head;
    if (read_u32(is) != 0) {
        Tensor hw = read_tensor(is);
        Tensor hb = read_tensor(is);
        head.emplace(std::move(hw), std::move(hb));
    }
    return Checkpoint{cfg, std::move(net), std::move(bank), std::move(head)};
}

}  // namespace osrlab
