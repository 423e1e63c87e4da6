#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "osrlab/data.hpp"
#include "osrlab/losses.hpp"
#include "osrlab/model.hpp"

namespace osrlab {

// Score orientation is fixed across the whole artifact: higher score means
// more likely unknown.

struct ScoreSample {
    std::size_t sample_id = 0;
    bool is_unknown = false;
    double score = 0.0;
    double jacobian_norm = 0.0;
};

struct DiagnosticsReport {
    std::size_t step = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double acc = 0.0;   // closed-set accuracy on known test data
    double auc = 0.0;   // known vs unknown, loss score
    double dbi = 0.0;   // cluster quality of known test embeddings
    double jnd = 0.0;   // mean unknown Jacobian norm - mean known Jacobian norm
    double mean_inter_proto_dist = 0.0;
    double mean_jn_known = 0.0;
    double mean_jn_unknown = 0.0;
    double mean_score_known = 0.0;
    double mean_score_unknown = 0.0;
    std::vector<ScoreSample> samples;  // subsampled scatter data
};

struct EvalOptions {
    std::size_t jn_samples = 128;          // per side, for Jacobian-norm means
    std::size_t train_loss_samples = 256;  // subsample for the train-loss column
    std::uint64_t seed = 0x05eed;
};

// argmax_k of margin-free cosine similarity; ties go to the lowest index.
int pseudo_label(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                 bool normalized = true);

// S(x): the training-loss formula evaluated at the pseudo label, margin and
// scale included. Higher means more unknown.
double detection_score(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                       const LossConfig& cfg);

// Mann-Whitney AUC: probability that a random unknown score exceeds a random
// known score, ties counted 1/2. Exact, via sorting.
double auc(std::span<const double> known_scores, std::span<const double> unknown_scores);

struct MacroF1Result {
    double value = 0.0;
    std::vector<double> per_class;
    std::vector<bool> absent;  // class seen in neither predictions nor truths
};

// Unweighted mean F1 over K+1 classes (class index K is the unknown class).
MacroF1Result macro_f1(std::span<const int> predictions, std::span<const int> truths,
                       std::size_t k_known);

// (1-q) empirical quantile of validation scores, linear interpolation;
// scores strictly above the threshold are rejected as unknown.
double threshold_at_rejection(std::span<const double> val_scores, double q = 0.10);

// Davies-Bouldin index of embeddings (rows) under Euclidean distance:
// mean over classes of max_{j != i} (S_i + S_j) / M_ij.
double dbi(const Tensor& embeddings, std::span<const int> labels);

// Frobenius norm of the input Jacobian of the embedding at x. The default
// measures the normalized (metric-space) representation; raw mode is the
// oracle-friendly variant.
double jacobian_norm(const EmbeddingNet& net, const Tensor& x, bool normalized = true);

// Mean unknown-sample Jacobian norm minus mean known-sample Jacobian norm.
double jnd(const EmbeddingNet& net, const Tensor& known_x, const Tensor& unknown_x,
           bool normalized = true);

// Jacobian norms along the convex interpolation x_t = (1-t) x0 + t x1 at
// t = i/(n-1).
std::vector<std::pair<double, double>> interpolation_probe(const EmbeddingNet& net, const Tensor& x0,
                                                           const Tensor& x1, std::size_t n,
                                                           bool normalized = true);

// Chord-length estimate of the projected path length between two inputs.
double path_length(const EmbeddingNet& net, const Tensor& x0, const Tensor& x1, std::size_t n,
                   bool normalized = true);

// Monte-Carlo fraction of uniform samples from [-1, 1]^d whose Jacobian norm
// exceeds tau.
double support_volume_estimate(const EmbeddingNet& net, std::size_t n_mc, double tau,
                               std::uint64_t seed, bool normalized = true);

double mean_inter_prototype_distance(const PrototypeBank& bank);

// Closed-set accuracy of pseudo labels against true labels.
double accuracy(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                std::span<const int> y, bool normalized = true);

// Mean per-sample training loss over labeled data (true labels).
double mean_metric_loss(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                        std::span<const int> y, const LossConfig& cfg);

// Mean ||f-hat(x)||_2 over rows of x (weight-decay diagnostics).
double mean_raw_embedding_norm(const EmbeddingNet& net, const Tensor& x);

double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

// One full diagnostics snapshot against a frozen model.
DiagnosticsReport evaluate_checkpoint(const EmbeddingNet& net, const PrototypeBank& bank,
                                      const OsrDataset& data, const LossConfig& loss_cfg,
                                      const EvalOptions& opts, std::size_t step, double lr);

}  // namespace osrlab
