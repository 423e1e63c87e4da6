#pragma once

#include <span>
#include <vector>

#include "osrlab/model.hpp"

namespace osrlab {

enum class LossKind { MOvR, OvR, SCE };

struct LossConfig {
    LossKind kind = LossKind::MOvR;
    double scale_t = 32.0;     // sigmoid/softmax scale T
    double margin = 0.5;       // angular margin m, radians
    double lambda_self = 0.1;  // rotation self-supervision weight
    // Ablation switch: with normalization off, similarities are raw dot
    // products f-hat . w_k and the margin is inapplicable.
    bool normalize_embeddings = true;

    void validate() const;
    bool margin_active() const {
        return kind == LossKind::MOvR && margin > 0.0 && normalize_embeddings;
    }
};

// One-vs-rest sigmoid loss over scaled similarities:
//   -log sigma(T s_y) - sum_{k != y} log(1 - sigma(T s_k))
// Computed in log space; finite for |T s| <= 700. The caller supplies sims
// with or without margin (that distinction is what separates m-OvR from OvR).
double movr_loss(std::span<const double> sims, std::size_t y, double t);

// Softmax cross-entropy over logits T s_k with target y, log-sum-exp form.
double sce_loss(std::span<const double> sims, std::size_t y, double t);

// 4-way softmax cross-entropy for the rotation prediction task.
double rotation_ssl_loss(std::span<const double> rot_logits, int rot_label);

// Training batch. x_rot/rot_labels are filled only when the rotation task is
// active (image-shaped inputs).
struct Batch {
    Tensor x;  // [B, d]
    std::vector<int> labels;
    Tensor x_rot;  // [B, d], one random quarter-turn per sample
    std::vector<int> rot_labels;
    std::size_t size() const { return labels.size(); }
    bool has_ssl() const { return x_rot.numel() > 0; }
};

// Mean per-sample metric loss of the configured kind over a similarity node
// [B, K]; labels index rows' target class.
Var metric_loss_batch(Tape& tape, Var sims, const std::vector<int>& labels, const LossConfig& cfg);

// Mean softmax cross-entropy over a logits node [B, C].
Var softmax_ce_batch(Tape& tape, Var logits, const std::vector<int>& labels);

// Full training objective: mean metric loss + lambda_self * mean rotation CE,
// differentiable through the embedding, the prototypes, and the head.
Var combined_loss(Tape& tape, EmbeddingNet& net, PrototypeBank& bank, RotationHead* head,
                  const Batch& batch, const LossConfig& cfg);

}  // namespace osrlab
