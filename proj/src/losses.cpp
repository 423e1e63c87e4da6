#include "osrlab/losses.hpp"

#include <cmath>

namespace osrlab {

namespace {

// log(1 + e^z) without overflow
double softplus(double z) {
    if (z > 0.0) return z + std::log1p(std::exp(-z));
    return std::log1p(std::exp(z));
}

Tensor one_hot_mask(const std::vector<int>& labels, std::size_t num_classes) {
    Tensor m = Tensor::zeros({labels.size(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw std::invalid_argument("loss: class index out of range");
        m.data[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return m;
}

}  // namespace

void LossConfig::validate() const {
    if (!(scale_t > 0.0)) throw std::invalid_argument("LossConfig: scale T must be > 0");
    if (!(margin >= 0.0 && margin < kPi / 2.0))
        throw std::invalid_argument("LossConfig: margin must be in [0, pi/2)");
    if (!(lambda_self >= 0.0)) throw std::invalid_argument("LossConfig: lambda_self must be >= 0");
}

double movr_loss(std::span<const double> sims, std::size_t y, double t) {
    if (y >= sims.size()) throw std::invalid_argument("movr_loss: target out of range");
    // -log sigma(z) = softplus(-z),  -log(1 - sigma(z)) = softplus(z)
    double loss = softplus(-t * sims[y]);
    for (std::size_t k = 0; k < sims.size(); ++k)
        if (k != y) loss += softplus(t * sims[k]);
    return loss;
}

double sce_loss(std::span<const double> sims, std::size_t y, double t) {
    if (y >= sims.size()) throw std::invalid_argument("sce_loss: target out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : sims) mx = std::max(mx, t * s);
    double z = 0.0;
    for (double s : sims) z += std::exp(t * s - mx);
    return mx + std::log(z) - t * sims[y];
}

double rotation_ssl_loss(std::span<const double> rot_logits, int rot_label) {
    if (rot_logits.size() != 4) throw std::invalid_argument("rotation_ssl_loss: need 4 logits");
    if (rot_label < 0 || rot_label > 3) throw std::invalid_argument("rotation_ssl_loss: label out of range");
    return sce_loss(rot_logits, static_cast<std::size_t>(rot_label), 1.0);
}

Var metric_loss_batch(Tape& tape, Var sims, const std::vector<int>& labels, const LossConfig& cfg) {
    const std::size_t batch = tape.value(sims).rows();
    const std::size_t k = tape.value(sims).cols();
    if (labels.size() != batch) throw std::invalid_argument("metric_loss_batch: label count mismatch");
    if (batch == 0) throw std::invalid_argument("metric_loss_batch: empty batch");
    Var mask = tape.constant(one_hot_mask(labels, k));
    const double inv_b = 1.0 / static_cast<double>(batch);
    if (cfg.kind == LossKind::SCE) {
        Var z = tape.scale(sims, cfg.scale_t);
        Var lse = tape.logsumexp_rows(z);
        Var target = tape.sum(tape.mul(z, mask));
        return tape.scale(tape.sub(tape.sum(lse), target), inv_b);
    }
    // one-vs-rest: mask picks log sigma(T s_y), complement picks log sigma(-T s_k)
    Tensor comp = tape.value(mask);
    for (double& v : comp.data) v = 1.0 - v;
    Var maskc = tape.constant(std::move(comp));
    Var pos = tape.mul(mask, tape.log_sigmoid(tape.scale(sims, cfg.scale_t)));
    Var neg = tape.mul(maskc, tape.log_sigmoid(tape.scale(sims, -cfg.scale_t)));
    return tape.scale(tape.sum(tape.add(pos, neg)), -inv_b);
}

Var softmax_ce_batch(Tape& tape, Var logits, const std::vector<int>& labels) {
    const std::size_t batch = tape.value(logits).rows();
    const std::size_t c = tape.value(logits).cols();
    if (labels.size() != batch) throw std::invalid_argument("softmax_ce_batch: label count mismatch");
    if (batch == 0) throw std::invalid_argument("softmax_ce_batch: empty batch");
    Var mask = tape.constant(one_hot_mask(labels, c));
    Var lse = tape.logsumexp_rows(logits);
    Var target = tape.sum(tape.mul(logits, mask));
    return tape.scale(tape.sub(tape.sum(lse), target), 1.0 / static_cast<double>(batch));
}

Var combined_loss(Tape& tape, EmbeddingNet& net, PrototypeBank& bank, RotationHead* head,
                  const Batch& batch, const LossConfig& cfg) {
    cfg.validate();
    if (batch.size() == 0) throw std::invalid_argument("combined_loss: empty batch");
    if (batch.x.rows() != batch.size())
        throw std::invalid_argument("combined_loss: sample/label count mismatch");
    for (int y : batch.labels)
        if (y < 0 || static_cast<std::size_t>(y) >= bank.size())
            throw std::runtime_error("combined_loss: sample with non-known class label reached the loss");

    Var x = tape.constant(batch.x);
    Var f = net.build_forward_train(tape, x, cfg.normalize_embeddings);
    Var sims = bank.build_similarities(tape, f, cfg.margin, cfg.margin_active());
    Var loss = metric_loss_batch(tape, sims, batch.labels, cfg);

    if (head != nullptr && cfg.lambda_self > 0.0 && batch.has_ssl()) {
        if (batch.x_rot.rows() != batch.size() || batch.rot_labels.size() != batch.size())
            throw std::invalid_argument("combined_loss: malformed rotation batch");
        Var xr = tape.constant(batch.x_rot);
        Var fr = net.build_forward_train(tape, xr, /*normalized=*/false);
        Var logits = head->build_logits(tape, fr);
        Var ssl = softmax_ce_batch(tape, logits, batch.rot_labels);
        loss = tape.add(loss, tape.scale(ssl, cfg.lambda_self));
    }
    return loss;
}

}  // namespace osrlab
