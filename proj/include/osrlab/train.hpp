#pragma once

#include <cstdint>
#include <vector>

#include "osrlab/data.hpp"
#include "osrlab/eval.hpp"
#include "osrlab/losses.hpp"
#include "osrlab/model.hpp"

namespace osrlab {

struct AugmentPolicy {
    enum class Kind { None, Jitter, Image };
    Kind kind = Kind::None;
    double sigma = 0.05;  // jitter: N(0, sigma^2) per coordinate, then clamp
    int shift_px = 2;     // image: integer shift in [-p, p]^2, background fill
    double rot_deg = 10.0;  // image: rotation angle uniform in [-deg, deg]

    void validate() const;
};

struct TrainConfig {
    std::size_t iterations = 2000;
    std::size_t batch_size = 64;
    double lr0 = 0.1;
    double lr_min = 1e-5;
    double momentum = 0.9;
    double weight_decay = 1e-3;
    LossConfig loss;
    AugmentPolicy augment;
    std::uint64_t seed = 1;
    std::size_t eval_interval = 100;  // 0 disables checkpoint diagnostics
    EvalOptions eval;

    void validate() const;
};

// lr_min + 0.5 (lr0 - lr_min) (1 + cos(pi t / t_total)); t past t_total
// clamps to lr_min.
double cosine_lr(std::size_t t, std::size_t t_total, double lr0, double lr_min);

// SGD with momentum and coupled weight decay. Decay-eligible parameters see
// g' = g + wd * w; velocity v <- mu v + g'; w <- w - lr v. A non-finite
// gradient aborts with a diagnostic.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Parameter*> params, double momentum, double weight_decay);
    void step(double lr);

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> velocity_;
    double mu_;
    double wd_;
};

// In-place augmentation of one flattened sample. Jitter adds clamped Gaussian
// noise; Image applies a small rotation and an integer shift with background
// fill (a zero raw pixel is -1 after rescaling).
void augment_in_place(double* row, std::size_t d, const AugmentPolicy& policy,
                      const ImageShape& image, Rng& rng);

struct MetricsLog {
    std::vector<DiagnosticsReport> checkpoints;
    std::vector<double> step_losses;  // per-iteration batch loss
    bool empty() const { return checkpoints.empty() && step_losses.empty(); }
};

// The training loop: sample batch -> augment -> combined loss -> backward ->
// SGD step -> prototype re-projection. Diagnostics run every eval_interval
// steps (plus step 0 and the final step) against the frozen snapshot; the
// optimization path itself never reads the unknown pool.
MetricsLog train(EmbeddingNet& net, PrototypeBank& bank, RotationHead* head, const OsrDataset& data,
                 const TrainConfig& cfg);

}  // namespace osrlab
