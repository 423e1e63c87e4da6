#include "osrlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace osrlab {

void AugmentPolicy::validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("AugmentPolicy: sigma must be >= 0");
    if (shift_px < 0) throw std::invalid_argument("AugmentPolicy: shift_px must be >= 0");
    if (!(rot_deg >= 0.0)) throw std::invalid_argument("AugmentPolicy: rot_deg must be >= 0");
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (!(lr0 >= lr_min && lr_min >= 0.0))
        throw std::invalid_argument("TrainConfig: need lr0 >= lr_min >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("TrainConfig: momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    loss.validate();
    augment.validate();
}

double cosine_lr(std::size_t t, std::size_t t_total, double lr0, double lr_min) {
    if (t_total == 0 || t >= t_total) return lr_min;  // end of (or past) the schedule
    const double phase = kPi * static_cast<double>(t) / static_cast<double>(t_total);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(phase));
}

SgdOptimizer::SgdOptimizer(std::vector<Parameter*> params, double momentum, double weight_decay)
    : params_(std::move(params)), mu_(momentum), wd_(weight_decay) {
    velocity_.reserve(params_.size());
    for (Parameter* p : params_) velocity_.push_back(Tensor::zeros(p->value.shape));
}

void SgdOptimizer::step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        Tensor& v = velocity_[i];
        const double wd = p.decay_eligible ? wd_ : 0.0;
        for (std::size_t t = 0; t < p.value.numel(); ++t) {
            const double g = p.grad.data[t] + wd * p.value.data[t];
            if (!std::isfinite(g))
                throw std::runtime_error("SgdOptimizer: non-finite gradient at parameter index " +
                                         std::to_string(i));
            v.data[t] = mu_ * v.data[t] + g;
            p.value.data[t] -= lr * v.data[t];
        }
    }
}

namespace {

constexpr double kBackground = -1.0;  // zero raw pixel after [-1,1] rescale

void rotate_bilinear(const double* src, std::size_t h, std::size_t w, double theta, double* out) {
    const double cy = 0.5 * static_cast<double>(h - 1);
    const double cx = 0.5 * static_cast<double>(w - 1);
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
            // inverse map: sample the source at the back-rotated position
            const double dy = static_cast<double>(r) - cy;
            const double dx = static_cast<double>(col) - cx;
            const double sy = cy + c * dy + s * dx;
            const double sx = cx - s * dy + c * dx;
            const long y0 = static_cast<long>(std::floor(sy));
            const long x0 = static_cast<long>(std::floor(sx));
            const double fy = sy - static_cast<double>(y0);
            const double fx = sx - static_cast<double>(x0);
            auto sample = [&](long yy, long xx) -> double {
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w))
                    return kBackground;
                return src[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
            };
            const double top = (1.0 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1);
            const double bot = (1.0 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1);
            out[r * w + col] = (1.0 - fy) * top + fy * bot;
        }
    }
}

void shift_image(const double* src, std::size_t h, std::size_t w, int dy, int dx, double* out) {
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const long sy = static_cast<long>(r) - dy;
            const long sx = static_cast<long>(c) - dx;
            out[r * w + c] =
                (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w))
                    ? kBackground
                    : src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
        }
    }
}

}  // namespace

void augment_in_place(double* row, std::size_t d, const AugmentPolicy& policy,
                      const ImageShape& image, Rng& rng) {
    switch (policy.kind) {
        case AugmentPolicy::Kind::None:
            return;
        case AugmentPolicy::Kind::Jitter: {
            if (policy.sigma == 0.0) return;
            for (std::size_t j = 0; j < d; ++j)
                row[j] = std::clamp(row[j] + policy.sigma * rng.normal(), -1.0, 1.0);
            return;
        }
        case AugmentPolicy::Kind::Image: {
            if (!image.valid() || image.height * image.width != d)
                throw std::invalid_argument("augment: image policy on non-image data");
            const std::size_t h = image.height, w = image.width;
            std::vector<double> tmp(d);
            const double* cur = row;
            if (policy.rot_deg > 0.0) {
                const double theta = rng.uniform(-policy.rot_deg, policy.rot_deg) * kPi / 180.0;
                rotate_bilinear(cur, h, w, theta, tmp.data());
                cur = tmp.data();
            }
            if (policy.shift_px > 0) {
                const int span = 2 * policy.shift_px + 1;
                const int dy = static_cast<int>(rng.below(static_cast<std::size_t>(span))) - policy.shift_px;
                const int dx = static_cast<int>(rng.below(static_cast<std::size_t>(span))) - policy.shift_px;
                std::vector<double> shifted(d);
                shift_image(cur, h, w, dy, dx, shifted.data());
                std::memcpy(row, shifted.data(), d * sizeof(double));
            } else if (cur != row) {
                std::memcpy(row, cur, d * sizeof(double));
            }
            for (std::size_t j = 0; j < d; ++j) row[j] = std::clamp(row[j], -1.0, 1.0);
            return;
        }
    }
}

MetricsLog train(EmbeddingNet& net, PrototypeBank& bank, RotationHead* head, const OsrDataset& data,
                 const TrainConfig& cfg) {
    cfg.validate();
    MetricsLog log;
    if (cfg.iterations == 0) return log;  // model untouched, empty log
    const std::size_t n_train = data.known_train_x.rows();
    if (n_train == 0) throw std::invalid_argument("train: known train split is empty");
    const std::size_t d = data.dim();
    const std::size_t k = data.num_known;
    if (bank.size() != k) throw std::invalid_argument("train: prototype count != K");
    for (int y : data.known_train_y)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw std::runtime_error("train: non-known label in the train split");

    Rng root(cfg.seed);
    Rng rng_batch = root.derive(1);
    Rng rng_aug = root.derive(2);
    Rng rng_rot = root.derive(3);
    EvalOptions eval_opts = cfg.eval;
    eval_opts.seed = root.derive(4).next_u64();

    std::vector<Parameter*> params = net.parameters();
    params.push_back(&bank.weights());
    const bool use_ssl =
        head != nullptr && cfg.loss.lambda_self > 0.0 && data.image.valid();
    if (use_ssl) {
        params.push_back(&head->w);
        params.push_back(&head->b);
    }
    SgdOptimizer opt(params, cfg.momentum, cfg.weight_decay);

    const bool do_eval = cfg.eval_interval > 0;
    auto checkpoint = [&](std::size_t step, double lr) {
        log.checkpoints.push_back(evaluate_checkpoint(net, bank, data, cfg.loss, eval_opts, step, lr));
    };
    if (do_eval) checkpoint(0, cosine_lr(0, cfg.iterations, cfg.lr0, cfg.lr_min));

    Batch batch;
    batch.x = Tensor::zeros({cfg.batch_size, d});
    batch.labels.resize(cfg.batch_size);
    if (use_ssl) {
        batch.x_rot = Tensor::zeros({cfg.batch_size, d});
        batch.rot_labels.resize(cfg.batch_size);
    }

    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const double lr = cosine_lr(t, cfg.iterations, cfg.lr0, cfg.lr_min);
        // i.i.d. uniform batch with replacement from the known train split only
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            const std::size_t idx = rng_batch.below(n_train);
            double* row = batch.x.data.data() + i * d;
            std::memcpy(row, data.known_train_x.data.data() + idx * d, d * sizeof(double));
            batch.labels[i] = data.known_train_y[idx];
            augment_in_place(row, d, cfg.augment, data.image, rng_aug);
            if (use_ssl) {
                const int rot = static_cast<int>(rng_rot.below(4));
                batch.rot_labels[i] = rot;
                rotate90_flat(row, data.image.height, data.image.width, rot,
                              batch.x_rot.data.data() + i * d);
            }
        }

        Tape tape;
        Var loss = combined_loss(tape, net, bank, use_ssl ? head : nullptr, batch, cfg.loss);
        log.step_losses.push_back(tape.value(loss).item());
        for (Parameter* p : params) p->zero_grad();
        tape.backward(loss);
        tape.add_param_grads();
        opt.step(lr);
        bank.project_unit_rows();

        const std::size_t done = t + 1;
        if (do_eval && (done % cfg.eval_interval == 0 || done == cfg.iterations))
            checkpoint(done, lr);
    }
    return log;
}

}  // namespace osrlab
