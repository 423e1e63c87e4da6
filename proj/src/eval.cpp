#include "osrlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace osrlab {

namespace {

// similarities used for prediction/scoring; honors the normalization switch
std::vector<double> scoring_similarities(const EmbeddingNet& net, const PrototypeBank& bank,
                                         const Tensor& x, bool normalized, double margin,
                                         bool apply_margin) {
    Tensor f = net.forward(x, normalized);
    std::vector<double> sims(bank.size());
    for (std::size_t k = 0; k < bank.size(); ++k) {
        const double* w = bank.weights().value.data.data() + k * bank.dim();
        double s = 0.0;
        for (std::size_t j = 0; j < bank.dim(); ++j) s += f.data[j] * w[j];
        if (normalized) s = std::clamp(s, -1.0, 1.0);
        sims[k] = apply_margin ? margin_similarity(s, margin) : s;
    }
    return sims;
}

Tensor row_of(const Tensor& m, std::size_t i) {
    const std::size_t d = m.cols();
    std::vector<double> v(m.data.begin() + i * d, m.data.begin() + (i + 1) * d);
    return Tensor::row(std::move(v));
}

// seeded index subsample without replacement, deterministic order
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t want, Rng rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (want >= n) return idx;
    for (std::size_t i = 0; i < want; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(want);
    return idx;
}

std::vector<double> rank_with_ties(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based average rank
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

int pseudo_label(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                 bool normalized) {
    const auto sims = scoring_similarities(net, bank, x, normalized, 0.0, false);
    std::size_t best = 0;
    for (std::size_t k = 1; k < sims.size(); ++k)
        if (sims[k] > sims[best]) best = k;  // strict: ties keep the lowest index
    return static_cast<int>(best);
}

double detection_score(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                       const LossConfig& cfg) {
    const int p = pseudo_label(net, bank, x, cfg.normalize_embeddings);
    const auto sims = scoring_similarities(net, bank, x, cfg.normalize_embeddings, cfg.margin,
                                           cfg.margin_active());
    if (cfg.kind == LossKind::SCE) return sce_loss(sims, static_cast<std::size_t>(p), cfg.scale_t);
    return movr_loss(sims, static_cast<std::size_t>(p), cfg.scale_t);
}

double auc(std::span<const double> known_scores, std::span<const double> unknown_scores) {
    if (known_scores.empty() || unknown_scores.empty())
        throw std::invalid_argument("auc: empty score list");
    // rank-sum over the pooled list; unknown is the positive class
    std::vector<double> pooled;
    pooled.reserve(known_scores.size() + unknown_scores.size());
    pooled.insert(pooled.end(), unknown_scores.begin(), unknown_scores.end());
    pooled.insert(pooled.end(), known_scores.begin(), known_scores.end());
    const auto ranks = rank_with_ties(pooled);
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < unknown_scores.size(); ++i) rank_sum += ranks[i];
    const double nu = static_cast<double>(unknown_scores.size());
    const double nk = static_cast<double>(known_scores.size());
    const double u = rank_sum - nu * (nu + 1.0) / 2.0;
    return u / (nu * nk);
}

MacroF1Result macro_f1(std::span<const int> predictions, std::span<const int> truths,
                       std::size_t k_known) {
    if (predictions.size() != truths.size())
        throw std::invalid_argument("macro_f1: prediction/truth length mismatch");
    const std::size_t c = k_known + 1;
    std::vector<double> tp(c, 0.0), fp(c, 0.0), fn(c, 0.0);
    std::vector<bool> seen(c, false);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], t = truths[i];
        if (p < 0 || static_cast<std::size_t>(p) >= c || t < 0 || static_cast<std::size_t>(t) >= c)
            throw std::invalid_argument("macro_f1: class index out of range");
        seen[p] = true;
        seen[t] = true;
        if (p == t)
            tp[p] += 1.0;
        else {
            fp[p] += 1.0;
            fn[t] += 1.0;
        }
    }
    MacroF1Result out;
    out.per_class.resize(c, 0.0);
    out.absent.resize(c, false);
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        const double denom = 2.0 * tp[k] + fp[k] + fn[k];
        out.per_class[k] = denom > 0.0 ? 2.0 * tp[k] / denom : 0.0;
        out.absent[k] = !seen[k];
        total += out.per_class[k];
    }
    out.value = total / static_cast<double>(c);
    return out;
}

double threshold_at_rejection(std::span<const double> val_scores, double q) {
    if (val_scores.empty()) throw std::invalid_argument("threshold_at_rejection: empty scores");
    if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("threshold_at_rejection: q must be in (0,1)");
    std::vector<double> sorted(val_scores.begin(), val_scores.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = (1.0 - q) * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double dbi(const Tensor& embeddings, std::span<const int> labels) {
    if (embeddings.rows() != labels.size()) throw std::invalid_argument("dbi: label count mismatch");
    int max_label = -1;
    for (int y : labels) max_label = std::max(max_label, y);
    const std::size_t c = static_cast<std::size_t>(max_label + 1);
    if (c < 2) throw std::invalid_argument("dbi: need at least 2 classes");
    const std::size_t d = embeddings.cols();

    std::vector<std::size_t> counts(c, 0);
    Tensor centroids = Tensor::zeros({c, d});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0) throw std::invalid_argument("dbi: negative label");
        counts[y] += 1;
        for (std::size_t j = 0; j < d; ++j) centroids.data[y * d + j] += embeddings.data[i * d + j];
    }
    for (std::size_t k = 0; k < c; ++k) {
        if (counts[k] == 0) throw std::invalid_argument("dbi: empty class");
        for (std::size_t j = 0; j < d; ++j) centroids.data[k * d + j] /= static_cast<double>(counts[k]);
    }
    // S_k: mean distance to centroid
    std::vector<double> spread(c, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = embeddings.data[i * d + j] - centroids.data[y * d + j];
            s += diff * diff;
        }
        spread[y] += std::sqrt(s);
    }
    for (std::size_t k = 0; k < c; ++k) spread[k] /= static_cast<double>(counts[k]);

    double total = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        double worst = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (i == j) continue;
            double m = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = centroids.data[i * d + t] - centroids.data[j * d + t];
                m += diff * diff;
            }
            m = std::sqrt(m);
            if (m == 0.0) throw std::invalid_argument("dbi: coincident centroids");
            worst = std::max(worst, (spread[i] + spread[j]) / m);
        }
        total += worst;
    }
    return total / static_cast<double>(c);
}

double jacobian_norm(const EmbeddingNet& net, const Tensor& x, bool normalized) {
    Tensor jac = jacobian(
        [&](Tape& tape, Var xv) { return net.build_forward_frozen(tape, xv, normalized); }, x);
    return frobenius_norm(jac);
}

double jnd(const EmbeddingNet& net, const Tensor& known_x, const Tensor& unknown_x, bool normalized) {
    if (known_x.rows() == 0 || unknown_x.rows() == 0 || known_x.numel() == 0 || unknown_x.numel() == 0)
        throw std::invalid_argument("jnd: empty sample set");
    std::vector<double> jk(known_x.rows()), ju(unknown_x.rows());
    for (std::size_t i = 0; i < known_x.rows(); ++i)
        jk[i] = jacobian_norm(net, row_of(known_x, i), normalized);
    for (std::size_t i = 0; i < unknown_x.rows(); ++i)
        ju[i] = jacobian_norm(net, row_of(unknown_x, i), normalized);
    return mean_of(ju) - mean_of(jk);
}

std::vector<std::pair<double, double>> interpolation_probe(const EmbeddingNet& net, const Tensor& x0,
                                                           const Tensor& x1, std::size_t n,
                                                           bool normalized) {
    if (n < 2) throw std::invalid_argument("interpolation_probe: need n >= 2");
    if (x0.numel() != x1.numel()) throw std::invalid_argument("interpolation_probe: dim mismatch");
    std::vector<std::pair<double, double>> out;
    out.reserve(n);
    Tensor xt = x0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n - 1);
        for (std::size_t j = 0; j < xt.numel(); ++j)
            xt.data[j] = (1.0 - t) * x0.data[j] + t * x1.data[j];
        out.emplace_back(t, jacobian_norm(net, xt, normalized));
    }
    return out;
}

double path_length(const EmbeddingNet& net, const Tensor& x0, const Tensor& x1, std::size_t n,
                   bool normalized) {
    if (n < 2) throw std::invalid_argument("path_length: need n >= 2");
    if (x0.numel() != x1.numel()) throw std::invalid_argument("path_length: dim mismatch");
    Tensor xt = x0;
    Tensor prev = net.forward(x0, normalized);
    double length = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(n - 1);
        for (std::size_t j = 0; j < xt.numel(); ++j)
            xt.data[j] = (1.0 - t) * x0.data[j] + t * x1.data[j];
        Tensor cur = net.forward(xt, normalized);
        double s = 0.0;
        for (std::size_t j = 0; j < cur.numel(); ++j) {
            const double diff = cur.data[j] - prev.data[j];
            s += diff * diff;
        }
        length += std::sqrt(s);
        prev = std::move(cur);
    }
    return length;
}

double support_volume_estimate(const EmbeddingNet& net, std::size_t n_mc, double tau,
                               std::uint64_t seed, bool normalized) {
    if (n_mc < 1) throw std::invalid_argument("support_volume_estimate: need n_mc >= 1");
    if (tau < 0.0) throw std::invalid_argument("support_volume_estimate: tau must be >= 0");
    Rng rng(seed);
    const std::size_t d = net.input_dim();
    Tensor x = Tensor::zeros({d});
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n_mc; ++i) {
        for (std::size_t j = 0; j < d; ++j) x.data[j] = rng.uniform(-1.0, 1.0);
        if (jacobian_norm(net, x, normalized) > tau) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n_mc);
}

double mean_inter_prototype_distance(const PrototypeBank& bank) {
    const std::size_t k = bank.size(), d = bank.dim();
    if (k < 2) return 0.0;
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j, ++pairs) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff =
                    bank.weights().value.data[i * d + t] - bank.weights().value.data[j * d + t];
                s += diff * diff;
            }
            total += std::sqrt(s);
        }
    return total / static_cast<double>(pairs);
}

double accuracy(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                std::span<const int> y, bool normalized) {
    if (x.rows() != y.size() || y.empty()) throw std::invalid_argument("accuracy: bad inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (pseudo_label(net, bank, row_of(x, i), normalized) == y[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(y.size());
}

double mean_metric_loss(const EmbeddingNet& net, const PrototypeBank& bank, const Tensor& x,
                        std::span<const int> y, const LossConfig& cfg) {
    if (x.rows() != y.size() || y.empty()) throw std::invalid_argument("mean_metric_loss: bad inputs");
    std::vector<double> losses(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const auto sims = scoring_similarities(net, bank, row_of(x, i), cfg.normalize_embeddings,
                                               cfg.margin, cfg.margin_active());
        losses[i] = cfg.kind == LossKind::SCE
                        ? sce_loss(sims, static_cast<std::size_t>(y[i]), cfg.scale_t)
                        : movr_loss(sims, static_cast<std::size_t>(y[i]), cfg.scale_t);
    }
    return mean_of(losses);
}

double mean_raw_embedding_norm(const EmbeddingNet& net, const Tensor& x) {
    if (x.rows() == 0) throw std::invalid_argument("mean_raw_embedding_norm: empty input");
    Tensor raw = net.forward(x, /*normalized=*/false);
    std::vector<double> norms(raw.rows());
    for (std::size_t i = 0; i < raw.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < raw.cols(); ++j) s += raw.at(i, j) * raw.at(i, j);
        norms[i] = std::sqrt(s);
    }
    return mean_of(norms);
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: bad inputs");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        sa += da * da;
        sb += db * db;
    }
    if (sa == 0.0 || sb == 0.0) throw std::invalid_argument("pearson: zero variance");
    return sab / std::sqrt(sa * sb);
}

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = rank_with_ties(a);
    const auto rb = rank_with_ties(b);
    return pearson(ra, rb);
}

DiagnosticsReport evaluate_checkpoint(const EmbeddingNet& net, const PrototypeBank& bank,
                                      const OsrDataset& data, const LossConfig& loss_cfg,
                                      const EvalOptions& opts, std::size_t step, double lr) {
    DiagnosticsReport rep;
    rep.step = step;
    rep.lr = lr;
    rep.mean_inter_proto_dist = mean_inter_prototype_distance(bank);

    Rng rng(opts.seed);
    const auto train_idx =
        subsample_indices(data.known_train_x.rows(), opts.train_loss_samples, rng.derive(1));
    {
        Tensor xs = Tensor::zeros({train_idx.size(), data.dim()});
        std::vector<int> ys(train_idx.size());
        for (std::size_t i = 0; i < train_idx.size(); ++i) {
            for (std::size_t j = 0; j < data.dim(); ++j)
                xs.at(i, j) = data.known_train_x.at(train_idx[i], j);
            ys[i] = data.known_train_y[train_idx[i]];
        }
        rep.train_loss = mean_metric_loss(net, bank, xs, ys, loss_cfg);
    }

    const Tensor& unknown_x = data.unknown.samples();
    const bool have_test = data.known_test_x.rows() > 0;
    const bool have_unknown = unknown_x.rows() > 0;

    if (have_test) {
        rep.acc = accuracy(net, bank, data.known_test_x, data.known_test_y,
                           loss_cfg.normalize_embeddings);
        Tensor emb = net.forward(data.known_test_x, loss_cfg.normalize_embeddings);
        rep.dbi = data.num_known >= 2 ? dbi(emb, data.known_test_y) : 0.0;
    }

    std::vector<double> known_scores, unknown_scores;
    if (have_test) {
        known_scores.resize(data.known_test_x.rows());
        for (std::size_t i = 0; i < data.known_test_x.rows(); ++i)
            known_scores[i] = detection_score(net, bank, row_of(data.known_test_x, i), loss_cfg);
        rep.mean_score_known = mean_of(known_scores);
    }
    if (have_unknown) {
        unknown_scores.resize(unknown_x.rows());
        for (std::size_t i = 0; i < unknown_x.rows(); ++i)
            unknown_scores[i] = detection_score(net, bank, row_of(unknown_x, i), loss_cfg);
        rep.mean_score_unknown = mean_of(unknown_scores);
    }
    if (have_test && have_unknown) rep.auc = auc(known_scores, unknown_scores);

    // Jacobian norms on seeded subsamples (they cost d_z reverse passes each)
    if (have_test) {
        const auto ki = subsample_indices(data.known_test_x.rows(), opts.jn_samples, rng.derive(2));
        std::vector<double> jn(ki.size());
        for (std::size_t i = 0; i < ki.size(); ++i) {
            jn[i] = jacobian_norm(net, row_of(data.known_test_x, ki[i]),
                                  loss_cfg.normalize_embeddings);
            rep.samples.push_back(ScoreSample{ki[i], false, known_scores[ki[i]], jn[i]});
        }
        if (!jn.empty()) rep.mean_jn_known = mean_of(jn);
    }
    if (have_unknown) {
        const auto ui = subsample_indices(unknown_x.rows(), opts.jn_samples, rng.derive(3));
        std::vector<double> jn(ui.size());
        for (std::size_t i = 0; i < ui.size(); ++i) {
            jn[i] = jacobian_norm(net, row_of(unknown_x, ui[i]), loss_cfg.normalize_embeddings);
            rep.samples.push_back(ScoreSample{ui[i], true, unknown_scores[ui[i]], jn[i]});
        }
        if (!jn.empty()) rep.mean_jn_unknown = mean_of(jn);
    }
    rep.jnd = rep.mean_jn_unknown - rep.mean_jn_known;
    return rep;
}

}  // namespace osrlab
