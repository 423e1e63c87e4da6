#include "osrlab/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

namespace osrlab {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string fmt9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

double round9(double v) { return std::strtod(fmt9(v).c_str(), nullptr); }

double mean_std(const std::vector<double>& v, double* out_std) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    *out_std = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
    return m;
}

class CsvWriter {
public:
    CsvWriter(const fs::path& path, std::vector<std::string> header) : cols_(header.size()) {
        os_.open(path);
        if (!os_) throw std::runtime_error("cannot open for writing: " + path.string());
        for (std::size_t i = 0; i < header.size(); ++i)
            os_ << header[i] << (i + 1 < header.size() ? "," : "\n");
    }
    void row(const std::vector<std::string>& cells) {
        if (cells.size() != cols_) throw std::logic_error("csv row width mismatch");
        for (std::size_t i = 0; i < cells.size(); ++i)
            os_ << cells[i] << (i + 1 < cells.size() ? "," : "\n");
    }
    void close() { os_.close(); }

private:
    std::ofstream os_;
    std::size_t cols_;
};

void write_metrics_csv(const fs::path& path, const MetricsLog& log) {
    CsvWriter csv(path, {"step", "lr", "train_loss", "acc", "dbi", "auc", "jnd",
                         "mean_inter_proto_dist", "mean_jn_known", "mean_jn_unknown"});
    for (const DiagnosticsReport& r : log.checkpoints)
        csv.row({std::to_string(r.step), fmt9(r.lr), fmt9(r.train_loss), fmt9(r.acc), fmt9(r.dbi),
                 fmt9(r.auc), fmt9(r.jnd), fmt9(r.mean_inter_proto_dist), fmt9(r.mean_jn_known),
                 fmt9(r.mean_jn_unknown)});
}

void write_scatter_csv(const fs::path& path, const DiagnosticsReport& rep) {
    CsvWriter csv(path, {"sample_id", "is_unknown", "score", "jacobian_norm"});
    for (const ScoreSample& s : rep.samples)
        csv.row({std::to_string(s.sample_id), s.is_unknown ? "1" : "0", fmt9(s.score),
                 fmt9(s.jacobian_norm)});
}

Tensor dataset_row(const Tensor& m, std::size_t i) {
    const std::size_t d = m.cols();
    std::vector<double> v(m.data.begin() + i * d, m.data.begin() + (i + 1) * d);
    return Tensor::row(std::move(v));
}

void write_interp_csv(const fs::path& path, const EmbeddingNet& net, const OsrDataset& data,
                      const ProbeConfig& probes, bool normalized, std::uint64_t seed) {
    CsvWriter csv(path, {"pair_id", "t", "jacobian_norm"});
    if (data.known_test_x.rows() == 0 || data.num_known < 2) {
        csv.close();
        return;
    }
    Rng rng(seed);
    std::size_t emitted = 0;
    for (std::size_t pair = 0; pair < probes.interp_pairs; ++pair) {
        // rejection-sample an inter-class pair from the known test split
        std::size_t a = 0, b = 0;
        bool found = false;
        for (int tries = 0; tries < 256 && !found; ++tries) {
            a = rng.below(data.known_test_x.rows());
            b = rng.below(data.known_test_x.rows());
            found = data.known_test_y[a] != data.known_test_y[b];
        }
        if (!found) continue;
        const auto probe = interpolation_probe(net, dataset_row(data.known_test_x, a),
                                               dataset_row(data.known_test_x, b),
                                               probes.interp_points, normalized);
        for (const auto& [t, jn] : probe)
            csv.row({std::to_string(emitted), fmt9(t), fmt9(jn)});
        ++emitted;
    }
}

ManifestEntry manifest_entry(const fs::path& out_dir, const fs::path& file) {
    ManifestEntry e;
    e.path = fs::relative(file, out_dir).string();
    e.bytes = static_cast<std::uint64_t>(fs::file_size(file));
    e.fnv1a64 = fnv1a64_file(file.string());
    return e;
}

struct SingleRunResult {
    MetricsLog log;
    SeedSummary summary;
};

// one seeded training run with all file emission under run_dir
SingleRunResult run_single_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                const fs::path& run_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    fs::create_directories(run_dir);

    OsrDataset data = build_dataset(cfg.dataset, seed);
    MlpConfig mc = cfg.model;
    mc.input_dim = data.dim();

    Rng init_rng = Rng(seed).derive(100);
    EmbeddingNet net(mc, init_rng);
    PrototypeBank bank(data.num_known, mc.embed_dim, init_rng);
    RotationHead head(mc.embed_dim, init_rng);

    TrainConfig tc = cfg.train;
    tc.seed = seed;
    MetricsLog log = train(net, bank, &head, data, tc);

    write_metrics_csv(run_dir / "metrics.csv", log);
    if (!log.checkpoints.empty())
        write_scatter_csv(run_dir / "scatter_score_jn.csv", log.checkpoints.back());
    write_interp_csv(run_dir / "interp_probe.csv", net, data, cfg.probes,
                     cfg.train.loss.normalize_embeddings, Rng(seed).derive(200).next_u64());
    save_checkpoint((run_dir / "checkpoint.bin").string(), net, bank, &head);

    SingleRunResult out;
    out.summary.seed = seed;
    if (!log.checkpoints.empty()) {
        out.summary.first = log.checkpoints.front();
        out.summary.final = log.checkpoints.back();
    }
    out.summary.mean_raw_norm =
        data.known_test_x.rows() > 0 ? mean_raw_embedding_norm(net, data.known_test_x) : 0.0;
    out.summary.run_dir = run_dir.string();
    out.summary.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.log = std::move(log);
    return out;
}

ordered_json report_json_for(const ExperimentConfig& cfg, const RunReport& rep) {
    ordered_json j;
    j["config"] = ordered_json::parse(serialize_config(cfg));
    j["rng"] = std::string(Rng::kAlgorithm);
    ordered_json seeds = ordered_json::array();
    for (const SeedSummary& s : rep.seeds) {
        ordered_json e;
        e["seed"] = s.seed;
        e["run_dir"] = s.run_dir;
        e["final_acc"] = round9(s.final.acc);
        e["final_auc"] = round9(s.final.auc);
        e["final_dbi"] = round9(s.final.dbi);
        e["final_jnd"] = round9(s.final.jnd);
        e["initial_jnd"] = round9(s.first.jnd);
        e["mean_raw_embedding_norm"] = round9(s.mean_raw_norm);
        e["wall_seconds"] = round9(s.wall_seconds);
        seeds.push_back(std::move(e));
    }
    j["seeds"] = std::move(seeds);
    ordered_json agg;
    agg["final_auc_mean"] = round9(rep.mean_final_auc);
    agg["final_auc_std"] = round9(rep.std_final_auc);
    agg["final_acc_mean"] = round9(rep.mean_final_acc);
    agg["final_acc_std"] = round9(rep.std_final_acc);
    agg["final_jnd_mean"] = round9(rep.mean_final_jnd);
    agg["final_jnd_std"] = round9(rep.std_final_jnd);
    j["aggregate"] = std::move(agg);
    j["wall_seconds"] = round9(rep.wall_seconds);
    ordered_json manifest = ordered_json::array();
    for (const ManifestEntry& m : rep.manifest) {
        ordered_json e;
        e["path"] = m.path;
        e["bytes"] = m.bytes;
        e["fnv1a64"] = m.fnv1a64;
        manifest.push_back(std::move(e));
    }
    j["manifest"] = std::move(manifest);
    return j;
}

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fnv1a64_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot hash missing file: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(bytes.data(), bytes.size()));
    return buf;
}

OsrDataset build_dataset(const DatasetConfig& dc, std::uint64_t seed) {
    return build_dataset(dc, seed, dc.known_k);
}

OsrDataset build_dataset(const DatasetConfig& dc, std::uint64_t seed, std::size_t k) {
    LabeledSet raw;
    std::string source;
    if (dc.kind == DatasetConfig::Kind::Synthetic) {
        raw = gen_blobs(dc.total_classes, dc.dim, dc.n_per_class, dc.separation, dc.radius, seed);
        source = "synthetic";
    } else {
        raw = load_idx(dc.images_path, dc.labels_path);
        source = dc.images_path;
    }

    std::vector<int> known_ids = dc.known_ids;
    if (known_ids.empty()) {
        // seeded permutation of the present class ids; taking a prefix makes
        // the K-sweep's known sets nested for a fixed seed
        std::set<int> present(raw.labels.begin(), raw.labels.end());
        std::vector<int> ids(present.begin(), present.end());
        Rng rng = Rng(seed).derive(50);
        for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
        if (k >= ids.size())
            throw ConfigError("dataset.known_k: must be smaller than the number of classes");
        known_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
    }
    OsrDataset data =
        split_known_unknown(raw, known_ids, dc.train_fraction, Rng(seed).derive(51).next_u64());
    data.source = source;
    return data;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    cfg.validate_paths_exist();
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.out_dir = cfg.out_dir;
    const fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);

    std::vector<double> aucs, accs, jnds;
    for (std::uint64_t seed : cfg.seeds) {
        SingleRunResult r = run_single_seed(cfg, seed, out_dir / ("seed_" + std::to_string(seed)));
        aucs.push_back(r.summary.final.auc);
        accs.push_back(r.summary.final.acc);
        jnds.push_back(r.summary.final.jnd);
        rep.seeds.push_back(std::move(r.summary));
    }
    rep.mean_final_auc = mean_std(aucs, &rep.std_final_auc);
    rep.mean_final_acc = mean_std(accs, &rep.std_final_acc);
    rep.mean_final_jnd = mean_std(jnds, &rep.std_final_jnd);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    for (const SeedSummary& s : rep.seeds)
        for (const char* name : {"metrics.csv", "scatter_score_jn.csv", "interp_probe.csv", "checkpoint.bin"})
            rep.manifest.push_back(manifest_entry(out_dir, fs::path(s.run_dir) / name));

    std::ofstream os(out_dir / "report.json");
    os << report_json_for(cfg, rep).dump(2) << "\n";
    if (!os) throw std::runtime_error("report.json: write failed");
    return rep;
}

std::vector<KSweepRow> sweep_k(const ExperimentConfig& cfg, const std::vector<std::size_t>& k_values) {
    cfg.validate();
    if (k_values.empty()) throw ConfigError("sweep-k: no K values given");
    if (!cfg.dataset.known_ids.empty())
        throw ConfigError("sweep-k: explicit known_ids conflicts with the sweep");
    std::vector<KSweepRow> rows;
    const fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);
    for (std::size_t k : k_values) {
        ExperimentConfig sub = cfg;
        sub.dataset.known_k = k;
        sub.out_dir = (out_dir / ("k_" + std::to_string(k))).string();
        RunReport rep = run_experiment(sub);
        KSweepRow row;
        row.k = k;
        std::vector<double> jnds, aucs;
        for (const SeedSummary& s : rep.seeds) {
            jnds.push_back(s.final.jnd);
            aucs.push_back(s.final.auc);
        }
        row.mean_jnd = mean_std(jnds, &row.std_jnd);
        row.mean_auc = mean_std(aucs, &row.std_auc);
        rows.push_back(row);
    }
    CsvWriter csv(out_dir / "sweep_k.csv", {"k", "mean_jnd", "std_jnd", "mean_auc", "std_auc"});
    for (const KSweepRow& r : rows)
        csv.row({std::to_string(r.k), fmt9(r.mean_jnd), fmt9(r.std_jnd), fmt9(r.mean_auc),
                 fmt9(r.std_auc)});
    return rows;
}

std::vector<AblationRow> ablate(const ExperimentConfig& cfg, const std::vector<std::string>& toggles) {
    cfg.validate();
    if (toggles.empty()) throw ConfigError("ablate: empty toggle set");
    const std::set<std::string> valid = {"loss", "normalize", "margin", "weight_decay", "augment", "ssl"};
    for (const std::string& t : toggles)
        if (valid.count(t) == 0) throw ConfigError("ablate: unknown toggle '" + t + "'");

    const fs::path out_dir(cfg.out_dir);
    fs::create_directories(out_dir);
    std::vector<AblationRow> rows;
    const std::size_t combos = std::size_t{1} << toggles.size();
    for (std::size_t mask = 0; mask < combos; ++mask) {
        ExperimentConfig sub = cfg;
        std::string combo;
        std::string dir_name;
        for (std::size_t i = 0; i < toggles.size(); ++i) {
            const bool on = (mask >> i) & 1u;
            const std::string& t = toggles[i];
            if (!combo.empty()) combo += ",";
            if (t == "loss") {
                sub.train.loss.kind = on ? LossKind::MOvR : LossKind::SCE;
                combo += "loss=" + std::string(on ? "m-ovr" : "sce");
            } else if (t == "normalize") {
                sub.train.loss.normalize_embeddings = on;
                combo += "normalize=" + std::string(on ? "on" : "off");
            } else if (t == "margin") {
                if (!on) sub.train.loss.margin = 0.0;
                combo += "margin=" + std::string(on ? "on" : "off");
            } else if (t == "weight_decay") {
                if (!on) sub.train.weight_decay = 0.0;
                combo += "weight_decay=" + std::string(on ? "on" : "off");
            } else if (t == "augment") {
                if (!on) sub.train.augment.kind = AugmentPolicy::Kind::None;
                combo += "augment=" + std::string(on ? "on" : "off");
            } else {  // ssl
                if (!on) sub.train.loss.lambda_self = 0.0;
                combo += "ssl=" + std::string(on ? "on" : "off");
            }
            dir_name += (on ? t + "1" : t + "0");
        }
        sub.out_dir = (out_dir / ("combo_" + dir_name)).string();
        RunReport rep = run_experiment(sub);
        AblationRow row;
        row.combo = combo;
        std::vector<double> aucs, accs, jnds;
        for (const SeedSummary& s : rep.seeds) {
            aucs.push_back(s.final.auc);
            accs.push_back(s.final.acc);
            jnds.push_back(s.final.jnd);
        }
        row.mean_auc = mean_std(aucs, &row.std_auc);
        row.mean_acc = mean_std(accs, &row.std_acc);
        row.mean_jnd = mean_std(jnds, &row.std_jnd);
        rows.push_back(std::move(row));
    }
    CsvWriter csv(out_dir / "ablation.csv",
                  {"combo", "mean_auc", "std_auc", "mean_acc", "std_acc", "mean_jnd", "std_jnd"});
    for (const AblationRow& r : rows)
        csv.row({"\"" + r.combo + "\"", fmt9(r.mean_auc), fmt9(r.std_auc), fmt9(r.mean_acc),
                 fmt9(r.std_acc), fmt9(r.mean_jnd), fmt9(r.std_jnd)});
    return rows;
}

EvalResult evaluate_checkpoint_file(const std::string& checkpoint_path, const ExperimentConfig& cfg,
                                    std::uint64_t seed, const std::string& out_dir) {
    cfg.validate_paths_exist();
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    OsrDataset data = build_dataset(cfg.dataset, seed);
    if (data.dim() != ckpt.net.input_dim())
        throw std::runtime_error("eval: checkpoint input dim != dataset dim");

    EvalResult res;
    const LossConfig& lc = cfg.train.loss;
    res.acc = data.known_test_x.rows() > 0
                  ? accuracy(ckpt.net, ckpt.bank, data.known_test_x, data.known_test_y,
                             lc.normalize_embeddings)
                  : 0.0;
    std::vector<double> known_scores(data.known_test_x.rows());
    for (std::size_t i = 0; i < known_scores.size(); ++i)
        known_scores[i] = detection_score(ckpt.net, ckpt.bank, dataset_row(data.known_test_x, i), lc);
    const Tensor& ux = data.unknown.samples();
    std::vector<double> unknown_scores(ux.rows());
    for (std::size_t i = 0; i < unknown_scores.size(); ++i)
        unknown_scores[i] = detection_score(ckpt.net, ckpt.bank, dataset_row(ux, i), lc);
    if (!known_scores.empty() && !unknown_scores.empty())
        res.auc_value = auc(known_scores, unknown_scores);
    if (data.num_known >= 2 && data.known_test_x.rows() > 0) {
        Tensor emb = ckpt.net.forward(data.known_test_x, lc.normalize_embeddings);
        res.dbi_value = dbi(emb, data.known_test_y);
    }
    EvalOptions opts;
    opts.seed = Rng(seed).derive(4).next_u64();
    DiagnosticsReport rep = evaluate_checkpoint(ckpt.net, ckpt.bank, data, lc, opts, 0, 0.0);
    res.jnd_value = rep.jnd;

    // Protocol-B style macro-F1: the rejection threshold takes the known
    // validation (test) scores; rejected samples go to the unknown class K.
    if (!known_scores.empty() && !unknown_scores.empty()) {
        res.threshold = threshold_at_rejection(known_scores, 0.10);
        std::vector<int> preds, truths;
        const int unknown_class = static_cast<int>(data.num_known);
        for (std::size_t i = 0; i < known_scores.size(); ++i) {
            const int p = known_scores[i] > res.threshold
                              ? unknown_class
                              : pseudo_label(ckpt.net, ckpt.bank, dataset_row(data.known_test_x, i),
                                             lc.normalize_embeddings);
            preds.push_back(p);
            truths.push_back(data.known_test_y[i]);
        }
        for (std::size_t i = 0; i < unknown_scores.size(); ++i) {
            const int p = unknown_scores[i] > res.threshold
                              ? unknown_class
                              : pseudo_label(ckpt.net, ckpt.bank, dataset_row(ux, i),
                                             lc.normalize_embeddings);
            preds.push_back(p);
            truths.push_back(unknown_class);
        }
        res.macro_f1_value = macro_f1(preds, truths, data.num_known).value;
    }

    fs::create_directories(out_dir);
    ordered_json j;
    j["checkpoint"] = checkpoint_path;
    j["seed"] = seed;
    j["acc"] = round9(res.acc);
    j["auc"] = round9(res.auc_value);
    j["dbi"] = round9(res.dbi_value);
    j["jnd"] = round9(res.jnd_value);
    j["macro_f1"] = round9(res.macro_f1_value);
    j["rejection_threshold"] = round9(res.threshold);
    std::ofstream os(fs::path(out_dir) / "eval_report.json");
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("eval_report.json: write failed");
    return res;
}

}  // namespace osrlab
