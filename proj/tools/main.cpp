// osrlab command line: train / eval / probe / sweep-k / ablate.
// Exit codes: 0 success, 1 configuration error, 2 runtime or invariant failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "osrlab/config.hpp"
#include "osrlab/experiment.hpp"

namespace {

using namespace osrlab;

ExperimentConfig resolve_config(const std::string& config_path, std::optional<std::uint64_t> seed,
                                const std::string& out_dir) {
    ExperimentConfig cfg = config_path.empty() ? parse_config("") : load_config_file(config_path);
    if (seed.has_value()) cfg.seeds = {*seed};
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    return cfg;
}

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_dir) {
    ExperimentConfig cfg = resolve_config(config_path, seed, out_dir);
    RunReport rep = run_experiment(cfg);
    std::printf("trained %zu seed(s) -> %s\n", rep.seeds.size(), rep.out_dir.c_str());
    std::printf("final ACC %.4f +- %.4f | AUC %.4f +- %.4f | JND %.4f +- %.4f | %.1fs\n",
                rep.mean_final_acc, rep.std_final_acc, rep.mean_final_auc, rep.std_final_auc,
                rep.mean_final_jnd, rep.std_final_jnd, rep.wall_seconds);
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             std::optional<std::uint64_t> seed, const std::string& out_dir) {
    ExperimentConfig cfg = resolve_config(config_path, seed, out_dir);
    const std::uint64_t s = seed.value_or(cfg.seeds.front());
    EvalResult res = evaluate_checkpoint_file(checkpoint, cfg, s, cfg.out_dir);
    std::printf("ACC %.4f | AUC %.4f | DBI %.4f | JND %.4f | macro-F1 %.4f (thr %.4g)\n", res.acc,
                res.auc_value, res.dbi_value, res.jnd_value, res.macro_f1_value, res.threshold);
    return 0;
}

int cmd_probe(const std::string& kind, const std::string& config_path, const std::string& checkpoint,
              std::optional<std::uint64_t> seed, const std::string& out_dir) {
    ExperimentConfig cfg = resolve_config(config_path, seed, out_dir);
    cfg.validate_paths_exist();
    const std::uint64_t s = seed.value_or(cfg.seeds.front());
    Checkpoint ckpt = load_checkpoint(checkpoint);
    OsrDataset data = build_dataset(cfg.dataset, s);
    if (data.dim() != ckpt.net.input_dim())
        throw std::runtime_error("probe: checkpoint input dim != dataset dim");
    std::filesystem::create_directories(cfg.out_dir);
    const LossConfig& lc = cfg.train.loss;
    const bool normalized = lc.normalize_embeddings;

    if (kind == "interp") {
        // reuse the run emission: pairs from the known test split
        Rng rng = Rng(s).derive(200);
        std::ofstream os(std::filesystem::path(cfg.out_dir) / "interp_probe.csv");
        os << "pair_id,t,jacobian_norm\n";
        std::size_t emitted = 0;
        for (std::size_t pair = 0; pair < cfg.probes.interp_pairs; ++pair) {
            std::size_t a = 0, b = 0;
            bool found = false;
            for (int tries = 0; tries < 256 && !found; ++tries) {
                a = rng.below(data.known_test_x.rows());
                b = rng.below(data.known_test_x.rows());
                found = data.known_test_y[a] != data.known_test_y[b];
            }
            if (!found) continue;
            const std::size_t d = data.dim();
            Tensor xa = Tensor::row({data.known_test_x.data.begin() + a * d,
                                     data.known_test_x.data.begin() + (a + 1) * d});
            Tensor xb = Tensor::row({data.known_test_x.data.begin() + b * d,
                                     data.known_test_x.data.begin() + (b + 1) * d});
            for (const auto& [t, jn] :
                 interpolation_probe(ckpt.net, xa, xb, cfg.probes.interp_points, normalized)) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", emitted, t, jn);
                os << buf;
            }
            ++emitted;
        }
        std::printf("interp probe: %zu pairs -> %s/interp_probe.csv\n", emitted, cfg.out_dir.c_str());
        return 0;
    }
    if (kind == "jacobian") {
        EvalOptions opts;
        opts.jn_samples = cfg.train.eval.jn_samples;
        opts.seed = Rng(s).derive(4).next_u64();
        DiagnosticsReport rep = evaluate_checkpoint(ckpt.net, ckpt.bank, data, lc, opts, 0, 0.0);
        std::ofstream os(std::filesystem::path(cfg.out_dir) / "scatter_score_jn.csv");
        os << "sample_id,is_unknown,score,jacobian_norm\n";
        for (const ScoreSample& sample : rep.samples) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%zu,%d,%.9g,%.9g\n", sample.sample_id,
                          sample.is_unknown ? 1 : 0, sample.score, sample.jacobian_norm);
            os << buf;
        }
        std::printf("jacobian probe: JND %.6f (known %.6f, unknown %.6f) -> scatter_score_jn.csv\n",
                    rep.jnd, rep.mean_jn_known, rep.mean_jn_unknown);
        return 0;
    }
    if (kind == "volume") {
        // tau defaults to the 95th percentile of known-train Jacobian norms
        Rng rng = Rng(s).derive(5);
        const std::size_t n_known = std::min<std::size_t>(data.known_train_x.rows(), 200);
        std::vector<double> norms;
        const std::size_t d = data.dim();
        for (std::size_t i = 0; i < n_known; ++i) {
            const std::size_t idx = rng.below(data.known_train_x.rows());
            Tensor x = Tensor::row({data.known_train_x.data.begin() + idx * d,
                                    data.known_train_x.data.begin() + (idx + 1) * d});
            norms.push_back(jacobian_norm(ckpt.net, x, normalized));
        }
        std::sort(norms.begin(), norms.end());
        const double tau = norms[static_cast<std::size_t>(0.95 * static_cast<double>(norms.size() - 1))];
        const double frac = support_volume_estimate(ckpt.net, cfg.probes.mc_samples, tau,
                                                    Rng(s).derive(6).next_u64(), normalized);
        nlohmann::ordered_json j;
        j["tau"] = tau;
        j["n_mc"] = cfg.probes.mc_samples;
        j["fraction"] = frac;
        j["stderr_bound"] = 0.5 / std::sqrt(static_cast<double>(cfg.probes.mc_samples));
        std::ofstream os(std::filesystem::path(cfg.out_dir) / "support_volume.json");
        os << j.dump(2) << "\n";
        std::printf("support volume: fraction %.4f above tau %.6f (n_mc %zu)\n", frac, tau,
                    cfg.probes.mc_samples);
        return 0;
    }
    throw ConfigError("probe: unknown kind '" + kind + "' (interp|jacobian|volume)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale open-set recognition lab"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, probe_kind;
    std::uint64_t seed_value = 0;
    bool seed_set = false;
    std::vector<std::size_t> k_values;
    std::vector<std::string> toggles;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON experiment config");
        cmd->add_option("--seed", seed_value, "override the config seed list with one seed")
            ->each([&](const std::string&) { seed_set = true; });
        cmd->add_option("--out", out_dir, "output directory override");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train and emit metrics/checkpoints");
    add_common(train_cmd);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    CLI::App* probe_cmd = app.add_subcommand("probe", "diagnostics probes on a checkpoint");
    add_common(probe_cmd);
    probe_cmd->add_option("kind", probe_kind, "interp|jacobian|volume")->required();
    probe_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    CLI::App* sweep_cmd = app.add_subcommand("sweep-k", "sweep the number of known classes");
    add_common(sweep_cmd);
    sweep_cmd->add_option("--ks", k_values, "K values, e.g. --ks 2 4 6 8")->required();

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "toggle-combination comparison runs");
    add_common(ablate_cmd);
    ablate_cmd
        ->add_option("--toggles", toggles,
                     "subset of loss,normalize,margin,weight_decay,augment,ssl")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    const std::optional<std::uint64_t> seed =
        seed_set ? std::optional<std::uint64_t>(seed_value) : std::nullopt;
    try {
        if (app.got_subcommand(train_cmd)) return cmd_train(config_path, seed, out_dir);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(config_path, checkpoint, seed, out_dir);
        if (app.got_subcommand(probe_cmd))
            return cmd_probe(probe_kind, config_path, checkpoint, seed, out_dir);
        if (app.got_subcommand(sweep_cmd)) {
            ExperimentConfig cfg = resolve_config(config_path, seed, out_dir);
            auto rows = sweep_k(cfg, k_values);
            for (const KSweepRow& r : rows)
                std::printf("K=%zu: JND %.4f +- %.4f | AUC %.4f +- %.4f\n", r.k, r.mean_jnd,
                            r.std_jnd, r.mean_auc, r.std_auc);
            return 0;
        }
        if (app.got_subcommand(ablate_cmd)) {
            ExperimentConfig cfg = resolve_config(config_path, seed, out_dir);
            auto rows = ablate(cfg, toggles);
            for (const AblationRow& r : rows)
                std::printf("%s: AUC %.4f +- %.4f | ACC %.4f | JND %.4f\n", r.combo.c_str(),
                            r.mean_auc, r.std_auc, r.mean_acc, r.mean_jnd);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
