#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "osrlab/config.hpp"
#include "osrlab/data.hpp"
#include "osrlab/eval.hpp"
#include "osrlab/train.hpp"

namespace osrlab {

struct ManifestEntry {
    std::string path;  // relative to out_dir
    std::uint64_t bytes = 0;
    std::string fnv1a64;  // hex digest
};

struct SeedSummary {
    std::uint64_t seed = 0;
    DiagnosticsReport first;
    DiagnosticsReport final;
    double mean_raw_norm = 0.0;  // mean ||f-hat|| over known test data
    double wall_seconds = 0.0;
    std::string run_dir;
};

struct RunReport {
    std::string out_dir;
    std::vector<SeedSummary> seeds;
    double mean_final_auc = 0.0, std_final_auc = 0.0;
    double mean_final_acc = 0.0, std_final_acc = 0.0;
    double mean_final_jnd = 0.0, std_final_jnd = 0.0;
    double wall_seconds = 0.0;
    std::vector<ManifestEntry> manifest;
};

struct KSweepRow {
    std::size_t k = 0;
    double mean_jnd = 0.0, std_jnd = 0.0;
    double mean_auc = 0.0, std_auc = 0.0;
};

struct AblationRow {
    std::string combo;  // e.g. "loss=m-ovr,margin=off"
    double mean_auc = 0.0, std_auc = 0.0;
    double mean_acc = 0.0, std_acc = 0.0;
    double mean_jnd = 0.0, std_jnd = 0.0;
};

std::uint64_t fnv1a64(const void* data, std::size_t n);
std::string fnv1a64_file(const std::string& path);

// Deterministic dataset construction for one seed. For idx datasets with no
// explicit known_ids the known classes are a seeded choice; the choice is
// nested across K values for the same seed (K-sweep protocol).
OsrDataset build_dataset(const DatasetConfig& dc, std::uint64_t seed);
OsrDataset build_dataset(const DatasetConfig& dc, std::uint64_t seed, std::size_t k_override);

// Per seed: build dataset, train, emit metrics.csv / scatter_score_jn.csv /
// interp_probe.csv / checkpoint.bin under <out_dir>/seed_<s>/, then aggregate
// mean +- std across seeds into <out_dir>/report.json.
RunReport run_experiment(const ExperimentConfig& cfg);

// One experiment per K with nested known sets; emits <out_dir>/sweep_k.csv.
std::vector<KSweepRow> sweep_k(const ExperimentConfig& cfg, const std::vector<std::size_t>& k_values);

// One run group per requested toggle combination over
// {loss, normalize, margin, weight_decay, augment, ssl};
// emits <out_dir>/ablation.csv.
std::vector<AblationRow> ablate(const ExperimentConfig& cfg, const std::vector<std::string>& toggles);

// Post-hoc evaluation of a checkpoint against a config-built dataset; writes
// eval_report.json (ACC, AUC, DBI, JND, macro-F1 at the 10% rejection rule).
struct EvalResult {
    double acc = 0.0, auc_value = 0.0, dbi_value = 0.0, jnd_value = 0.0;
    double macro_f1_value = 0.0, threshold = 0.0;
};
EvalResult evaluate_checkpoint_file(const std::string& checkpoint_path, const ExperimentConfig& cfg,
                                    std::uint64_t seed, const std::string& out_dir);

}  // namespace osrlab
