#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "osrlab/model.hpp"
#include "osrlab/train.hpp"

namespace osrlab {

class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetConfig {
    enum class Kind { Synthetic, Idx };
    Kind kind = Kind::Synthetic;
    // synthetic blobs
    std::size_t total_classes = 9;
    std::size_t dim = 8;
    std::size_t n_per_class = 100;
    double separation = 0.5;
    double radius = 0.08;
    // idx files
    std::string images_path;
    std::string labels_path;
    // known/unknown split
    std::size_t known_k = 6;
    std::vector<int> known_ids;  // explicit override; empty = seeded choice
    double train_fraction = 0.8;
};

struct ProbeConfig {
    std::size_t interp_pairs = 100;
    std::size_t interp_points = 21;
    std::size_t mc_samples = 2048;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    MlpConfig model;  // input_dim is taken from the dataset at run time
    TrainConfig train;
    ProbeConfig probes;
    std::string out_dir = "runs/out";
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

    void validate() const;            // value ranges
    void validate_paths_exist() const;  // referenced files, at run start
};

// Strict JSON parsing: unspecified fields take the documented defaults
// (T=32, m=0.5, lambda_self=0.1, weight decay 1e-3, momentum 0.9); unknown
// keys are rejected with their full key path.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Canonical serialization; parse(serialize(c)) == c field by field.
std::string serialize_config(const ExperimentConfig& cfg);

bool config_equal(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace osrlab
