#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "osrlab/config.hpp"
#include "osrlab/experiment.hpp"

using namespace osrlab;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::size_t count_columns(const std::string& line) {
    return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
}

// small, fast experiment used by the orchestration tests
ExperimentConfig tiny_config(const fs::path& out) {
    ExperimentConfig cfg = parse_config("");
    cfg.dataset.total_classes = 4;
    cfg.dataset.dim = 4;
    cfg.dataset.n_per_class = 30;
    cfg.dataset.known_k = 2;
    cfg.model.hidden_dims = {16};
    cfg.model.embed_dim = 4;
    cfg.train.iterations = 60;
    cfg.train.batch_size = 16;
    cfg.train.eval_interval = 30;
    cfg.train.eval.jn_samples = 6;
    cfg.train.eval.train_loss_samples = 16;
    cfg.probes.interp_pairs = 3;
    cfg.probes.interp_points = 5;
    cfg.seeds = {1, 2};
    cfg.out_dir = out.string();
    return cfg;
}

}  // namespace

TEST_CASE("parse_config: empty document takes the documented defaults") {
    ExperimentConfig cfg = parse_config("");
    CHECK(cfg.train.loss.scale_t == 32.0);
    CHECK(cfg.train.loss.margin == 0.5);
    CHECK(cfg.train.loss.lambda_self == 0.1);
    CHECK(cfg.train.loss.kind == LossKind::MOvR);
    CHECK(cfg.train.weight_decay == 1e-3);
    CHECK(cfg.train.momentum == 0.9);
    CHECK(cfg.train.lr0 == 0.1);
    CHECK(cfg.train.lr_min == 1e-5);
    CHECK(cfg.dataset.kind == DatasetConfig::Kind::Synthetic);
    CHECK(cfg.seeds.size() == 5);

    ExperimentConfig cfg2 = parse_config("{}");
    CHECK(config_equal(cfg, cfg2));
}

TEST_CASE("parse_config: round trip") {
    ExperimentConfig cfg = parse_config("");
    ExperimentConfig reparsed = parse_config(serialize_config(cfg));
    CHECK(config_equal(cfg, reparsed));

    const std::string custom = R"({
      "dataset": {"kind": "synthetic", "total_classes": 7, "dim": 5, "known_k": 3},
      "model": {"hidden_dims": [32, 16], "embed_dim": 8},
      "train": {"iterations": 123, "loss": {"kind": "sce", "scale": 12.5},
                "augment": {"kind": "image", "shift_px": 3, "rot_deg": 7.5}},
      "seeds": [11, 12, 13],
      "out_dir": "runs/custom"
    })";
    ExperimentConfig c = parse_config(custom);
    CHECK(c.dataset.total_classes == 7);
    CHECK(c.train.iterations == 123);
    CHECK(c.train.loss.kind == LossKind::SCE);
    CHECK(c.train.loss.scale_t == 12.5);
    CHECK(c.train.augment.kind == AugmentPolicy::Kind::Image);
    CHECK(c.train.augment.shift_px == 3);
    ExperimentConfig c2 = parse_config(serialize_config(c));
    CHECK(config_equal(c, c2));
}

TEST_CASE("parse_config: rejections carry the key path") {
    // range guard on the margin
    try {
        parse_config(R"({"train": {"loss": {"margin": 2.0}}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("margin") != std::string::npos);
    }

    // unknown keys
    try {
        parse_config(R"({"train": {"losss": {}}})");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("train.losss") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config(R"({"margin": 2.0})"), ConfigError);

    // syntax error
    CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    // wrong type
    CHECK_THROWS_AS(parse_config(R"({"seeds": "one"})"), ConfigError);
    // empty seed list
    CHECK_THROWS_AS(parse_config(R"({"seeds": []})"), ConfigError);
}

TEST_CASE("run_experiment: emitted files, csv shape, manifest hashes") {
    const fs::path out = fs::temp_directory_path() / "osrlab_exp_test";
    fs::remove_all(out);
    ExperimentConfig cfg = tiny_config(out);
    RunReport rep = run_experiment(cfg);
    CHECK(rep.seeds.size() == 2);

    for (const char* name : {"seed_1", "seed_2"}) {
        const fs::path dir = out / name;
        for (const char* file :
             {"metrics.csv", "scatter_score_jn.csv", "interp_probe.csv", "checkpoint.bin"}) {
            CHECK(fs::exists(dir / file));
            CHECK(fs::file_size(dir / file) > 0);
        }
        // header plus constant column count
        std::istringstream metrics(read_text(dir / "metrics.csv"));
        std::string line;
        REQUIRE(std::getline(metrics, line));
        CHECK(line ==
              "step,lr,train_loss,acc,dbi,auc,jnd,mean_inter_proto_dist,mean_jn_known,mean_jn_unknown");
        const std::size_t cols = count_columns(line);
        std::size_t rows = 0;
        while (std::getline(metrics, line)) {
            CHECK(count_columns(line) == cols);
            ++rows;
        }
        CHECK(rows == 3);  // steps 0, 30, 60
    }

    // report.json: manifest references existing files with matching hashes
    const fs::path report_path = out / "report.json";
    REQUIRE(fs::exists(report_path));
    auto j = nlohmann::json::parse(read_text(report_path));
    CHECK(j.at("rng") == "xoshiro256starstar");
    REQUIRE(j.contains("manifest"));
    for (const auto& entry : j.at("manifest")) {
        const fs::path p = out / entry.at("path").get<std::string>();
        REQUIRE(fs::exists(p));
        CHECK(fs::file_size(p) == entry.at("bytes").get<std::uint64_t>());
        CHECK(fnv1a64_file(p.string()) == entry.at("fnv1a64").get<std::string>());
    }
    CHECK(j.at("aggregate").contains("final_auc_mean"));
    fs::remove_all(out);
}

TEST_CASE("run_experiment: repeated seeded runs are byte-identical") {
    const fs::path out_a = fs::temp_directory_path() / "osrlab_det_a";
    const fs::path out_b = fs::temp_directory_path() / "osrlab_det_b";
    fs::remove_all(out_a);
    fs::remove_all(out_b);
    ExperimentConfig cfg = tiny_config(out_a);
    cfg.seeds = {3};
    run_experiment(cfg);
    cfg.out_dir = out_b.string();
    run_experiment(cfg);
    CHECK(read_text(out_a / "seed_3" / "metrics.csv") == read_text(out_b / "seed_3" / "metrics.csv"));
    CHECK(read_text(out_a / "seed_3" / "scatter_score_jn.csv") ==
          read_text(out_b / "seed_3" / "scatter_score_jn.csv"));
    fs::remove_all(out_a);
    fs::remove_all(out_b);
}

TEST_CASE("build_dataset: seeded known sets are nested across K") {
    DatasetConfig dc;
    dc.total_classes = 9;
    dc.dim = 4;
    dc.n_per_class = 10;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        OsrDataset small = build_dataset(dc, seed, 2);
        OsrDataset large = build_dataset(dc, seed, 8);
        REQUIRE(small.known_original_ids.size() == 2);
        REQUIRE(large.known_original_ids.size() == 8);
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(small.known_original_ids[i] == large.known_original_ids[i]);
    }
    CHECK_THROWS_AS(build_dataset(dc, 1, 9), ConfigError);
}

TEST_CASE("sweep_k: row per K") {
    const fs::path out = fs::temp_directory_path() / "osrlab_sweep_test";
    fs::remove_all(out);
    ExperimentConfig cfg = tiny_config(out);
    cfg.seeds = {1};
    cfg.train.iterations = 30;
    cfg.train.eval_interval = 30;
    auto rows = sweep_k(cfg, {2, 3});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].k == 2);
    CHECK(rows[1].k == 3);
    CHECK(fs::exists(out / "sweep_k.csv"));
    std::istringstream csv(read_text(out / "sweep_k.csv"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(csv, line)) ++lines;
    CHECK(lines == 3);
    fs::remove_all(out);
}

TEST_CASE("ablate: combination rows and the empty-toggle error") {
    const fs::path out = fs::temp_directory_path() / "osrlab_ablate_test";
    fs::remove_all(out);
    ExperimentConfig cfg = tiny_config(out);
    cfg.seeds = {1};
    cfg.train.iterations = 30;
    cfg.train.eval_interval = 30;

    auto rows = ablate(cfg, {"loss"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].combo == "loss=sce");
    CHECK(rows[1].combo == "loss=m-ovr");
    CHECK(fs::exists(out / "ablation.csv"));

    CHECK_THROWS_AS(ablate(cfg, {}), ConfigError);
    CHECK_THROWS_AS(ablate(cfg, {"nonsense"}), ConfigError);
    fs::remove_all(out);

    // margin toggle keeps every other setting identical
    fs::remove_all(out);
    auto margin_rows = ablate(cfg, {"margin"});
    REQUIRE(margin_rows.size() == 2);
    CHECK(margin_rows[0].combo == "margin=off");
    CHECK(margin_rows[1].combo == "margin=on");
    fs::remove_all(out);
}

TEST_CASE("evaluate_checkpoint_file: end-to-end against a trained run") {
    const fs::path out = fs::temp_directory_path() / "osrlab_evalfile_test";
    fs::remove_all(out);
    ExperimentConfig cfg = tiny_config(out);
    cfg.seeds = {4};
    run_experiment(cfg);
    EvalResult res = evaluate_checkpoint_file((out / "seed_4" / "checkpoint.bin").string(), cfg, 4,
                                              (out / "eval").string());
    CHECK(res.acc >= 0.0);
    CHECK(res.acc <= 1.0);
    CHECK(res.auc_value >= 0.0);
    CHECK(res.auc_value <= 1.0);
    CHECK(res.macro_f1_value >= 0.0);
    CHECK(fs::exists(out / "eval" / "eval_report.json"));
    fs::remove_all(out);
}
