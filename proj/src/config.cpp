#include "osrlab/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace osrlab {

using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw ConfigError(path.empty() ? msg : path + ": " + msg);
}

std::string join(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
}

void require_keys(const ordered_json& obj, const std::string& path,
                  const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [key, _] : obj.items())
        if (allowed.count(key) == 0) fail(join(path, key), "unknown key");
}

template <typename T>
T get_or(const ordered_json& obj, const std::string& path, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(join(path, key), "wrong type");
    }
}

AugmentPolicy::Kind parse_augment_kind(const std::string& s, const std::string& path) {
    if (s == "none") return AugmentPolicy::Kind::None;
    if (s == "jitter") return AugmentPolicy::Kind::Jitter;
    if (s == "image") return AugmentPolicy::Kind::Image;
    fail(path, "unknown augmentation kind '" + s + "' (none|jitter|image)");
}

std::string augment_kind_name(AugmentPolicy::Kind k) {
    switch (k) {
        case AugmentPolicy::Kind::None: return "none";
        case AugmentPolicy::Kind::Jitter: return "jitter";
        case AugmentPolicy::Kind::Image: return "image";
    }
    return "none";
}

LossKind parse_loss_kind(const std::string& s, const std::string& path) {
    if (s == "m-ovr") return LossKind::MOvR;
    if (s == "ovr") return LossKind::OvR;
    if (s == "sce") return LossKind::SCE;
    fail(path, "unknown loss kind '" + s + "' (m-ovr|ovr|sce)");
}

std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::MOvR: return "m-ovr";
        case LossKind::OvR: return "ovr";
        case LossKind::SCE: return "sce";
    }
    return "m-ovr";
}

DatasetConfig parse_dataset(const ordered_json& j, const std::string& path) {
    DatasetConfig dc;
    require_keys(j, path,
                 {"kind", "total_classes", "dim", "n_per_class", "separation", "radius", "images",
                  "labels", "known_k", "known_ids", "train_fraction"});
    const std::string kind = get_or<std::string>(j, path, "kind", "synthetic");
    if (kind == "synthetic")
        dc.kind = DatasetConfig::Kind::Synthetic;
    else if (kind == "idx")
        dc.kind = DatasetConfig::Kind::Idx;
    else
        fail(join(path, "kind"), "unknown dataset kind '" + kind + "' (synthetic|idx)");
    dc.total_classes = get_or<std::size_t>(j, path, "total_classes", dc.total_classes);
    dc.dim = get_or<std::size_t>(j, path, "dim", dc.dim);
    dc.n_per_class = get_or<std::size_t>(j, path, "n_per_class", dc.n_per_class);
    dc.separation = get_or<double>(j, path, "separation", dc.separation);
    dc.radius = get_or<double>(j, path, "radius", dc.radius);
    dc.images_path = get_or<std::string>(j, path, "images", dc.images_path);
    dc.labels_path = get_or<std::string>(j, path, "labels", dc.labels_path);
    dc.known_k = get_or<std::size_t>(j, path, "known_k", dc.known_k);
    dc.known_ids = get_or<std::vector<int>>(j, path, "known_ids", dc.known_ids);
    dc.train_fraction = get_or<double>(j, path, "train_fraction", dc.train_fraction);
    return dc;
}

MlpConfig parse_model(const ordered_json& j, const std::string& path) {
    MlpConfig mc;
    mc.hidden_dims = {64, 64};
    mc.embed_dim = 16;
    require_keys(j, path, {"hidden_dims", "embed_dim", "init_scale"});
    mc.hidden_dims = get_or<std::vector<std::size_t>>(j, path, "hidden_dims", mc.hidden_dims);
    mc.embed_dim = get_or<std::size_t>(j, path, "embed_dim", mc.embed_dim);
    mc.init_scale = get_or<double>(j, path, "init_scale", mc.init_scale);
    return mc;
}

LossConfig parse_loss(const ordered_json& j, const std::string& path) {
    LossConfig lc;
    require_keys(j, path, {"kind", "scale", "margin", "lambda_self", "normalize"});
    lc.kind = parse_loss_kind(get_or<std::string>(j, path, "kind", "m-ovr"), join(path, "kind"));
    lc.scale_t = get_or<double>(j, path, "scale", lc.scale_t);
    lc.margin = get_or<double>(j, path, "margin", lc.margin);
    lc.lambda_self = get_or<double>(j, path, "lambda_self", lc.lambda_self);
    lc.normalize_embeddings = get_or<bool>(j, path, "normalize", lc.normalize_embeddings);
    return lc;
}

AugmentPolicy parse_augment(const ordered_json& j, const std::string& path) {
    AugmentPolicy ap;
    ap.kind = AugmentPolicy::Kind::Jitter;
    require_keys(j, path, {"kind", "sigma", "shift_px", "rot_deg"});
    ap.kind = parse_augment_kind(get_or<std::string>(j, path, "kind", "jitter"), join(path, "kind"));
    ap.sigma = get_or<double>(j, path, "sigma", ap.sigma);
    ap.shift_px = get_or<int>(j, path, "shift_px", ap.shift_px);
    ap.rot_deg = get_or<double>(j, path, "rot_deg", ap.rot_deg);
    return ap;
}

TrainConfig parse_train(const ordered_json& j, const std::string& path) {
    TrainConfig tc;
    tc.augment.kind = AugmentPolicy::Kind::Jitter;
    require_keys(j, path,
                 {"iterations", "batch_size", "lr0", "lr_min", "momentum", "weight_decay", "loss",
                  "augment", "eval_interval", "jn_eval_samples", "train_loss_samples"});
    tc.iterations = get_or<std::size_t>(j, path, "iterations", tc.iterations);
    tc.batch_size = get_or<std::size_t>(j, path, "batch_size", tc.batch_size);
    tc.lr0 = get_or<double>(j, path, "lr0", tc.lr0);
    tc.lr_min = get_or<double>(j, path, "lr_min", tc.lr_min);
    tc.momentum = get_or<double>(j, path, "momentum", tc.momentum);
    tc.weight_decay = get_or<double>(j, path, "weight_decay", tc.weight_decay);
    if (j.contains("loss")) tc.loss = parse_loss(j.at("loss"), join(path, "loss"));
    if (j.contains("augment")) tc.augment = parse_augment(j.at("augment"), join(path, "augment"));
    tc.eval_interval = get_or<std::size_t>(j, path, "eval_interval", tc.eval_interval);
    tc.eval.jn_samples = get_or<std::size_t>(j, path, "jn_eval_samples", tc.eval.jn_samples);
    tc.eval.train_loss_samples =
        get_or<std::size_t>(j, path, "train_loss_samples", tc.eval.train_loss_samples);
    return tc;
}

ProbeConfig parse_probes(const ordered_json& j, const std::string& path) {
    ProbeConfig pc;
    require_keys(j, path, {"interp_pairs", "interp_points", "mc_samples"});
    pc.interp_pairs = get_or<std::size_t>(j, path, "interp_pairs", pc.interp_pairs);
    pc.interp_points = get_or<std::size_t>(j, path, "interp_points", pc.interp_points);
    pc.mc_samples = get_or<std::size_t>(j, path, "mc_samples", pc.mc_samples);
    return pc;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("seeds: must not be empty");
    if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");
    if (dataset.kind == DatasetConfig::Kind::Synthetic) {
        if (dataset.total_classes < 2) throw ConfigError("dataset.total_classes: need >= 2");
        if (dataset.dim < 2) throw ConfigError("dataset.dim: need >= 2");
        if (!(dataset.separation > 2.0 * dataset.radius))
            throw ConfigError("dataset.separation: must exceed 2 * radius");
    } else if (dataset.images_path.empty() || dataset.labels_path.empty()) {
        throw ConfigError("dataset.images/labels: required for idx datasets");
    }
    if (dataset.known_ids.empty() && dataset.known_k == 0)
        throw ConfigError("dataset.known_k: need at least one known class");
    if (!(dataset.train_fraction >= 0.0 && dataset.train_fraction <= 1.0))
        throw ConfigError("dataset.train_fraction: must be in [0, 1]");
    try {
        MlpConfig probe = model;
        probe.input_dim = 2;  // real input dim is bound at run time
        probe.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    try {
        train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("train: ") + e.what());
    }
    if (probes.interp_points < 2) throw ConfigError("probes.interp_points: need >= 2");
}

void ExperimentConfig::validate_paths_exist() const {
    if (dataset.kind != DatasetConfig::Kind::Idx) return;
    for (const std::string& p : {dataset.images_path, dataset.labels_path})
        if (!std::filesystem::exists(p)) throw ConfigError("dataset: file does not exist: " + p);
}

ExperimentConfig parse_config(const std::string& text) {
    ordered_json j;
    try {
        j = text.empty() ? ordered_json::object() : ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("syntax error: ") + e.what());
    }
    ExperimentConfig cfg;
    require_keys(j, "", {"dataset", "model", "train", "probes", "out_dir", "seeds"});
    if (j.contains("dataset")) cfg.dataset = parse_dataset(j.at("dataset"), "dataset");
    if (j.contains("model")) cfg.model = parse_model(j.at("model"), "model");
    else {
        cfg.model.hidden_dims = {64, 64};
        cfg.model.embed_dim = 16;
    }
    if (j.contains("train")) cfg.train = parse_train(j.at("train"), "train");
    else cfg.train.augment.kind = AugmentPolicy::Kind::Jitter;
    if (j.contains("probes")) cfg.probes = parse_probes(j.at("probes"), "probes");
    cfg.out_dir = get_or<std::string>(j, "", "out_dir", cfg.out_dir);
    cfg.seeds = get_or<std::vector<std::uint64_t>>(j, "", "seeds", cfg.seeds);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
    ordered_json j;
    ordered_json d;
    d["kind"] = cfg.dataset.kind == DatasetConfig::Kind::Synthetic ? "synthetic" : "idx";
    if (cfg.dataset.kind == DatasetConfig::Kind::Synthetic) {
        d["total_classes"] = cfg.dataset.total_classes;
        d["dim"] = cfg.dataset.dim;
        d["n_per_class"] = cfg.dataset.n_per_class;
        d["separation"] = cfg.dataset.separation;
        d["radius"] = cfg.dataset.radius;
    } else {
        d["images"] = cfg.dataset.images_path;
        d["labels"] = cfg.dataset.labels_path;
    }
    d["known_k"] = cfg.dataset.known_k;
    if (!cfg.dataset.known_ids.empty()) d["known_ids"] = cfg.dataset.known_ids;
    d["train_fraction"] = cfg.dataset.train_fraction;
    j["dataset"] = std::move(d);

    ordered_json m;
    m["hidden_dims"] = cfg.model.hidden_dims;
    m["embed_dim"] = cfg.model.embed_dim;
    m["init_scale"] = cfg.model.init_scale;
    j["model"] = std::move(m);

    ordered_json t;
    t["iterations"] = cfg.train.iterations;
    t["batch_size"] = cfg.train.batch_size;
    t["lr0"] = cfg.train.lr0;
    t["lr_min"] = cfg.train.lr_min;
    t["momentum"] = cfg.train.momentum;
    t["weight_decay"] = cfg.train.weight_decay;
    ordered_json l;
    l["kind"] = loss_kind_name(cfg.train.loss.kind);
    l["scale"] = cfg.train.loss.scale_t;
    l["margin"] = cfg.train.loss.margin;
    l["lambda_self"] = cfg.train.loss.lambda_self;
    l["normalize"] = cfg.train.loss.normalize_embeddings;
    t["loss"] = std::move(l);
    ordered_json a;
    a["kind"] = augment_kind_name(cfg.train.augment.kind);
    a["sigma"] = cfg.train.augment.sigma;
    a["shift_px"] = cfg.train.augment.shift_px;
    a["rot_deg"] = cfg.train.augment.rot_deg;
    t["augment"] = std::move(a);
    t["eval_interval"] = cfg.train.eval_interval;
    t["jn_eval_samples"] = cfg.train.eval.jn_samples;
    t["train_loss_samples"] = cfg.train.eval.train_loss_samples;
    j["train"] = std::move(t);

    ordered_json p;
    p["interp_pairs"] = cfg.probes.interp_pairs;
    p["interp_points"] = cfg.probes.interp_points;
    p["mc_samples"] = cfg.probes.mc_samples;
    j["probes"] = std::move(p);

    j["out_dir"] = cfg.out_dir;
    j["seeds"] = cfg.seeds;
    return j.dump(2) + "\n";
}

bool config_equal(const ExperimentConfig& a, const ExperimentConfig& b) {
    return serialize_config(a) == serialize_config(b);
}

}  // namespace osrlab
