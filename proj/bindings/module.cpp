// Python bindings for the main operations: losses, similarity machinery,
// detection scoring, metrics, Jacobian diagnostics, and the experiment
// runner. Heavy lifting stays in the C++ core.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "osrlab/config.hpp"
#include "osrlab/experiment.hpp"

namespace py = pybind11;
using namespace osrlab;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<std::size_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = static_cast<std::size_t>(a.shape(i));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    if (shape.empty()) shape.push_back(1);
    py::array_t<double> a(shape);
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

LossConfig loss_config_from_kwargs(const std::string& kind, double scale, double margin,
                                   double lambda_self, bool normalize) {
    LossConfig cfg;
    if (kind == "m-ovr")
        cfg.kind = LossKind::MOvR;
    else if (kind == "ovr")
        cfg.kind = LossKind::OvR;
    else if (kind == "sce")
        cfg.kind = LossKind::SCE;
    else
        throw std::invalid_argument("loss kind must be one of m-ovr|ovr|sce");
    cfg.scale_t = scale;
    cfg.margin = margin;
    cfg.lambda_self = lambda_self;
    cfg.normalize_embeddings = normalize;
    cfg.validate();
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "open-set recognition lab: metric-learning OSR with Jacobian-norm diagnostics";
    m.attr("__version__") = "0.1.0";

    // --- losses -------------------------------------------------------------
    m.def(
        "movr_loss",
        [](const std::vector<double>& sims, std::size_t y, double t) { return movr_loss(sims, y, t); },
        py::arg("sims"), py::arg("y"), py::arg("scale") = 32.0,
        "one-vs-rest sigmoid loss over scaled similarities");
    m.def(
        "sce_loss",
        [](const std::vector<double>& sims, std::size_t y, double t) { return sce_loss(sims, y, t); },
        py::arg("sims"), py::arg("y"), py::arg("scale") = 32.0,
        "softmax cross-entropy over scaled similarities");
    m.def(
        "rotation_ssl_loss",
        [](const std::vector<double>& logits, int label) { return rotation_ssl_loss(logits, label); },
        py::arg("rot_logits"), py::arg("rot_label"));

    // --- similarity machinery ------------------------------------------------
    m.def("margin_similarity", &margin_similarity, py::arg("cos_val"), py::arg("margin"));
    m.def(
        "unit_normalize",
        [](const py::array_t<double>& v, double eps) {
            return array_from_tensor(unit_normalize(tensor_from_array(v), eps));
        },
        py::arg("v"), py::arg("eps") = kNormalizeEps);
    m.def(
        "cosine_sim",
        [](const py::array_t<double>& f, const py::array_t<double>& w) {
            return cosine_sim(tensor_from_array(f), tensor_from_array(w));
        },
        py::arg("f"), py::arg("w"));
    m.def("cosine_lr", &cosine_lr, py::arg("t"), py::arg("t_total"), py::arg("lr0"),
          py::arg("lr_min"));

    // --- metrics --------------------------------------------------------------
    m.def(
        "auc",
        [](const std::vector<double>& known, const std::vector<double>& unknown) {
            return auc(known, unknown);
        },
        py::arg("known_scores"), py::arg("unknown_scores"),
        "Mann-Whitney AUC; unknown is the positive class, higher score = more unknown");
    m.def(
        "macro_f1",
        [](const std::vector<int>& preds, const std::vector<int>& truths, std::size_t k) {
            return macro_f1(preds, truths, k).value;
        },
        py::arg("predictions"), py::arg("truths"), py::arg("k_known"));
    m.def(
        "threshold_at_rejection",
        [](const std::vector<double>& scores, double q) { return threshold_at_rejection(scores, q); },
        py::arg("val_scores"), py::arg("q") = 0.10);
    m.def(
        "dbi",
        [](const py::array_t<double>& emb, const std::vector<int>& labels) {
            return dbi(tensor_from_array(emb), labels);
        },
        py::arg("embeddings"), py::arg("labels"));

    // --- model ----------------------------------------------------------------
    py::class_<EmbeddingNet>(m, "EmbeddingNet")
        .def(py::init([](std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                         std::size_t embed_dim, double init_scale, std::uint64_t seed) {
                 MlpConfig cfg;
                 cfg.input_dim = input_dim;
                 cfg.hidden_dims = hidden_dims;
                 cfg.embed_dim = embed_dim;
                 cfg.init_scale = init_scale;
                 Rng rng(seed);
                 return EmbeddingNet(cfg, rng);
             }),
             py::arg("input_dim"), py::arg("hidden_dims"), py::arg("embed_dim"),
             py::arg("init_scale") = 1.0, py::arg("seed") = 1)
        .def_property_readonly("input_dim", &EmbeddingNet::input_dim)
        .def_property_readonly("embed_dim", &EmbeddingNet::embed_dim)
        .def(
            "embed",
            [](const EmbeddingNet& net, const py::array_t<double>& x, bool normalized) {
                return array_from_tensor(net.forward(tensor_from_array(x), normalized));
            },
            py::arg("x"), py::arg("normalized") = true)
        .def(
            "jacobian",
            [](const EmbeddingNet& net, const py::array_t<double>& x, bool normalized) {
                Tensor jac = jacobian(
                    [&](Tape& t, Var v) { return net.build_forward_frozen(t, v, normalized); },
                    tensor_from_array(x));
                return array_from_tensor(jac);
            },
            py::arg("x"), py::arg("normalized") = true)
        .def(
            "jacobian_norm",
            [](const EmbeddingNet& net, const py::array_t<double>& x, bool normalized) {
                return jacobian_norm(net, tensor_from_array(x), normalized);
            },
            py::arg("x"), py::arg("normalized") = true);

    py::class_<PrototypeBank>(m, "PrototypeBank")
        .def(py::init([](std::size_t k, std::size_t dim, std::uint64_t seed) {
                 Rng rng(seed);
                 return PrototypeBank(k, dim, rng);
             }),
             py::arg("k"), py::arg("dim"), py::arg("seed") = 1)
        .def(py::init([](const py::array_t<double>& weights) {
                 Tensor w = tensor_from_array(weights);
                 const std::size_t k = w.rows(), dim = w.cols();
                 return PrototypeBank(k, dim, std::move(w));
             }),
             py::arg("weights"))
        .def_property_readonly("k", &PrototypeBank::size)
        .def_property_readonly("dim", &PrototypeBank::dim)
        .def("prototype",
             [](const PrototypeBank& b, std::size_t k) { return array_from_tensor(b.prototype(k)); })
        .def("project_unit_rows", &PrototypeBank::project_unit_rows);

    m.def(
        "fd_jacobian",
        [](const py::function& f, const py::array_t<double>& x, double h) {
            auto eval = [&](const Tensor& t) {
                py::array_t<double> out = f(array_from_tensor(t)).cast<py::array_t<double>>();
                return tensor_from_array(out);
            };
            return array_from_tensor(fd_jacobian(eval, tensor_from_array(x), h));
        },
        py::arg("f"), py::arg("x"), py::arg("h") = 1e-5,
        "central-difference Jacobian of a python callable");

    m.def(
        "class_similarities",
        [](const EmbeddingNet& net, const PrototypeBank& bank, const py::array_t<double>& x,
           double margin, bool apply_margin) {
            return array_from_tensor(
                class_similarities(net, bank, tensor_from_array(x), margin, apply_margin));
        },
        py::arg("net"), py::arg("bank"), py::arg("x"), py::arg("margin") = 0.5,
        py::arg("apply_margin") = true);
    m.def(
        "pseudo_label",
        [](const EmbeddingNet& net, const PrototypeBank& bank, const py::array_t<double>& x) {
            return pseudo_label(net, bank, tensor_from_array(x));
        },
        py::arg("net"), py::arg("bank"), py::arg("x"));
    m.def(
        "detection_score",
        [](const EmbeddingNet& net, const PrototypeBank& bank, const py::array_t<double>& x,
           const std::string& kind, double scale, double margin, double lambda_self, bool normalize) {
            return detection_score(net, bank, tensor_from_array(x),
                                   loss_config_from_kwargs(kind, scale, margin, lambda_self, normalize));
        },
        py::arg("net"), py::arg("bank"), py::arg("x"), py::arg("kind") = "m-ovr",
        py::arg("scale") = 32.0, py::arg("margin") = 0.5, py::arg("lambda_self") = 0.1,
        py::arg("normalize") = true);
    m.def(
        "jnd",
        [](const EmbeddingNet& net, const py::array_t<double>& known, const py::array_t<double>& unknown,
           bool normalized) {
            return jnd(net, tensor_from_array(known), tensor_from_array(unknown), normalized);
        },
        py::arg("net"), py::arg("known_x"), py::arg("unknown_x"), py::arg("normalized") = true);
    m.def(
        "interpolation_probe",
        [](const EmbeddingNet& net, const py::array_t<double>& x0, const py::array_t<double>& x1,
           std::size_t n, bool normalized) {
            return interpolation_probe(net, tensor_from_array(x0), tensor_from_array(x1), n,
                                       normalized);
        },
        py::arg("net"), py::arg("x0"), py::arg("x1"), py::arg("n") = 21,
        py::arg("normalized") = true);
    m.def(
        "path_length",
        [](const EmbeddingNet& net, const py::array_t<double>& x0, const py::array_t<double>& x1,
           std::size_t n, bool normalized) {
            return path_length(net, tensor_from_array(x0), tensor_from_array(x1), n, normalized);
        },
        py::arg("net"), py::arg("x0"), py::arg("x1"), py::arg("n") = 65,
        py::arg("normalized") = true);
    m.def(
        "support_volume_estimate",
        [](const EmbeddingNet& net, std::size_t n_mc, double tau, std::uint64_t seed, bool normalized) {
            return support_volume_estimate(net, n_mc, tau, seed, normalized);
        },
        py::arg("net"), py::arg("n_mc"), py::arg("tau"), py::arg("seed") = 1,
        py::arg("normalized") = true);

    // --- data ------------------------------------------------------------------
    m.def(
        "gen_blobs",
        [](std::size_t total_classes, std::size_t d, std::size_t n_per_class, double separation,
           double radius, std::uint64_t seed) {
            LabeledSet set = gen_blobs(total_classes, d, n_per_class, separation, radius, seed);
            return py::make_tuple(array_from_tensor(set.x), set.labels);
        },
        py::arg("total_classes"), py::arg("d"), py::arg("n_per_class"),
        py::arg("separation") = 0.5, py::arg("radius") = 0.08, py::arg("seed") = 1);
    m.def(
        "load_idx",
        [](const std::string& images, const std::string& labels) {
            LabeledSet set = load_idx(images, labels);
            return py::make_tuple(array_from_tensor(set.x), set.labels,
                                  py::make_tuple(set.image.height, set.image.width));
        },
        py::arg("images_path"), py::arg("labels_path"));
    m.def(
        "rotate90",
        [](const py::array_t<double>& img, int k) {
            return array_from_tensor(rotate90(tensor_from_array(img), k));
        },
        py::arg("image"), py::arg("k"));

    // --- experiment runner -------------------------------------------------------
    m.def(
        "run_experiment",
        [](const std::string& config_json, const std::string& out_dir,
           const std::vector<std::uint64_t>& seeds) {
            ExperimentConfig cfg = parse_config(config_json);
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            if (!seeds.empty()) cfg.seeds = seeds;
            RunReport rep = run_experiment(cfg);
            py::dict d;
            d["out_dir"] = rep.out_dir;
            d["final_auc_mean"] = rep.mean_final_auc;
            d["final_auc_std"] = rep.std_final_auc;
            d["final_acc_mean"] = rep.mean_final_acc;
            d["final_jnd_mean"] = rep.mean_final_jnd;
            d["wall_seconds"] = rep.wall_seconds;
            return d;
        },
        py::arg("config_json") = "", py::arg("out_dir") = "",
        py::arg("seeds") = std::vector<std::uint64_t>{},
        "parse a JSON config, train every seed, emit metrics/report files");
    m.def("parse_config_check",
          [](const std::string& text) { return serialize_config(parse_config(text)); });

    py::register_exception<ConfigError>(m, "ConfigError");
}
