#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cfrg/checkpoint.hpp"
#include "cfrg/etf.hpp"
#include "cfrg/nc_metrics.hpp"
#include "cfrg/trainer.hpp"

namespace py = pybind11;
using namespace cfrg;

namespace {

py::array_t<double> matrix_to_numpy(const MatrixD& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::copy(m.v.begin(), m.v.end(), out.mutable_data());
    return out;
}

MatrixD numpy_to_matrix(const py::array_t<double, py::array::c_style |
                                                       py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2D array");
    MatrixD m((size_t)a.shape(0), (size_t)a.shape(1));
    std::copy(a.data(), a.data() + m.numel(), m.v.begin());
    return m;
}

std::vector<int32_t> numpy_to_labels(
    const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1D label array");
    return std::vector<int32_t>(a.data(), a.data() + a.shape(0));
}

// run a full experiment and return the headline numbers; mirrors `cfrg train`
py::dict run_experiment(const std::string& config_json,
                        const std::string& data_dir,
                        const std::string& out_dir, size_t subset, bool f64) {
    Experiment exp = parse_experiment_json(config_json);

    auto find = [&](const std::string& base) {
        for (const std::string& c : {data_dir + "/" + base,
                                     data_dir + "/" + base + ".gz"})
            if (std::ifstream(c).good()) return c;
        throw DataError("missing data file " + data_dir + "/" + base + "[.gz]");
    };
    Dataset train_ds = normalize(load_idx(find("train-images-idx3-ubyte"),
                                          find("train-labels-idx1-ubyte")));
    Dataset test_ds = normalize(load_idx(find("t10k-images-idx3-ubyte"),
                                         find("t10k-labels-idx1-ubyte")));
    if (subset && subset < train_ds.n) {
        std::vector<int32_t> idx(train_ds.n);
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(hash64(exp.train.seed, 0x73756273ULL));
        rng.shuffle(idx);
        idx.resize(subset);
        Dataset cut;
        cut.n = subset;
        cut.img_rows = train_ds.img_rows;
        cut.img_cols = train_ds.img_cols;
        cut.normalized = true;
        cut.images.resize(subset * train_ds.dims());
        cut.labels.resize(subset);
        for (size_t r = 0; r < subset; ++r) {
            std::copy(train_ds.images.begin() + (size_t)idx[r] * train_ds.dims(),
                      train_ds.images.begin() +
                          ((size_t)idx[r] + 1) * train_ds.dims(),
                      cut.images.begin() + r * train_ds.dims());
            cut.labels[r] = train_ds.labels[(size_t)idx[r]];
        }
        train_ds = std::move(cut);
    }

    MetricsLog log;
    long long params = 0;
    if (f64) {
        auto model = build_model<double>(exp.model, exp.train.seed);
        log = train<double>(*model, train_ds, test_ds, exp.train);
        params = model->trainable_param_count();
        if (!out_dir.empty()) save_checkpoint(*model, out_dir + "/model.ckpt");
    } else {
        auto model = build_model<float>(exp.model, exp.train.seed);
        log = train<float>(*model, train_ds, test_ds, exp.train);
        params = model->trainable_param_count();
        if (!out_dir.empty()) save_checkpoint(*model, out_dir + "/model.ckpt");
    }
    if (!out_dir.empty()) write_metrics_csv(log, out_dir + "/metrics.csv");

    double best_test = 0.0, best_train = 0.0;
    for (const auto& r : log.rows) {
        best_test = std::max(best_test, r.test_acc);
        best_train = std::max(best_train, r.train_acc);
    }
    py::dict out;
    out["epochs"] = log.rows.size();
    out["best_train_acc"] = best_train;
    out["best_test_acc"] = best_test;
    out["trainable_params"] = params;
    out["frozen_layers"] = log.rows.empty() ? std::vector<std::string>{}
                                            : log.rows.back().frozen_layers;
    out["csv"] = metrics_csv_string(log);
    return out;
}

}  // namespace

PYBIND11_MODULE(_cfrg, m) {
    m.doc() = "neural-collapse metrics, simplex-ETF construction, and "
              "ETF-frozen training";

    // --- etf-core ---
    m.def(
        "build_simplex_etf",
        [](size_t k, size_t C) { return matrix_to_numpy(build_simplex_etf(k, C).entries); },
        py::arg("k"), py::arg("c"));
    m.def(
        "verify_etf",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           double tol) {
            EtfVerification r = verify_etf(numpy_to_matrix(a), tol);
            py::dict d;
            d["k"] = r.k;
            d["c"] = r.C;
            d["max_norm_dev"] = r.max_norm_dev;
            d["max_offdiag_dev"] = r.max_offdiag_dev;
            d["max_gram_dev"] = r.max_gram_dev;
            d["kernel_residual"] = r.kernel_residual;
            d["pass"] = r.pass;
            return d;
        },
        py::arg("m"), py::arg("tol") = 1e-8);
    m.def(
        "etf_layer_weight",
        [](size_t d_in, size_t d_out, double scale) {
            return matrix_to_numpy(
                etf_layer_weight(EtfLayerSpec::make(d_in, d_out, scale)));
        },
        py::arg("d_in"), py::arg("d_out"), py::arg("scale") = 1.0);

    // --- nc-metrics ---
    py::class_<ClassStats>(m, "ClassStats")
        .def_property_readonly("mu",
                               [](const ClassStats& s) { return matrix_to_numpy(s.mu); })
        .def_property_readonly("mu_g",
                               [](const ClassStats& s) {
                                   py::array_t<double> out((py::ssize_t)s.d);
                                   std::copy(s.mu_g.begin(), s.mu_g.end(),
                                             out.mutable_data());
                                   return out;
                               })
        .def_property_readonly(
            "sigma_w", [](const ClassStats& s) { return matrix_to_numpy(s.sigma_w); })
        .def_property_readonly(
            "sigma_b", [](const ClassStats& s) { return matrix_to_numpy(s.sigma_b); })
        .def_property_readonly("counts",
                               [](const ClassStats& s) { return s.counts; });

    m.def(
        "class_statistics",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& f,
           const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& l,
           size_t C) {
            return class_statistics(numpy_to_matrix(f), numpy_to_labels(l), C);
        },
        py::arg("features"), py::arg("labels"), py::arg("num_classes"));
    m.def("nc1", [](const ClassStats& s) { return nc1(s); });
    m.def("nc2", [](const ClassStats& s) {
        Nc2Deviation d = nc2(s);
        return py::make_tuple(d.norm_dev, d.angle_dev);
    });
    m.def(
        "nc3",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& w,
           const ClassStats& s) { return nc3(numpy_to_matrix(w), s); },
        py::arg("classifier_weight"), py::arg("stats"));
    m.def(
        "ncc_classify",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& f,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& means) {
            const std::vector<int32_t> pred =
                ncc_classify(numpy_to_matrix(f), numpy_to_matrix(means));
            py::array_t<int32_t> out((py::ssize_t)pred.size());
            std::copy(pred.begin(), pred.end(), out.mutable_data());
            return out;
        },
        py::arg("features"), py::arg("means"));
    m.def(
        "ncc_error",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& f,
           const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& l,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& means) {
            return ncc_error(numpy_to_matrix(f), numpy_to_labels(l),
                             numpy_to_matrix(means));
        },
        py::arg("features"), py::arg("labels"), py::arg("means"));
    m.def(
        "effective_depth",
        [](const std::vector<double>& errors, double epsilon) {
            EffectiveDepthReport r = effective_depth(errors, epsilon);
            py::dict d;
            d["epsilon"] = r.epsilon;
            d["l0"] = r.l0;
            d["per_layer_ncc_error"] = r.per_layer_ncc_error;
            return d;
        },
        py::arg("per_layer_ncc_error"), py::arg("epsilon"));

    // --- configs / models ---
    m.def("preset_names", &preset_names);
    m.def(
        "experiment_preset_json",
        [](const std::string& name) {
            return experiment_to_json(experiment_preset(name));
        },
        py::arg("name"));
    m.def(
        "trainable_param_count",
        [](const std::string& config_json) {
            Experiment e = parse_experiment_json(config_json);
            return build_model<float>(e.model, 0)->trainable_param_count();
        },
        py::arg("config_json"));
    m.def(
        "lr_at_epoch",
        [](const std::string& config_json, int epoch) {
            return lr_at_epoch(parse_experiment_json(config_json).train, epoch);
        },
        py::arg("config_json"), py::arg("epoch"));

    // --- data + training ---
    m.def(
        "load_idx",
        [](const std::string& images, const std::string& labels) {
            Dataset ds = load_idx(images, labels);
            py::array_t<double> x({ds.n, ds.dims()});
            std::copy(ds.images.begin(), ds.images.end(), x.mutable_data());
            py::array_t<int32_t> y((py::ssize_t)ds.n);
            std::copy(ds.labels.begin(), ds.labels.end(), y.mutable_data());
            return py::make_tuple(x, y);
        },
        py::arg("images_path"), py::arg("labels_path"));
    m.def("run_experiment", &run_experiment, py::arg("config_json"),
          py::arg("data_dir"), py::arg("out_dir") = std::string(),
          py::arg("subset") = (size_t)0, py::arg("f64") = false);

    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");
}
