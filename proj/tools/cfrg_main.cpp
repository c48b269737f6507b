// cfrg: train ETF-constrained networks, probe neural-collapse metrics, and
// check simplex-ETF algebra from the command line.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "cfrg/checkpoint.hpp"
#include "cfrg/trainer.hpp"

namespace fs = std::filesystem;
using namespace cfrg;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string preset_help() {
    std::string s = "presets:";
    for (const auto& p : preset_names()) s += "\n  " + p;
    return s;
}

std::string find_data_file(const std::string& dir, const std::string& base) {
    for (const std::string& candidate :
         {dir + "/" + base, dir + "/" + base + ".gz"})
        if (fs::exists(candidate)) return candidate;
    throw DataError("missing data file " + dir + "/" + base + "[.gz]");
}

struct LoadedData {
    Dataset train;
    Dataset test;
};

LoadedData load_data_dir(const std::string& dir) {
    LoadedData d;
    d.train = normalize(load_idx(find_data_file(dir, "train-images-idx3-ubyte"),
                                 find_data_file(dir, "train-labels-idx1-ubyte")));
    d.test = normalize(load_idx(find_data_file(dir, "t10k-images-idx3-ubyte"),
                                find_data_file(dir, "t10k-labels-idx1-ubyte")));
    d.train.split = Split::Train;
    d.test.split = Split::Test;
    return d;
}

// first n samples of the seeded-shuffled train split
Dataset take_subset(const Dataset& ds, size_t n, uint64_t seed) {
    if (n == 0 || n >= ds.n) return ds;
    std::vector<int32_t> idx(ds.n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(hash64(seed, 0x73756273ULL));  // "subs"
    rng.shuffle(idx);
    idx.resize(n);

    Dataset out;
    out.n = n;
    out.img_rows = ds.img_rows;
    out.img_cols = ds.img_cols;
    out.split = ds.split;
    out.normalized = ds.normalized;
    out.images.resize(n * ds.dims());
    out.labels.resize(n);
    for (size_t r = 0; r < n; ++r) {
        std::copy(ds.images.begin() + (size_t)idx[r] * ds.dims(),
                  ds.images.begin() + ((size_t)idx[r] + 1) * ds.dims(),
                  out.images.begin() + r * ds.dims());
        out.labels[r] = ds.labels[(size_t)idx[r]];
    }
    return out;
}

Experiment resolve_experiment(const std::string& preset,
                              const std::string& config_path) {
    if (!preset.empty() && !config_path.empty())
        throw std::invalid_argument("give either --preset or --config, not both");
    if (!preset.empty()) return experiment_preset(preset);
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw DataError("cannot open config " + config_path);
        std::string text((std::istreambuf_iterator<char>(f)),
                         std::istreambuf_iterator<char>());
        return parse_experiment_json(text);
    }
    throw std::invalid_argument("one of --preset or --config is required");
}

template <class T>
int run_training(const Experiment& exp, const LoadedData& data,
                 const std::string& out_dir) {
    auto model = build_model<T>(exp.model, exp.train.seed);
    MetricsLog log = train<T>(*model, data.train, data.test, exp.train);

    fs::create_directories(out_dir);
    write_metrics_csv(log, out_dir + "/metrics.csv");
    save_checkpoint(*model, out_dir + "/model.ckpt");
    std::ofstream cfg(out_dir + "/resolved_config.json", std::ios::binary);
    if (!cfg) throw DataError("cannot write " + out_dir + "/resolved_config.json");
    cfg << experiment_to_json(exp);

    double best_test = 0.0, best_train = 0.0;
    for (const auto& r : log.rows) {
        best_test = std::max(best_test, r.test_acc);
        best_train = std::max(best_train, r.train_acc);
    }
    std::cout << "trained " << exp.model.family << " for " << log.rows.size()
              << " epochs; best train acc " << best_train << ", best test acc "
              << best_test << "\n"
              << "trainable parameters: " << model->trainable_param_count()
              << "\n"
              << "outputs in " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const std::string& preset, const std::string& config_path,
              const std::string& data_dir, const std::string& out_dir,
              std::optional<uint64_t> seed, std::optional<int> epochs,
              size_t subset, bool f64) {
    Experiment exp = resolve_experiment(preset, config_path);
    if (seed) exp.train.seed = *seed;
    if (epochs) exp.train.epochs = *epochs;
    exp.model.validate();
    exp.train.validate();

    LoadedData data = load_data_dir(data_dir);
    if (subset) data.train = take_subset(data.train, subset, exp.train.seed);

    return f64 ? run_training<double>(exp, data, out_dir)
               : run_training<float>(exp, data, out_dir);
}

// NaN marks metrics that are undefined for this probe (degenerate scatter,
// shape-incompatible classifier); they serialize as JSON null
json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json probe_report(const ProbeFeatures& probes, const MatrixD* head_weight,
                  const std::string& head_probe, size_t classes,
                  double epsilon) {
    json out;
    json plist = json::array();
    std::vector<double> errors;
    const double undef = std::nan("");
    for (size_t p = 0; p < probes.ids.size(); ++p) {
        const MatrixD& feats = probes.features[p];
        ClassStats stats = class_statistics(feats, probes.labels, classes);

        NcReport r;
        try {
            r.nc1 = nc1(stats);
        } catch (const NumericError&) {
            r.nc1 = undef;
        }
        try {
            Nc2Deviation dev = nc2(stats);
            r.nc2_norm_dev = dev.norm_dev;
            r.nc2_angle_dev = dev.angle_dev;
        } catch (const NumericError&) {
            r.nc2_norm_dev = r.nc2_angle_dev = undef;
        }
        r.nc3 = undef;
        if (head_weight && probes.ids[p] == head_probe) {
            try {
                r.nc3 = nc3(*head_weight, stats);
            } catch (const NumericError&) {
            }
        }
        r.nc4_error = ncc_error(feats, probes.labels,
                                class_means(feats, probes.labels, classes));

        json pj;
        pj["id"] = probes.ids[p];
        pj["nc1"] = nullable(r.nc1);
        pj["nc2_norm_dev"] = nullable(r.nc2_norm_dev);
        pj["nc2_angle_dev"] = nullable(r.nc2_angle_dev);
        pj["nc3"] = nullable(r.nc3);
        pj["nc4_error"] = r.nc4_error;
        errors.push_back(r.nc4_error);
        plist.push_back(std::move(pj));
    }
    EffectiveDepthReport depth = effective_depth(errors, epsilon);
    out["probes"] = std::move(plist);
    out["effective_depth"] = {{"epsilon", depth.epsilon},
                              {"l0", depth.l0},
                              {"per_layer_ncc_error", depth.per_layer_ncc_error}};
    return out;
}

int cmd_nc_report(const std::string& checkpoint, const std::string& data_dir,
                  double epsilon, const std::string& out_path) {
    auto model = load_checkpoint<double>(checkpoint);
    LoadedData data = load_data_dir(data_dir);

    const std::string head_probe =
        model->family() == "mlp"
            ? "l" + std::to_string(model->config().mlp.num_layers - 1)
            : "head_in";
    const std::string head_layer =
        model->family() == "mlp"
            ? "fc" + std::to_string(model->config().mlp.num_layers)
            : "head";
    LinearLayer<double>* head = model->find_layer(head_layer);
    MatrixD head_w(head->d_out, head->d_in);
    for (size_t i = 0; i < head_w.numel(); ++i)
        head_w.v[i] = head->weight.data()[i];

    json report;
    report["checkpoint"] = checkpoint;
    report["epsilon"] = epsilon;
    report["family"] = model->family();
    for (const auto& [name, ds] : {std::pair<const char*, const Dataset&>{
                                       "train", data.train},
                                   {"test", data.test}}) {
        std::vector<int32_t> idx =
            name == std::string("train")
                ? probe_subset_indices(ds.n, 0x6e63ULL)
                : [&] {
                      std::vector<int32_t> all(ds.n);
                      std::iota(all.begin(), all.end(), 0);
                      return all;
                  }();
        ProbeFeatures probes;
        eval_sweep(*model, ds, idx, &probes);
        report[name] = probe_report(probes, &head_w, head_probe,
                                    model->num_classes(), epsilon);
    }

    const std::string text = report.dump(2) + "\n";
    if (out_path.empty() || out_path == "-") {
        std::cout << text;
    } else {
        std::ofstream f(out_path, std::ios::binary);
        if (!f) throw DataError("cannot write report to " + out_path);
        f << text;
    }
    const size_t train_l0 = report["train"]["effective_depth"]["l0"];
    std::cout << "train-split effective depth at epsilon " << epsilon << ": "
              << train_l0 << "\n";
    return kExitOk;
}

int cmd_etf_check(size_t k, size_t c, const std::string& checkpoint,
                  double tol) {
    if (!checkpoint.empty()) {
        auto model = load_checkpoint<double>(checkpoint);
        bool any = false, all_pass = true;
        for (auto* l : model->linear_layers()) {
            if (l->mode != LayerMode::EtfFrozen) continue;
            any = true;
            MatrixD w(l->d_out, l->d_in);
            for (size_t i = 0; i < w.numel(); ++i) w.v[i] = l->weight.data()[i];
            EtfVerification r = verify_etf(frame_from_weight(w, l->etf), tol);
            std::cout << l->id << " (scale " << l->etf.scale << "): "
                      << format_verification(r) << "\n";
            all_pass = all_pass && r.pass;
        }
        if (!any) {
            std::cout << "warning: no ETF-frozen layers in " << checkpoint
                      << "; empty report\n";
            return kExitOk;
        }
        return all_pass ? kExitOk : kExitNumeric;
    }
    if (k == 0 || c == 0)
        throw std::invalid_argument("give --checkpoint, or both --k and --c");
    EtfMatrix m = build_simplex_etf(k, c);
    EtfVerification r = verify_etf(m.entries, tol);
    std::cout << format_verification(r) << "\n";
    return r.pass ? kExitOk : kExitNumeric;
}

int cmd_param_count(const std::string& preset, const std::string& config_path) {
    Experiment exp = resolve_experiment(preset, config_path);
    auto model = build_model<float>(exp.model, exp.train.seed);
    for (const auto& line : model->param_breakdown())
        std::cout << "  " << line << "\n";
    std::cout << "trainable parameters: " << model->trainable_param_count()
              << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neural-collapse instrumented training with simplex-ETF frozen layers"};
    app.require_subcommand(1);
    app.footer(preset_help());

    const char* env_data = std::getenv("CFRG_DATA_DIR");
    const std::string default_data = env_data ? env_data : "";

    // train
    auto* t = app.add_subcommand("train", "run a training preset or config");
    std::string t_preset, t_config, t_out = "out";
    std::string t_data = default_data;
    std::optional<uint64_t> t_seed;
    std::optional<int> t_epochs;
    size_t t_subset = 0;
    bool t_f64 = false;
    t->add_option("--preset", t_preset, "preset name (see footer)");
    t->add_option("--config", t_config, "experiment config JSON");
    t->add_option("--data", t_data,
                  "directory with the four IDX files (env CFRG_DATA_DIR)");
    t->add_option("--out", t_out, "output directory");
    t->add_option("--seed", t_seed, "override the config seed");
    t->add_option("--epochs", t_epochs, "override the epoch count");
    t->add_option("--subset", t_subset,
                  "train on the first N samples of the seeded shuffle");
    t->add_flag("--f64", t_f64, "run the whole engine in 64-bit");

    // nc-report
    auto* r = app.add_subcommand("nc-report",
                                 "neural-collapse metrics for a checkpoint");
    std::string r_ckpt, r_out;
    std::string r_data = default_data;
    double r_eps = 0.1;
    r->add_option("--checkpoint", r_ckpt, "checkpoint file")->required();
    r->add_option("--data", r_data, "data directory (env CFRG_DATA_DIR)");
    r->add_option("--epsilon", r_eps, "NCC separability threshold");
    r->add_option("--out", r_out, "report JSON path ('-' for stdout)");

    // etf-check
    auto* e = app.add_subcommand("etf-check",
                                 "verify simplex-ETF structure");
    size_t e_k = 0, e_c = 0;
    std::string e_ckpt;
    double e_tol = 1e-8;
    e->add_option("--k", e_k, "ambient dimension");
    e->add_option("--c", e_c, "number of frame vectors");
    e->add_option("--checkpoint", e_ckpt, "verify every frozen layer instead");
    e->add_option("--tol", e_tol, "verification tolerance");

    // param-count
    auto* p = app.add_subcommand("param-count",
                                 "trainable parameters and per-layer breakdown");
    std::string p_preset, p_config;
    p->add_option("--preset", p_preset, "preset name (see footer)");
    p->add_option("--config", p_config, "experiment config JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (t->parsed())
            return cmd_train(t_preset, t_config, t_data, t_out, t_seed,
                             t_epochs, t_subset, t_f64);
        if (r->parsed()) return cmd_nc_report(r_ckpt, r_data, r_eps, r_out);
        if (e->parsed()) return cmd_etf_check(e_k, e_c, e_ckpt, e_tol);
        if (p->parsed()) return cmd_param_count(p_preset, p_config);
    } catch (const DataError& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return kExitData;
    } catch (const NumericError& err) {
        std::cerr << "numeric error: " << err.what() << "\n";
        return kExitNumeric;
    } catch (const std::invalid_argument& err) {
        std::cerr << "usage error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitNumeric;
    }
    return kExitUsage;
}
