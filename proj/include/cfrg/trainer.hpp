#pragma once

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "cfrg/config.hpp"
#include "cfrg/data_io.hpp"
#include "cfrg/metrics_log.hpp"
#include "cfrg/model.hpp"
#include "cfrg/nc_metrics.hpp"

namespace cfrg {

inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
    double lr = cfg.lr0;
    for (int e : cfg.lr_decay_epochs)
        if (e <= epoch) lr *= cfg.lr_decay_factor;
    return lr;
}

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
// The decoupled-gradient formulation here is the single normative update.
template <class T>
void sgd_step(std::vector<T>& param, const std::vector<T>& grad,
              std::vector<T>& velocity, double lr, double momentum,
              double weight_decay) {
    if (param.size() != grad.size() || param.size() != velocity.size())
        throw std::invalid_argument(
            "sgd_step: param/grad/velocity sizes disagree (" +
            std::to_string(param.size()) + ", " + std::to_string(grad.size()) +
            ", " + std::to_string(velocity.size()) + ")");
    const T m = (T)momentum, wd = (T)weight_decay, step = (T)lr;
    for (size_t i = 0; i < param.size(); ++i) {
        velocity[i] = m * velocity[i] + grad[i] + wd * param[i];
        param[i] -= step * velocity[i];
    }
}

template <class T>
class SgdOptimizer {
  public:
    void step(std::vector<ParamRef<T>> params, double lr, double momentum,
              double weight_decay) {
        for (auto& p : params) {
            if (p.tensor.grad().size() != p.tensor.numel())
                throw std::logic_error("optimizer: parameter " + p.id +
                                       " has no gradient; run backward first");
            auto& v = velocity_[p.id];
            if (v.size() != p.tensor.numel())
                v.assign(p.tensor.numel(), T(0));
            sgd_step(p.tensor.data(), p.tensor.grad(), v, lr, momentum,
                     weight_decay);
        }
    }

    void drop(const std::string& id) { velocity_.erase(id); }
    bool has(const std::string& id) const { return velocity_.count(id) > 0; }

  private:
    std::unordered_map<std::string, std::vector<T>> velocity_;
};

// ---------------------------------------------------------------------------
// dataset plumbing
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> gather_batch(const Dataset& ds, const std::vector<int32_t>& idx) {
    const size_t d = ds.dims();
    std::vector<T> v(idx.size() * d);
    for (size_t r = 0; r < idx.size(); ++r) {
        const double* src = ds.images.data() + (size_t)idx[r] * d;
        for (size_t j = 0; j < d; ++j) v[r * d + j] = (T)src[j];
    }
    return Tensor<T>::from_data({idx.size(), d}, std::move(v), false);
}

inline std::vector<int32_t> gather_labels(const Dataset& ds,
                                          const std::vector<int32_t>& idx) {
    std::vector<int32_t> out(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) out[r] = ds.labels[(size_t)idx[r]];
    return out;
}

// fixed, seeded probe subset: at most 10k training indices, sorted
inline std::vector<int32_t> probe_subset_indices(size_t n, uint64_t seed) {
    std::vector<int32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    constexpr size_t kProbeMax = 10000;
    if (n <= kProbeMax) return idx;
    Rng rng(hash64(seed, 0x70726f6265ULL));  // "probe"
    rng.shuffle(idx);
    idx.resize(kProbeMax);
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <class T>
size_t count_correct(const Tensor<T>& logits, const std::vector<int32_t>& labels) {
    const size_t n = logits.dim(0), C = logits.dim(1);
    size_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
        const T* row = logits.data().data() + i * C;
        size_t best = 0;
        for (size_t c = 1; c < C; ++c)
            if (row[c] > row[best]) best = c;
        if ((int32_t)best == labels[i]) correct++;
    }
    return correct;
}

// labeled per-probe feature matrices collected over a full eval sweep
struct ProbeFeatures {
    std::vector<std::string> ids;
    std::vector<MatrixD> features;  // parallel to ids, [n x probe dim]
    std::vector<int32_t> labels;

    const MatrixD& of(const std::string& id) const {
        for (size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == id) return features[i];
        throw std::invalid_argument("probe features: no probe named " + id);
    }
};

// eval-mode sweep over the given indices: accuracy plus, optionally, probe
// features for every probe point
template <class T>
double eval_sweep(Model<T>& model, const Dataset& ds,
                  const std::vector<int32_t>& idx, ProbeFeatures* probes) {
    constexpr size_t kEvalBatch = 256;
    if (probes) {
        probes->ids = model.probe_ids();
        probes->features.clear();
        probes->labels = gather_labels(ds, idx);
    }
    size_t correct = 0;
    for (size_t start = 0; start < idx.size(); start += kEvalBatch) {
        const size_t end = std::min(idx.size(), start + kEvalBatch);
        const std::vector<int32_t> chunk(idx.begin() + start, idx.begin() + end);
        Tensor<T> x = gather_batch<T>(ds, chunk);
        ProbeCapture cap;
        Tensor<T> logits =
            model.forward(x, RunMode::Eval, probes ? &cap : nullptr);
        correct += count_correct(logits, gather_labels(ds, chunk));
        if (probes) {
            if (probes->features.empty())
                for (const auto& [id, mat] : cap.entries)
                    probes->features.emplace_back(idx.size(), mat.cols);
            for (size_t p = 0; p < cap.entries.size(); ++p) {
                const MatrixD& src = cap.entries[p].second;
                std::copy(src.v.begin(), src.v.end(),
                          probes->features[p].v.begin() +
                              start * probes->features[p].cols);
            }
        }
    }
    return idx.empty() ? 0.0 : (double)correct / (double)idx.size();
}

// ---------------------------------------------------------------------------
// Adaptive-ETF: freeze every still-trainable layer whose input features are
// NCC-separable at epsilon. Deepest layers are considered first, freezing is
// irreversible, and the frozen weight's optimizer state is discarded.
// ---------------------------------------------------------------------------
template <class T>
std::vector<std::string> adaptive_etf_update(Model<T>& model,
                                             const ProbeFeatures& probes,
                                             const MatrixD& input_features,
                                             double epsilon,
                                             SgdOptimizer<T>& opt) {
    const size_t C = model.num_classes();
    std::vector<std::string> newly_frozen;
    std::vector<std::string> order = model.freezable_layer_ids();
    std::reverse(order.begin(), order.end());

    auto frozen = model.frozen_layer_ids();
    auto is_frozen = [&](const std::string& id) {
        return std::find(frozen.begin(), frozen.end(), id) != frozen.end();
    };

    for (const std::string& id : order) {
        if (is_frozen(id)) continue;
        const std::string pid = model.input_probe_of(id);
        if (pid.empty())
            throw std::invalid_argument(
                "adaptive update: model family does not expose an input probe for " +
                id);
        const MatrixD& feats =
            pid == "input" ? input_features : probes.of(pid);
        const double err =
            ncc_error(feats, probes.labels, class_means(feats, probes.labels, C));
        if (err <= epsilon) {
            model.freeze_layer_to_etf(id);
            opt.drop(id + ".weight");
            newly_frozen.push_back(id);
        }
    }
    return newly_frozen;
}

// ---------------------------------------------------------------------------
// the training loop
// ---------------------------------------------------------------------------
template <class T>
MetricsLog train(Model<T>& model, const Dataset& train_ds,
                 const Dataset& test_ds, const TrainConfig& cfg) {
    cfg.validate();
    if (train_ds.dims() != model.input_dim())
        throw std::invalid_argument("train: dataset dims " +
                                    std::to_string(train_ds.dims()) +
                                    " vs model input " +
                                    std::to_string(model.input_dim()));
    if (cfg.adaptive_epsilon && model.family() != "mlp")
        throw std::invalid_argument(
            "train: adaptive ETF mode supports the MLP family");

    const size_t C = model.num_classes();
    SgdOptimizer<T> opt;
    MetricsLog log;
    log.probe_ids = model.probe_ids();

    const std::vector<int32_t> probe_idx =
        probe_subset_indices(train_ds.n, cfg.seed);
    std::vector<int32_t> test_idx(test_ds.n);
    std::iota(test_idx.begin(), test_idx.end(), 0);

    // raw-input NCC error never changes; evaluate it once for the adaptive rule
    MatrixD input_features;
    if (cfg.adaptive_epsilon) {
        Tensor<T> x = gather_batch<T>(train_ds, probe_idx);
        input_features = detail::rows_to_matrix(x);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);

        double loss_sum = 0.0;
        size_t correct = 0;
        for (const auto& batch : batches(train_ds, cfg.batch_size, cfg.seed, epoch)) {
            Tensor<T> x = gather_batch<T>(train_ds, batch);
            const std::vector<int32_t> y = gather_labels(train_ds, batch);
            Tensor<T> logits = model.forward(x, RunMode::Train);
            Tensor<T> loss = softmax_cross_entropy(logits, y);
            backward(loss);
            opt.step(model.trainable_params(), lr, cfg.momentum,
                     cfg.weight_decay);
            loss_sum += (double)loss.item() * (double)batch.size();
            correct += count_correct(logits, y);
        }

        const bool probing = cfg.adaptive_epsilon.has_value() ||
                             epoch % cfg.probe_interval_epochs == 0 ||
                             epoch + 1 == cfg.epochs;

        EpochRow row;
        row.epoch = epoch;
        row.lr = lr;
        row.train_loss = loss_sum / (double)train_ds.n;
        row.train_acc = (double)correct / (double)train_ds.n;

        ProbeFeatures train_probes, test_probes;
        row.test_acc = eval_sweep(model, test_ds, test_idx,
                                  probing ? &test_probes : nullptr);
        if (probing) {
            eval_sweep(model, train_ds, probe_idx, &train_probes);
            for (size_t p = 0; p < train_probes.ids.size(); ++p) {
                const MatrixD means = class_means(train_probes.features[p],
                                                  train_probes.labels, C);
                row.ncc_train.push_back(ncc_error(train_probes.features[p],
                                                  train_probes.labels, means));
                row.ncc_test.push_back(ncc_error(test_probes.features[p],
                                                 test_probes.labels, means));
            }
            if (cfg.adaptive_epsilon)
                adaptive_etf_update(model, train_probes, input_features,
                                    *cfg.adaptive_epsilon, opt);
        }

        row.trainable_params = model.trainable_param_count();
        row.frozen_layers = model.frozen_layer_ids();
        log.rows.push_back(std::move(row));
    }
    return log;
}

}  // namespace cfrg
