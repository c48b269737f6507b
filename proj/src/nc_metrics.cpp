#include "cfrg/nc_metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cfrg/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cfrg {

namespace {

void check_labels(const MatrixD& features, const std::vector<int32_t>& labels,
                  size_t C) {
    if (features.rows != labels.size())
        throw std::invalid_argument("class statistics: " +
                                    std::to_string(features.rows) +
                                    " feature rows vs " +
                                    std::to_string(labels.size()) + " labels");
    std::vector<size_t> counts(C, 0);
    for (int32_t l : labels) {
        if (l < 0 || (size_t)l >= C)
            throw std::invalid_argument("class statistics: label " +
                                        std::to_string(l) + " outside [0, " +
                                        std::to_string(C) + ")");
        counts[(size_t)l]++;
    }
    std::ostringstream absent;
    bool missing = false;
    for (size_t c = 0; c < C; ++c)
        if (counts[c] == 0) {
            absent << (missing ? ", " : "") << c;
            missing = true;
        }
    if (missing)
        throw std::invalid_argument("class statistics: classes absent: " +
                                    absent.str());
}

}  // namespace

MatrixD class_means(const MatrixD& features, const std::vector<int32_t>& labels,
                    size_t C) {
    check_labels(features, labels, C);
    const size_t d = features.cols;
    MatrixD mu(C, d);
    std::vector<size_t> counts(C, 0);
    for (size_t i = 0; i < features.rows; ++i) {
        const size_t c = (size_t)labels[i];
        counts[c]++;
        const double* f = features.row(i);
        double* m = mu.row(c);
        for (size_t j = 0; j < d; ++j) m[j] += f[j];
    }
    for (size_t c = 0; c < C; ++c) {
        const double inv = 1.0 / (double)counts[c];
        for (size_t j = 0; j < d; ++j) mu.at(c, j) *= inv;
    }
    return mu;
}

ClassStats class_statistics(const MatrixD& features,
                            const std::vector<int32_t>& labels, size_t C) {
    check_labels(features, labels, C);
    const size_t N = features.rows, d = features.cols;

    ClassStats s;
    s.C = C;
    s.d = d;
    s.counts.assign(C, 0);
    for (int32_t l : labels) s.counts[(size_t)l]++;
    s.mu = class_means(features, labels, C);

    s.mu_g.assign(d, 0.0);
    for (size_t c = 0; c < C; ++c)
        for (size_t j = 0; j < d; ++j)
            s.mu_g[j] += (double)s.counts[c] * s.mu.at(c, j);
    for (size_t j = 0; j < d; ++j) s.mu_g[j] /= (double)N;

    // within: (1/N) sum_i (h_i - mu_{c_i})(h_i - mu_{c_i})^T; rows of the
    // output split across threads, samples accumulated in ascending order
    s.sigma_w = MatrixD(d, d);
    s.sigma_b = MatrixD(d, d);
    {
        MatrixD centered(N, d);
        for (size_t i = 0; i < N; ++i) {
            const double* f = features.row(i);
            const double* m = s.mu.row((size_t)labels[i]);
            double* o = centered.row(i);
            for (size_t j = 0; j < d; ++j) o[j] = f[j] - m[j];
        }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int64_t r = 0; r < (int64_t)d; ++r) {
            double* out = s.sigma_w.row((size_t)r);
            for (size_t i = 0; i < N; ++i) {
                const double* v = centered.row(i);
                const double vr = v[(size_t)r];
                for (size_t j = 0; j < d; ++j) out[j] += vr * v[j];
            }
            const double inv = 1.0 / (double)N;
            for (size_t j = 0; j < d; ++j) out[j] *= inv;
        }
    }

    // between: sum_c (n_c/N) (mu_c - mu_g)(mu_c - mu_g)^T
    for (size_t c = 0; c < C; ++c) {
        const double w = (double)s.counts[c] / (double)N;
        for (size_t r = 0; r < d; ++r) {
            const double vr = s.mu.at(c, r) - s.mu_g[r];
            double* out = s.sigma_b.row(r);
            for (size_t j = 0; j < d; ++j)
                out[j] += w * vr * (s.mu.at(c, j) - s.mu_g[j]);
        }
    }
    return s;
}

double nc1(const ClassStats& stats) {
    double tw = 0.0, tb = 0.0;
    for (size_t j = 0; j < stats.d; ++j) {
        tw += stats.sigma_w.at(j, j);
        tb += stats.sigma_b.at(j, j);
    }
    if (tb <= 1e-15 * std::max(1.0, tw))
        throw NumericError("nc1: between-class scatter is zero");
    return tw / tb;
}

Nc2Deviation nc2(const ClassStats& stats) {
    const size_t C = stats.C, d = stats.d;
    if (C < 2) throw std::invalid_argument("nc2: need at least 2 classes");

    MatrixD centered(C, d);
    std::vector<double> norms(C);
    for (size_t c = 0; c < C; ++c) {
        double n2 = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double v = stats.mu.at(c, j) - stats.mu_g[j];
            centered.at(c, j) = v;
            n2 += v * v;
        }
        norms[c] = std::sqrt(n2);
        if (norms[c] < 1e-12)
            throw NumericError("nc2: centered class mean " + std::to_string(c) +
                               " has vanishing norm");
    }

    double mean_norm = 0.0, min_norm = norms[0], max_norm = norms[0];
    for (double n : norms) {
        mean_norm += n;
        min_norm = std::min(min_norm, n);
        max_norm = std::max(max_norm, n);
    }
    mean_norm /= (double)C;

    Nc2Deviation dev;
    dev.norm_dev = (max_norm - min_norm) / mean_norm;
    const double ideal = -1.0 / (double)(C - 1);
    for (size_t a = 0; a < C; ++a)
        for (size_t b = a + 1; b < C; ++b) {
            double dot = 0.0;
            for (size_t j = 0; j < d; ++j)
                dot += centered.at(a, j) * centered.at(b, j);
            const double cos = dot / (norms[a] * norms[b]);
            dev.angle_dev = std::max(dev.angle_dev, std::fabs(cos - ideal));
        }
    return dev;
}

double nc3(const MatrixD& classifier_weight, const ClassStats& stats) {
    const size_t C = stats.C, d = stats.d;
    if (classifier_weight.rows != C || classifier_weight.cols != d)
        throw std::invalid_argument(
            "nc3: weight is " + std::to_string(classifier_weight.rows) + " x " +
            std::to_string(classifier_weight.cols) + ", class means are " +
            std::to_string(C) + " x " + std::to_string(d));

    double wf2 = 0.0;
    for (double x : classifier_weight.v) wf2 += x * x;
    double mf2 = 0.0;
    MatrixD centered(C, d);
    for (size_t c = 0; c < C; ++c)
        for (size_t j = 0; j < d; ++j) {
            const double v = stats.mu.at(c, j) - stats.mu_g[j];
            centered.at(c, j) = v;
            mf2 += v * v;
        }
    const double wf = std::sqrt(wf2), mf = std::sqrt(mf2);
    if (wf < 1e-12) throw NumericError("nc3: classifier weight is zero");
    if (mf < 1e-12) throw NumericError("nc3: centered class means are zero");

    double dist2 = 0.0;
    for (size_t i = 0; i < C * d; ++i) {
        const double diff = classifier_weight.v[i] / wf - centered.v[i] / mf;
        dist2 += diff * diff;
    }
    return std::sqrt(dist2);
}

std::vector<int32_t> ncc_classify(const MatrixD& features, const MatrixD& means) {
    if (features.cols != means.cols)
        throw std::invalid_argument("ncc_classify: feature dim " +
                                    std::to_string(features.cols) +
                                    " vs mean dim " +
                                    std::to_string(means.cols));
    const size_t N = features.rows, C = means.rows, d = features.cols;
    std::vector<int32_t> out(N);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < (int64_t)N; ++i) {
        const double* f = features.row((size_t)i);
        int32_t best = 0;
        double best_d = 0.0;
        for (size_t c = 0; c < C; ++c) {
            const double* m = means.row(c);
            double dist = 0.0;
            for (size_t j = 0; j < d; ++j) {
                const double diff = f[j] - m[j];
                dist += diff * diff;
            }
            // ties resolve to the smallest class index via strict less-than
            if (c == 0 || dist < best_d) {
                best_d = dist;
                best = (int32_t)c;
            }
        }
        out[(size_t)i] = best;
    }
    return out;
}

double ncc_error(const MatrixD& features, const std::vector<int32_t>& labels,
                 const MatrixD& means) {
    if (features.rows != labels.size())
        throw std::invalid_argument("ncc_error: rows vs labels mismatch");
    const std::vector<int32_t> pred = ncc_classify(features, means);
    size_t wrong = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] != labels[i]) wrong++;
    return features.rows == 0 ? 0.0 : (double)wrong / (double)features.rows;
}

EffectiveDepthReport effective_depth(const std::vector<double>& per_layer_ncc_error,
                                     double epsilon) {
    if (per_layer_ncc_error.empty())
        throw std::invalid_argument("effective_depth: empty error list");
    EffectiveDepthReport r;
    r.epsilon = epsilon;
    r.per_layer_ncc_error = per_layer_ncc_error;
    r.l0 = per_layer_ncc_error.size();  // L when separability is never reached
    for (size_t i = 0; i < per_layer_ncc_error.size(); ++i)
        if (per_layer_ncc_error[i] <= epsilon) {
            r.l0 = i + 1;
            break;
        }
    return r;
}

}  // namespace cfrg
