#pragma once

#include <cstdint>
#include <vector>

#include "cfrg/matrix.hpp"

namespace cfrg {

// Per-class first and second moments of a feature batch. Scatter matrices use
// the empirical 1/N normalization, so sigma_w + sigma_b equals the total
// covariance about the global mean.
struct ClassStats {
    size_t C = 0;
    size_t d = 0;
    MatrixD mu;                    // C x d class means
    std::vector<double> mu_g;      // d, global mean
    MatrixD sigma_w;               // d x d within-class
    MatrixD sigma_b;               // d x d between-class
    std::vector<size_t> counts;    // per class
};

struct Nc2Deviation {
    double norm_dev = 0.0;   // max pair | ||m_c|| - ||m_c'|| | / mean norm
    double angle_dev = 0.0;  // max pair | cos(m_c, m_c') + 1/(C-1) |
};

struct NcReport {
    double nc1 = 0.0;
    double nc2_norm_dev = 0.0;
    double nc2_angle_dev = 0.0;
    double nc3 = 0.0;
    double nc4_error = 0.0;
};

struct EffectiveDepthReport {
    double epsilon = 0.0;
    std::vector<double> per_layer_ncc_error;
    size_t l0 = 0;  // 1-based; L when no layer reaches epsilon
};

ClassStats class_statistics(const MatrixD& features,
                            const std::vector<int32_t>& labels, size_t C);

// means only; the per-epoch NCC path does not need the d x d scatters
MatrixD class_means(const MatrixD& features, const std::vector<int32_t>& labels,
                    size_t C);

double nc1(const ClassStats& stats);

Nc2Deviation nc2(const ClassStats& stats);

double nc3(const MatrixD& classifier_weight, const ClassStats& stats);

std::vector<int32_t> ncc_classify(const MatrixD& features, const MatrixD& means);

double ncc_error(const MatrixD& features, const std::vector<int32_t>& labels,
                 const MatrixD& means);

EffectiveDepthReport effective_depth(const std::vector<double>& per_layer_ncc_error,
                                     double epsilon);

}  // namespace cfrg
