#pragma once

#include <string>

#include "cfrg/matrix.hpp"

namespace cfrg {

// k x C simplex equiangular tight frame: unit columns, all pairwise inner
// products -1/(C-1), Gram identity M^T M = C/(C-1) (I - 11^T/C), rank C-1.
struct EtfMatrix {
    size_t k = 0;
    size_t C = 0;
    MatrixD entries;  // k x C
};

struct EtfVerification {
    size_t k = 0;
    size_t C = 0;
    double max_norm_dev = 0.0;     // max_c | ||m_c||_2 - 1 |
    double max_offdiag_dev = 0.0;  // max_{c!=c'} | <m_c, m_c'> + 1/(C-1) |
    double max_gram_dev = 0.0;     // max elementwise | G - C/(C-1)(I - 11^T/C) |
    double kernel_residual = 0.0;  // || G 1 ||_inf; the all-ones vector spans the null space
    bool pass = false;
};

enum class EtfOrientation { Direct, Transposed };

// Fixed-weight recipe for an ETF-frozen d_in -> d_out linear layer. The frame
// always has C = min(d_in, d_out) vectors living in the larger dimension:
// d_out <= d_in places the frame vectors in the rows (weight = scale * M^T),
// otherwise in the columns (weight = scale * M).
struct EtfLayerSpec {
    size_t d_in = 0;
    size_t d_out = 0;
    EtfOrientation orientation = EtfOrientation::Transposed;
    double scale = 1.0;

    static EtfLayerSpec make(size_t d_in, size_t d_out, double scale = 1.0);
    size_t frame_count() const { return d_in < d_out ? d_in : d_out; }
};

EtfMatrix build_simplex_etf(size_t k, size_t C);

EtfVerification verify_etf(const MatrixD& M, double tol);

MatrixD etf_layer_weight(const EtfLayerSpec& spec);

// Recover the k x C frame matrix (scale divided out) from a frozen weight,
// ready for verify_etf.
MatrixD frame_from_weight(const MatrixD& weight, const EtfLayerSpec& spec);

// Numerical rank by Gaussian elimination with partial pivoting; pivots below
// rel_tol * max|entry| count as zero.
size_t matrix_rank(MatrixD m, double rel_tol = 1e-9);

std::string format_verification(const EtfVerification& r);

}  // namespace cfrg
