#include "cfrg/etf.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "cfrg/common.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cfrg {

EtfLayerSpec EtfLayerSpec::make(size_t d_in, size_t d_out, double scale) {
    if (d_in < 2 || d_out < 2)
        throw std::invalid_argument("EtfLayerSpec: widths must be >= 2, got " +
                                    std::to_string(d_in) + " -> " +
                                    std::to_string(d_out));
    if (scale <= 0.0)
        throw std::invalid_argument("EtfLayerSpec: scale must be positive");
    EtfLayerSpec s;
    s.d_in = d_in;
    s.d_out = d_out;
    s.orientation = d_out <= d_in ? EtfOrientation::Transposed
                                  : EtfOrientation::Direct;
    s.scale = scale;
    return s;
}

EtfMatrix build_simplex_etf(size_t k, size_t C) {
    if (C < 2)
        throw std::invalid_argument("build_simplex_etf: need at least 2 frame vectors, got " +
                                    std::to_string(C));
    if (C > k)
        throw std::invalid_argument("build_simplex_etf: ambient dimension too small (k=" +
                                    std::to_string(k) + " < C=" + std::to_string(C) + ")");
    EtfMatrix m;
    m.k = k;
    m.C = C;
    m.entries = MatrixD(k, C);
    // sqrt(C/(C-1)) * P (I - 11^T/C); P selects the first C identity columns,
    // so rows C..k-1 stay zero.
    const double s = std::sqrt((double)C / (double)(C - 1));
    const double off = -1.0 / (double)C;
    for (size_t r = 0; r < C; ++r)
        for (size_t c = 0; c < C; ++c)
            m.entries.at(r, c) = s * ((r == c ? 1.0 : 0.0) + off);
    return m;
}

EtfVerification verify_etf(const MatrixD& M, double tol) {
    const size_t k = M.rows, C = M.cols;
    if (C < 2 || k < C)
        throw std::invalid_argument("verify_etf: expected k x C with k >= C >= 2, got " +
                                    std::to_string(k) + " x " + std::to_string(C));

    // Gram in double; parallel over output rows, summation k-ascending.
    MatrixD G(C, C);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t i = 0; i < (int64_t)C; ++i) {
        for (size_t t = 0; t < k; ++t) {
            const double a = M.at(t, (size_t)i);
            const double* mrow = M.row(t);
            double* grow = G.row((size_t)i);
            for (size_t j = 0; j < C; ++j) grow[j] += a * mrow[j];
        }
    }

    EtfVerification r;
    r.k = k;
    r.C = C;
    const double ideal_off = -1.0 / (double)(C - 1);
    const double ideal_diag = (double)C / (double)(C - 1) * (1.0 - 1.0 / (double)C);
    for (size_t i = 0; i < C; ++i) {
        double rowsum = 0.0;
        for (size_t j = 0; j < C; ++j) {
            const double g = G.at(i, j);
            rowsum += g;
            if (i == j) {
                const double norm = std::sqrt(std::max(0.0, g));
                r.max_norm_dev = std::max(r.max_norm_dev, std::fabs(norm - 1.0));
                r.max_gram_dev = std::max(r.max_gram_dev, std::fabs(g - ideal_diag));
            } else {
                r.max_offdiag_dev =
                    std::max(r.max_offdiag_dev, std::fabs(g - ideal_off));
                r.max_gram_dev = std::max(r.max_gram_dev, std::fabs(g - ideal_off));
            }
        }
        r.kernel_residual = std::max(r.kernel_residual, std::fabs(rowsum));
    }
    r.pass = r.max_norm_dev <= tol && r.max_offdiag_dev <= tol &&
             r.max_gram_dev <= tol;
    return r;
}

MatrixD etf_layer_weight(const EtfLayerSpec& spec) {
    if (spec.d_in < 2 || spec.d_out < 2)
        throw std::invalid_argument("etf_layer_weight: widths must be >= 2");
    MatrixD w(spec.d_out, spec.d_in);
    if (spec.orientation == EtfOrientation::Transposed) {
        // frame vectors are the rows: weight = scale * M^T, M = etf(d_in, d_out)
        EtfMatrix m = build_simplex_etf(spec.d_in, spec.d_out);
        for (size_t r = 0; r < spec.d_out; ++r)
            for (size_t c = 0; c < spec.d_in; ++c)
                w.at(r, c) = spec.scale * m.entries.at(c, r);
    } else {
        // frame vectors are the columns: weight = scale * M, M = etf(d_out, d_in)
        EtfMatrix m = build_simplex_etf(spec.d_out, spec.d_in);
        for (size_t r = 0; r < spec.d_out; ++r)
            for (size_t c = 0; c < spec.d_in; ++c)
                w.at(r, c) = spec.scale * m.entries.at(r, c);
    }
    return w;
}

MatrixD frame_from_weight(const MatrixD& weight, const EtfLayerSpec& spec) {
    if (weight.rows != spec.d_out || weight.cols != spec.d_in)
        throw std::invalid_argument("frame_from_weight: weight is " +
                                    std::to_string(weight.rows) + " x " +
                                    std::to_string(weight.cols) +
                                    ", spec says " + std::to_string(spec.d_out) +
                                    " x " + std::to_string(spec.d_in));
    const double inv = 1.0 / spec.scale;
    if (spec.orientation == EtfOrientation::Transposed) {
        MatrixD f(spec.d_in, spec.d_out);
        for (size_t i = 0; i < f.rows; ++i)
            for (size_t j = 0; j < f.cols; ++j)
                f.at(i, j) = weight.at(j, i) * inv;
        return f;
    }
    MatrixD f(spec.d_out, spec.d_in);
    for (size_t i = 0; i < f.rows; ++i)
        for (size_t j = 0; j < f.cols; ++j) f.at(i, j) = weight.at(i, j) * inv;
    return f;
}

size_t matrix_rank(MatrixD m, double rel_tol) {
    double max_abs = 0.0;
    for (double x : m.v) max_abs = std::max(max_abs, std::fabs(x));
    if (max_abs == 0.0) return 0;
    const double thresh = rel_tol * max_abs;

    size_t rank = 0;
    size_t lead = 0;
    for (size_t col = 0; col < m.cols && lead < m.rows; ++col) {
        size_t pivot = lead;
        for (size_t r = lead + 1; r < m.rows; ++r)
            if (std::fabs(m.at(r, col)) > std::fabs(m.at(pivot, col))) pivot = r;
        if (std::fabs(m.at(pivot, col)) <= thresh) continue;
        if (pivot != lead)
            for (size_t c = col; c < m.cols; ++c)
                std::swap(m.at(pivot, c), m.at(lead, c));
        const double inv = 1.0 / m.at(lead, col);
        for (size_t r = lead + 1; r < m.rows; ++r) {
            const double f = m.at(r, col) * inv;
            if (f == 0.0) continue;
            for (size_t c = col; c < m.cols; ++c) m.at(r, c) -= f * m.at(lead, c);
        }
        ++lead;
        ++rank;
    }
    return rank;
}

std::string format_verification(const EtfVerification& r) {
    std::ostringstream os;
    os << "frame " << r.k << " x " << r.C
       << ": norm dev " << r.max_norm_dev
       << ", off-diagonal dev " << r.max_offdiag_dev
       << ", gram dev " << r.max_gram_dev
       << ", kernel residual " << r.kernel_residual
       << " -> " << (r.pass ? "pass" : "FAIL");
    return os.str();
}

}  // namespace cfrg
