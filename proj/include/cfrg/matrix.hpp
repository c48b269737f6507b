#pragma once

#include <cstddef>
#include <vector>

namespace cfrg {

// Small dense row-major double matrix used by the verification and metrics
// paths, which run in 64-bit regardless of the training precision.
struct MatrixD {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> v;

    MatrixD() = default;
    MatrixD(size_t r, size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

    double& at(size_t i, size_t j) { return v[i * cols + j]; }
    double at(size_t i, size_t j) const { return v[i * cols + j]; }
    double* row(size_t i) { return v.data() + i * cols; }
    const double* row(size_t i) const { return v.data() + i * cols; }
    size_t numel() const { return v.size(); }
};

}  // namespace cfrg
