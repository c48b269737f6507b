#pragma once

// Central finite-difference oracle for gradient checks. Kept independent of
// the autodiff path: callers provide a loss closure that re-runs a forward
// pass from scratch; this file only nudges raw values and differences losses.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

namespace fd {

// relative error with an absolute floor: |a-n| / max(floor, |a|, |n|)
inline double rel_err(double analytic, double numeric, double floor = 1.0) {
    const double denom =
        std::max(floor, std::max(std::fabs(analytic), std::fabs(numeric)));
    return std::fabs(analytic - numeric) / denom;
}

// d loss / d value[i] by central differences, step h, for every entry
template <class T>
std::vector<double> grad(std::vector<T>& values,
                         const std::function<double()>& loss,
                         double h = 1e-5) {
    std::vector<double> g(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        const T orig = values[i];
        values[i] = (T)((double)orig + h);
        const double up = loss();
        values[i] = (T)((double)orig - h);
        const double down = loss();
        values[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// worst relative error between an analytic gradient and the oracle
template <class T>
double max_rel_err(const std::vector<T>& analytic, std::vector<T>& values,
                   const std::function<double()>& loss, double h = 1e-5,
                   double floor = 1.0) {
    const std::vector<double> numeric = grad(values, loss, h);
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, rel_err((double)analytic[i], numeric[i], floor));
    return worst;
}

}  // namespace fd
