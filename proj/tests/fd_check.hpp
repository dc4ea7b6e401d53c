#pragma once

// Finite-difference oracles. These evaluate objective values only, never the
// gradient path they are checking.

#include <cmath>
#include <functional>

#include "peso/param_vector.hpp"

namespace peso::testing {

using ScalarFn = std::function<double(const ParamVector&)>;

/// Central-difference gradient of f at x, coordinate by coordinate.
inline ParamVector fd_gradient(const ScalarFn& f, const ParamVector& x, double step) {
    ParamVector grad = ParamVector::zeros_like(x);
    ParamVector probe = x;
    for (std::size_t g = 0; g < x.group_count(); ++g) {
        for (std::size_t i = 0; i < x.group(g).values.size(); ++i) {
            const double orig = x.group(g).values[i];
            probe.group(g).values[i] = orig + step;
            const double fp = f(probe);
            probe.group(g).values[i] = orig - step;
            const double fm = f(probe);
            probe.group(g).values[i] = orig;
            grad.group(g).values[i] = (fp - fm) / (2.0 * step);
        }
    }
    return grad;
}

struct FdReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t worst_group = 0;
    std::size_t worst_index = 0;
};

/// Relative error with an absolute floor so near-zero coordinates compare on
/// absolute terms.
inline FdReport compare_gradients(const ParamVector& analytic, const ParamVector& fd,
                                  double abs_floor) {
    FdReport report;
    for (std::size_t g = 0; g < analytic.group_count(); ++g) {
        for (std::size_t i = 0; i < analytic.group(g).values.size(); ++i) {
            const double a = analytic.group(g).values[i];
            const double b = fd.group(g).values[i];
            const double abs_err = std::abs(a - b);
            const double denom = std::max({std::abs(a), std::abs(b), abs_floor});
            const double rel = abs_err / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_group = g;
                report.worst_index = i;
            }
            report.max_abs_err = std::max(report.max_abs_err, abs_err);
        }
    }
    return report;
}

}  // namespace peso::testing
