#pragma once

// Conflict/importance driven per-layer sparsity allocation.
//
// Scores r = alpha*c_hat - beta*m_hat go through a softmax, are mapped
// linearly into [s_min, s_max], and are then projected onto the budget
// mean(s) == s_target by alternating a uniform shift with box clipping and,
// when layers saturate, a rescaled shift restricted to the free layers.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mals/conflict.hpp"
#include "mals/error.hpp"

namespace mals {

struct AllocationConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double s_min = 0.1;
    double s_max = 0.9;
    double s_target = 0.5;
    double epsilon = 1e-6;
    int max_iterations = 100;

    void validate() const {
        auto finite = [](double v) { return std::isfinite(v); };
        if (!finite(alpha) || !finite(beta) || alpha < 0.0 || beta < 0.0) {
            throw ValidationError("alpha and beta must be finite and >= 0");
        }
        if (!finite(s_min) || !finite(s_max) || !finite(s_target)) {
            throw ValidationError("sparsity bounds and target must be finite");
        }
        if (!(0.0 <= s_min && s_min <= s_target && s_target <= s_max && s_max <= 1.0)) {
            throw ValidationError("sparsity bounds must satisfy 0 <= s_min <= s_target <= s_max <= 1");
        }
        if (!finite(epsilon) || !(epsilon > 0.0)) {
            throw ValidationError("epsilon must be finite and > 0");
        }
        if (max_iterations < 1) {
            throw ValidationError("max_iterations must be >= 1");
        }
    }

    bool operator==(const AllocationConfig&) const = default;
};

struct AllocationResult {
    std::vector<std::string> layer_ids;
    std::vector<double> c_hat;
    std::vector<double> m_hat;
    std::vector<double> r;
    std::vector<double> w;
    std::vector<double> s_initial;
    std::vector<double> s_final;
    int iterations = 0;
    bool converged = false;
};

struct ProjectionResult {
    std::vector<double> s;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline double mean_of(std::span<const double> v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
}

inline void require_non_empty_finite(std::span<const double> v, const char* what) {
    if (v.empty()) {
        throw ValidationError(std::string(what) + ": input must be non-empty");
    }
    for (double x : v) {
        if (!std::isfinite(x)) throw ValidationError(std::string(what) + ": non-finite input");
    }
}

} // namespace detail

/// (v - min) / (max - min); all zeros when every value is equal.
inline std::vector<double> min_max_normalize(std::span<const double> values) {
    detail::require_non_empty_finite(values, "min_max_normalize");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    std::vector<double> out(values.size(), 0.0);
    if (hi == lo) return out;
    const double range = hi - lo;
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) / range;
    return out;
}

/// r_l = alpha * c_hat_l - beta * m_hat_l
inline std::vector<double> allocation_scores(std::span<const double> c_hat, std::span<const double> m_hat,
                                             double alpha, double beta) {
    if (c_hat.size() != m_hat.size()) {
        throw ValidationError("allocation_scores: length mismatch (" + std::to_string(c_hat.size()) + " vs " +
                              std::to_string(m_hat.size()) + ")");
    }
    std::vector<double> r(c_hat.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = alpha * c_hat[i] - beta * m_hat[i];
    return r;
}

/// Max-shifted softmax.
inline std::vector<double> softmax_weights(std::span<const double> r) {
    detail::require_non_empty_finite(r, "softmax_weights");
    const double hi = *std::max_element(r.begin(), r.end());
    std::vector<double> w(r.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        w[i] = std::exp(r[i] - hi);
        sum += w[i];
    }
    for (double& x : w) x /= sum;
    return w;
}

/// s_l = s_min + w_l * (s_max - s_min)
inline std::vector<double> initial_sparsity(std::span<const double> w, double s_min, double s_max) {
    if (!(std::isfinite(s_min) && std::isfinite(s_max)) || s_min > s_max) {
        throw ValidationError("initial_sparsity: requires s_min <= s_max");
    }
    detail::require_non_empty_finite(w, "initial_sparsity");
    std::vector<double> s(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0.0 || w[i] > 1.0) throw ValidationError("initial_sparsity: weights must lie in [0, 1]");
        // the clamp only absorbs rounding at w == 1
        s[i] = std::clamp(s_min + w[i] * (s_max - s_min), s_min, s_max);
    }
    return s;
}

/// Iterative budget projection. Each iteration: stop if |s_target - mean(s)| <
/// epsilon; otherwise shift every layer by the residual and clip; if the
/// budget is still missed, spread the residual (scaled by L/|F|) over the free
/// layers F = {l : s_min < s_l < s_max} and clip again.
inline ProjectionResult project_to_budget(std::span<const double> s0, double s_target, double s_min, double s_max,
                                          double epsilon, int max_iterations) {
    detail::require_non_empty_finite(s0, "project_to_budget");
    if (!(std::isfinite(s_target) && std::isfinite(s_min) && std::isfinite(s_max))) {
        throw ValidationError("project_to_budget: non-finite bounds or target");
    }
    if (!(s_min <= s_target && s_target <= s_max)) {
        throw ValidationError("project_to_budget: infeasible target, requires s_min <= s_target <= s_max");
    }
    if (!(epsilon > 0.0) || !std::isfinite(epsilon) || max_iterations < 1) {
        throw ValidationError("project_to_budget: epsilon must be > 0 and max_iterations >= 1");
    }
    for (double v : s0) {
        if (v < s_min || v > s_max) {
            throw ValidationError("project_to_budget: initial sparsity outside [s_min, s_max]");
        }
    }

    const double num_layers = static_cast<double>(s0.size());
    ProjectionResult out{{s0.begin(), s0.end()}, 0, false};
    auto& s = out.s;
    auto clip = [&](double v) { return std::clamp(v, s_min, s_max); };

    for (int it = 1; it <= max_iterations; ++it) {
        out.iterations = it;
        const double delta = s_target - detail::mean_of(s);
        if (std::fabs(delta) < epsilon) {
            out.converged = true;
            return out;
        }
        for (double& v : s) v = clip(v + delta);

        const double residual = s_target - detail::mean_of(s);
        if (std::fabs(residual) >= epsilon) {
            std::size_t free_count = 0;
            for (double v : s) free_count += (s_min < v && v < s_max);
            if (free_count > 0) {
                const double shift = residual * num_layers / static_cast<double>(free_count);
                for (double& v : s) {
                    if (s_min < v && v < s_max) v = clip(v + shift);
                }
            }
        }
    }
    out.converged = std::fabs(s_target - detail::mean_of(s)) < epsilon;
    return out;
}

/// Runs the full allocation chain on a conflict report.
inline AllocationResult allocate(const ConflictReport& report, const AllocationConfig& config) {
    config.validate();
    if (report.num_layers() == 0) {
        throw ValidationError("allocate: report has no layers");
    }
    if (report.conflict.size() != report.num_layers() || report.importance.size() != report.num_layers()) {
        throw ValidationError("allocate: conflict/importance lengths do not match layer count");
    }
    AllocationResult res;
    res.layer_ids = report.layer_ids;
    res.c_hat = min_max_normalize(report.conflict);
    res.m_hat = min_max_normalize(report.importance);
    res.r = allocation_scores(res.c_hat, res.m_hat, config.alpha, config.beta);
    res.w = softmax_weights(res.r);
    res.s_initial = initial_sparsity(res.w, config.s_min, config.s_max);
    auto proj = project_to_budget(res.s_initial, config.s_target, config.s_min, config.s_max, config.epsilon,
                                  config.max_iterations);
    res.s_final = std::move(proj.s);
    res.iterations = proj.iterations;
    res.converged = proj.converged;
    return res;
}

} // namespace mals
