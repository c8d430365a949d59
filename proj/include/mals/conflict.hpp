#pragma once

// Layerwise inter-task conflict and layer importance.
//
// For a pair of task vectors restricted to one layer, conflict combines the
// absolute Pearson correlation and the sign-disagreement ratio with equal
// weight; the layer score averages that over all task pairs. Importance is
// the mean absolute delta in the layer, averaged over tasks. Every reduction
// accumulates in double and runs in a fixed sequential order per layer.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mals/error.hpp"
#include "mals/grouping.hpp"
#include "mals/parallel.hpp"
#include "mals/task_vector.hpp"

namespace mals {

/// |Pearson correlation| of x and y; 0 when either side has zero variance.
template <std::floating_point T>
double pearson_abs(std::span<const T> x, std::span<const T> y) {
    if (x.size() != y.size()) {
        throw ValidationError("pearson_abs: length mismatch (" + std::to_string(x.size()) + " vs " +
                              std::to_string(y.size()) + ")");
    }
    if (x.empty()) {
        throw ValidationError("pearson_abs: vectors must be non-empty");
    }
    // Streaming co-moment update on deviations from the running means. The
    // (n-1)/n * dx * dy form keeps the result exactly symmetric in x and y.
    double mean_x = 0.0, mean_y = 0.0;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double n = static_cast<double>(k + 1);
        const double dx = static_cast<double>(x[k]) - mean_x;
        const double dy = static_cast<double>(y[k]) - mean_y;
        const double f = (n - 1.0) / n;
        sxx += f * dx * dx;
        syy += f * dy * dy;
        sxy += f * (dx * dy);
        mean_x += dx / n;
        mean_y += dy / n;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return 0.0;
    const double rho = sxy / (std::sqrt(sxx) * std::sqrt(syy));
    return std::clamp(std::fabs(rho), 0.0, 1.0);
}

template <std::floating_point T>
double pearson_abs(const std::vector<T>& x, const std::vector<T>& y) {
    return pearson_abs(std::span<const T>(x), std::span<const T>(y));
}

/// 2 * #{opposite signs} / (#nonzero(x) + #nonzero(y)); 0 when both are all zero.
template <std::floating_point T>
double sign_disagreement(std::span<const T> x, std::span<const T> y) {
    if (x.size() != y.size()) {
        throw ValidationError("sign_disagreement: length mismatch (" + std::to_string(x.size()) + " vs " +
                              std::to_string(y.size()) + ")");
    }
    std::uint64_t opposite = 0, nz_x = 0, nz_y = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const bool px = x[k] > 0, nx = x[k] < 0;
        const bool py = y[k] > 0, ny = y[k] < 0;
        nz_x += (px || nx);
        nz_y += (py || ny);
        opposite += (px && ny) || (nx && py);
    }
    const std::uint64_t denom = nz_x + nz_y;
    if (denom == 0) return 0.0;
    return 2.0 * static_cast<double>(opposite) / static_cast<double>(denom);
}

template <std::floating_point T>
double sign_disagreement(const std::vector<T>& x, const std::vector<T>& y) {
    return sign_disagreement(std::span<const T>(x), std::span<const T>(y));
}

/// Per-layer metrics for one task pair (i < j).
struct PairConflict {
    std::size_t i = 0;
    std::size_t j = 0;
    std::vector<double> rho_abs;           // per layer
    std::vector<double> sign_disagreement; // per layer
};

struct ConflictReport {
    std::vector<std::string> layer_ids;
    std::vector<double> conflict;   // c_l in [0, 1]
    std::vector<double> importance; // m_l >= 0
    std::vector<PairConflict> pairs;

    std::size_t num_layers() const { return layer_ids.size(); }
};

namespace detail {

template <std::floating_point T>
double mean_abs(std::span<const T> v) {
    if (v.empty()) return 0.0;
    double sum = 0.0;
    for (T x : v) sum += std::fabs(static_cast<double>(x));
    return sum / static_cast<double>(v.size());
}

template <std::floating_point T>
void check_layer_inputs(const std::vector<BasicTaskVector<T>>& tasks, const LayerGrouping& grouping) {
    if (tasks.empty()) {
        throw ValidationError("at least one task vector is required");
    }
    for (const auto& tv : tasks) {
        check_partition(grouping, tv.deltas);
        if (auto mm = first_mismatch(tasks.front().deltas, tv.deltas)) {
            throw ValidationError("task vector '" + tv.label + "' incompatible at '" + mm->key + "': " + mm->reason);
        }
    }
}

template <std::floating_point T>
std::vector<std::vector<T>> flatten_tasks(const std::vector<BasicTaskVector<T>>& tasks, const LayerGroup& group) {
    std::vector<std::vector<T>> flats;
    flats.reserve(tasks.size());
    for (const auto& tv : tasks) flats.push_back(flatten_group(tv.deltas, group.members));
    return flats;
}

template <std::floating_point T>
double importance_of(const std::vector<std::vector<T>>& flats) {
    double sum = 0.0;
    for (const auto& f : flats) sum += mean_abs(std::span<const T>(f));
    return sum / static_cast<double>(flats.size());
}

} // namespace detail

/// m_l = (1/T) * sum_i mean(|tau_i^l|), on dense task vectors.
template <std::floating_point T>
std::vector<double> layer_importance(const std::vector<BasicTaskVector<T>>& tasks, const LayerGrouping& grouping,
                                     unsigned threads = 1) {
    detail::check_layer_inputs(tasks, grouping);
    std::vector<double> m(grouping.size(), 0.0);
    parallel_for(grouping.size(), threads, [&](std::size_t l) {
        m[l] = detail::importance_of(detail::flatten_tasks(tasks, grouping.groups[l]));
    });
    return m;
}

/// Conflict score per layer (mean over pairs of 0.5|rho| + 0.5 d), plus
/// importance and the per-pair detail. With one task every c_l is 0.
template <std::floating_point T>
ConflictReport layer_conflict(const std::vector<BasicTaskVector<T>>& tasks, const LayerGrouping& grouping,
                              unsigned threads = 1) {
    detail::check_layer_inputs(tasks, grouping);
    const std::size_t num_tasks = tasks.size();
    const std::size_t num_layers = grouping.size();

    ConflictReport report;
    report.layer_ids = grouping.ids();
    report.conflict.assign(num_layers, 0.0);
    report.importance.assign(num_layers, 0.0);
    for (std::size_t i = 0; i < num_tasks; ++i) {
        for (std::size_t j = i + 1; j < num_tasks; ++j) {
            report.pairs.push_back({i, j, std::vector<double>(num_layers, 0.0), std::vector<double>(num_layers, 0.0)});
        }
    }

    parallel_for(num_layers, threads, [&](std::size_t l) {
        const auto flats = detail::flatten_tasks(tasks, grouping.groups[l]);
        report.importance[l] = detail::importance_of(flats);
        if (report.pairs.empty()) return;
        double total = 0.0;
        for (auto& pair : report.pairs) {
            const std::span<const T> a(flats[pair.i]);
            const std::span<const T> b(flats[pair.j]);
            const double rho = a.empty() ? 0.0 : pearson_abs(a, b);
            const double d = sign_disagreement(a, b);
            pair.rho_abs[l] = rho;
            pair.sign_disagreement[l] = d;
            total += 0.5 * rho + 0.5 * d;
        }
        report.conflict[l] = std::clamp(total / static_cast<double>(report.pairs.size()), 0.0, 1.0);
    });
    return report;
}

} // namespace mals
