#pragma once

// Task-vector merging: magnitude sparsification, sign election, disjoint
// merging, and composition with the base checkpoint. Four methods share this
// pipeline: mals (adaptive per-layer sparsity), uniform_sparsity (one level
// for every layer), ties (uniform trim with election forced on), and
// simple_average (no sparsification).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mals/allocator.hpp"
#include "mals/conflict.hpp"
#include "mals/error.hpp"
#include "mals/grouping.hpp"
#include "mals/parallel.hpp"
#include "mals/task_vector.hpp"
#include "mals/tensor.hpp"

namespace mals {

enum class MergeMethod { Mals, SimpleAverage, UniformSparsity, Ties };

inline std::string_view method_name(MergeMethod m) {
    switch (m) {
    case MergeMethod::Mals: return "mals";
    case MergeMethod::SimpleAverage: return "simple_average";
    case MergeMethod::UniformSparsity: return "uniform_sparsity";
    case MergeMethod::Ties: return "ties";
    }
    return "unknown";
}

inline MergeMethod parse_method(std::string_view name) {
    if (name == "mals") return MergeMethod::Mals;
    if (name == "simple_average") return MergeMethod::SimpleAverage;
    if (name == "uniform_sparsity") return MergeMethod::UniformSparsity;
    if (name == "ties") return MergeMethod::Ties;
    throw ValidationError("unknown merge method '" + std::string(name) +
                          "' (expected mals, simple_average, uniform_sparsity or ties)");
}

struct MergeConfig {
    MergeMethod method = MergeMethod::Mals;
    double lambda = 1.0;
    bool sign_election = true;
    AllocationConfig allocation;
    std::string grouping_pattern{kDefaultLayerPattern};

    /// Allocation settings actually used: uniform_sparsity and ties ignore the
    /// bounds and pin every layer to s_target.
    AllocationConfig effective_allocation() const {
        AllocationConfig a = allocation;
        if (method == MergeMethod::UniformSparsity || method == MergeMethod::Ties) {
            a.s_min = a.s_target;
            a.s_max = a.s_target;
        }
        return a;
    }

    void validate() const {
        if (!std::isfinite(lambda) || !(lambda > 0.0)) {
            throw ValidationError("lambda must be finite and > 0");
        }
        effective_allocation().validate();
    }
};

/// Elected sign per flat position: -1, 0 or +1.
using SignVector = std::vector<std::int8_t>;

/// Number of entries kept at sparsity s on a length-n vector:
/// ceil((1 - s) * n), with products within 1e-9 of an integer snapped to it so
/// that e.g. s = 0.7, n = 10 keeps 3 rather than 4.
inline std::size_t keep_count(std::size_t n, double s) {
    if (!(s >= 0.0 && s <= 1.0)) {
        throw ValidationError("sparsity must lie in [0, 1], got " + std::to_string(s));
    }
    if (s == 1.0 || n == 0) return 0;
    const double exact = (1.0 - s) * static_cast<double>(n);
    const double nearest = std::round(exact);
    const double k = std::fabs(exact - nearest) <= 1e-9 * std::max(1.0, exact) ? nearest : std::ceil(exact);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(n)));
}

/// Keeps the keep_count(n, s) largest-magnitude entries and zeroes the rest.
/// Equal magnitudes keep the lower index first.
template <std::floating_point T>
std::vector<T> sparsify_top_fraction(std::span<const T> v, double s) {
    const std::size_t keep = keep_count(v.size(), s);
    if (keep == v.size()) return {v.begin(), v.end()};
    std::vector<T> out(v.size(), T(0));
    if (keep == 0) return out;

    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto ranks_before = [&](std::size_t a, std::size_t b) {
        const T ma = std::fabs(v[a]);
        const T mb = std::fabs(v[b]);
        return ma != mb ? ma > mb : a < b;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), ranks_before);
    for (std::size_t i = 0; i < keep; ++i) out[order[i]] = v[order[i]];
    return out;
}

template <std::floating_point T>
std::vector<T> sparsify_top_fraction(const std::vector<T>& v, double s) {
    return sparsify_top_fraction(std::span<const T>(v), s);
}

namespace detail {

template <std::floating_point T>
std::size_t common_length(const std::vector<std::vector<T>>& vectors, const char* what) {
    if (vectors.empty()) {
        throw ValidationError(std::string(what) + ": at least one vector is required");
    }
    const std::size_t n = vectors.front().size();
    for (const auto& v : vectors) {
        if (v.size() != n) {
            throw ValidationError(std::string(what) + ": length mismatch (" + std::to_string(v.size()) + " vs " +
                                  std::to_string(n) + ")");
        }
    }
    return n;
}

template <std::floating_point T>
std::int8_t sign_of(T v) {
    return static_cast<std::int8_t>((v > T(0)) - (v < T(0)));
}

} // namespace detail

/// gamma_k = sign(sum_i v_ik); an exact zero sum elects 0.
template <std::floating_point T>
SignVector elect_signs(const std::vector<std::vector<T>>& sparsified) {
    const std::size_t n = detail::common_length(sparsified, "elect_signs");
    SignVector signs(n, 0);
    for (std::size_t k = 0; k < n; ++k) {
        double sum = 0.0;
        for (const auto& v : sparsified) sum += static_cast<double>(v[k]);
        signs[k] = static_cast<std::int8_t>((sum > 0.0) - (sum < 0.0));
    }
    return signs;
}

/// Mean of the nonzero entries at each position.
template <std::floating_point T>
std::vector<T> disjoint_merge(const std::vector<std::vector<T>>& sparsified) {
    const std::size_t n = detail::common_length(sparsified, "disjoint_merge");
    std::vector<T> out(n, T(0));
    for (std::size_t k = 0; k < n; ++k) {
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& v : sparsified) {
            if (v[k] != T(0)) {
                sum += static_cast<double>(v[k]);
                ++count;
            }
        }
        if (count > 0) out[k] = static_cast<T>(sum / static_cast<double>(count));
    }
    return out;
}

/// Mean of the nonzero entries whose sign matches the elected sign; 0 where
/// the elected sign is 0 or no entry agrees.
template <std::floating_point T>
std::vector<T> disjoint_merge(const std::vector<std::vector<T>>& sparsified, std::span<const std::int8_t> signs) {
    const std::size_t n = detail::common_length(sparsified, "disjoint_merge");
    if (signs.size() != n) {
        throw ValidationError("disjoint_merge: sign vector has " + std::to_string(signs.size()) +
                              " entries, expected " + std::to_string(n));
    }
    std::vector<T> out(n, T(0));
    for (std::size_t k = 0; k < n; ++k) {
        if (signs[k] == 0) continue;
        double sum = 0.0;
        std::size_t count = 0;
        for (const auto& v : sparsified) {
            if (v[k] != T(0) && detail::sign_of(v[k]) == signs[k]) {
                sum += static_cast<double>(v[k]);
                ++count;
            }
        }
        if (count > 0) out[k] = static_cast<T>(sum / static_cast<double>(count));
    }
    return out;
}

/// out[k] = base[k] + lambda * tau[k], evaluated in double.
template <std::floating_point T>
BasicTensorMap<T> compose_merged(const BasicTensorMap<T>& base, const BasicTaskVector<T>& tau, double lambda) {
    if (!std::isfinite(lambda)) {
        throw ValidationError("compose_merged: lambda must be finite");
    }
    if (auto mm = first_mismatch(base, tau.deltas)) {
        throw ValidationError("compose_merged: task vector incompatible at '" + mm->key + "': " + mm->reason);
    }
    BasicTensorMap<T> out;
    for (const auto& [name, b] : base) {
        const auto& d = tau.deltas.at(name);
        std::vector<T> data(b.numel());
        for (std::size_t k = 0; k < data.size(); ++k) {
            data[k] = static_cast<T>(static_cast<double>(b.data[k]) + lambda * static_cast<double>(d.data[k]));
        }
        BasicTensor<T> t(b.shape, std::move(data));
        validate_tensor(t, name);
        out.insert(name, std::move(t));
    }
    return out;
}

/// tau_k = (1/T) * sum_i tau_ik
template <std::floating_point T>
BasicTaskVector<T> simple_average(const std::vector<BasicTaskVector<T>>& tasks) {
    if (tasks.empty()) {
        throw ValidationError("simple_average: at least one task vector is required");
    }
    for (const auto& tv : tasks) {
        if (auto mm = first_mismatch(tasks.front().deltas, tv.deltas)) {
            throw ValidationError("simple_average: task vector '" + tv.label + "' incompatible at '" + mm->key +
                                  "': " + mm->reason);
        }
    }
    const double count = static_cast<double>(tasks.size());
    BasicTaskVector<T> out{"simple_average", {}};
    for (const auto& [name, first] : tasks.front().deltas) {
        std::vector<T> data(first.numel());
        for (std::size_t k = 0; k < data.size(); ++k) {
            double sum = 0.0;
            for (const auto& tv : tasks) sum += static_cast<double>(tv.deltas.at(name).data[k]);
            data[k] = static_cast<T>(sum / count);
        }
        out.deltas.insert(name, BasicTensor<T>(first.shape, std::move(data)));
    }
    return out;
}

template <std::floating_point T>
struct BasicMergeOutput {
    BasicTensorMap<T> merged;
    BasicTaskVector<T> tau_merged;
    std::optional<AllocationResult> allocation; // absent for simple_average
    std::optional<ConflictReport> conflict;     // absent for simple_average
    LayerGrouping grouping;                     // empty for simple_average
    std::string method;
};

using MergeOutput = BasicMergeOutput<float>;

/// Merge from precomputed task vectors (all compatible with `base`).
template <std::floating_point T>
BasicMergeOutput<T> merge_task_vectors(const BasicTensorMap<T>& base, const std::vector<BasicTaskVector<T>>& tasks,
                                       const MergeConfig& config, unsigned threads = 1) {
    config.validate();
    if (tasks.empty()) {
        throw ValidationError("merge: at least one tuned checkpoint is required");
    }
    check_task_vectors(base, tasks);

    BasicMergeOutput<T> out;
    out.method = std::string(method_name(config.method));

    if (config.method == MergeMethod::SimpleAverage) {
        out.tau_merged = simple_average(tasks);
        out.tau_merged.label = "merged";
        out.merged = compose_merged(base, out.tau_merged, config.lambda);
        return out;
    }

    out.grouping = group_layers(base, config.grouping_pattern);
    out.conflict = layer_conflict(tasks, out.grouping, threads);

    const AllocationConfig alloc_cfg = config.effective_allocation();
    out.allocation = allocate(*out.conflict, alloc_cfg);
    if (!out.allocation->converged) {
        throw NumericalError("sparsity allocation did not converge within " +
                             std::to_string(alloc_cfg.max_iterations) + " iterations");
    }
    const bool elect = config.method == MergeMethod::Ties || config.sign_election;

    out.tau_merged.label = "merged";
    for (const auto& [name, b] : base) {
        out.tau_merged.deltas.insert(name, BasicTensor<T>(b.shape, std::vector<T>(b.numel(), T(0))));
    }

    const auto& s_final = out.allocation->s_final;
    parallel_for(out.grouping.size(), threads, [&](std::size_t l) {
        const auto& group = out.grouping.groups[l];
        std::vector<std::vector<T>> sparse;
        sparse.reserve(tasks.size());
        for (const auto& tv : tasks) {
            const auto flat = flatten_group(tv.deltas, group.members);
            sparse.push_back(sparsify_top_fraction(std::span<const T>(flat), s_final[l]));
        }
        std::vector<T> merged_flat;
        if (elect) {
            const auto signs = elect_signs(sparse);
            merged_flat = disjoint_merge(sparse, std::span<const std::int8_t>(signs));
        } else {
            merged_flat = disjoint_merge(sparse);
        }
        scatter_group(out.tau_merged.deltas, group.members, std::span<const T>(merged_flat));
    });

    out.merged = compose_merged(base, out.tau_merged, config.lambda);
    return out;
}

/// Full pipeline from checkpoints: validate, compute task vectors, merge.
template <std::floating_point T>
BasicMergeOutput<T> merge(const BasicTensorMap<T>& base, const std::vector<BasicTensorMap<T>>& tuned,
                          const MergeConfig& config, unsigned threads = 1) {
    const auto compat = validate_compatibility(base, tuned);
    if (const auto* bad = compat.first_failure()) {
        throw ValidationError("tuned checkpoint " + std::to_string(bad->index) + " incompatible with base at '" +
                              bad->offending_key + "': " + bad->reason);
    }
    std::vector<BasicTaskVector<T>> tasks;
    tasks.reserve(tuned.size());
    for (std::size_t i = 0; i < tuned.size(); ++i) {
        tasks.push_back(compute_task_vector(base, tuned[i], "task_" + std::to_string(i)));
    }
    return merge_task_vectors(base, tasks, config, threads);
}

} // namespace mals
