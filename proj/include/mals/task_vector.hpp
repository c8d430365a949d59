#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mals/error.hpp"
#include "mals/tensor.hpp"

namespace mals {

/// Per-tensor weight delta of one fine-tuned checkpoint against the base.
template <std::floating_point T>
struct BasicTaskVector {
    std::string label;
    BasicTensorMap<T> deltas;
};

using TaskVector = BasicTaskVector<float>;

/// First key (in lexicographic order over the union of names) on which two
/// maps disagree, or nullopt when key sets and shapes match.
struct Mismatch {
    std::string key;
    std::string reason;
};

template <std::floating_point A, std::floating_point B>
std::optional<Mismatch> first_mismatch(const BasicTensorMap<A>& base, const BasicTensorMap<B>& other) {
    auto ia = base.begin();
    auto ib = other.begin();
    while (ia != base.end() || ib != other.end()) {
        if (ib == other.end() || (ia != base.end() && ia->first < ib->first)) {
            return Mismatch{ia->first, "missing from checkpoint"};
        }
        if (ia == base.end() || ib->first < ia->first) {
            return Mismatch{ib->first, "not present in base"};
        }
        if (ia->second.shape != ib->second.shape) {
            return Mismatch{ia->first, "shape " + shape_to_string(ib->second.shape) + " differs from base shape " +
                                           shape_to_string(ia->second.shape)};
        }
        ++ia;
        ++ib;
    }
    return std::nullopt;
}

/// deltas[k] = tuned[k] - base[k], computed in double and stored as T.
template <std::floating_point T>
BasicTaskVector<T> compute_task_vector(const BasicTensorMap<T>& base, const BasicTensorMap<T>& tuned,
                                       std::string label) {
    std::vector<std::string> only_base;
    std::vector<std::string> only_tuned;
    for (const auto& [name, _] : base) {
        if (!tuned.contains(name)) only_base.push_back(name);
    }
    for (const auto& [name, _] : tuned) {
        if (!base.contains(name)) only_tuned.push_back(name);
    }
    if (!only_base.empty() || !only_tuned.empty()) {
        std::string msg = "key-set mismatch for '" + label + "'";
        auto list = [](const std::vector<std::string>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
            return s;
        };
        if (!only_base.empty()) msg += "; missing from tuned: " + list(only_base);
        if (!only_tuned.empty()) msg += "; missing from base: " + list(only_tuned);
        throw ValidationError(msg);
    }

    BasicTaskVector<T> tv{std::move(label), {}};
    for (const auto& [name, b] : base) {
        const auto& t = tuned.at(name);
        if (t.shape != b.shape) {
            throw ValidationError("shape mismatch for tensor '" + name + "': base " + shape_to_string(b.shape) +
                                  ", tuned " + shape_to_string(t.shape));
        }
        validate_tensor(b, name);
        validate_tensor(t, name);
        std::vector<T> d(b.numel());
        for (std::size_t k = 0; k < d.size(); ++k) {
            d[k] = static_cast<T>(static_cast<double>(t.data[k]) - static_cast<double>(b.data[k]));
        }
        validate_tensor(BasicTensor<T>(b.shape, d), name);
        tv.deltas.insert(name, BasicTensor<T>(b.shape, std::move(d)));
    }
    return tv;
}

struct CompatibilityEntry {
    std::size_t index = 0;
    bool ok = true;
    std::string offending_key; // empty when ok
    std::string reason;
};

struct CompatibilityReport {
    std::vector<CompatibilityEntry> entries;

    bool all_ok() const {
        for (const auto& e : entries) {
            if (!e.ok) return false;
        }
        return true;
    }

    const CompatibilityEntry* first_failure() const {
        for (const auto& e : entries) {
            if (!e.ok) return &e;
        }
        return nullptr;
    }
};

/// Checks every tuned map against the base key set and shapes. Failures are
/// reported, not thrown; only an empty list is an error.
template <std::floating_point T>
CompatibilityReport validate_compatibility(const BasicTensorMap<T>& base,
                                           const std::vector<BasicTensorMap<T>>& tuned_list) {
    if (tuned_list.empty()) {
        throw ValidationError("at least one tuned checkpoint is required");
    }
    CompatibilityReport report;
    for (std::size_t i = 0; i < tuned_list.size(); ++i) {
        CompatibilityEntry e;
        e.index = i;
        if (auto mm = first_mismatch(base, tuned_list[i])) {
            e.ok = false;
            e.offending_key = mm->key;
            e.reason = mm->reason;
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

/// Throws ValidationError unless every task vector has the base's keys and shapes.
template <std::floating_point T, std::floating_point U>
void check_task_vectors(const BasicTensorMap<T>& base, const std::vector<BasicTaskVector<U>>& tasks) {
    for (const auto& tv : tasks) {
        if (auto mm = first_mismatch(base, tv.deltas)) {
            throw ValidationError("task vector '" + tv.label + "' incompatible at '" + mm->key + "': " + mm->reason);
        }
    }
}

/// Element-wise a*tau in double, stored as T.
template <std::floating_point T>
BasicTaskVector<T> scale_task_vector(const BasicTaskVector<T>& tv, double factor) {
    BasicTaskVector<T> out{tv.label, {}};
    for (const auto& [name, t] : tv.deltas) {
        std::vector<T> d(t.numel());
        for (std::size_t k = 0; k < d.size(); ++k) d[k] = static_cast<T>(factor * static_cast<double>(t.data[k]));
        out.deltas.insert(name, BasicTensor<T>(t.shape, std::move(d)));
    }
    return out;
}

template <std::floating_point To, std::floating_point From>
BasicTaskVector<To> task_vector_cast(const BasicTaskVector<From>& tv) {
    return {tv.label, tensor_map_cast<To>(tv.deltas)};
}

} // namespace mals
