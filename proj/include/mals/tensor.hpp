#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mals/error.hpp"

namespace mals {

/// Number of scalars described by `shape`. A rank-0 shape holds one scalar.
inline std::uint64_t element_count(std::span<const std::uint64_t> shape) {
    std::uint64_t n = 1;
    for (std::uint64_t d : shape) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
            throw ValidationError("tensor shape overflows 64-bit element count");
        }
        n *= d;
    }
    return n;
}

inline std::string shape_to_string(std::span<const std::uint64_t> shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major tensor. Archives always hold 32-bit floats; wider scalar
/// types exist so the analysis code can run on double-precision deltas.
template <std::floating_point T>
struct BasicTensor {
    using value_type = T;

    std::vector<std::uint64_t> shape;
    std::vector<T> data;

    BasicTensor() = default;
    BasicTensor(std::vector<std::uint64_t> shape_, std::vector<T> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {}

    std::size_t numel() const { return data.size(); }

    bool operator==(const BasicTensor&) const = default;
};

/// Throws ValidationError unless the shape matches the data and every scalar is finite.
template <std::floating_point T>
void validate_tensor(const BasicTensor<T>& t, std::string_view name) {
    if (element_count(t.shape) != t.data.size()) {
        throw ValidationError("tensor '" + std::string(name) + "' has shape " +
                              shape_to_string(t.shape) + " but " +
                              std::to_string(t.data.size()) + " scalars");
    }
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (!std::isfinite(t.data[i])) {
            throw ValidationError("tensor '" + std::string(name) + "' holds a non-finite value at index " +
                                  std::to_string(i));
        }
    }
}

/// Named collection of tensors, iterated in lexicographic name order.
template <std::floating_point T>
class BasicTensorMap {
public:
    using tensor_type = BasicTensor<T>;
    using container_type = std::map<std::string, tensor_type, std::less<>>;
    using const_iterator = typename container_type::const_iterator;
    using iterator = typename container_type::iterator;

    BasicTensorMap() = default;

    void insert(std::string name, tensor_type tensor) {
        if (name.empty()) {
            throw ValidationError("tensor name must be non-empty");
        }
        auto [it, inserted] = entries_.try_emplace(std::move(name), std::move(tensor));
        if (!inserted) {
            throw ValidationError("duplicate tensor name '" + it->first + "'");
        }
    }

    void insert_or_assign(std::string name, tensor_type tensor) {
        if (name.empty()) {
            throw ValidationError("tensor name must be non-empty");
        }
        entries_.insert_or_assign(std::move(name), std::move(tensor));
    }

    bool contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

    const tensor_type& at(std::string_view name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw ValidationError("missing tensor '" + std::string(name) + "'");
        }
        return it->second;
    }

    tensor_type& at(std::string_view name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw ValidationError("missing tensor '" + std::string(name) + "'");
        }
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    const_iterator begin() const { return entries_.begin(); }
    const_iterator end() const { return entries_.end(); }
    iterator begin() { return entries_.begin(); }
    iterator end() { return entries_.end(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [name, _] : entries_) out.push_back(name);
        return out;
    }

    std::uint64_t total_elements() const {
        std::uint64_t n = 0;
        for (const auto& [_, t] : entries_) n += t.numel();
        return n;
    }

    /// Enforces the map invariants: at least one tensor, every tensor valid.
    void validate() const {
        if (entries_.empty()) {
            throw ValidationError("tensor map must contain at least one tensor");
        }
        for (const auto& [name, t] : entries_) {
            validate_tensor(t, name);
        }
    }

    bool operator==(const BasicTensorMap&) const = default;

private:
    container_type entries_;
};

using Tensor = BasicTensor<float>;
using TensorMap = BasicTensorMap<float>;

/// Element-wise conversion between scalar types.
template <std::floating_point To, std::floating_point From>
BasicTensorMap<To> tensor_map_cast(const BasicTensorMap<From>& in) {
    BasicTensorMap<To> out;
    for (const auto& [name, t] : in) {
        std::vector<To> data(t.data.begin(), t.data.end());
        out.insert(name, BasicTensor<To>(t.shape, std::move(data)));
    }
    return out;
}

/// True when both maps hold the same names and shapes and every scalar has the
/// same bit pattern (distinguishes +0 from -0, unlike operator==).
template <std::floating_point T>
bool bit_identical(const BasicTensorMap<T>& a, const BasicTensorMap<T>& b) {
    if (a.size() != b.size()) return false;
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.shape != ib->second.shape ||
            ia->second.data.size() != ib->second.data.size()) {
            return false;
        }
        if (!ia->second.data.empty() &&
            std::memcmp(ia->second.data.data(), ib->second.data.data(),
                        ia->second.data.size() * sizeof(T)) != 0) {
            return false;
        }
    }
    return true;
}

} // namespace mals
