#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mals/error.hpp"
#include "mals/tensor.hpp"

namespace mals {

/// Captures the digit run of a "layers.<n>" path segment.
inline constexpr std::string_view kDefaultLayerPattern = R"((?:^|\.)layers\.(\d+)(?:\.|$))";

inline constexpr std::string_view kUngroupedId = "ungrouped";

struct LayerGroup {
    std::string id;
    std::vector<std::string> members; // lexicographically sorted

    bool operator==(const LayerGroup&) const = default;
};

/// Ordered partition of tensor names into layers.
struct LayerGrouping {
    std::vector<LayerGroup> groups;

    std::size_t size() const { return groups.size(); }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        out.reserve(groups.size());
        for (const auto& g : groups) out.push_back(g.id);
        return out;
    }

    bool operator==(const LayerGrouping&) const = default;
};

namespace detail {

inline bool is_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Numeric captures first (by value, then by spelling), then other captures lexicographically.
inline bool capture_less(const std::string& a, const std::string& b) {
    const bool na = is_digits(a);
    const bool nb = is_digits(b);
    if (na != nb) return na;
    if (!na) return a < b;
    auto strip = [](std::string_view s) {
        const auto p = s.find_first_not_of('0');
        return p == std::string_view::npos ? std::string_view("0") : s.substr(p);
    };
    const auto sa = strip(a);
    const auto sb = strip(b);
    if (sa.size() != sb.size()) return sa.size() < sb.size();
    if (sa != sb) return sa < sb;
    return a < b;
}

} // namespace detail

/// Partitions `names` by the single capture group of `pattern`. Names whose
/// search captures X go to "layer.X"; the rest pool into "ungrouped", last.
inline LayerGrouping group_layers(std::span<const std::string> names,
                                  std::string_view pattern = kDefaultLayerPattern) {
    std::regex re;
    try {
        re = std::regex(std::string(pattern), std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
        throw ValidationError("invalid grouping pattern '" + std::string(pattern) + "': " + e.what());
    }
    if (re.mark_count() != 1) {
        throw ValidationError("grouping pattern must contain exactly one capture group, found " +
                              std::to_string(re.mark_count()));
    }

    std::map<std::string, std::set<std::string>, bool (*)(const std::string&, const std::string&)> captured(
        &detail::capture_less);
    std::set<std::string> ungrouped;
    std::set<std::string> seen;
    for (const auto& name : names) {
        if (!seen.insert(name).second) {
            throw ValidationError("duplicate tensor name '" + name + "'");
        }
        std::smatch m;
        if (std::regex_search(name, m, re) && m[1].matched) {
            captured[m[1].str()].insert(name);
        } else {
            ungrouped.insert(name);
        }
    }

    LayerGrouping out;
    for (auto& [key, members] : captured) {
        out.groups.push_back({"layer." + key, {members.begin(), members.end()}});
    }
    if (!ungrouped.empty()) {
        out.groups.push_back({std::string(kUngroupedId), {ungrouped.begin(), ungrouped.end()}});
    }
    return out;
}

template <std::floating_point T>
LayerGrouping group_layers(const BasicTensorMap<T>& map, std::string_view pattern = kDefaultLayerPattern) {
    const auto names = map.names();
    return group_layers(std::span<const std::string>(names), pattern);
}

/// Throws unless `grouping` partitions exactly the names of `map`.
template <std::floating_point T>
void check_partition(const LayerGrouping& grouping, const BasicTensorMap<T>& map) {
    std::set<std::string_view> covered;
    for (const auto& g : grouping.groups) {
        for (const auto& name : g.members) {
            if (!map.contains(name)) {
                throw ValidationError("grouping names tensor '" + name + "' which is not in the checkpoint");
            }
            if (!covered.insert(name).second) {
                throw ValidationError("tensor '" + name + "' appears in more than one layer group");
            }
        }
    }
    for (const auto& [name, _] : map) {
        if (!covered.contains(name)) {
            throw ValidationError("tensor '" + name + "' is not assigned to any layer group");
        }
    }
}

namespace detail {

inline std::vector<std::string> sorted_members(std::span<const std::string> members) {
    std::vector<std::string> sorted(members.begin(), members.end());
    std::sort(sorted.begin(), sorted.end());
    return sorted;
}

} // namespace detail

/// Concatenates the members' row-major data in lexicographic name order,
/// converting each scalar to `Out`.
template <std::floating_point Out, std::floating_point T>
std::vector<Out> flatten_group_as(const BasicTensorMap<T>& map, std::span<const std::string> members) {
    const auto sorted = detail::sorted_members(members);
    std::size_t total = 0;
    for (const auto& name : sorted) total += map.at(name).numel();
    std::vector<Out> flat;
    flat.reserve(total);
    for (const auto& name : sorted) {
        const auto& t = map.at(name);
        flat.insert(flat.end(), t.data.begin(), t.data.end());
    }
    return flat;
}

template <std::floating_point T>
std::vector<T> flatten_group(const BasicTensorMap<T>& map, std::span<const std::string> members) {
    return flatten_group_as<T>(map, members);
}

/// Inverse of flatten_group: writes `flat` back into the member tensors of `map`.
template <std::floating_point T, std::floating_point U>
void scatter_group(BasicTensorMap<T>& map, std::span<const std::string> members, std::span<const U> flat) {
    const auto sorted = detail::sorted_members(members);
    std::size_t total = 0;
    for (const auto& name : sorted) total += map.at(name).numel();
    if (total != flat.size()) {
        throw ValidationError("flat layer vector has " + std::to_string(flat.size()) + " values, group needs " +
                              std::to_string(total));
    }
    std::size_t pos = 0;
    for (const auto& name : sorted) {
        auto& t = map.at(name);
        for (auto& v : t.data) v = static_cast<T>(flat[pos++]);
    }
}

} // namespace mals
