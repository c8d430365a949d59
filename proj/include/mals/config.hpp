#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mals/archive.hpp"
#include "mals/error.hpp"
#include "mals/merge.hpp"
#include "mals/report.hpp"

namespace mals {

struct TunedPath {
    std::filesystem::path path;
    std::string label;
};

/// One merge run as described by a JSON config file.
struct RunConfig {
    std::filesystem::path base_path;
    std::vector<TunedPath> tuned_paths;
    MergeConfig merge;
    std::filesystem::path output_path;
    std::optional<std::filesystem::path> report_path;
    ReportFormat report_format = ReportFormat::Json;
    std::optional<std::uint64_t> seed;

    void validate() const {
        if (base_path.empty()) throw ValidationError("config: base_path is empty");
        if (output_path.empty()) throw ValidationError("config: output_path is empty");
        if (tuned_paths.empty()) throw ValidationError("config: tuned_paths must be non-empty");
        const auto out = std::filesystem::weakly_canonical(output_path);
        if (std::filesystem::weakly_canonical(base_path) == out) {
            throw ValidationError("config: output_path must differ from base_path");
        }
        for (const auto& t : tuned_paths) {
            if (t.path.empty()) throw ValidationError("config: tuned path is empty");
            if (std::filesystem::weakly_canonical(t.path) == out) {
                throw ValidationError("config: output_path must differ from every tuned path");
            }
        }
        if (report_path && std::filesystem::weakly_canonical(*report_path) == out) {
            throw ValidationError("config: report_path must differ from output_path");
        }
        merge.validate();
    }
};

namespace detail {

template <typename V>
V config_get(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(std::string("config: key '") + key + "' has the wrong type");
    }
}

inline double config_number(const nlohmann::json& j, const char* key) {
    if (!j.at(key).is_number()) {
        throw ValidationError(std::string("config: key '") + key + "' must be a number");
    }
    return j.at(key).get<double>();
}

inline std::string config_string(const nlohmann::json& j, const char* key) {
    if (!j.at(key).is_string()) {
        throw ValidationError(std::string("config: key '") + key + "' must be a string");
    }
    return j.at(key).get<std::string>();
}

inline std::filesystem::path resolve_path(const std::filesystem::path& p, const std::filesystem::path& base_dir) {
    if (p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
}

} // namespace detail

inline const std::set<std::string>& run_config_keys() {
    static const std::set<std::string> keys{
        "base_path", "tuned_paths", "method",         "lambda",          "sign_election", "alpha",
        "beta",      "s_min",       "s_max",          "s_target",        "epsilon",       "max_iterations",
        "grouping_pattern",         "output_path",    "report_path",     "report_format", "seed"};
    return keys;
}

/// Parses a config object. Unknown keys are rejected; relative paths resolve
/// against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    if (!j.is_object()) {
        throw ValidationError("config: top level must be a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        if (!run_config_keys().contains(key)) {
            throw ValidationError("config: unknown key '" + key + "'");
        }
    }
    for (const char* required : {"base_path", "tuned_paths", "output_path"}) {
        if (!j.contains(required)) {
            throw ValidationError(std::string("config: missing required key '") + required + "'");
        }
    }

    RunConfig cfg;
    cfg.base_path = detail::resolve_path(detail::config_string(j, "base_path"), base_dir);
    cfg.output_path = detail::resolve_path(detail::config_string(j, "output_path"), base_dir);

    const auto& tuned = j.at("tuned_paths");
    if (!tuned.is_array()) {
        throw ValidationError("config: tuned_paths must be a list of {path, label} objects");
    }
    for (const auto& entry : tuned) {
        if (!entry.is_object() || !entry.contains("path")) {
            throw ValidationError("config: each tuned_paths entry needs a 'path'");
        }
        for (const auto& [key, _] : entry.items()) {
            if (key != "path" && key != "label") {
                throw ValidationError("config: unknown key '" + key + "' in tuned_paths entry");
            }
        }
        TunedPath tp;
        tp.path = detail::resolve_path(detail::config_string(entry, "path"), base_dir);
        tp.label = entry.contains("label") ? detail::config_string(entry, "label") : tp.path.stem().string();
        cfg.tuned_paths.push_back(std::move(tp));
    }

    auto& m = cfg.merge;
    if (j.contains("method")) m.method = parse_method(detail::config_string(j, "method"));
    if (j.contains("lambda")) m.lambda = detail::config_number(j, "lambda");
    if (j.contains("sign_election")) {
        if (!j.at("sign_election").is_boolean()) throw ValidationError("config: 'sign_election' must be a boolean");
        m.sign_election = j.at("sign_election").get<bool>();
    }
    auto& a = m.allocation;
    if (j.contains("alpha")) a.alpha = detail::config_number(j, "alpha");
    if (j.contains("beta")) a.beta = detail::config_number(j, "beta");
    if (j.contains("s_min")) a.s_min = detail::config_number(j, "s_min");
    if (j.contains("s_max")) a.s_max = detail::config_number(j, "s_max");
    if (j.contains("s_target")) a.s_target = detail::config_number(j, "s_target");
    if (j.contains("epsilon")) a.epsilon = detail::config_number(j, "epsilon");
    if (j.contains("max_iterations")) {
        const auto& v = j.at("max_iterations");
        if (!v.is_number_integer()) throw ValidationError("config: 'max_iterations' must be an integer");
        const auto n = v.get<std::int64_t>();
        if (n < 1 || n > 1'000'000) throw ValidationError("config: 'max_iterations' must lie in [1, 1000000]");
        a.max_iterations = static_cast<int>(n);
    }
    if (j.contains("grouping_pattern")) m.grouping_pattern = detail::config_string(j, "grouping_pattern");
    if (j.contains("report_path") && !j.at("report_path").is_null()) {
        cfg.report_path = detail::resolve_path(detail::config_string(j, "report_path"), base_dir);
    }
    if (j.contains("report_format")) cfg.report_format = parse_report_format(detail::config_string(j, "report_format"));
    if (j.contains("seed") && !j.at("seed").is_null()) {
        if (!j.at("seed").is_number_unsigned()) throw ValidationError("config: 'seed' must be an unsigned integer");
        cfg.seed = j.at("seed").get<std::uint64_t>();
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

/// Canonical JSON view of the merge hyperparameters.
inline nlohmann::json merge_config_to_json(const MergeConfig& m) {
    return {{"method", std::string(method_name(m.method))},
            {"lambda", m.lambda},
            {"sign_election", m.sign_election},
            {"alpha", m.allocation.alpha},
            {"beta", m.allocation.beta},
            {"s_min", m.allocation.s_min},
            {"s_max", m.allocation.s_max},
            {"s_target", m.allocation.s_target},
            {"epsilon", m.allocation.epsilon},
            {"max_iterations", m.allocation.max_iterations},
            {"grouping_pattern", m.grouping_pattern}};
}

/// 64-bit FNV-1a of the canonical config JSON, as 16 hex digits.
inline std::string config_digest(const MergeConfig& m) {
    const std::string text = merge_config_to_json(m).dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Metadata stored in merged archives.
inline Metadata merge_metadata(const MergeConfig& m, const std::optional<std::uint64_t>& seed = std::nullopt) {
    Metadata meta{{"method", std::string(method_name(m.method))},
                  {"lambda", nlohmann::json(m.lambda).dump()},
                  {"config_digest", config_digest(m)}};
    if (seed) meta["seed"] = std::to_string(*seed);
    return meta;
}

} // namespace mals
