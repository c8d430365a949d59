#pragma once

#include <array>
#include <charconv>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mals/allocator.hpp"
#include "mals/conflict.hpp"
#include "mals/error.hpp"

namespace mals {

enum class ReportFormat { Json, Csv };

inline ReportFormat parse_report_format(std::string_view s) {
    if (s == "json") return ReportFormat::Json;
    if (s == "csv") return ReportFormat::Csv;
    throw ValidationError("report format must be 'json' or 'csv', got '" + std::string(s) + "'");
}

struct DiagnosticsRow {
    std::string layer_id;
    double c = 0.0;
    double m = 0.0;
    double c_hat = 0.0;
    double m_hat = 0.0;
    double r = 0.0;
    double w = 0.0;
    double s_initial = 0.0;
    double s_final = 0.0;
};

/// Reporting view of one allocation run.
struct LayerDiagnostics {
    std::vector<DiagnosticsRow> rows;
    int iterations = 0;
    bool converged = true;
    double mean_sparsity = 0.0;
    std::string method;
};

/// Rows are produced only when both conflict and allocation are available
/// (every method except simple_average).
inline LayerDiagnostics make_diagnostics(std::string method, const std::optional<ConflictReport>& conflict,
                                         const std::optional<AllocationResult>& allocation) {
    LayerDiagnostics d;
    d.method = std::move(method);
    if (!conflict || !allocation) return d;
    const auto& c = *conflict;
    const auto& a = *allocation;
    if (a.s_final.size() != c.num_layers()) {
        throw ValidationError("diagnostics: allocation and conflict report disagree on layer count");
    }
    for (std::size_t l = 0; l < c.num_layers(); ++l) {
        d.rows.push_back({c.layer_ids[l], c.conflict[l], c.importance[l], a.c_hat[l], a.m_hat[l], a.r[l], a.w[l],
                          a.s_initial[l], a.s_final[l]});
    }
    d.iterations = a.iterations;
    d.converged = a.converged;
    d.mean_sparsity = detail::mean_of(a.s_final);
    return d;
}

inline nlohmann::json diagnostics_to_json(const LayerDiagnostics& d) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& r : d.rows) {
        layers.push_back({{"layer_id", r.layer_id},
                          {"c", r.c},
                          {"m", r.m},
                          {"c_hat", r.c_hat},
                          {"m_hat", r.m_hat},
                          {"r", r.r},
                          {"w", r.w},
                          {"s_initial", r.s_initial},
                          {"s_final", r.s_final}});
    }
    return {{"method", d.method},
            {"iterations", d.iterations},
            {"converged", d.converged},
            {"mean_sparsity", d.mean_sparsity},
            {"num_layers", d.rows.size()},
            {"layers", std::move(layers)}};
}

/// 12 significant digits, '.' decimal separator regardless of locale.
inline std::string format_g12(double v) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 12);
    return std::string(buf.data(), res.ptr);
}

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

} // namespace detail

inline constexpr std::string_view kCsvHeader = "layer_id,c,m,c_hat,m_hat,r,w,s_initial,s_final";

/// Fixed header row, one row per layer, then '#'-prefixed summary lines.
inline std::string diagnostics_to_csv(const LayerDiagnostics& d) {
    std::string out(kCsvHeader);
    out += '\n';
    for (const auto& r : d.rows) {
        out += detail::csv_field(r.layer_id);
        for (double v : {r.c, r.m, r.c_hat, r.m_hat, r.r, r.w, r.s_initial, r.s_final}) {
            out += ',';
            out += format_g12(v);
        }
        out += '\n';
    }
    out += "# method=" + d.method + '\n';
    out += "# iterations=" + std::to_string(d.iterations) + '\n';
    out += std::string("# converged=") + (d.converged ? "true" : "false") + '\n';
    out += "# mean_sparsity=" + format_g12(d.mean_sparsity) + '\n';
    return out;
}

inline std::string render_diagnostics(const LayerDiagnostics& d, ReportFormat format) {
    if (format == ReportFormat::Csv) return diagnostics_to_csv(d);
    return diagnostics_to_json(d).dump(2) + '\n';
}

} // namespace mals
