#pragma once

// Command-line front end: merge / analyze / diff / info / synth.
//
// Exit codes: 0 success, 1 usage error, 2 validation error (bad input files,
// key/shape mismatch, bad config), 3 numerical failure (allocation did not
// converge).

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mals/archive.hpp"
#include "mals/config.hpp"
#include "mals/conflict.hpp"
#include "mals/error.hpp"
#include "mals/grouping.hpp"
#include "mals/merge.hpp"
#include "mals/report.hpp"
#include "mals/synth.hpp"
#include "mals/task_vector.hpp"

namespace mals::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kNumerical = 3 };

namespace detail {

inline std::vector<TensorMap> read_tuned(const std::vector<std::filesystem::path>& paths) {
    std::vector<TensorMap> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(read_archive(p));
    return out;
}

inline void require_compatible(const TensorMap& base, const std::vector<TensorMap>& tuned,
                               const std::vector<std::filesystem::path>& paths) {
    const auto report = validate_compatibility(base, tuned);
    if (const auto* bad = report.first_failure()) {
        throw ValidationError("'" + paths[bad->index].string() + "' is incompatible with the base at tensor '" +
                              bad->offending_key + "': " + bad->reason);
    }
}

inline std::vector<TaskVector> task_vectors(const TensorMap& base, const std::vector<TensorMap>& tuned,
                                            const std::vector<std::string>& labels) {
    std::vector<TaskVector> tasks;
    tasks.reserve(tuned.size());
    for (std::size_t i = 0; i < tuned.size(); ++i) tasks.push_back(compute_task_vector(base, tuned[i], labels[i]));
    return tasks;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::string_view(text));
}

inline std::vector<double> parse_profile(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError("conflict profile entry '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw ValidationError("conflict profile must list at least one value");
    return out;
}

} // namespace detail

struct MergeArgs {
    std::filesystem::path config;
    unsigned threads = 0;
};

inline int cmd_merge(const MergeArgs& args, std::ostream& out) {
    const RunConfig cfg = load_run_config(args.config);
    const TensorMap base = read_archive(cfg.base_path);
    std::vector<std::filesystem::path> paths;
    std::vector<std::string> labels;
    for (const auto& t : cfg.tuned_paths) {
        paths.push_back(t.path);
        labels.push_back(t.label);
    }
    const auto tuned = detail::read_tuned(paths);
    detail::require_compatible(base, tuned, paths);
    const auto tasks = detail::task_vectors(base, tuned, labels);

    const auto result = merge_task_vectors(base, tasks, cfg.merge, args.threads);
    write_archive(result.merged, cfg.output_path, merge_metadata(cfg.merge, cfg.seed));

    const auto diag = make_diagnostics(result.method, result.conflict, result.allocation);
    if (cfg.report_path) {
        detail::write_text(*cfg.report_path, render_diagnostics(diag, cfg.report_format));
    }
    out << "merged " << tasks.size() << " task(s) with " << result.method << " into " << cfg.output_path.string()
        << " (" << diag.rows.size() << " layer groups, mean sparsity " << format_g12(diag.mean_sparsity) << ")\n";
    return kOk;
}

struct AnalyzeArgs {
    std::filesystem::path base;
    std::vector<std::filesystem::path> tuned;
    std::string pattern{kDefaultLayerPattern};
    std::string format = "json";
    std::filesystem::path out;
    unsigned threads = 0;
};

inline int cmd_analyze(const AnalyzeArgs& args, std::ostream& out) {
    const ReportFormat format = parse_report_format(args.format);
    const TensorMap base = read_archive(args.base);
    const auto tuned = detail::read_tuned(args.tuned);
    detail::require_compatible(base, tuned, args.tuned);
    std::vector<std::string> labels;
    for (const auto& p : args.tuned) labels.push_back(p.stem().string());
    const auto tasks = detail::task_vectors(base, tuned, labels);

    const auto grouping = group_layers(base, args.pattern);
    const auto report = layer_conflict(tasks, grouping, args.threads);
    AllocationConfig alloc;
    const auto allocation = allocate(report, alloc);
    const auto diag = make_diagnostics(std::string(method_name(MergeMethod::Mals)), report, allocation);
    detail::write_text(args.out, render_diagnostics(diag, format));
    out << "analyzed " << tasks.size() << " task(s) over " << grouping.size() << " layer groups -> "
        << args.out.string() << '\n';
    if (!allocation.converged) {
        throw NumericalError("sparsity allocation did not converge within " + std::to_string(alloc.max_iterations) +
                             " iterations");
    }
    return kOk;
}

struct DiffArgs {
    std::filesystem::path base;
    std::filesystem::path tuned;
    std::filesystem::path out;
};

inline int cmd_diff(const DiffArgs& args, std::ostream& out) {
    const TensorMap base = read_archive(args.base);
    const TensorMap tuned = read_archive(args.tuned);
    const auto tv = compute_task_vector(base, tuned, args.tuned.stem().string());
    write_archive(tv.deltas, args.out, {{"label", tv.label}, {"kind", "task_vector"}});
    out << "wrote task vector '" << tv.label << "' (" << tv.deltas.size() << " tensors) to " << args.out.string()
        << '\n';
    return kOk;
}

inline int cmd_info(const std::filesystem::path& archive, std::ostream& out) {
    const auto index = read_archive_index(archive);
    std::uint64_t total = 0;
    for (const auto& [k, v] : index.metadata) out << "# " << k << " = " << v << '\n';
    for (const auto& e : index.entries) {
        out << e.name << '\t' << dtype_name(e.dtype) << '\t' << shape_to_string(e.shape) << '\n';
        total += element_count(e.shape);
    }
    out << index.entries.size() << " tensors, " << total << " parameters\n";
    return kOk;
}

struct SynthArgs {
    std::uint64_t seed = 0;
    std::size_t layers = 0;
    std::size_t elems = 0;
    std::size_t tasks = 0;
    std::string conflict;
    std::filesystem::path out_dir;
};

inline int cmd_synth(const SynthArgs& args, std::ostream& out) {
    SynthConfig cfg;
    cfg.seed = args.seed;
    cfg.num_layers = args.layers;
    cfg.elems_per_layer = args.elems;
    cfg.num_tasks = args.tasks;
    cfg.conflict_profile = detail::parse_profile(args.conflict);
    const auto set = synthesize(cfg);
    const auto files = write_synth_set(set, args.out_dir, cfg);

    // Ready-to-run merge config next to the archives; paths are relative to it.
    nlohmann::json run = {{"base_path", files.base.filename().string()},
                          {"output_path", "merged.safetensors"},
                          {"report_path", "report.json"},
                          {"report_format", "json"},
                          {"method", "mals"},
                          {"seed", args.seed}};
    nlohmann::json tuned = nlohmann::json::array();
    for (std::size_t t = 0; t < files.tuned.size(); ++t) {
        tuned.push_back({{"path", files.tuned[t].filename().string()}, {"label", "task_" + std::to_string(t)}});
    }
    run["tuned_paths"] = std::move(tuned);
    detail::write_text(args.out_dir / "merge_config.json", run.dump(2) + '\n');

    out << "wrote base + " << files.tuned.size() << " tuned checkpoint(s) (" << cfg.num_layers << " layers x "
        << cfg.elems_per_layer << " elements) to " << args.out_dir.string() << '\n';
    return kOk;
}

/// Parses `args` (args[0] is the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Merge fine-tuned checkpoints of a shared base with adaptive layerwise sparsity", "mals"};
    app.require_subcommand(1);

    MergeArgs merge_args;
    auto* merge_cmd = app.add_subcommand("merge", "Merge checkpoints as described by a JSON config");
    merge_cmd->add_option("--config", merge_args.config, "Run config (JSON)")->required();
    merge_cmd->add_option("--threads", merge_args.threads, "Worker threads (0 = all cores)");

    AnalyzeArgs analyze_args;
    auto* analyze_cmd = app.add_subcommand("analyze", "Report per-layer conflict, importance and allocation");
    analyze_cmd->add_option("--base", analyze_args.base, "Base checkpoint")->required();
    analyze_cmd->add_option("--tuned", analyze_args.tuned, "Fine-tuned checkpoints")->required()->expected(1, -1);
    analyze_cmd->add_option("--pattern", analyze_args.pattern, "Layer grouping regex with one capture group");
    analyze_cmd->add_option("--format", analyze_args.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
    analyze_cmd->add_option("--out", analyze_args.out, "Report path")->required();
    analyze_cmd->add_option("--threads", analyze_args.threads, "Worker threads (0 = all cores)");

    DiffArgs diff_args;
    auto* diff_cmd = app.add_subcommand("diff", "Write tuned - base as a tensor archive");
    diff_cmd->add_option("--base", diff_args.base, "Base checkpoint")->required();
    diff_cmd->add_option("--tuned", diff_args.tuned, "Fine-tuned checkpoint")->required();
    diff_cmd->add_option("--out", diff_args.out, "Output archive")->required();

    std::filesystem::path info_path;
    auto* info_cmd = app.add_subcommand("info", "List tensor names, dtypes and shapes");
    info_cmd->add_option("--archive", info_path, "Tensor archive")->required();

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic base and tuned checkpoints");
    synth_cmd->add_option("--seed", synth_args.seed, "RNG seed")->required();
    synth_cmd->add_option("--layers", synth_args.layers, "Number of layers")->required();
    synth_cmd->add_option("--elems", synth_args.elems, "Elements per layer")->required();
    synth_cmd->add_option("--tasks", synth_args.tasks, "Number of tuned checkpoints")->required();
    synth_cmd->add_option("--conflict", synth_args.conflict, "Comma-separated per-layer conflict targets in [0,1]")
        ->required();
    synth_cmd->add_option("--out-dir", synth_args.out_dir, "Output directory")->required();

    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return kUsage;
    }

    try {
        if (*merge_cmd) return cmd_merge(merge_args, out);
        if (*analyze_cmd) return cmd_analyze(analyze_args, out);
        if (*diff_cmd) return cmd_diff(diff_args, out);
        if (*info_cmd) return cmd_info(info_path, out);
        if (*synth_cmd) return cmd_synth(synth_args, out);
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << '\n';
        return kNumerical;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kValidation;
    }
    err << app.help();
    return kUsage;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return run(std::vector<std::string>(argv, argv + argc), out, err);
}

} // namespace mals::cli
