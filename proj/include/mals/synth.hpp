#pragma once

// Deterministic synthetic checkpoints with a controllable per-layer conflict
// profile, for desk-scale merging experiments.
//
// Every layer l draws a shared update pattern z. Even-indexed tasks follow z;
// odd-indexed tasks flip the sign of a fraction q = (1 + p_l) / 2 of its
// entries, so higher p_l means more sign disagreement and stronger
// anti-correlation with the even tasks. Small per-task noise keeps the tasks
// distinct. All scalars sit on a 2^-20 grid so that tuned - base is exactly
// representable in 32-bit floats.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mals/archive.hpp"
#include "mals/error.hpp"
#include "mals/tensor.hpp"

namespace mals {

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t num_layers = 1;
    std::size_t elems_per_layer = 1;
    std::size_t num_tasks = 1;
    std::vector<double> conflict_profile{0.5}; // one value, or one per layer
    double delta_scale = 0.01;
    double noise = 0.1;

    void validate() const {
        if (num_layers < 1 || elems_per_layer < 1 || num_tasks < 1) {
            throw ValidationError("synth: layers, elems and tasks must all be >= 1");
        }
        if (conflict_profile.size() != 1 && conflict_profile.size() != num_layers) {
            throw ValidationError("synth: conflict profile needs 1 or " + std::to_string(num_layers) +
                                  " values, got " + std::to_string(conflict_profile.size()));
        }
        for (double p : conflict_profile) {
            if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("synth: conflict targets must lie in [0, 1]");
        }
        if (!(delta_scale > 0.0 && delta_scale <= 0.5) || !(noise >= 0.0 && noise <= 1.0)) {
            throw ValidationError("synth: delta_scale must lie in (0, 0.5] and noise in [0, 1]");
        }
    }
};

struct SynthSet {
    TensorMap base;
    std::vector<TensorMap> tuned;
};

inline std::string synth_tensor_name(std::size_t layer) {
    return "model.layers." + std::to_string(layer) + ".weight";
}

namespace detail {

inline constexpr double kSynthGrid = 1048576.0; // 2^20

// mt19937_64 output is fixed by the standard; the distributions are not, so
// uniforms are derived from the raw bits.
class SynthRng {
public:
    explicit SynthRng(std::uint64_t seed) : engine_(seed) {}

    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double symmetric() { return 2.0 * unit() - 1.0; }

private:
    std::mt19937_64 engine_;
};

inline float on_grid(double v) {
    return static_cast<float>(std::round(v * kSynthGrid) / kSynthGrid);
}

} // namespace detail

inline SynthSet synthesize(const SynthConfig& cfg) {
    cfg.validate();
    detail::SynthRng rng(cfg.seed);
    SynthSet set;
    set.tuned.resize(cfg.num_tasks);
    const std::size_t n = cfg.elems_per_layer;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const double p = cfg.conflict_profile.size() == 1 ? cfg.conflict_profile[0] : cfg.conflict_profile[l];
        const double flip_fraction = 0.5 * (1.0 + p);

        std::vector<float> base(n);
        for (auto& v : base) v = detail::on_grid(rng.symmetric());
        std::vector<double> pattern(n);
        for (auto& v : pattern) v = rng.symmetric();

        const std::string name = synth_tensor_name(l);
        for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
            std::vector<float> tuned(n);
            const bool flips = (t % 2) == 1;
            for (std::size_t k = 0; k < n; ++k) {
                const double u = rng.unit();
                const double e = rng.symmetric();
                const double sign = (flips && u < flip_fraction) ? -1.0 : 1.0;
                const float delta = detail::on_grid(cfg.delta_scale * (sign * pattern[k] + cfg.noise * e));
                tuned[k] = base[k] + delta; // exact: both on the grid, |sum| < 2
            }
            set.tuned[t].insert(name, Tensor({n}, std::move(tuned)));
        }
        set.base.insert(name, Tensor({n}, std::move(base)));
    }
    return set;
}

struct SynthFiles {
    std::filesystem::path base;
    std::vector<std::filesystem::path> tuned;
};

inline SynthFiles write_synth_set(const SynthSet& set, const std::filesystem::path& dir, const SynthConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create output directory '" + dir.string() + "'");
    }
    Metadata meta{{"generator", "mals synth"}, {"seed", std::to_string(cfg.seed)}};
    SynthFiles files;
    files.base = dir / "base.safetensors";
    write_archive(set.base, files.base, meta);
    for (std::size_t t = 0; t < set.tuned.size(); ++t) {
        auto path = dir / ("task_" + std::to_string(t) + ".safetensors");
        auto m = meta;
        m["task"] = std::to_string(t);
        write_archive(set.tuned[t], path, m);
        files.tuned.push_back(std::move(path));
    }
    return files;
}

} // namespace mals
