#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pyramid/data.hpp"
#include "pyramid/features.hpp"
#include "pyramid/pyramid.hpp"
#include "pyramid/trainer.hpp"

namespace pyramid {

struct DataConfig {
    std::optional<std::filesystem::path> index;  // defaults to <output_dir>/dataset/index.csv
    double holdout_fraction = 1.0 / 3.0;
    SynthConfig synth;
};

struct ExtractionConfig {
    ExtractionScheme scheme = ExtractionScheme::SingleTop;
    bool normalize = false;
};

struct EvaluationConfig {
    std::vector<double> fpr_targets{0.1, 0.01, 0.001};
    std::size_t pairs = 0;  // 0 = every matched and unmatched pair
};

/// A run configuration document. Relative paths are resolved against the
/// directory holding the config file.
struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "out";
    PyramidSpec pyramid;
    TrainConfig train;
    DataConfig data;
    ExtractionConfig extraction;
    EvaluationConfig evaluation;

    std::filesystem::path index_path() const;
    std::filesystem::path dataset_dir() const { return output_dir / "dataset"; }

    /// Per-consumer seeds derived from `seed`.
    std::uint64_t seed_for(std::string_view consumer) const { return derive_seed(seed, consumer); }

    /// Replaces the root seed and every seed derived from it.
    void set_seed(std::uint64_t new_seed);

    void validate() const;
};

/// Throws ConfigError on malformed JSON, wrong types or unknown keys.
RunConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace pyramid
