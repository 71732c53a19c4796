#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pyramid/layers.hpp"
#include "pyramid/siamese_loss.hpp"

namespace pyramid {

/// Inconsistent pyramid configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An operation was invoked before the stages it depends on were frozen.
class SequencingError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Displacement of a network's patch from the center of its level's region,
/// in raw image pixels.
struct PatchOffset {
    long dx = 0;
    long dy = 0;
    friend bool operator==(const PatchOffset&, const PatchOffset&) = default;
};

/// Architecture of a Pyramid CNN.
///
/// Every level trains the same small network: one filter-and-down-sample
/// stage (`shared_stage`) followed by the `unshared` template and a
/// fully-connected head of width `output_dim`, all on base_input x base_input
/// patches. After level l is trained its first stage is frozen and used to
/// process the data for level l+1, so the network assembled at level l sees a
/// raw input edge of
///
///     e_0 = base_input,  e_l = s * e_{l-1} + k - 1
///
/// for a k x k shared kernel and pool window s (e_l = base_input * s^l when
/// k = 1).
struct PyramidSpec {
    std::size_t levels = 3;
    std::size_t base_input = 16;
    /// Edge of the square image region the pyramid covers; 0 means the top
    /// level's input edge.
    std::size_t image_edge = 0;
    StageSpec shared_stage{5, 8, 2};
    std::vector<StageSpec> unshared{{3, 16, 2}};
    std::size_t output_dim = 8;
    std::size_t networks_per_level = 1;
    std::vector<PatchOffset> patch_offsets{{0, 0}};

    std::size_t top_level() const { return levels - 1; }

    /// Throws ConfigError if the shape algebra does not close or a patch
    /// leaves its level's region.
    void validate() const;
    friend bool operator==(const PyramidSpec&, const PyramidSpec&) = default;
};

/// Raw input edge of a network assembled at `level`.
std::size_t level_input_edge(const PyramidSpec& spec, std::size_t level);

/// Edge of the image region actually covered (image_edge or the top level's edge).
std::size_t region_edge(const PyramidSpec& spec);

/// Edge of the region after `level` frozen stages have processed it.
std::size_t level_data_edge(const PyramidSpec& spec, std::size_t level);

/// Channels of the level-`level` data (1 at level 0).
std::size_t level_data_channels(const PyramidSpec& spec, std::size_t level);

/// Top-left corner (x, y) of network `which`'s base_input patch inside the
/// level-`level` data. The region-centered patch is displaced by the
/// network's offset divided by s^level (truncated toward zero).
std::pair<std::size_t, std::size_t> data_patch_origin(const PyramidSpec& spec, std::size_t level,
                                                      std::size_t which);

/// Top-left corner (x, y) inside the raw region of the level_input_edge
/// square read by the assembled network `which` at `level`.
std::pair<std::size_t, std::size_t> raw_patch_origin(const PyramidSpec& spec, std::size_t level,
                                                     std::size_t which);

/// The part of a level's network that is never shared.
struct LevelNetwork {
    std::vector<ConvStage> stages;  // the unshared template
    FCLayer head;
    ComparatorParams comparator;
    friend bool operator==(const LevelNetwork&, const LevelNetwork&) = default;
};

/// Leveled Pyramid CNN. `stages[l]` is the first layer of every level-l
/// network; for l < top_level() it is frozen once level l is trained and then
/// shared by all higher levels. Each stage is stored exactly once.
struct PyramidModel {
    PyramidSpec spec;
    std::vector<ConvStage> stages;
    std::vector<std::vector<LevelNetwork>> level_networks;
    std::size_t trained_levels = 0;

    /// Number of leading frozen stages.
    std::size_t frozen_prefix() const;
    friend bool operator==(const PyramidModel&, const PyramidModel&) = default;
};

PyramidModel build_pyramid(const PyramidSpec& spec, std::uint64_t seed);

/// Stage `level` plus the unshared network `which`, taking base_input
/// patches of the level-`level` data.
Network level_network(const PyramidModel& model, std::size_t level, std::size_t which);

/// Frozen shared stages 0..level-1 followed by level_network(level, which);
/// input is the raw level_input_edge patch.
Network assemble_network(const PyramidModel& model, std::size_t level, std::size_t which);

/// Stage specs of the deepest assembled network (for monolithic baselines).
std::vector<StageSpec> assembled_stage_specs(const PyramidSpec& spec, std::size_t level);

/// Writes the trainable parameters of `net` back into the model.
void store_level_network(PyramidModel& model, std::size_t level, std::size_t which,
                         const Network& net);

// Serialization. A model record is the 8-byte magic "PYRCNN01" followed by
// little-endian fields:
//   u64 levels, base_input, image_edge (resolved), shared kernel, channels, pool,
//   u64 n_unshared, then (kernel, channels, pool) per unshared stage,
//   u64 output_dim, networks_per_level, then (i64 dx, i64 dy) per network,
//   u64 trained_levels, then one u8 frozen flag per stage,
// and then every parameter tensor as (u64 rank, u64 extents..., f64 values...)
// in this order: for each level, stage weights and bias; then for each level
// and each network, every unshared stage's weights and bias, head weights and
// bias, and the comparator as a rank-1 tensor {log_alpha, beta}.
// A file may hold several records back to back (one per landmark pyramid).
void write_model(std::ostream& out, const PyramidModel& model);
PyramidModel read_model(std::istream& in);
void save_models(const std::vector<PyramidModel>& models, const std::filesystem::path& path);
std::vector<PyramidModel> load_models(const std::filesystem::path& path);

}  // namespace pyramid
