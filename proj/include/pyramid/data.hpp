#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pyramid/siamese_loss.hpp"
#include "pyramid/tensor.hpp"

namespace pyramid {

/// Malformed index or image file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or unwritable file.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Pixel coordinate: x is the column, y the row.
struct Landmark {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Landmark&, const Landmark&) = default;
};

/// Grayscale image (h x w x 1, values in [0,1]) with its identity.
struct LabeledImage {
    Tensor pixels;
    int identity = 0;
    std::vector<Landmark> landmarks;

    std::size_t height() const { return pixels.extent(0); }
    std::size_t width() const { return pixels.extent(1); }
};

struct IndexRecord {
    std::filesystem::path path;  // absolute, or relative to the working directory
    int identity = 0;
    std::vector<Landmark> landmarks;
};

/// Parsed gallery index. Identity ids are dense and follow the roster.
struct DatasetIndex {
    std::vector<IndexRecord> records;
    std::vector<std::string> roster;  // identity label per id

    std::size_t identity_count() const { return roster.size(); }
    std::vector<int> identities() const;
};

/// Two images (by position in some collection) and their match label.
struct FacePair {
    std::size_t first = 0;
    std::size_t second = 0;
    PairLabel label = PairLabel::unmatched();
};

/// Reads `path,identity[,lx1,ly1,...]`. Relative image paths resolve against
/// the index file's directory. Identity labels are renumbered densely in
/// order of first appearance.
DatasetIndex load_index(const std::filesystem::path& path);

/// Writes an index CSV; image paths are made relative to the file's directory
/// where possible.
void write_index(const DatasetIndex& index, const std::filesystem::path& path);

/// 8-bit binary PGM (P5), scaled into [0,1] by maxval.
Tensor read_pgm(const std::filesystem::path& path);
void write_pgm(const Tensor& image, const std::filesystem::path& path);

LabeledImage load_image(const IndexRecord& record);
std::vector<LabeledImage> load_images(const DatasetIndex& index);

/// Marks ceil(fraction * n_identities) identities (clamped to [1, n-1]) as
/// held out, chosen by a seeded shuffle.
std::vector<bool> holdout_identities(std::size_t n_identities, double fraction,
                                     std::uint64_t seed);

/// Disjoint identity split; the eval side receives ceil(fraction * n)
/// identities. Both halves are renumbered densely.
std::pair<DatasetIndex, DatasetIndex> split_by_identity(const DatasetIndex& index,
                                                        double holdout_fraction,
                                                        std::uint64_t seed);

/// ceil(n/2) matched and floor(n/2) unmatched pairs, each drawn uniformly
/// with replacement from all eligible unordered image pairs. Pair indices
/// refer to positions in `identity_of`.
std::vector<FacePair> sample_pairs(std::span<const int> identity_of, std::size_t n,
                                   std::uint64_t seed);
std::vector<FacePair> sample_pairs(const DatasetIndex& index, std::size_t n,
                                   std::uint64_t seed);

/// Every matched and unmatched unordered pair.
std::vector<FacePair> all_pairs(std::span<const int> identity_of);

/// Square edge x edge x 1 patch whose top-left corner is `origin`.
Tensor crop_patch(const LabeledImage& image, std::pair<std::size_t, std::size_t> origin,
                  std::size_t edge);

struct NuisanceConfig {
    double brightness = 0.3;   // scale drawn from [1 - b, 1 + b]
    double translation = 0.125;  // max shift as a fraction of the edge
    double noise = 0.05;       // Gaussian sigma
    friend bool operator==(const NuisanceConfig&, const NuisanceConfig&) = default;
};

struct SynthConfig {
    std::size_t identities = 48;
    std::size_t images_per_identity = 12;
    std::size_t edge = 84;
    NuisanceConfig nuisance;
    bool landmarks = true;
};

/// Seeded identity dataset held in memory. Each identity is a mixture of
/// oriented gratings and Gaussian blobs; each image applies a brightness
/// scale, a translation and additive noise.
std::vector<LabeledImage> synth_images(const SynthConfig& cfg, std::uint64_t seed);

/// Writes the images as PGM files plus `index.csv` under `out_dir`.
DatasetIndex synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                            std::uint64_t seed);

/// Stream-independent seed for a named consumer.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

}  // namespace pyramid
