#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pyramid/data.hpp"
#include "pyramid/pyramid.hpp"

namespace pyramid {

enum class ExtractionScheme {
    SingleTop,  // outputs of the top level's networks
    Landmark,   // every level and network of one pyramid per landmark
};

std::string to_string(ExtractionScheme scheme);
ExtractionScheme parse_scheme(const std::string& name);

struct FeatureVector {
    std::vector<double> values;
    std::string image_id;
    ExtractionScheme scheme = ExtractionScheme::SingleTop;
};

/// Assembled top-level networks on the centered region of the image, their
/// outputs concatenated in network order (m values when there is one network).
FeatureVector extract_representation(const PyramidModel& model, const LabeledImage& image);

/// Declared dimension: sum over pyramids of levels * networks_per_level * m.
std::size_t landmark_feature_dim(std::span<const PyramidModel> models);

/// Pyramid p is centered on landmark p. Blocks are appended pyramid by
/// pyramid, level ascending, network index ascending, m values each.
FeatureVector concat_landmark_features(std::span<const PyramidModel> models,
                                       const LabeledImage& image);

/// Scales to unit Euclidean length (zero vectors are left alone).
void l2_normalize(FeatureVector& f);

/// Feature CSV: header `image_path,dim,v1,...` then one row per image.
void write_features_csv(const std::filesystem::path& path, std::span<const FeatureVector> features);
std::map<std::string, std::vector<double>> read_features_csv(const std::filesystem::path& path);

/// Key used to match feature rows to index records.
std::string image_key(const std::filesystem::path& path);

}  // namespace pyramid
