#include "pyramid/features.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pyramid/trainer.hpp"

namespace pyramid {

namespace fs = std::filesystem;

std::string to_string(ExtractionScheme scheme) {
    return scheme == ExtractionScheme::SingleTop ? "single_top" : "landmark";
}

ExtractionScheme parse_scheme(const std::string& name) {
    if (name == "single_top") return ExtractionScheme::SingleTop;
    if (name == "landmark") return ExtractionScheme::Landmark;
    throw std::invalid_argument("unknown extraction scheme '" + name +
                                "' (expected single_top or landmark)");
}

namespace {

std::vector<double> level_output(const PyramidModel& model, const Tensor& region,
                                 std::size_t level, std::size_t which) {
    const Network net = assemble_network(model, level, which);
    const auto [x, y] = raw_patch_origin(model.spec, level, which);
    const std::size_t o[] = {y, x, 0};
    const std::size_t e[] = {net.input_size, net.input_size, 1};
    return network_forward(net, crop(region, o, e));
}

}  // namespace

FeatureVector extract_representation(const PyramidModel& model, const LabeledImage& image) {
    const Tensor region = center_region(image, region_edge(model.spec));
    FeatureVector f;
    f.values.reserve(model.spec.networks_per_level * model.spec.output_dim);
    for (std::size_t n = 0; n < model.spec.networks_per_level; ++n) {
        const std::vector<double> out = level_output(model, region, model.spec.top_level(), n);
        f.values.insert(f.values.end(), out.begin(), out.end());
    }
    return f;
}

std::size_t landmark_feature_dim(std::span<const PyramidModel> models) {
    std::size_t dim = 0;
    for (const PyramidModel& m : models) {
        dim += m.spec.levels * m.spec.networks_per_level * m.spec.output_dim;
    }
    return dim;
}

FeatureVector concat_landmark_features(std::span<const PyramidModel> models,
                                       const LabeledImage& image) {
    FeatureVector f;
    f.scheme = ExtractionScheme::Landmark;
    f.values.reserve(landmark_feature_dim(models));
    for (std::size_t p = 0; p < models.size(); ++p) {
        const PyramidModel& model = models[p];
        const Tensor region = landmark_region(image, p, region_edge(model.spec));
        for (std::size_t l = 0; l < model.spec.levels; ++l) {
            for (std::size_t n = 0; n < model.spec.networks_per_level; ++n) {
                const std::vector<double> out = level_output(model, region, l, n);
                f.values.insert(f.values.end(), out.begin(), out.end());
            }
        }
    }
    return f;
}

void l2_normalize(FeatureVector& f) {
    double s = 0.0;
    for (double v : f.values) s += v * v;
    if (s == 0.0) return;
    const double inv = 1.0 / std::sqrt(s);
    for (double& v : f.values) v *= inv;
}

std::string image_key(const fs::path& path) {
    std::error_code ec;
    fs::path p = fs::weakly_canonical(path, ec);
    if (ec) p = fs::absolute(path).lexically_normal();
    return p.generic_string();
}

void write_features_csv(const fs::path& path, std::span<const FeatureVector> features) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write feature file " + path.string());
    const std::size_t dim = features.empty() ? 0 : features.front().values.size();
    out << "image_path,dim";
    for (std::size_t i = 1; i <= dim; ++i) out << ",v" << i;
    out << '\n';
    char buf[32];
    for (const FeatureVector& f : features) {
        out << f.image_id << ',' << f.values.size();
        for (double v : f.values) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing feature file " + path.string());
}

std::map<std::string, std::vector<double>> read_features_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feature file " + path.string());
    std::map<std::string, std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1 && line.rfind("image_path,", 0) == 0) continue;
        std::istringstream is(line);
        std::string id, field;
        std::getline(is, id, ',');
        std::getline(is, field, ',');
        std::size_t dim = 0;
        try {
            dim = std::stoul(field);
        } catch (const std::exception&) {
            throw FormatError("feature file line " + std::to_string(line_no) + ": bad dim");
        }
        std::vector<double> values;
        while (std::getline(is, field, ',')) {
            try {
                values.push_back(std::stod(field));
            } catch (const std::exception&) {
                throw FormatError("feature file line " + std::to_string(line_no) +
                                  ": bad value '" + field + "'");
            }
        }
        if (values.size() != dim) {
            throw FormatError("feature file line " + std::to_string(line_no) + ": dim " +
                              std::to_string(dim) + " but " + std::to_string(values.size()) +
                              " values");
        }
        rows[id] = std::move(values);
    }
    return rows;
}

}  // namespace pyramid
