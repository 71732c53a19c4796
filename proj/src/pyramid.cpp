#include "pyramid/pyramid.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace pyramid {

namespace {

std::size_t pow_size(std::size_t base, std::size_t exp) {
    std::size_t r = 1;
    for (std::size_t i = 0; i < exp; ++i) r *= base;
    return r;
}

std::string level_name(std::size_t level) { return "level " + std::to_string(level); }

}  // namespace

std::size_t level_input_edge(const PyramidSpec& spec, std::size_t level) {
    std::size_t e = spec.base_input;
    for (std::size_t l = 0; l < level; ++l) e = stage_input_edge(e, spec.shared_stage);
    return e;
}

std::size_t region_edge(const PyramidSpec& spec) {
    return spec.image_edge ? spec.image_edge : level_input_edge(spec, spec.top_level());
}

std::size_t level_data_edge(const PyramidSpec& spec, std::size_t level) {
    std::size_t d = region_edge(spec);
    for (std::size_t l = 0; l < level; ++l) {
        auto next = stage_output_edge(d, spec.shared_stage);
        if (!next) {
            throw ConfigError("region edge " + std::to_string(region_edge(spec)) +
                              " does not down-sample exactly through " + std::to_string(level) +
                              " shared stages (kernel " + std::to_string(spec.shared_stage.kernel) +
                              ", pool " + std::to_string(spec.shared_stage.pool) + ")");
        }
        d = *next;
    }
    return d;
}

std::size_t level_data_channels(const PyramidSpec& spec, std::size_t level) {
    return level == 0 ? 1 : spec.shared_stage.channels;
}

std::pair<std::size_t, std::size_t> data_patch_origin(const PyramidSpec& spec, std::size_t level,
                                                      std::size_t which) {
    if (which >= spec.patch_offsets.size()) {
        throw ConfigError("network index " + std::to_string(which) + " out of range (" +
                          std::to_string(spec.patch_offsets.size()) + " networks per level)");
    }
    const long d = static_cast<long>(level_data_edge(spec, level));
    const long base = static_cast<long>(spec.base_input);
    if (d < base) {
        throw ConfigError(level_name(level) + " data edge " + std::to_string(d) +
                          " is smaller than base_input " + std::to_string(base));
    }
    const long scale = static_cast<long>(pow_size(spec.shared_stage.pool, level));
    const PatchOffset& off = spec.patch_offsets[which];
    const long x = (d - base) / 2 + off.dx / scale;
    const long y = (d - base) / 2 + off.dy / scale;
    if (x < 0 || y < 0 || x > d - base || y > d - base) {
        throw ConfigError("patch offset (" + std::to_string(off.dx) + ", " + std::to_string(off.dy) +
                          ") of network " + std::to_string(which) + " leaves the " +
                          std::to_string(d) + "x" + std::to_string(d) + " region at " +
                          level_name(level));
    }
    return {static_cast<std::size_t>(x), static_cast<std::size_t>(y)};
}

std::pair<std::size_t, std::size_t> raw_patch_origin(const PyramidSpec& spec, std::size_t level,
                                                     std::size_t which) {
    const auto [x, y] = data_patch_origin(spec, level, which);
    const std::size_t scale = pow_size(spec.shared_stage.pool, level);
    return {x * scale, y * scale};
}

void PyramidSpec::validate() const {
    if (levels == 0) throw ConfigError("pyramid needs at least one level");
    if (base_input == 0) throw ConfigError("base_input must be positive");
    if (output_dim == 0) throw ConfigError("output_dim must be positive");
    if (networks_per_level == 0) throw ConfigError("networks_per_level must be positive");
    if (patch_offsets.size() != networks_per_level) {
        throw ConfigError("patch_offsets has " + std::to_string(patch_offsets.size()) +
                          " entries for " + std::to_string(networks_per_level) +
                          " networks per level");
    }
    if (shared_stage.kernel == 0 || shared_stage.channels == 0 || shared_stage.pool == 0) {
        throw ConfigError("shared stage kernel, channels and pool must be positive");
    }
    auto edge = stage_output_edge(base_input, shared_stage);
    if (!edge) {
        throw ConfigError("shared stage (kernel " + std::to_string(shared_stage.kernel) +
                          ", pool " + std::to_string(shared_stage.pool) +
                          ") cannot consume a base_input of " + std::to_string(base_input) +
                          " exactly");
    }
    for (std::size_t i = 0; i < unshared.size(); ++i) {
        if (unshared[i].channels == 0) throw ConfigError("unshared stage channels must be positive");
        auto next = stage_output_edge(*edge, unshared[i]);
        if (!next) {
            throw ConfigError("unshared stage " + std::to_string(i) + " cannot consume a " +
                              std::to_string(*edge) + "x" + std::to_string(*edge) +
                              " map exactly (pool divisibility)");
        }
        edge = next;
    }
    const std::size_t top_edge = level_input_edge(*this, top_level());
    if (image_edge != 0 && image_edge < top_edge) {
        throw ConfigError("image_edge " + std::to_string(image_edge) +
                          " is smaller than the top level input edge " + std::to_string(top_edge));
    }
    for (std::size_t l = 0; l < levels; ++l) {
        for (std::size_t n = 0; n < networks_per_level; ++n) data_patch_origin(*this, l, n);
    }
}

std::size_t PyramidModel::frozen_prefix() const {
    std::size_t k = 0;
    while (k < stages.size() && stages[k].conv.frozen) ++k;
    return k;
}

PyramidModel build_pyramid(const PyramidSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    PyramidModel model;
    model.spec = spec;
    model.spec.image_edge = region_edge(spec);
    const std::size_t stage_out = *stage_output_edge(spec.base_input, spec.shared_stage);
    for (std::size_t l = 0; l < spec.levels; ++l) {
        model.stages.push_back({init_conv(spec.shared_stage.kernel, level_data_channels(spec, l),
                                          spec.shared_stage.channels, rng),
                                PoolSpec{spec.shared_stage.pool}});
        std::vector<LevelNetwork> nets;
        for (std::size_t n = 0; n < spec.networks_per_level; ++n) {
            Network tail = make_network(stage_out, spec.shared_stage.channels, spec.unshared,
                                        spec.output_dim, rng);
            nets.push_back({std::move(tail.stages), std::move(tail.head), ComparatorParams{}});
        }
        model.level_networks.push_back(std::move(nets));
    }
    return model;
}

Network level_network(const PyramidModel& model, std::size_t level, std::size_t which) {
    const PyramidSpec& spec = model.spec;
    if (level >= spec.levels) {
        throw RangeError(level_name(level) + " out of range (" + std::to_string(spec.levels) +
                         " levels)");
    }
    if (which >= model.level_networks[level].size()) {
        throw RangeError("network index " + std::to_string(which) + " out of range at " +
                         level_name(level));
    }
    const LevelNetwork& ln = model.level_networks[level][which];
    Network net;
    net.input_size = spec.base_input;
    net.input_channels = level_data_channels(spec, level);
    net.stages.push_back(model.stages[level]);
    net.stages.insert(net.stages.end(), ln.stages.begin(), ln.stages.end());
    net.head = ln.head;
    return net;
}

Network assemble_network(const PyramidModel& model, std::size_t level, std::size_t which) {
    Network top = level_network(model, level, which);
    for (std::size_t l = 0; l < level; ++l) {
        if (!model.stages[l].conv.frozen) {
            throw SequencingError("cannot assemble " + level_name(level) + ": shared stage " +
                                  std::to_string(l) + " is not frozen");
        }
    }
    Network net;
    net.input_size = level_input_edge(model.spec, level);
    net.input_channels = 1;
    net.stages.assign(model.stages.begin(), model.stages.begin() + static_cast<long>(level));
    net.stages.insert(net.stages.end(), top.stages.begin(), top.stages.end());
    net.head = std::move(top.head);
    return net;
}

std::vector<StageSpec> assembled_stage_specs(const PyramidSpec& spec, std::size_t level) {
    std::vector<StageSpec> specs(level + 1, spec.shared_stage);
    specs.insert(specs.end(), spec.unshared.begin(), spec.unshared.end());
    return specs;
}

void store_level_network(PyramidModel& model, std::size_t level, std::size_t which,
                         const Network& net) {
    LevelNetwork& ln = model.level_networks.at(level).at(which);
    if (net.stages.size() != ln.stages.size() + 1) {
        throw ShapeError("network does not match the level template");
    }
    if (!model.stages[level].conv.frozen) model.stages[level] = net.stages[0];
    for (std::size_t i = 0; i < ln.stages.size(); ++i) ln.stages[i] = net.stages[i + 1];
    ln.head = net.head;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'Y', 'R', 'C', 'N', 'N', '0', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

void put_i64(std::ostream& out, std::int64_t v) { put_u64(out, static_cast<std::uint64_t>(v)); }

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (in.gcount() != 8) throw std::runtime_error("model file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::int64_t get_i64(std::istream& in) { return static_cast<std::int64_t>(get_u64(in)); }

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

std::size_t get_size(std::istream& in, std::uint64_t limit, const char* what) {
    const std::uint64_t v = get_u64(in);
    if (v > limit) throw std::runtime_error(std::string("model file: implausible ") + what);
    return static_cast<std::size_t>(v);
}

void put_tensor(std::ostream& out, const Tensor& t) {
    put_u64(out, t.rank());
    for (std::size_t e : t.shape()) put_u64(out, e);
    for (double v : t.values()) put_f64(out, v);
}

Tensor get_tensor(std::istream& in, const Shape& expected) {
    const std::size_t rank = get_size(in, 8, "tensor rank");
    Shape shape(rank);
    for (std::size_t& e : shape) e = get_size(in, 1u << 24, "tensor extent");
    if (shape != expected) {
        throw std::runtime_error("model file: tensor shape " + to_string(shape) +
                                 " where " + to_string(expected) + " was expected");
    }
    std::vector<double> values(element_count(shape));
    for (double& v : values) v = get_f64(in);
    return Tensor(std::move(shape), std::move(values));
}

void read_into(std::istream& in, Tensor& t) { t = get_tensor(in, t.shape()); }

}  // namespace

void write_model(std::ostream& out, const PyramidModel& model) {
    const PyramidSpec& s = model.spec;
    out.write(kMagic.data(), kMagic.size());
    put_u64(out, s.levels);
    put_u64(out, s.base_input);
    put_u64(out, region_edge(s));
    put_u64(out, s.shared_stage.kernel);
    put_u64(out, s.shared_stage.channels);
    put_u64(out, s.shared_stage.pool);
    put_u64(out, s.unshared.size());
    for (const StageSpec& u : s.unshared) {
        put_u64(out, u.kernel);
        put_u64(out, u.channels);
        put_u64(out, u.pool);
    }
    put_u64(out, s.output_dim);
    put_u64(out, s.networks_per_level);
    for (const PatchOffset& o : s.patch_offsets) {
        put_i64(out, o.dx);
        put_i64(out, o.dy);
    }
    put_u64(out, model.trained_levels);
    for (const ConvStage& st : model.stages) out.put(st.conv.frozen ? 1 : 0);

    for (const ConvStage& st : model.stages) {
        put_tensor(out, st.conv.weights);
        put_tensor(out, st.conv.bias);
    }
    for (const auto& level : model.level_networks) {
        for (const LevelNetwork& ln : level) {
            for (const ConvStage& st : ln.stages) {
                put_tensor(out, st.conv.weights);
                put_tensor(out, st.conv.bias);
            }
            put_tensor(out, ln.head.weights);
            put_tensor(out, ln.head.bias);
            put_tensor(out, Tensor({2}, {ln.comparator.log_alpha, ln.comparator.beta}));
        }
    }
    if (!out) throw std::runtime_error("failed writing model");
}

PyramidModel read_model(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != 8 || magic != kMagic) {
        throw std::runtime_error("not a PYRCNN01 model record");
    }
    PyramidSpec s;
    s.levels = get_size(in, 64, "level count");
    s.base_input = get_size(in, 1u << 20, "base_input");
    s.image_edge = get_size(in, 1u << 20, "image_edge");
    s.shared_stage.kernel = get_size(in, 1024, "kernel");
    s.shared_stage.channels = get_size(in, 1u << 16, "channels");
    s.shared_stage.pool = get_size(in, 1024, "pool");
    s.unshared.resize(get_size(in, 64, "unshared depth"));
    for (StageSpec& u : s.unshared) {
        u.kernel = get_size(in, 1024, "kernel");
        u.channels = get_size(in, 1u << 16, "channels");
        u.pool = get_size(in, 1024, "pool");
    }
    s.output_dim = get_size(in, 1u << 20, "output_dim");
    s.networks_per_level = get_size(in, 1024, "networks_per_level");
    s.patch_offsets.resize(s.networks_per_level);
    for (PatchOffset& o : s.patch_offsets) {
        o.dx = static_cast<long>(get_i64(in));
        o.dy = static_cast<long>(get_i64(in));
    }
    const std::size_t trained = get_size(in, 64, "trained level count");
    std::vector<bool> frozen(s.levels);
    for (std::size_t l = 0; l < s.levels; ++l) {
        const int c = in.get();
        if (c != 0 && c != 1) throw std::runtime_error("model file: bad frozen flag");
        frozen[l] = c == 1;
    }

    // Build the skeleton for the shapes, then overwrite every tensor.
    PyramidModel model = build_pyramid(s, 0);
    model.trained_levels = trained;
    for (std::size_t l = 0; l < s.levels; ++l) {
        ConvStage& st = model.stages[l];
        read_into(in, st.conv.weights);
        read_into(in, st.conv.bias);
        st.conv.frozen = frozen[l];
    }
    for (auto& level : model.level_networks) {
        for (LevelNetwork& ln : level) {
            for (ConvStage& st : ln.stages) {
                read_into(in, st.conv.weights);
                read_into(in, st.conv.bias);
            }
            read_into(in, ln.head.weights);
            read_into(in, ln.head.bias);
            const Tensor cmp = get_tensor(in, {2});
            ln.comparator = {cmp[0], cmp[1]};
        }
    }
    return model;
}

void save_models(const std::vector<PyramidModel>& models, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write model file " + path.string());
    for (const PyramidModel& m : models) write_model(out, m);
    out.flush();
    if (!out) throw std::runtime_error("failed writing model file " + path.string());
}

std::vector<PyramidModel> load_models(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open model file " + path.string());
    std::vector<PyramidModel> models;
    while (in.peek() != std::char_traits<char>::eof()) models.push_back(read_model(in));
    if (models.empty()) throw std::runtime_error("model file " + path.string() + " is empty");
    return models;
}

}  // namespace pyramid
