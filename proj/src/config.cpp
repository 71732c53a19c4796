#include "pyramid/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pyramid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& known) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

void read_size(const json& obj, const char* key, std::size_t& out, const std::string& where) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(where + "." + key + " must be a nonnegative integer");
    }
    out = v.get<std::size_t>();
}

StageSpec parse_stage(const json& obj, const std::string& where) {
    reject_unknown(obj, where, {"kernel", "channels", "pool"});
    StageSpec s;
    read_size(obj, "kernel", s.kernel, where);
    read_size(obj, "channels", s.channels, where);
    read_size(obj, "pool", s.pool, where);
    return s;
}

fs::path resolve(const fs::path& base, const fs::path& p) {
    return p.is_relative() ? (base / p).lexically_normal() : p;
}

PyramidSpec parse_pyramid(const json& obj) {
    const std::string where = "pyramid";
    reject_unknown(obj, where,
                   {"levels", "base_input", "image_edge", "shared_stage", "unshared", "output_dim",
                    "networks_per_level", "patch_offsets"});
    PyramidSpec s;
    read_size(obj, "levels", s.levels, where);
    read_size(obj, "base_input", s.base_input, where);
    read_size(obj, "image_edge", s.image_edge, where);
    read_size(obj, "output_dim", s.output_dim, where);
    read_size(obj, "networks_per_level", s.networks_per_level, where);
    if (obj.contains("shared_stage")) s.shared_stage = parse_stage(obj["shared_stage"], where + ".shared_stage");
    if (obj.contains("unshared")) {
        if (!obj["unshared"].is_array()) throw ConfigError("pyramid.unshared must be an array");
        s.unshared.clear();
        for (std::size_t i = 0; i < obj["unshared"].size(); ++i) {
            s.unshared.push_back(parse_stage(obj["unshared"][i], where + ".unshared[" + std::to_string(i) + "]"));
        }
    }
    if (obj.contains("patch_offsets")) {
        const json& arr = obj["patch_offsets"];
        if (!arr.is_array()) throw ConfigError("pyramid.patch_offsets must be an array");
        s.patch_offsets.clear();
        for (const json& o : arr) {
            if (!o.is_array() || o.size() != 2 || !o[0].is_number_integer() || !o[1].is_number_integer()) {
                throw ConfigError("pyramid.patch_offsets entries must be [dx, dy] integer pairs");
            }
            s.patch_offsets.push_back({o[0].get<long>(), o[1].get<long>()});
        }
    } else {
        s.patch_offsets.assign(s.networks_per_level, PatchOffset{});
    }
    return s;
}

TrainConfig parse_train(const json& obj) {
    const std::string where = "train";
    reject_unknown(obj, where,
                   {"learning_rate", "momentum", "batch_size", "iterations_per_level",
                    "validation_fraction", "validation_pairs", "eval_interval"});
    TrainConfig t;
    read(obj, "learning_rate", t.learning_rate, where);
    read(obj, "momentum", t.momentum, where);
    read_size(obj, "batch_size", t.batch_size, where);
    read_size(obj, "iterations_per_level", t.iterations_per_level, where);
    read(obj, "validation_fraction", t.validation_fraction, where);
    read_size(obj, "validation_pairs", t.validation_pairs, where);
    read_size(obj, "eval_interval", t.eval_interval, where);
    return t;
}

DataConfig parse_data(const json& obj, const fs::path& base) {
    const std::string where = "data";
    reject_unknown(obj, where, {"index", "holdout_fraction", "synth"});
    DataConfig d;
    if (obj.contains("index")) {
        std::string p;
        read(obj, "index", p, where);
        d.index = resolve(base, p);
    }
    read(obj, "holdout_fraction", d.holdout_fraction, where);
    if (obj.contains("synth")) {
        const json& s = obj["synth"];
        const std::string sw = "data.synth";
        reject_unknown(s, sw,
                       {"identities", "images_per_identity", "edge", "brightness", "translation",
                        "noise", "landmarks"});
        read_size(s, "identities", d.synth.identities, sw);
        read_size(s, "images_per_identity", d.synth.images_per_identity, sw);
        read_size(s, "edge", d.synth.edge, sw);
        read(s, "brightness", d.synth.nuisance.brightness, sw);
        read(s, "translation", d.synth.nuisance.translation, sw);
        read(s, "noise", d.synth.nuisance.noise, sw);
        read(s, "landmarks", d.synth.landmarks, sw);
    }
    return d;
}

}  // namespace

fs::path RunConfig::index_path() const {
    return data.index ? *data.index : dataset_dir() / "index.csv";
}

void RunConfig::set_seed(std::uint64_t new_seed) {
    seed = new_seed;
    train.seed = seed_for("train");
}

void RunConfig::validate() const {
    pyramid.validate();
    train.validate();
    if (!(data.holdout_fraction > 0.0 && data.holdout_fraction < 1.0)) {
        throw ConfigError("data.holdout_fraction must lie in (0,1)");
    }
    for (double t : evaluation.fpr_targets) {
        if (!(t >= 0.0 && t < 1.0)) throw ConfigError("evaluation.fpr_targets must lie in [0,1)");
    }
    if (data.synth.edge < 16) throw ConfigError("data.synth.edge must be at least 16");
}

RunConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    reject_unknown(doc, "config",
                   {"seed", "output_dir", "pyramid", "train", "data", "extraction", "evaluation"});
    RunConfig cfg;
    read(doc, "seed", cfg.seed, "config");
    if (doc.contains("output_dir")) {
        std::string p;
        read(doc, "output_dir", p, "config");
        cfg.output_dir = p;
    }
    cfg.output_dir = resolve(base_dir, cfg.output_dir);
    if (doc.contains("pyramid")) cfg.pyramid = parse_pyramid(doc["pyramid"]);
    if (doc.contains("train")) cfg.train = parse_train(doc["train"]);
    if (doc.contains("data")) cfg.data = parse_data(doc["data"], base_dir);
    if (doc.contains("extraction")) {
        const json& e = doc["extraction"];
        reject_unknown(e, "extraction", {"scheme", "normalize"});
        std::string scheme = to_string(cfg.extraction.scheme);
        read(e, "scheme", scheme, "extraction");
        try {
            cfg.extraction.scheme = parse_scheme(scheme);
        } catch (const std::invalid_argument& err) {
            throw ConfigError(err.what());
        }
        read(e, "normalize", cfg.extraction.normalize, "extraction");
    }
    if (doc.contains("evaluation")) {
        const json& e = doc["evaluation"];
        reject_unknown(e, "evaluation", {"fpr_targets", "pairs"});
        read(e, "fpr_targets", cfg.evaluation.fpr_targets, "evaluation");
        read_size(e, "pairs", cfg.evaluation.pairs, "evaluation");
    }
    cfg.set_seed(cfg.seed);
    cfg.validate();
    return cfg;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), fs::absolute(path).parent_path());
}

}  // namespace pyramid
