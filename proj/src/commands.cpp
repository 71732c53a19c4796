#include "pyramid/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "pyramid/features.hpp"
#include "pyramid/siamese_loss.hpp"

namespace pyramid {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& path, const std::string& what) {
    if (!fs::is_regular_file(path)) throw IoError(what + " not found: " + path.string());
}

void check_trainable(const DatasetIndex& index) {
    if (index.identity_count() < 2) {
        throw ConfigError("training split needs at least 2 identities, got " +
                          std::to_string(index.identity_count()));
    }
    std::vector<std::size_t> per_id(index.identity_count(), 0);
    for (const IndexRecord& r : index.records) ++per_id[static_cast<std::size_t>(r.identity)];
    if (*std::max_element(per_id.begin(), per_id.end()) < 2) {
        throw ConfigError("training split has no identity with two images, so no matched pair exists");
    }
}

std::size_t landmark_count(const DatasetIndex& index) {
    const std::size_t n = index.records.front().landmarks.size();
    for (const IndexRecord& r : index.records) {
        if (r.landmarks.size() != n) {
            throw FormatError("image " + r.path.string() + " has " + std::to_string(r.landmarks.size()) +
                              " landmarks, expected " + std::to_string(n));
        }
    }
    return n;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace

void write_trace_csv(std::ostream& out, const LevelTrace& trace) {
    out << "iteration,mean_loss,val_auc\n";
    for (const TraceRow& row : trace.rows) {
        out << row.iteration << ',' << fmt_double(row.mean_loss) << ',';
        if (row.val_auc) out << fmt_double(*row.val_auc);
        out << '\n';
    }
}

fs::path cmd_synth(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    const fs::path dir = cfg.dataset_dir();
    ensure_dir(dir);
    const DatasetIndex index = synth_generate(cfg.data.synth, dir, cfg.seed_for("synth"));
    const fs::path index_path = dir / "index.csv";
    require_file(index_path, "index file");
    log << "synth: " << index.identity_count() << " identities, " << index.records.size()
        << " images of " << cfg.data.synth.edge << "x" << cfg.data.synth.edge << " -> "
        << index_path.string() << '\n';
    return index_path;
}

TrainOutputs cmd_train(const RunConfig& cfg, std::ostream& log) {
    cfg.validate();
    const fs::path index_path = cfg.index_path();
    require_file(index_path, "index file");
    const DatasetIndex full = load_index(index_path);
    if (full.records.empty()) throw FormatError("index " + index_path.string() + " has no records");
    const auto [train_index, eval_index] =
        split_by_identity(full, cfg.data.holdout_fraction, cfg.seed_for("split"));
    check_trainable(train_index);

    // Load and crop everything up front so that shape problems surface
    // before any training step.
    const std::vector<LabeledImage> images = load_images(train_index);
    std::vector<int> ids;
    for (const LabeledImage& img : images) ids.push_back(img.identity);

    const bool per_landmark = cfg.extraction.scheme == ExtractionScheme::Landmark;
    const std::size_t n_pyramids = per_landmark ? landmark_count(full) : 1;
    if (n_pyramids == 0) throw ConfigError("landmark scheme needs landmarks in the index");

    std::vector<PyramidModel> models;
    std::vector<std::vector<Tensor>> regions(n_pyramids);
    for (std::size_t p = 0; p < n_pyramids; ++p) {
        const std::string tag = per_landmark ? "init:landmark" + std::to_string(p) : "init";
        models.push_back(build_pyramid(cfg.pyramid, cfg.seed_for(tag)));
        const std::size_t edge = region_edge(models.back().spec);
        for (std::size_t i = 0; i < images.size(); ++i) {
            try {
                regions[p].push_back(per_landmark ? landmark_region(images[i], p, edge)
                                                  : center_region(images[i], edge));
            } catch (const std::exception& e) {
                throw ShapeError("image " + train_index.records[i].path.string() + ": " + e.what());
            }
        }
    }

    ensure_dir(cfg.output_dir);
    TrainOutputs out;
    out.train_index = cfg.output_dir / "train_index.csv";
    out.eval_index = cfg.output_dir / "eval_index.csv";
    write_index(train_index, out.train_index);
    write_index(eval_index, out.eval_index);
    log << "train: " << train_index.identity_count() << " training identities ("
        << train_index.records.size() << " images), " << eval_index.identity_count()
        << " held out (" << eval_index.records.size() << " images)\n";

    for (std::size_t p = 0; p < n_pyramids; ++p) {
        TrainConfig tc = cfg.train;
        if (per_landmark) tc.seed = derive_seed(cfg.train.seed, "landmark" + std::to_string(p));
        const GreedyResult result = greedy_train(models[p], regions[p], ids, tc);
        for (const LevelTrace& trace : result.traces) {
            const std::string name =
                per_landmark ? "trace_landmark" + std::to_string(p) + "_level" + std::to_string(trace.level)
                             : "trace_level" + std::to_string(trace.level);
            const fs::path path = cfg.output_dir / (name + ".csv");
            std::ostringstream csv;
            write_trace_csv(csv, trace);
            write_text(path, csv.str());
            out.traces.push_back(path);
            log << "train: " << (per_landmark ? "landmark " + std::to_string(p) + " " : "")
                << "level " << trace.level << " final loss "
                << (trace.rows.empty() ? 0.0 : trace.rows.back().mean_loss);
            if (!trace.rows.empty() && trace.rows.back().val_auc) {
                log << " val auc " << *trace.rows.back().val_auc;
            }
            log << " (" << trace.seconds << " s)\n";
        }
    }

    out.model = cfg.output_dir / "model.bin";
    save_models(models, out.model);
    // Read back so that a zero exit guarantees a loadable model.
    if (load_models(out.model).size() != models.size()) {
        throw IoError("model file " + out.model.string() + " failed verification");
    }
    log << "train: model written to " << out.model.string() << '\n';
    return out;
}

fs::path cmd_extract(const RunConfig& cfg, const fs::path& model_path, const fs::path& index_path,
                     std::ostream& log) {
    cfg.validate();
    require_file(model_path, "model file");
    require_file(index_path, "index file");
    const std::vector<PyramidModel> models = load_models(model_path);
    const DatasetIndex index = load_index(index_path);
    const bool per_landmark = cfg.extraction.scheme == ExtractionScheme::Landmark;
    if (!per_landmark && models.size() != 1) {
        throw ConfigError("scheme single_top expects one pyramid but the model file holds " +
                          std::to_string(models.size()));
    }
    const std::size_t dim =
        per_landmark ? landmark_feature_dim(models)
                     : models.front().spec.networks_per_level * models.front().spec.output_dim;

    std::vector<FeatureVector> rows;
    rows.reserve(index.records.size());
    for (const IndexRecord& record : index.records) {
        const LabeledImage image = load_image(record);
        if (per_landmark && image.landmarks.size() != models.size()) {
            throw ConfigError("image " + record.path.string() + " has " +
                              std::to_string(image.landmarks.size()) + " landmarks but the model has " +
                              std::to_string(models.size()) + " pyramids");
        }
        FeatureVector f;
        try {
            f = per_landmark ? concat_landmark_features(models, image)
                             : extract_representation(models.front(), image);
        } catch (const std::exception& e) {
            throw ShapeError("image " + record.path.string() + ": " + e.what());
        }
        if (f.values.size() != dim) {
            throw ShapeError("feature of " + record.path.string() + " has dimension " +
                             std::to_string(f.values.size()) + ", expected " + std::to_string(dim));
        }
        if (cfg.extraction.normalize) l2_normalize(f);
        f.image_id = image_key(record.path);
        rows.push_back(std::move(f));
    }

    ensure_dir(cfg.output_dir);
    const fs::path out = cfg.output_dir / "features.csv";
    write_features_csv(out, rows);
    log << "extract: " << rows.size() << " feature rows of dimension " << dim << " ("
        << to_string(cfg.extraction.scheme) << ") -> " << out.string() << '\n';
    return out;
}

VerificationReport evaluate_features(const RunConfig& cfg,
                                     const std::map<std::string, std::vector<double>>& features,
                                     const DatasetIndex& index) {
    std::vector<const std::vector<double>*> rows;
    for (const IndexRecord& record : index.records) {
        const auto it = features.find(image_key(record.path));
        if (it == features.end()) throw FormatError("no features for image " + record.path.string());
        if (!rows.empty() && it->second.size() != rows.front()->size()) {
            throw ShapeError("feature of image " + record.path.string() + " has dimension " +
                             std::to_string(it->second.size()) + ", expected " +
                             std::to_string(rows.front()->size()));
        }
        rows.push_back(&it->second);
    }
    const std::vector<int> ids = index.identities();
    const std::vector<FacePair> pairs = cfg.evaluation.pairs == 0
                                            ? all_pairs(ids)
                                            : sample_pairs(ids, cfg.evaluation.pairs, cfg.seed_for("eval"));
    std::vector<double> matched, unmatched;
    for (const FacePair& pair : pairs) {
        const double d = distance(*rows[pair.first], *rows[pair.second]);
        (pair.label.is_matched() ? matched : unmatched).push_back(d);
    }
    if (matched.empty() || unmatched.empty()) {
        throw ConfigError("evaluation needs both matched and unmatched pairs");
    }
    return evaluate_verification(matched, unmatched, cfg.evaluation.fpr_targets);
}

fs::path cmd_eval(const RunConfig& cfg, const fs::path& features_path, const fs::path& index_path,
                  std::ostream& log) {
    cfg.validate();
    require_file(features_path, "feature file");
    require_file(index_path, "index file");
    const auto features = read_features_csv(features_path);
    const DatasetIndex index = load_index(index_path);
    const VerificationReport report = evaluate_features(cfg, features, index);

    ensure_dir(cfg.output_dir);
    const fs::path out = cfg.output_dir / "report.csv";
    std::ostringstream csv;
    write_report_csv(csv, report);
    write_text(out, csv.str());
    log << "eval: " << report.n_matched << " matched, " << report.n_unmatched << " unmatched pairs\n";
    log << "eval: accuracy " << report.accuracy << " auc " << report.auc << '\n';
    for (const TprAtFpr& p : report.tpr_points) {
        log << "eval: TPR@FPR=" << p.target_fpr << " " << p.tpr << '\n';
    }
    log << "eval: report written to " << out.string() << '\n';
    return out;
}

}  // namespace pyramid
