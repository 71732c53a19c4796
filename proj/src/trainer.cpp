#include "pyramid/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "pyramid/verification.hpp"

namespace pyramid {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be a nonnegative finite number");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (iterations_per_level == 0) throw ConfigError("iterations_per_level must be positive");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must lie in (0,1)");
    }
    if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
}

// ---------------------------------------------------------------------------
// Optimizer

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, const TrainConfig& cfg) {
    if (velocity.empty()) velocity = Tensor(param.shape());
    if (grad.shape() != param.shape() || velocity.shape() != param.shape()) {
        throw ShapeError("sgd_step: parameter " + to_string(param.shape()) + ", gradient " +
                         to_string(grad.shape()) + ", velocity " + to_string(velocity.shape()));
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * grad[i];
        param[i] += velocity[i];
    }
}

void sgd_step(double& param, double grad, double& velocity, const TrainConfig& cfg) {
    velocity = cfg.momentum * velocity - cfg.learning_rate * grad;
    param += velocity;
}

void sgd_step(Network& net, const GradientSet& grads, GradientSet& velocity,
              const TrainConfig& cfg) {
    for (const LayerGrad& g : grads.blocks) {
        if (g.layer >= net.layer_count()) {
            throw ShapeError("gradient block for layer " + std::to_string(g.layer) +
                             " but network has " + std::to_string(net.layer_count()) + " layers");
        }
        if (net.layer_frozen(g.layer)) continue;
        LayerGrad* v = velocity.find(g.layer);
        if (!v) {
            velocity.blocks.push_back({g.layer, Tensor(g.weights.shape()), Tensor(g.bias.shape())});
            v = &velocity.blocks.back();
        }
        if (g.layer < net.stages.size()) {
            ConvLayer& conv = net.stages[g.layer].conv;
            sgd_step(conv.weights, g.weights, v->weights, cfg);
            sgd_step(conv.bias, g.bias, v->bias, cfg);
        } else {
            sgd_step(net.head.weights, g.weights, v->weights, cfg);
            sgd_step(net.head.bias, g.bias, v->bias, cfg);
        }
    }
}

// ---------------------------------------------------------------------------
// Siamese gradients

PairGradients siamese_pair_gradients(const Network& net, const ComparatorParams& cmp,
                                     const Tensor& first, const Tensor& second, PairLabel label) {
    const ForwardTrace t1 = network_forward_trace(net, first);
    const ForwardTrace t2 = network_forward_trace(net, second);
    const PairLossGrads lg = pair_loss_grads(t1.output, t2.output, label, cmp);
    PairGradients out;
    out.loss = lg.loss;
    out.d_log_alpha = lg.d_log_alpha;
    out.d_beta = lg.d_beta;
    out.network = network_backward(net, t1, lg.d_v1);
    out.network.accumulate(network_backward(net, t2, lg.d_v2));
    return out;
}

std::vector<Tensor> preprocess_dataset(std::span<const Tensor> images, const ConvStage& stage) {
    if (!stage.conv.frozen) {
        throw SequencingError("preprocess_dataset requires a frozen stage");
    }
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        try {
            out.push_back(layer_forward(images[i], stage));
        } catch (const ShapeError& e) {
            throw ShapeError("image " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor square_crop(const Tensor& map, std::pair<std::size_t, std::size_t> origin,
                   std::size_t edge) {
    const std::size_t o[] = {origin.second, origin.first, 0};
    const std::size_t e[] = {edge, edge, map.extent(2)};
    return crop(map, o, e);
}

bool can_form_pairs(std::span<const int> identities) {
    std::map<int, std::size_t> counts;
    for (int id : identities) ++counts[id];
    if (counts.size() < 2) return false;
    return std::any_of(counts.begin(), counts.end(), [](const auto& kv) { return kv.second >= 2; });
}

// Networks trained together on one level. Network n reads the patch at
// origins[n]; all networks share their first stage when `share_first`.
struct SiameseGroup {
    std::vector<Network> nets;
    std::vector<ComparatorParams> comparators;
    std::vector<std::pair<std::size_t, std::size_t>> origins;
    std::size_t patch_edge = 0;
    bool share_first = true;

    std::vector<MomentumState> state;
    GradientSet shared_velocity;

    Tensor patch(std::size_t n, const Tensor& map) const {
        return square_crop(map, origins[n], patch_edge);
    }

    // One SGD iteration; returns the mean pair loss before the update.
    double step(std::span<const Tensor> maps, std::span<const FacePair> pairs,
                const TrainConfig& cfg) {
        if (state.size() != nets.size()) state.resize(nets.size());
        const double inv_batch = 1.0 / static_cast<double>(pairs.size());
        const double inv_nets = 1.0 / static_cast<double>(nets.size());

        std::vector<GradientSet> grads(nets.size());
        std::vector<double> d_log_alpha(nets.size(), 0.0), d_beta(nets.size(), 0.0);
        double loss = 0.0;
        for (std::size_t n = 0; n < nets.size(); ++n) {
            for (const FacePair& p : pairs) {
                const PairGradients g = siamese_pair_gradients(
                    nets[n], comparators[n], patch(n, maps[p.first]), patch(n, maps[p.second]),
                    p.label);
                grads[n].accumulate(g.network, inv_batch);
                d_log_alpha[n] += g.d_log_alpha * inv_batch;
                d_beta[n] += g.d_beta * inv_batch;
                loss += g.loss * inv_batch * inv_nets;
            }
        }

        const bool first_trainable = !nets[0].stages.empty() && !nets[0].stages[0].conv.frozen;
        if (share_first && first_trainable) {
            // Average the first-stage gradient over networks, update once.
            GradientSet shared;
            for (std::size_t n = 0; n < nets.size(); ++n) {
                LayerGrad* g0 = grads[n].find(0);
                GradientSet one;
                one.blocks.push_back(std::move(*g0));
                shared.accumulate(one, inv_nets);
                grads[n].blocks.erase(grads[n].blocks.begin());
            }
            Network& lead = nets[0];
            sgd_step(lead, shared, shared_velocity, cfg);
            for (std::size_t n = 1; n < nets.size(); ++n) nets[n].stages[0] = lead.stages[0];
        }
        for (std::size_t n = 0; n < nets.size(); ++n) {
            sgd_step(nets[n], grads[n], state[n].velocity, cfg);
            sgd_step(comparators[n].log_alpha, d_log_alpha[n], state[n].log_alpha, cfg);
            sgd_step(comparators[n].beta, d_beta[n], state[n].beta, cfg);
        }
        return loss;
    }

    // Concatenated outputs of all networks.
    std::vector<double> features(const Tensor& map) const {
        std::vector<double> f;
        for (std::size_t n = 0; n < nets.size(); ++n) {
            const std::vector<double> out = network_forward(nets[n], patch(n, map));
            f.insert(f.end(), out.begin(), out.end());
        }
        return f;
    }
};

double validation_auc(const SiameseGroup& group, const LevelData& val,
                      std::span<const FacePair> pairs) {
    std::vector<std::vector<double>> feats;
    feats.reserve(val.maps.size());
    for (const Tensor& m : val.maps) feats.push_back(group.features(m));
    std::vector<double> matched, unmatched;
    for (const FacePair& p : pairs) {
        const double d = distance(feats[p.first], feats[p.second]);
        (p.label.is_matched() ? matched : unmatched).push_back(d);
    }
    return auc(compute_roc(matched, unmatched));
}

// Runs up to `iterations` steps (or until `seconds` elapse, if positive).
LevelTrace run_training(SiameseGroup& group, std::size_t level, const LevelData& train,
                        const LevelData* validation, const TrainConfig& cfg,
                        std::size_t iterations, double seconds, const std::string& tag) {
    if (!can_form_pairs(train.identity)) {
        throw std::invalid_argument(
            "dataset too small to form a batch: need 2 identities and one with 2 images");
    }
    std::vector<FacePair> val_pairs;
    const bool use_val = validation && can_form_pairs(validation->identity);
    if (use_val) {
        val_pairs = sample_pairs(validation->identity, cfg.validation_pairs,
                                 derive_seed(cfg.seed, tag + ":validation-pairs"));
    }

    const auto start = Clock::now();
    LevelTrace trace;
    trace.level = level;
    for (std::size_t it = 0; it < iterations; ++it) {
        if (seconds > 0.0 && it > 0 && seconds_since(start) >= seconds) break;
        const std::vector<FacePair> pairs =
            sample_pairs(train.identity, cfg.batch_size,
                         derive_seed(cfg.seed, tag + ":pairs:" + std::to_string(it)));
        TraceRow row;
        row.iteration = it;
        row.mean_loss = group.step(train.maps, pairs, cfg);
        const bool last = it + 1 == iterations ||
                          (seconds > 0.0 && seconds_since(start) >= seconds);
        if (use_val && ((it + 1) % cfg.eval_interval == 0 || last)) {
            row.val_auc = validation_auc(group, *validation, val_pairs);
        }
        trace.rows.push_back(row);
    }
    trace.seconds = seconds_since(start);
    return trace;
}

void check_level_data(const PyramidSpec& spec, std::size_t level, const LevelData& data,
                      const char* what) {
    const std::size_t d = level_data_edge(spec, level);
    const Shape expected{d, d, level_data_channels(spec, level)};
    if (data.maps.size() != data.identity.size()) {
        throw ShapeError(std::string(what) + ": image and identity counts differ");
    }
    for (std::size_t i = 0; i < data.maps.size(); ++i) {
        if (data.maps[i].shape() != expected) {
            throw ShapeError(std::string(what) + " image " + std::to_string(i) + " has shape " +
                             to_string(data.maps[i].shape()) + ", level " +
                             std::to_string(level) + " expects " + to_string(expected));
        }
    }
}

}  // namespace

LevelTrace train_level(PyramidModel& model, std::size_t level, const LevelData& train,
                       const LevelData* validation, const TrainConfig& cfg) {
    cfg.validate();
    const PyramidSpec& spec = model.spec;
    if (level >= spec.levels) {
        throw RangeError("level " + std::to_string(level) + " out of range");
    }
    for (std::size_t l = 0; l < level; ++l) {
        if (!model.stages[l].conv.frozen) {
            throw SequencingError("cannot train level " + std::to_string(level) +
                                  " before shared stage " + std::to_string(l) + " is frozen");
        }
    }
    check_level_data(spec, level, train, "training data");
    if (validation) check_level_data(spec, level, *validation, "validation data");

    SiameseGroup group;
    group.patch_edge = spec.base_input;
    for (std::size_t n = 0; n < spec.networks_per_level; ++n) {
        group.nets.push_back(level_network(model, level, n));
        group.comparators.push_back(model.level_networks[level][n].comparator);
        group.origins.push_back(data_patch_origin(spec, level, n));
    }
    LevelTrace trace = run_training(group, level, train, validation, cfg,
                                    cfg.iterations_per_level, 0.0,
                                    "level:" + std::to_string(level));
    for (std::size_t n = 0; n < spec.networks_per_level; ++n) {
        store_level_network(model, level, n, group.nets[n]);
        model.level_networks[level][n].comparator = group.comparators[n];
    }
    return trace;
}

Tensor center_region(const LabeledImage& image, std::size_t edge) {
    if (image.height() < edge || image.width() < edge) {
        throw ShapeError("image " + std::to_string(image.width()) + "x" +
                         std::to_string(image.height()) + " is smaller than the " +
                         std::to_string(edge) + "x" + std::to_string(edge) + " region");
    }
    return crop_patch(image, {(image.width() - edge) / 2, (image.height() - edge) / 2}, edge);
}

Tensor landmark_region(const LabeledImage& image, std::size_t landmark, std::size_t edge) {
    if (landmark >= image.landmarks.size()) {
        throw RangeError("landmark " + std::to_string(landmark) + " missing (image has " +
                         std::to_string(image.landmarks.size()) + ")");
    }
    const Landmark& lm = image.landmarks[landmark];
    const double half = (static_cast<double>(edge) - 1.0) / 2.0;
    const long x = std::lround(lm.x - half), y = std::lround(lm.y - half);
    if (x < 0 || y < 0 || static_cast<std::size_t>(x) + edge > image.width() ||
        static_cast<std::size_t>(y) + edge > image.height()) {
        throw RangeError("landmark " + std::to_string(landmark) + " region of edge " +
                         std::to_string(edge) + " leaves the image");
    }
    return crop_patch(image, {static_cast<std::size_t>(x), static_cast<std::size_t>(y)}, edge);
}

std::vector<bool> validation_mask(std::span<const int> identities, double fraction,
                                  std::uint64_t seed) {
    const std::set<int> unique(identities.begin(), identities.end());
    const std::vector<int> ids(unique.begin(), unique.end());
    const std::vector<bool> held = holdout_identities(ids.size(), fraction, seed);
    std::map<int, bool> is_held;
    for (std::size_t i = 0; i < ids.size(); ++i) is_held[ids[i]] = held[i];
    std::vector<bool> mask(identities.size());
    for (std::size_t i = 0; i < identities.size(); ++i) mask[i] = is_held[identities[i]];
    return mask;
}

namespace {

std::pair<LevelData, LevelData> split_level_data(std::span<const Tensor> regions,
                                                 std::span<const int> identities,
                                                 const TrainConfig& cfg) {
    LevelData train, val;
    const std::set<int> unique(identities.begin(), identities.end());
    if (unique.size() < 3) {
        // Too few identities to hold any out and still train on pairs.
        train.maps.assign(regions.begin(), regions.end());
        train.identity.assign(identities.begin(), identities.end());
        return {std::move(train), std::move(val)};
    }
    const std::vector<bool> mask =
        validation_mask(identities, cfg.validation_fraction, derive_seed(cfg.seed, "validation"));
    for (std::size_t i = 0; i < regions.size(); ++i) {
        LevelData& dst = mask[i] ? val : train;
        dst.maps.push_back(regions[i]);
        dst.identity.push_back(identities[i]);
    }
    return {std::move(train), std::move(val)};
}

}  // namespace

GreedyResult greedy_train(PyramidModel& model, std::span<const Tensor> regions,
                          std::span<const int> identities, const TrainConfig& cfg) {
    cfg.validate();
    const PyramidSpec& spec = model.spec;
    if (regions.size() != identities.size()) {
        throw ShapeError("greedy_train: " + std::to_string(regions.size()) + " images but " +
                         std::to_string(identities.size()) + " identities");
    }
    if (!can_form_pairs(identities)) {
        throw std::invalid_argument(
            "dataset too small to form a batch: need 2 identities and one with 2 images");
    }
    const std::size_t start = model.trained_levels;
    if (model.frozen_prefix() < std::min(start, spec.top_level())) {
        throw SequencingError("model is not a contiguous frozen prefix of its trained levels");
    }

    auto [train, val] = split_level_data(regions, identities, cfg);
    check_level_data(spec, 0, train, "training data");
    for (std::size_t l = 0; l < start; ++l) {
        train.maps = preprocess_dataset(train.maps, model.stages[l]);
        val.maps = preprocess_dataset(val.maps, model.stages[l]);
    }

    GreedyResult result;
    result.stage_snapshots.assign(model.stages.begin(), model.stages.end());
    for (std::size_t l = start; l < spec.levels; ++l) {
        result.traces.push_back(
            train_level(model, l, train, val.maps.empty() ? nullptr : &val, cfg));
        model.trained_levels = l + 1;
        result.stage_snapshots[l] = model.stages[l];
        if (l < spec.top_level()) {
            model.stages[l].conv.frozen = true;
            result.stage_snapshots[l].conv.frozen = true;
            train.maps = preprocess_dataset(train.maps, model.stages[l]);
            val.maps = preprocess_dataset(val.maps, model.stages[l]);
        }
    }
    return result;
}

GreedyResult greedy_train(PyramidModel& model, std::span<const LabeledImage> images,
                          const TrainConfig& cfg) {
    const std::size_t edge = region_edge(model.spec);
    std::vector<Tensor> regions;
    std::vector<int> ids;
    regions.reserve(images.size());
    for (const LabeledImage& img : images) {
        regions.push_back(center_region(img, edge));
        ids.push_back(img.identity);
    }
    return greedy_train(model, regions, ids, cfg);
}

MonolithicResult train_monolithic(const PyramidSpec& spec, std::span<const Tensor> regions,
                                  std::span<const int> identities, const TrainConfig& cfg,
                                  std::size_t iterations, double seconds) {
    cfg.validate();
    spec.validate();
    const std::size_t top = spec.top_level();
    Rng rng(derive_seed(cfg.seed, "monolithic-init"));
    const std::vector<StageSpec> specs = assembled_stage_specs(spec, top);

    SiameseGroup group;
    group.nets.push_back(make_network(level_input_edge(spec, top), 1, specs, spec.output_dim, rng));
    group.comparators.emplace_back();
    group.origins.push_back(raw_patch_origin(spec, top, 0));
    group.patch_edge = level_input_edge(spec, top);
    group.share_first = false;

    auto [train, val] = split_level_data(regions, identities, cfg);
    check_level_data(spec, 0, train, "training data");
    MonolithicResult result;
    result.trace = run_training(group, top, train, val.maps.empty() ? nullptr : &val, cfg,
                                iterations, seconds, "monolithic");
    result.iterations = result.trace.rows.size();
    result.net = std::move(group.nets[0]);
    result.comparator = group.comparators[0];
    return result;
}

}  // namespace pyramid
