#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pyramid/data.hpp"
#include "pyramid/layers.hpp"
#include "pyramid/pyramid.hpp"
#include "pyramid/siamese_loss.hpp"

namespace pyramid {

struct TrainConfig {
    double learning_rate = 0.02;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t iterations_per_level = 600;
    std::uint64_t seed = 1;
    double validation_fraction = 0.125;
    std::size_t validation_pairs = 400;
    /// Validation AUC is measured every this many iterations and on the last.
    std::size_t eval_interval = 50;

    void validate() const;
};

struct TraceRow {
    std::size_t iteration = 0;
    double mean_loss = 0.0;
    std::optional<double> val_auc;
    friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct LevelTrace {
    std::size_t level = 0;
    std::vector<TraceRow> rows;
    double seconds = 0.0;  // wall clock, excluded from equality

    friend bool operator==(const LevelTrace& a, const LevelTrace& b) {
        return a.level == b.level && a.rows == b.rows;
    }
};

/// Images of one level's data (each D x D x c) with identities.
struct LevelData {
    std::vector<Tensor> maps;
    std::vector<int> identity;
};

/// Momentum buffers for every block of a network plus its comparator.
struct MomentumState {
    GradientSet velocity;
    double log_alpha = 0.0;
    double beta = 0.0;
};

/// velocity <- momentum * velocity - lr * grad; param <- param + velocity.
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, const TrainConfig& cfg);
void sgd_step(double& param, double grad, double& velocity, const TrainConfig& cfg);

/// Updates every non-frozen layer of `net` that has a block in `grads`.
void sgd_step(Network& net, const GradientSet& grads, GradientSet& velocity,
              const TrainConfig& cfg);

/// Loss of one pair plus gradients summed over both weight-tied branches.
struct PairGradients {
    double loss = 0.0;
    GradientSet network;
    double d_log_alpha = 0.0;
    double d_beta = 0.0;
};

PairGradients siamese_pair_gradients(const Network& net, const ComparatorParams& cmp,
                                     const Tensor& first, const Tensor& second, PairLabel label);

/// Replaces each image by layer_forward(image, stage). The stage must be frozen.
std::vector<Tensor> preprocess_dataset(std::span<const Tensor> images, const ConvStage& stage);

/// One level of greedy training on data already processed by the frozen
/// stages below `level`. Updates the level's unshared networks, their
/// comparators and (unless frozen) stage `level`; the stage gradient is the
/// average over the level's networks.
LevelTrace train_level(PyramidModel& model, std::size_t level, const LevelData& train,
                       const LevelData* validation, const TrainConfig& cfg);

/// The square region each pyramid covers: centered, or around a landmark.
Tensor center_region(const LabeledImage& image, std::size_t edge);
Tensor landmark_region(const LabeledImage& image, std::size_t landmark, std::size_t edge);

struct GreedyResult {
    std::vector<LevelTrace> traces;
    /// Stage tensors captured the moment each level finished.
    std::vector<ConvStage> stage_snapshots;
};

/// Supervised greedy training: for every remaining level, crop patches from
/// the current data, train the level, freeze its first stage and push the
/// data through it. `regions` are raw region_edge x region_edge images.
GreedyResult greedy_train(PyramidModel& model, std::span<const Tensor> regions,
                          std::span<const int> identities, const TrainConfig& cfg);
GreedyResult greedy_train(PyramidModel& model, std::span<const LabeledImage> images,
                          const TrainConfig& cfg);

/// Result of training one network end to end.
struct MonolithicResult {
    Network net;
    ComparatorParams comparator;
    LevelTrace trace;
    std::size_t iterations = 0;
};

/// Trains the assembled top-level architecture from scratch on raw top-level
/// patches, for at most `iterations` steps or `seconds` of wall clock.
MonolithicResult train_monolithic(const PyramidSpec& spec, std::span<const Tensor> regions,
                                  std::span<const int> identities, const TrainConfig& cfg,
                                  std::size_t iterations, double seconds);

/// Splits identities into (train, validation) membership flags per image.
std::vector<bool> validation_mask(std::span<const int> identities, double fraction,
                                  std::uint64_t seed);

}  // namespace pyramid
