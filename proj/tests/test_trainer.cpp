#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "pyramid/data.hpp"
#include "pyramid/trainer.hpp"

using namespace pyramid;

namespace {

// Two levels on 8x8 base patches: level edges 8 and 18.
PyramidSpec tiny_spec(std::size_t levels = 2) {
    PyramidSpec spec;
    spec.levels = levels;
    spec.base_input = 8;
    spec.shared_stage = {3, 4, 2};
    spec.unshared = {{2, 4, 1}};
    spec.output_dim = 4;
    return spec;
}

TrainConfig tiny_train(std::size_t iterations = 40) {
    TrainConfig cfg;
    cfg.iterations_per_level = iterations;
    cfg.batch_size = 8;
    cfg.validation_pairs = 40;
    cfg.validation_fraction = 0.3;  // two of six identities
    cfg.eval_interval = 10;
    cfg.learning_rate = 0.05;
    cfg.seed = 17;
    return cfg;
}

std::vector<LabeledImage> tiny_images() {
    SynthConfig sc;
    sc.identities = 6;
    sc.images_per_identity = 5;
    sc.edge = 24;
    sc.nuisance = {0.1, 0.0, 0.02};
    return synth_images(sc, 99);
}

double mean(const std::vector<TraceRow>& rows, std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += rows[i].mean_loss;
    return s / static_cast<double>(to - from);
}

Tensor random_tensor(Shape shape, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = u(rng);
    return t;
}

}  // namespace

TEST(Sgd, ZeroLearningRateLeavesParameter) {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    Tensor p({3}, std::vector<double>{1, 2, 3}), v({3});
    const Tensor before = p;
    sgd_step(p, Tensor({3}, 5.0), v, cfg);
    EXPECT_EQ(p, before);
}

TEST(Sgd, NoMomentumIsPlainDescent) {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    double x = 2.0, v = 0.0;
    sgd_step(x, 3.0, v, cfg);
    EXPECT_DOUBLE_EQ(x, 2.0 - 0.1 * 3.0);
}

TEST(Sgd, MomentumRecurrence) {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.5;
    double x = 1.0, v = 0.0;
    sgd_step(x, 1.0, v, cfg);  // v = -0.1, x = 0.9
    sgd_step(x, 1.0, v, cfg);  // v = -0.05 - 0.1, x = 0.75
    EXPECT_DOUBLE_EQ(v, -0.15);
    EXPECT_DOUBLE_EQ(x, 0.75);
}

TEST(Sgd, QuadraticConvergesWithinFortySteps) {
    TrainConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    double x = 1.0, v = 0.0;
    int steps = 0;
    while (std::abs(x) >= 1e-3 && steps < 40) {
        sgd_step(x, 2.0 * x, v, cfg);
        ++steps;
    }
    EXPECT_LT(std::abs(x), 1e-3);
    // x_k = 0.8^k, so the first k with 0.8^k < 1e-3.
    EXPECT_EQ(steps, static_cast<int>(std::ceil(std::log(1e-3) / std::log(0.8))));
}

TEST(Sgd, NetworkStepSkipsFrozenLayers) {
    Rng rng(3);
    const StageSpec specs[] = {{3, 4, 2}};
    Network net = make_network(10, 1, specs, 3, rng);
    net.stages[0].conv.frozen = true;
    const Network before = net;
    const std::vector<double> g(3, 1.0);
    const GradientSet grads = network_backward(net, random_tensor({10, 10, 1}, rng), g);
    GradientSet velocity;
    TrainConfig cfg;
    sgd_step(net, grads, velocity, cfg);
    EXPECT_EQ(net.stages[0], before.stages[0]);
    EXPECT_NE(net.head.weights, before.head.weights);
}

TEST(Config, ValidationRejectsOutOfRange) {
    TrainConfig cfg;
    cfg.momentum = 1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.learning_rate = -1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(SiameseGradients, TiedWeightsSumBothBranches) {
    Rng rng(8);
    const StageSpec specs[] = {{3, 4, 2}};
    const Network net = make_network(10, 1, specs, 4, rng);
    const Tensor a = random_tensor({10, 10, 1}, rng), b = random_tensor({10, 10, 1}, rng);
    const ComparatorParams cmp{0.1, 0.9};
    const PairGradients pg = siamese_pair_gradients(net, cmp, a, b, PairLabel::unmatched());

    const std::vector<double> fa = network_forward(net, a), fb = network_forward(net, b);
    const PairLossGrads lg = pair_loss_grads(fa, fb, PairLabel::unmatched(), cmp);
    GradientSet expect = network_backward(net, a, lg.d_v1);
    expect.accumulate(network_backward(net, b, lg.d_v2));
    ASSERT_EQ(pg.network.blocks.size(), expect.blocks.size());
    for (std::size_t i = 0; i < expect.blocks.size(); ++i) {
        EXPECT_LT(max_abs_diff(pg.network.blocks[i].weights, expect.blocks[i].weights), 1e-12);
        EXPECT_LT(max_abs_diff(pg.network.blocks[i].bias, expect.blocks[i].bias), 1e-12);
    }
    EXPECT_DOUBLE_EQ(pg.loss, lg.loss);
    EXPECT_DOUBLE_EQ(pg.d_beta, lg.d_beta);
    EXPECT_DOUBLE_EQ(pg.d_log_alpha, lg.d_log_alpha);
}

TEST(SiameseGradients, MatchFiniteDifferencesOfPairLoss) {
    // Head-only network kept in its linear region so no kink interferes.
    Rng rng(9);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    Network net;
    net.input_size = 3;
    net.head.weights = Tensor({9, 3});
    for (double& w : net.head.weights.values()) w = u(rng);
    net.head.bias = Tensor({3}, 3.0);
    const Tensor a = random_tensor({3, 3, 1}, rng), b = random_tensor({3, 3, 1}, rng);
    const ComparatorParams cmp{0.0, 0.2};
    for (PairLabel label : {PairLabel::matched(), PairLabel::unmatched()}) {
        const PairGradients pg = siamese_pair_gradients(net, cmp, a, b, label);
        auto loss = [&](const Network& n) {
            return pair_loss(comparator(distance(network_forward(n, a), network_forward(n, b)), cmp), label);
        };
        const double eps = 1e-5;
        for (std::size_t i = 0; i < net.head.weights.size(); ++i) {
            Network p = net, m = net;
            p.head.weights[i] += eps;
            m.head.weights[i] -= eps;
            const double numeric = (loss(p) - loss(m)) / (2 * eps);
            EXPECT_LT(relative_error(pg.network.blocks[0].weights[i], numeric), 1e-6) << i;
        }
    }
}

TEST(TrainLevel, ZeroLearningRateChangesNothing) {
    PyramidModel m = build_pyramid(tiny_spec(1), 4);
    const PyramidModel before = m;
    std::vector<Tensor> maps;
    std::vector<int> ids;
    for (const LabeledImage& img : tiny_images()) {
        maps.push_back(center_region(img, region_edge(m.spec)));
        ids.push_back(img.identity);
    }
    TrainConfig cfg = tiny_train(15);
    cfg.learning_rate = 0.0;
    const LevelTrace trace = train_level(m, 0, {maps, ids}, nullptr, cfg);
    EXPECT_EQ(m, before);
    EXPECT_EQ(trace.rows.size(), 15u);
    for (const TraceRow& r : trace.rows) EXPECT_FALSE(r.val_auc.has_value());
}

TEST(TrainLevel, LossDecreasesOnSeparableData) {
    PyramidModel m = build_pyramid(tiny_spec(1), 4);
    std::vector<Tensor> maps;
    std::vector<int> ids;
    for (const LabeledImage& img : tiny_images()) {
        maps.push_back(center_region(img, region_edge(m.spec)));
        ids.push_back(img.identity);
    }
    const LevelTrace trace = train_level(m, 0, {maps, ids}, nullptr, tiny_train(150));
    EXPECT_LT(mean(trace.rows, 140, 150), mean(trace.rows, 0, 10));
}

TEST(TrainLevel, RejectsOutOfOrderLevelAndWrongShapes) {
    PyramidModel m = build_pyramid(tiny_spec(), 4);
    const LevelData data{{Tensor({8, 8, 4})}, {0}};
    EXPECT_THROW(train_level(m, 1, data, nullptr, tiny_train()), SequencingError);
    const LevelData wrong{{Tensor({17, 17, 1}), Tensor({17, 17, 1})}, {0, 1}};
    EXPECT_THROW(train_level(m, 0, wrong, nullptr, tiny_train()), ShapeError);
}

TEST(Greedy, SingleLevelEqualsTrainLevelZero) {
    const std::vector<LabeledImage> images = tiny_images();
    const TrainConfig cfg = tiny_train(30);
    PyramidModel a = build_pyramid(tiny_spec(1), 6);
    PyramidModel b = a;
    const GreedyResult ga = greedy_train(a, images, cfg);

    std::vector<int> ids;
    for (const LabeledImage& img : images) ids.push_back(img.identity);
    const std::vector<bool> mask = validation_mask(ids, cfg.validation_fraction, derive_seed(cfg.seed, "validation"));
    LevelData train, val;
    for (std::size_t i = 0; i < images.size(); ++i) {
        LevelData& dst = mask[i] ? val : train;
        dst.maps.push_back(center_region(images[i], region_edge(b.spec)));
        dst.identity.push_back(ids[i]);
    }
    const LevelTrace tb = train_level(b, 0, train, &val, cfg);
    ASSERT_EQ(ga.traces.size(), 1u);
    EXPECT_EQ(ga.traces[0], tb);
    b.trained_levels = 1;
    EXPECT_EQ(a, b);
}

TEST(Greedy, FreezesStagesAndLossesFall) {
    const std::vector<LabeledImage> images = tiny_images();
    PyramidModel m = build_pyramid(tiny_spec(), 6);
    const GreedyResult r = greedy_train(m, images, tiny_train(150));
    ASSERT_EQ(r.traces.size(), 2u);
    EXPECT_TRUE(m.stages[0].conv.frozen);
    EXPECT_FALSE(m.stages[1].conv.frozen);
    EXPECT_EQ(m.trained_levels, 2u);
    EXPECT_EQ(r.stage_snapshots[0], m.stages[0]);
    EXPECT_EQ(r.stage_snapshots[1], m.stages[1]);
    for (const LevelTrace& t : r.traces) {
        ASSERT_EQ(t.rows.size(), 150u);
        EXPECT_LT(mean(t.rows, 140, 150), mean(t.rows, 0, 10)) << "level " << t.level;
        EXPECT_TRUE(t.rows.back().val_auc.has_value());
    }
}

TEST(Greedy, SameSeedReproducesTraces) {
    const std::vector<LabeledImage> images = tiny_images();
    PyramidModel a = build_pyramid(tiny_spec(), 6), b = build_pyramid(tiny_spec(), 6);
    const GreedyResult ra = greedy_train(a, images, tiny_train(20));
    const GreedyResult rb = greedy_train(b, images, tiny_train(20));
    EXPECT_EQ(ra.traces, rb.traces);
    EXPECT_EQ(a, b);
}

TEST(Greedy, MultipleNetworksShareOneStage) {
    PyramidSpec spec = tiny_spec();
    spec.image_edge = 22;
    spec.networks_per_level = 2;
    spec.patch_offsets = {{-2, 0}, {2, 0}};
    PyramidModel m = build_pyramid(spec, 6);
    greedy_train(m, tiny_images(), tiny_train(20));
    EXPECT_EQ(m.stages.size(), spec.levels);
    const Network n0 = assemble_network(m, 1, 0), n1 = assemble_network(m, 1, 1);
    EXPECT_EQ(n0.stages[0], m.stages[0]);
    EXPECT_EQ(n1.stages[0], m.stages[0]);
    EXPECT_EQ(n0.stages[1], n1.stages[1]);  // the level's own shared stage
    EXPECT_NE(n0.head, n1.head);
}

TEST(Greedy, RejectsDatasetWithoutPairs) {
    PyramidModel m = build_pyramid(tiny_spec(), 6);
    std::vector<LabeledImage> one = tiny_images();
    one.resize(1);
    EXPECT_THROW(greedy_train(m, one, tiny_train()), std::invalid_argument);
}

TEST(Monolithic, RespectsIterationCap) {
    const std::vector<LabeledImage> images = tiny_images();
    const PyramidSpec spec = tiny_spec();
    std::vector<Tensor> regions;
    std::vector<int> ids;
    for (const LabeledImage& img : images) {
        regions.push_back(center_region(img, region_edge(spec)));
        ids.push_back(img.identity);
    }
    const MonolithicResult r = train_monolithic(spec, regions, ids, tiny_train(), 12, 1e9);
    EXPECT_EQ(r.iterations, 12u);
    EXPECT_EQ(r.trace.rows.size(), 12u);
    EXPECT_EQ(r.net.input_size, level_input_edge(spec, 1));
    EXPECT_EQ(r.net.stages.size(), 3u);
}

TEST(Regions, LandmarkRegionCentersOnLandmark) {
    LabeledImage img{Tensor({20, 20, 1}), 0, {{10.0, 6.0}}};
    for (std::size_t y = 0; y < 20; ++y)
        for (std::size_t x = 0; x < 20; ++x) img.pixels(y, x, 0) = static_cast<double>(y * 20 + x);
    const Tensor r = landmark_region(img, 0, 5);
    EXPECT_EQ(r(0, 0, 0), static_cast<double>(4 * 20 + 8));
    EXPECT_EQ(r(2, 2, 0), static_cast<double>(6 * 20 + 10));
    EXPECT_THROW(landmark_region(img, 0, 15), RangeError);
    EXPECT_THROW(landmark_region(img, 1, 5), RangeError);
}
