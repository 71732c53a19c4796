#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "pyramid/tensor.hpp"

namespace pyramid {

/// Convolution weights laid out kh x kw x c_in x c_out, one bias per output
/// channel.
struct ConvLayer {
    Tensor weights;
    Tensor bias;
    bool frozen = false;

    std::size_t kernel_h() const { return weights.extent(0); }
    std::size_t kernel_w() const { return weights.extent(1); }
    std::size_t in_channels() const { return weights.extent(2); }
    std::size_t out_channels() const { return weights.extent(3); }

    void validate() const;
    friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Non-overlapping max pooling; window and stride are both `window`.
struct PoolSpec {
    std::size_t window = 2;
    friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

/// One filter-and-down-sample stage: maxpool(relu(conv(x))).
struct ConvStage {
    ConvLayer conv;
    PoolSpec pool;
    friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

/// Fully-connected head, weights d_in x m.
struct FCLayer {
    Tensor weights;
    Tensor bias;
    bool frozen = false;

    std::size_t in_dim() const { return weights.extent(0); }
    std::size_t out_dim() const { return weights.extent(1); }

    void validate() const;
    friend bool operator==(const FCLayer&, const FCLayer&) = default;
};

/// Architecture description of a conv stage, used by the builders.
struct StageSpec {
    std::size_t kernel = 3;
    std::size_t channels = 8;
    std::size_t pool = 2;
    friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Spatial edge after one stage, or nullopt if the shape algebra does not
/// close (kernel too big or pooling not exact).
std::optional<std::size_t> stage_output_edge(std::size_t input_edge, const StageSpec& s);

/// Smallest input edge whose stage output is exactly `output_edge`.
std::size_t stage_input_edge(std::size_t output_edge, const StageSpec& s);

/// A chain of conv stages terminated by a fully-connected head. Layer index
/// i < stages.size() names stage i; index stages.size() names the head.
struct Network {
    std::vector<ConvStage> stages;
    FCLayer head;
    std::size_t input_size = 0;
    std::size_t input_channels = 1;

    std::size_t output_dim() const { return head.out_dim(); }
    std::size_t layer_count() const { return stages.size() + 1; }
    bool layer_frozen(std::size_t layer) const;

    /// Throws ShapeError if successive layer shapes are inconsistent.
    void validate() const;
    friend bool operator==(const Network&, const Network&) = default;
};

using Rng = std::mt19937_64;

/// Glorot-uniform weights, zero bias.
ConvLayer init_conv(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
                    Rng& rng);
FCLayer init_fc(std::size_t in_dim, std::size_t out_dim, Rng& rng);

/// Builds a network whose stages follow `specs`; throws ShapeError if the
/// input edge does not survive the stage chain exactly.
Network make_network(std::size_t input_size, std::size_t input_channels,
                     std::span<const StageSpec> specs, std::size_t output_dim, Rng& rng);

/// Valid true convolution: out(p,q,z) = sum_{a,b,c} in(p+kh-1-a, q+kw-1-b, c) W(a,b,c,z) + B(z).
/// This equals cross-correlation with a spatially flipped kernel.
Tensor conv_forward(const Tensor& input, const ConvLayer& layer);

/// Elementwise rectifier max(0, x).
Tensor activation(const Tensor& input);

Tensor maxpool(const Tensor& input, PoolSpec spec);

/// maxpool(activation(conv_forward(input, conv)), spec)
Tensor layer_forward(const Tensor& input, const ConvLayer& conv, PoolSpec spec);
inline Tensor layer_forward(const Tensor& input, const ConvStage& stage) {
    return layer_forward(input, stage.conv, stage.pool);
}

/// relu(W^T x + b) on the flattened input.
Tensor fc_forward(const Tensor& input, const FCLayer& layer);

std::vector<double> network_forward(const Network& net, const Tensor& patch);

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardTrace {
    std::vector<Tensor> stage_inputs;   // input to each stage
    std::vector<Tensor> pre_activation; // conv output per stage
    std::vector<Tensor> pooled;         // stage outputs
    Tensor head_input;                  // flattened last feature map
    Tensor head_pre;                    // W^T x + b before the rectifier
    std::vector<double> output;
};

ForwardTrace network_forward_trace(const Network& net, const Tensor& patch);

/// Gradient of one trainable layer.
struct LayerGrad {
    std::size_t layer = 0;
    Tensor weights;
    Tensor bias;
};

/// Gradients for every non-frozen layer, ordered by layer index.
struct GradientSet {
    std::vector<LayerGrad> blocks;

    const LayerGrad* find(std::size_t layer) const;
    LayerGrad* find(std::size_t layer);
    /// Adds `other` block-wise; both sets must cover the same layers.
    void accumulate(const GradientSet& other, double scale = 1.0);
    void scale(double factor);
};

/// d(output_grad . f(patch)) / d(theta) for all non-frozen parameters.
GradientSet network_backward(const Network& net, const Tensor& patch,
                             std::span<const double> output_grad);
GradientSet network_backward(const Network& net, const ForwardTrace& trace,
                             std::span<const double> output_grad);

struct BlockCheck {
    std::size_t layer = 0;
    bool is_bias = false;
    double max_relative_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    bool pass = true;
};

struct GradientCheckReport {
    std::vector<BlockCheck> blocks;
    double max_relative_error = 0.0;
    bool pass = true;
};

/// Compares network_backward against central differences of a fixed seeded
/// projection of the output. Coordinates whose +/- epsilon perturbation moves
/// any pre-activation across the rectifier kink, or within 10*epsilon of it,
/// or changes a pooling winner, are skipped.
GradientCheckReport gradient_check(const Network& net, const Tensor& patch, double epsilon,
                                   double tol);

/// Same check, but against caller-supplied analytic gradients of the
/// projection returned by gradient_check_projection().
GradientCheckReport gradient_check_against(const Network& net, const Tensor& patch,
                                           const GradientSet& analytic, double epsilon,
                                           double tol);

std::vector<double> gradient_check_projection(std::size_t output_dim);

/// |a - n| / max(|a|, |n|, 1e-7)
double relative_error(double analytic, double numeric);

}  // namespace pyramid
