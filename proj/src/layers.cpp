#include "pyramid/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace pyramid {

void ConvLayer::validate() const {
    if (weights.rank() != 4) {
        throw ShapeError("conv weights must be kh x kw x c_in x c_out, got " +
                         to_string(weights.shape()));
    }
    if (bias.rank() != 1 || bias.extent(0) != out_channels()) {
        throw ShapeError("conv bias shape " + to_string(bias.shape()) +
                         " does not match c_out=" + std::to_string(out_channels()));
    }
}

void FCLayer::validate() const {
    if (weights.rank() != 2) {
        throw ShapeError("fc weights must be d_in x m, got " + to_string(weights.shape()));
    }
    if (bias.rank() != 1 || bias.extent(0) != out_dim()) {
        throw ShapeError("fc bias shape " + to_string(bias.shape()) +
                         " does not match m=" + std::to_string(out_dim()));
    }
}

std::optional<std::size_t> stage_output_edge(std::size_t input_edge, const StageSpec& s) {
    if (s.kernel == 0 || s.pool == 0 || s.channels == 0) return std::nullopt;
    if (input_edge < s.kernel) return std::nullopt;
    const std::size_t conv = input_edge - s.kernel + 1;
    if (conv % s.pool != 0) return std::nullopt;
    return conv / s.pool;
}

std::size_t stage_input_edge(std::size_t output_edge, const StageSpec& s) {
    return output_edge * s.pool + s.kernel - 1;
}

bool Network::layer_frozen(std::size_t layer) const {
    return layer < stages.size() ? stages[layer].conv.frozen : head.frozen;
}

void Network::validate() const {
    std::size_t edge = input_size;
    std::size_t channels = input_channels;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const ConvLayer& conv = stages[i].conv;
        conv.validate();
        if (conv.in_channels() != channels) {
            throw ShapeError("stage " + std::to_string(i) + " expects " +
                             std::to_string(conv.in_channels()) + " channels, previous stage emits " +
                             std::to_string(channels));
        }
        if (conv.kernel_h() != conv.kernel_w()) {
            throw ShapeError("stage " + std::to_string(i) + " kernel is not square");
        }
        auto next = stage_output_edge(
            edge, StageSpec{conv.kernel_h(), conv.out_channels(), stages[i].pool.window});
        if (!next) {
            throw ShapeError("stage " + std::to_string(i) + " cannot consume a " +
                             std::to_string(edge) + "x" + std::to_string(edge) +
                             " map exactly (kernel " + std::to_string(conv.kernel_h()) +
                             ", pool " + std::to_string(stages[i].pool.window) + ")");
        }
        edge = *next;
        channels = conv.out_channels();
    }
    head.validate();
    if (head.in_dim() != edge * edge * channels) {
        throw ShapeError("fc head expects d_in=" + std::to_string(head.in_dim()) +
                         " but last feature map flattens to " +
                         std::to_string(edge * edge * channels));
    }
}

ConvLayer init_conv(std::size_t kernel, std::size_t in_channels, std::size_t out_channels,
                    Rng& rng) {
    const double fan_in = static_cast<double>(kernel * kernel * in_channels);
    const double fan_out = static_cast<double>(kernel * kernel * out_channels);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    ConvLayer layer{Tensor({kernel, kernel, in_channels, out_channels}),
                    Tensor({out_channels}), false};
    for (double& w : layer.weights.values()) w = dist(rng);
    return layer;
}

FCLayer init_fc(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
    std::uniform_real_distribution<double> dist(-limit, limit);
    FCLayer layer{Tensor({in_dim, out_dim}), Tensor({out_dim}), false};
    for (double& w : layer.weights.values()) w = dist(rng);
    return layer;
}

Network make_network(std::size_t input_size, std::size_t input_channels,
                     std::span<const StageSpec> specs, std::size_t output_dim, Rng& rng) {
    Network net;
    net.input_size = input_size;
    net.input_channels = input_channels;
    std::size_t edge = input_size;
    std::size_t channels = input_channels;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        auto next = stage_output_edge(edge, specs[i]);
        if (!next) {
            throw ShapeError("stage " + std::to_string(i) + " cannot consume a " +
                             std::to_string(edge) + "x" + std::to_string(edge) + " map exactly");
        }
        net.stages.push_back({init_conv(specs[i].kernel, channels, specs[i].channels, rng),
                              PoolSpec{specs[i].pool}});
        edge = *next;
        channels = specs[i].channels;
    }
    if (output_dim == 0) throw ShapeError("output_dim must be positive");
    net.head = init_fc(edge * edge * channels, output_dim, rng);
    return net;
}

namespace {

void require_hwc(const Tensor& t, const char* what) {
    if (t.rank() != 3) {
        throw ShapeError(std::string(what) + " expects an h x w x c tensor, got " +
                         to_string(t.shape()));
    }
}

}  // namespace

Tensor conv_forward(const Tensor& input, const ConvLayer& layer) {
    require_hwc(input, "conv_forward");
    layer.validate();
    const std::size_t h = input.extent(0), w = input.extent(1), cin = input.extent(2);
    const std::size_t kh = layer.kernel_h(), kw = layer.kernel_w();
    const std::size_t cout = layer.out_channels();
    if (cin != layer.in_channels()) {
        throw ShapeError("conv_forward: input has " + std::to_string(cin) +
                         " channels, kernel expects " + std::to_string(layer.in_channels()));
    }
    if (h < kh || w < kw) {
        throw ShapeError("conv_forward: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than input " + std::to_string(h) + "x" + std::to_string(w));
    }
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor out({oh, ow, cout});
    const double* in = input.data();
    const double* W = layer.weights.data();
    const double* B = layer.bias.data();
    double* o = out.data();
    for (std::size_t p = 0; p < oh; ++p) {
        for (std::size_t q = 0; q < ow; ++q) {
            double* acc = o + (p * ow + q) * cout;
            std::copy_n(B, cout, acc);
            for (std::size_t a = 0; a < kh; ++a) {
                const std::size_t y = p + kh - 1 - a;
                for (std::size_t b = 0; b < kw; ++b) {
                    const std::size_t x = q + kw - 1 - b;
                    const double* src = in + (y * w + x) * cin;
                    const double* wk = W + (a * kw + b) * cin * cout;
                    for (std::size_t c = 0; c < cin; ++c) {
                        const double v = src[c];
                        const double* wc = wk + c * cout;
                        for (std::size_t z = 0; z < cout; ++z) acc[z] += v * wc[z];
                    }
                }
            }
        }
    }
    return out;
}

Tensor activation(const Tensor& input) {
    Tensor out = input;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor maxpool(const Tensor& input, PoolSpec spec) {
    require_hwc(input, "maxpool");
    const std::size_t s = spec.window;
    if (s == 0) throw ShapeError("maxpool window must be positive");
    const std::size_t h = input.extent(0), w = input.extent(1), c = input.extent(2);
    if (h % s != 0) {
        throw ShapeError("maxpool: height " + std::to_string(h) + " not divisible by window " +
                         std::to_string(s));
    }
    if (w % s != 0) {
        throw ShapeError("maxpool: width " + std::to_string(w) + " not divisible by window " +
                         std::to_string(s));
    }
    Tensor out({h / s, w / s, c});
    for (std::size_t y = 0; y < h / s; ++y) {
        for (std::size_t x = 0; x < w / s; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t a = 0; a < s; ++a) {
                    for (std::size_t b = 0; b < s; ++b) {
                        best = std::max(best, input(y * s + a, x * s + b, ch));
                    }
                }
                out(y, x, ch) = best;
            }
        }
    }
    return out;
}

Tensor layer_forward(const Tensor& input, const ConvLayer& conv, PoolSpec spec) {
    return maxpool(activation(conv_forward(input, conv)), spec);
}

namespace {

Tensor affine(const Tensor& input, const FCLayer& layer) {
    layer.validate();
    const std::size_t d = layer.in_dim(), m = layer.out_dim();
    if (input.size() != d) {
        throw ShapeError("fc_forward: input length " + std::to_string(input.size()) +
                         " does not match d_in=" + std::to_string(d));
    }
    Tensor out = layer.bias;
    const double* W = layer.weights.data();
    for (std::size_t i = 0; i < d; ++i) {
        const double v = input[i];
        if (v == 0.0) continue;
        const double* row = W + i * m;
        for (std::size_t j = 0; j < m; ++j) out[j] += v * row[j];
    }
    return out;
}

}  // namespace

Tensor fc_forward(const Tensor& input, const FCLayer& layer) {
    return activation(affine(input, layer));
}

ForwardTrace network_forward_trace(const Network& net, const Tensor& patch) {
    require_hwc(patch, "network_forward");
    if (patch.extent(0) != net.input_size || patch.extent(1) != net.input_size ||
        patch.extent(2) != net.input_channels) {
        throw ShapeError("network expects " + std::to_string(net.input_size) + "x" +
                         std::to_string(net.input_size) + "x" +
                         std::to_string(net.input_channels) + " input, got " +
                         to_string(patch.shape()));
    }
    ForwardTrace trace;
    Tensor x = patch;
    for (const ConvStage& stage : net.stages) {
        Tensor pre = conv_forward(x, stage.conv);
        Tensor pooled = maxpool(activation(pre), stage.pool);
        trace.stage_inputs.push_back(std::move(x));
        trace.pre_activation.push_back(std::move(pre));
        x = pooled;
        trace.pooled.push_back(std::move(pooled));
    }
    trace.head_input = x.reshaped({x.size()});
    trace.head_pre = affine(trace.head_input, net.head);
    const Tensor out = activation(trace.head_pre);
    trace.output.assign(out.values().begin(), out.values().end());
    return trace;
}

std::vector<double> network_forward(const Network& net, const Tensor& patch) {
    return network_forward_trace(net, patch).output;
}

const LayerGrad* GradientSet::find(std::size_t layer) const {
    for (const LayerGrad& g : blocks) {
        if (g.layer == layer) return &g;
    }
    return nullptr;
}

LayerGrad* GradientSet::find(std::size_t layer) {
    for (LayerGrad& g : blocks) {
        if (g.layer == layer) return &g;
    }
    return nullptr;
}

void GradientSet::accumulate(const GradientSet& other, double scale) {
    if (blocks.empty()) {
        blocks = other.blocks;
        if (scale != 1.0) {
            for (LayerGrad& g : blocks) {
                for (double& v : g.weights.values()) v *= scale;
                for (double& v : g.bias.values()) v *= scale;
            }
        }
        return;
    }
    if (other.blocks.size() != blocks.size()) {
        throw ShapeError("cannot accumulate gradient sets with different layer coverage");
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        LayerGrad& dst = blocks[i];
        const LayerGrad& src = other.blocks[i];
        if (dst.layer != src.layer || dst.weights.shape() != src.weights.shape()) {
            throw ShapeError("gradient block mismatch at layer " + std::to_string(dst.layer));
        }
        for (std::size_t k = 0; k < dst.weights.size(); ++k) dst.weights[k] += scale * src.weights[k];
        for (std::size_t k = 0; k < dst.bias.size(); ++k) dst.bias[k] += scale * src.bias[k];
    }
}

void GradientSet::scale(double factor) {
    for (LayerGrad& g : blocks) {
        for (double& v : g.weights.values()) v *= factor;
        for (double& v : g.bias.values()) v *= factor;
    }
}

namespace {

// Routes each pooled gradient to the first maximal element of its window,
// then applies the rectifier mask of the pre-activation.
Tensor pool_relu_backward(const Tensor& pre, const Tensor& grad_pooled, std::size_t s) {
    const std::size_t oh = grad_pooled.extent(0), ow = grad_pooled.extent(1);
    const std::size_t c = grad_pooled.extent(2);
    Tensor grad_pre(pre.shape());
    for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double g = grad_pooled(y, x, ch);
                if (g == 0.0) continue;
                std::size_t by = y * s, bx = x * s;
                double best = std::max(0.0, pre(by, bx, ch));
                for (std::size_t a = 0; a < s; ++a) {
                    for (std::size_t b = 0; b < s; ++b) {
                        const double v = std::max(0.0, pre(y * s + a, x * s + b, ch));
                        if (v > best) {
                            best = v;
                            by = y * s + a;
                            bx = x * s + b;
                        }
                    }
                }
                if (pre(by, bx, ch) > 0.0) grad_pre(by, bx, ch) += g;
            }
        }
    }
    return grad_pre;
}

}  // namespace

GradientSet network_backward(const Network& net, const ForwardTrace& trace,
                             std::span<const double> output_grad) {
    const std::size_t m = net.output_dim();
    if (output_grad.size() != m) {
        throw ShapeError("output_grad has length " + std::to_string(output_grad.size()) +
                         ", network output_dim is " + std::to_string(m));
    }
    const std::size_t n_stages = net.stages.size();

    // Lowest trainable layer; nothing below it needs an input gradient.
    std::size_t lowest = net.layer_count();
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        if (!net.layer_frozen(l)) {
            lowest = l;
            break;
        }
    }

    GradientSet grads;
    if (lowest == net.layer_count()) return grads;

    // Head.
    std::vector<double> g_pre(m);
    for (std::size_t j = 0; j < m; ++j) {
        g_pre[j] = trace.head_pre[j] > 0.0 ? output_grad[j] : 0.0;
    }
    const std::size_t d = net.head.in_dim();
    if (!net.head.frozen) {
        LayerGrad g{n_stages, Tensor({d, m}), Tensor({m})};
        for (std::size_t i = 0; i < d; ++i) {
            const double v = trace.head_input[i];
            if (v == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) g.weights[i * m + j] = v * g_pre[j];
        }
        for (std::size_t j = 0; j < m; ++j) g.bias[j] = g_pre[j];
        grads.blocks.push_back(std::move(g));
    }
    if (lowest == n_stages) return grads;

    Tensor g_x(trace.pooled.back().shape());
    const double* W = net.head.weights.data();
    for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += W[i * m + j] * g_pre[j];
        g_x[i] = acc;
    }

    std::vector<LayerGrad> stage_grads;
    for (std::size_t l = n_stages; l-- > lowest;) {
        const ConvLayer& conv = net.stages[l].conv;
        const Tensor& pre = trace.pre_activation[l];
        const Tensor& in = trace.stage_inputs[l];
        const Tensor g_conv = pool_relu_backward(pre, g_x, net.stages[l].pool.window);

        const std::size_t w = in.extent(1), cin = in.extent(2);
        const std::size_t kh = conv.kernel_h(), kw = conv.kernel_w();
        const std::size_t cout = conv.out_channels();
        const std::size_t oh = pre.extent(0), ow = pre.extent(1);
        const bool need_input_grad = l > lowest;

        LayerGrad g{l, Tensor(conv.weights.shape()), Tensor({cout})};
        Tensor g_in = need_input_grad ? Tensor(in.shape()) : Tensor();
        const double* src = in.data();
        const double* Wc = conv.weights.data();
        for (std::size_t p = 0; p < oh; ++p) {
            for (std::size_t q = 0; q < ow; ++q) {
                const double* go = g_conv.data() + (p * ow + q) * cout;
                bool any = false;
                for (std::size_t z = 0; z < cout; ++z) {
                    g.bias[z] += go[z];
                    any = any || go[z] != 0.0;
                }
                if (!any) continue;
                for (std::size_t a = 0; a < kh; ++a) {
                    const std::size_t y = p + kh - 1 - a;
                    for (std::size_t b = 0; b < kw; ++b) {
                        const std::size_t x = q + kw - 1 - b;
                        const double* iv = src + (y * w + x) * cin;
                        const std::size_t wbase = (a * kw + b) * cin * cout;
                        double* gw = g.weights.data() + wbase;
                        for (std::size_t c = 0; c < cin; ++c) {
                            const double v = iv[c];
                            double* gwc = gw + c * cout;
                            for (std::size_t z = 0; z < cout; ++z) gwc[z] += v * go[z];
                        }
                        if (need_input_grad) {
                            double* gi = g_in.data() + (y * w + x) * cin;
                            const double* wk = Wc + wbase;
                            for (std::size_t c = 0; c < cin; ++c) {
                                double acc = 0.0;
                                const double* wc = wk + c * cout;
                                for (std::size_t z = 0; z < cout; ++z) acc += wc[z] * go[z];
                                gi[c] += acc;
                            }
                        }
                    }
                }
            }
        }
        if (!conv.frozen) stage_grads.push_back(std::move(g));
        if (need_input_grad) g_x = std::move(g_in);
    }
    // Stage blocks were collected top-down; emit them in layer order before the head.
    std::reverse(stage_grads.begin(), stage_grads.end());
    stage_grads.insert(stage_grads.end(), std::make_move_iterator(grads.blocks.begin()),
                       std::make_move_iterator(grads.blocks.end()));
    grads.blocks = std::move(stage_grads);
    return grads;
}

GradientSet network_backward(const Network& net, const Tensor& patch,
                             std::span<const double> output_grad) {
    if (output_grad.size() != net.output_dim()) {
        throw ShapeError("output_grad has length " + std::to_string(output_grad.size()) +
                         ", network output_dim is " + std::to_string(net.output_dim()));
    }
    return network_backward(net, network_forward_trace(net, patch), output_grad);
}

// ---------------------------------------------------------------------------
// Gradient checking

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    return std::abs(analytic - numeric) / denom;
}

std::vector<double> gradient_check_projection(std::size_t output_dim) {
    Rng rng(0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> dist(0.5, 1.5);
    std::vector<double> r(output_dim);
    for (double& v : r) v = dist(rng);
    return r;
}

namespace {

Tensor& param_block(Network& net, std::size_t layer, bool bias) {
    if (layer < net.stages.size()) {
        return bias ? net.stages[layer].conv.bias : net.stages[layer].conv.weights;
    }
    return bias ? net.head.bias : net.head.weights;
}

double project(const std::vector<double>& out, const std::vector<double>& r) {
    double s = 0.0;
    for (std::size_t j = 0; j < out.size(); ++j) s += out[j] * r[j];
    return s;
}

// True if `moved` crossed or approached a non-differentiable point relative
// to `base`: a rectifier sign change, a pre-activation within `guard` of zero
// that moved, or a different pooling winner.
bool kink_touched(const ForwardTrace& base, const ForwardTrace& moved, double guard) {
    auto pre_touched = [guard](const Tensor& a, const Tensor& b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if ((a[i] > 0.0) != (b[i] > 0.0)) return true;
            if (std::abs(a[i]) < guard && a[i] != b[i]) return true;
        }
        return false;
    };
    for (std::size_t l = 0; l < base.pre_activation.size(); ++l) {
        if (pre_touched(base.pre_activation[l], moved.pre_activation[l])) return true;
        // Pool winners: compare which window element attains the max.
        const Tensor& pa = base.pre_activation[l];
        const Tensor& pb = moved.pre_activation[l];
        const std::size_t oh = base.pooled[l].extent(0), ow = base.pooled[l].extent(1);
        const std::size_t c = pa.extent(2);
        const std::size_t s = pa.extent(0) / oh;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    std::size_t wa = 0, wb = 0;
                    double ba = -1.0, bb = -1.0;
                    double second_a = -1.0;
                    for (std::size_t k = 0; k < s * s; ++k) {
                        const double va = std::max(0.0, pa(y * s + k / s, x * s + k % s, ch));
                        const double vb = std::max(0.0, pb(y * s + k / s, x * s + k % s, ch));
                        if (va > ba) {
                            second_a = ba;
                            ba = va;
                            wa = k;
                        } else if (va > second_a) {
                            second_a = va;
                        }
                        if (vb > bb) {
                            bb = vb;
                            wb = k;
                        }
                    }
                    if (ba > 0.0 && wa != wb) return true;
                    if (ba > 0.0 && ba - second_a < guard) return true;
                }
            }
        }
    }
    return pre_touched(base.head_pre, moved.head_pre);
}

}  // namespace

GradientCheckReport gradient_check_against(const Network& net, const Tensor& patch,
                                           const GradientSet& analytic, double epsilon,
                                           double tol) {
    GradientCheckReport report;
    const std::vector<double> r = gradient_check_projection(net.output_dim());
    const ForwardTrace base = network_forward_trace(net, patch);
    const double guard = 10.0 * epsilon;
    Network probe = net;

    for (std::size_t layer = 0; layer < net.layer_count(); ++layer) {
        if (net.layer_frozen(layer)) continue;
        const LayerGrad* g = analytic.find(layer);
        for (bool is_bias : {false, true}) {
            BlockCheck block{layer, is_bias};
            Tensor& values = param_block(probe, layer, is_bias);
            const Tensor* expected = g ? (is_bias ? &g->bias : &g->weights) : nullptr;
            for (std::size_t i = 0; i < values.size(); ++i) {
                const double saved = values[i];
                values[i] = saved + epsilon;
                const ForwardTrace plus = network_forward_trace(probe, patch);
                values[i] = saved - epsilon;
                const ForwardTrace minus = network_forward_trace(probe, patch);
                values[i] = saved;
                if (kink_touched(base, plus, guard) || kink_touched(base, minus, guard)) {
                    ++block.skipped;
                    continue;
                }
                const double numeric =
                    (project(plus.output, r) - project(minus.output, r)) / (2.0 * epsilon);
                const double a = expected && i < expected->size() ? (*expected)[i] : 0.0;
                const double err = relative_error(a, numeric);
                block.max_relative_error = std::max(block.max_relative_error, err);
                ++block.checked;
            }
            block.pass = block.max_relative_error < tol && (g != nullptr || block.checked == 0);
            report.max_relative_error = std::max(report.max_relative_error, block.max_relative_error);
            report.pass = report.pass && block.pass;
            report.blocks.push_back(block);
        }
    }
    return report;
}

GradientCheckReport gradient_check(const Network& net, const Tensor& patch, double epsilon,
                                   double tol) {
    const std::vector<double> r = gradient_check_projection(net.output_dim());
    const GradientSet analytic = network_backward(net, patch, r);
    return gradient_check_against(net, patch, analytic, epsilon, tol);
}

}  // namespace pyramid
