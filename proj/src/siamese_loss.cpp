#include "pyramid/siamese_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pyramid/tensor.hpp"

namespace pyramid {

PairLabel PairLabel::from_delta(int delta) {
    if (delta != 1 && delta != -1) {
        throw std::invalid_argument("pair label must be +1 or -1, got " + std::to_string(delta));
    }
    return PairLabel(delta);
}

double ComparatorParams::alpha() const { return std::exp(log_alpha); }

double distance(std::span<const double> v1, std::span<const double> v2) {
    if (v1.size() != v2.size()) {
        throw ShapeError("distance: vector lengths " + std::to_string(v1.size()) + " and " +
                         std::to_string(v2.size()) + " differ");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < v1.size(); ++i) {
        const double d = v1[i] - v2[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double comparator(double dist, const ComparatorParams& params) {
    return params.alpha() * dist - params.beta;
}

double pair_loss(double D, PairLabel label) {
    const double x = label.delta() * D;
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

PairLossGrads pair_loss_grads(std::span<const double> v1, std::span<const double> v2,
                              PairLabel label, const ComparatorParams& params) {
    const double d = distance(v1, v2);
    const double alpha = params.alpha();
    const double D = alpha * d - params.beta;
    const double delta = label.delta();

    PairLossGrads g;
    g.loss = pair_loss(D, label);
    g.d_D = delta * logistic(delta * D);
    g.d_log_alpha = g.d_D * alpha * d;
    g.d_beta = -g.d_D;
    g.d_v1.assign(v1.size(), 0.0);
    g.d_v2.assign(v2.size(), 0.0);
    if (d > 0.0) {
        const double k = g.d_D * alpha / d;
        for (std::size_t i = 0; i < v1.size(); ++i) {
            g.d_v1[i] = k * (v1[i] - v2[i]);
            g.d_v2[i] = -g.d_v1[i];
        }
    }
    return g;
}

}  // namespace pyramid
