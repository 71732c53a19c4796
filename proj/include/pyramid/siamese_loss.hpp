#pragma once

#include <span>
#include <vector>

namespace pyramid {

/// Match label: +1 for the same identity, -1 for different identities.
class PairLabel {
public:
    static constexpr PairLabel matched() { return PairLabel(1); }
    static constexpr PairLabel unmatched() { return PairLabel(-1); }
    /// Throws std::invalid_argument unless delta is +1 or -1.
    static PairLabel from_delta(int delta);

    constexpr int delta() const { return delta_; }
    constexpr bool is_matched() const { return delta_ > 0; }
    friend constexpr bool operator==(PairLabel, PairLabel) = default;

private:
    constexpr explicit PairLabel(int delta) : delta_(delta) {}
    int delta_;
};

/// Comparator D = alpha * d - beta with alpha stored as log(alpha), so alpha
/// stays positive under any update.
struct ComparatorParams {
    double log_alpha = 0.0;
    double beta = 1.0;

    double alpha() const;
    friend bool operator==(const ComparatorParams&, const ComparatorParams&) = default;
};

/// Euclidean distance.
double distance(std::span<const double> v1, std::span<const double> v2);

double comparator(double dist, const ComparatorParams& params);

/// log(1 + exp(delta * D)), evaluated as max(x,0) + log1p(exp(-|x|)).
double pair_loss(double D, PairLabel label);

double logistic(double x);

struct PairLossGrads {
    double loss = 0.0;
    double d_D = 0.0;  // dL/dD
    std::vector<double> d_v1;
    std::vector<double> d_v2;
    double d_log_alpha = 0.0;
    double d_beta = 0.0;
};

/// Loss and its gradients with respect to both feature vectors and the
/// comparator parameters. At zero distance the feature gradients are zero.
PairLossGrads pair_loss_grads(std::span<const double> v1, std::span<const double> v2,
                              PairLabel label, const ComparatorParams& params);

}  // namespace pyramid
