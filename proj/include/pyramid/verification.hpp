#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

namespace pyramid {

// Verification metrics over pair distances. The decision rule throughout is
// "same identity iff distance < threshold"; all rates are exact counts.

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
    friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

/// Operating points sorted by increasing threshold: -inf, every distinct
/// observed distance, +inf.
struct RocCurve {
    std::vector<RocPoint> points;
};

RocCurve compute_roc(std::span<const double> matched, std::span<const double> unmatched);

/// Trapezoidal area under the curve.
double auc(const RocCurve& curve);

struct TprAtFpr {
    double target_fpr = 0.0;
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

/// Largest observed-or-sentinel threshold whose false-positive rate does not
/// exceed `target_fpr`; one sort of the unmatched distances.
TprAtFpr tpr_at_fpr(std::span<const double> matched, std::span<const double> unmatched,
                    double target_fpr);

struct AccuracyPoint {
    double threshold = 0.0;
    double accuracy = 0.0;
};

/// Threshold maximizing (TP + TN) / (P + N); ties go to the smaller threshold.
AccuracyPoint best_accuracy(std::span<const double> matched, std::span<const double> unmatched);

struct VerificationReport {
    double accuracy = 0.0;
    double accuracy_threshold = 0.0;
    double auc = 0.0;
    std::vector<TprAtFpr> tpr_points;
    std::size_t n_matched = 0;
    std::size_t n_unmatched = 0;
    RocCurve roc;
};

VerificationReport evaluate_verification(std::span<const double> matched,
                                         std::span<const double> unmatched,
                                         std::span<const double> fpr_targets);

/// `metric,value` rows (accuracy, AUC, one TPR@FPR=x row per target and its
/// threshold, pair counts) followed by a `roc_points` section of
/// `threshold,fpr,tpr` triples. Reals are written with 17 significant digits.
void write_report_csv(std::ostream& out, const VerificationReport& report);

}  // namespace pyramid
