#include "pyramid/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

namespace pyramid {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_scores(std::span<const double> matched, std::span<const double> unmatched,
                    const char* what) {
    if (matched.empty() || unmatched.empty()) {
        throw std::invalid_argument(std::string(what) +
                                    ": matched and unmatched distances must be nonempty");
    }
    auto is_nan = [](double v) { return std::isnan(v); };
    if (std::any_of(matched.begin(), matched.end(), is_nan) ||
        std::any_of(unmatched.begin(), unmatched.end(), is_nan)) {
        throw std::invalid_argument(std::string(what) + ": distances must not be NaN");
    }
}

std::vector<double> sorted(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t count_below(const std::vector<double>& sorted_values, double t) {
    return static_cast<std::size_t>(
        std::lower_bound(sorted_values.begin(), sorted_values.end(), t) - sorted_values.begin());
}

// Calls visit(threshold, matched_below, unmatched_below) for -inf, each
// distinct value in ascending order, and +inf.
template <typename Visit>
void sweep(const std::vector<double>& m, const std::vector<double>& u, Visit&& visit) {
    visit(-kInf, std::size_t{0}, std::size_t{0});
    std::size_t i = 0, j = 0;
    while (i < m.size() || j < u.size()) {
        const double t = j == u.size() || (i < m.size() && m[i] < u[j]) ? m[i] : u[j];
        visit(t, i, j);  // counts strictly below t
        while (i < m.size() && m[i] == t) ++i;
        while (j < u.size() && u[j] == t) ++j;
    }
    visit(kInf, m.size(), u.size());
}

}  // namespace

RocCurve compute_roc(std::span<const double> matched, std::span<const double> unmatched) {
    require_scores(matched, unmatched, "compute_roc");
    const std::vector<double> m = sorted(matched), u = sorted(unmatched);
    const double P = static_cast<double>(m.size()), N = static_cast<double>(u.size());
    RocCurve curve;
    curve.points.reserve(m.size() + u.size() + 2);
    sweep(m, u, [&](double t, std::size_t tp, std::size_t fp) {
        curve.points.push_back({t, static_cast<double>(fp) / N, static_cast<double>(tp) / P});
    });
    return curve;
}

double auc(const RocCurve& curve) {
    double area = 0.0;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const RocPoint& a = curve.points[k - 1];
        const RocPoint& b = curve.points[k];
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
    }
    return area;
}

TprAtFpr tpr_at_fpr(std::span<const double> matched, std::span<const double> unmatched,
                    double target_fpr) {
    require_scores(matched, unmatched, "tpr_at_fpr");
    if (!(target_fpr >= 0.0 && target_fpr < 1.0)) {
        throw std::invalid_argument("tpr_at_fpr: target FPR must lie in [0,1)");
    }
    const std::vector<double> u = sorted(unmatched);
    const std::size_t n = u.size();
    const double N = static_cast<double>(n);

    // Largest accepted false-positive count k with k / N <= target.
    auto k = static_cast<std::size_t>(std::floor(target_fpr * N));
    while (k + 1 <= n && static_cast<double>(k + 1) / N <= target_fpr) ++k;
    while (k > 0 && static_cast<double>(k) / N > target_fpr) --k;

    // Any threshold t <= u[k] admits at most k unmatched distances below it.
    TprAtFpr r;
    r.target_fpr = target_fpr;
    r.threshold = k < n ? u[k] : kInf;
    r.fpr = static_cast<double>(count_below(u, r.threshold)) / N;
    std::size_t tp = 0;
    for (double d : matched) tp += d < r.threshold ? 1 : 0;
    r.tpr = static_cast<double>(tp) / static_cast<double>(matched.size());
    return r;
}

AccuracyPoint best_accuracy(std::span<const double> matched, std::span<const double> unmatched) {
    require_scores(matched, unmatched, "best_accuracy");
    const std::vector<double> m = sorted(matched), u = sorted(unmatched);
    const double total = static_cast<double>(m.size() + u.size());
    AccuracyPoint best{0.0, -1.0};
    std::size_t best_correct = 0;
    bool first = true;
    sweep(m, u, [&](double t, std::size_t tp, std::size_t fp) {
        const std::size_t correct = tp + (u.size() - fp);
        if (first || correct > best_correct) {
            best_correct = correct;
            best.threshold = t;
            first = false;
        }
    });
    best.accuracy = static_cast<double>(best_correct) / total;
    return best;
}

VerificationReport evaluate_verification(std::span<const double> matched,
                                         std::span<const double> unmatched,
                                         std::span<const double> fpr_targets) {
    VerificationReport report;
    report.roc = compute_roc(matched, unmatched);
    report.auc = auc(report.roc);
    const AccuracyPoint acc = best_accuracy(matched, unmatched);
    report.accuracy = acc.accuracy;
    report.accuracy_threshold = acc.threshold;
    for (double target : fpr_targets) report.tpr_points.push_back(tpr_at_fpr(matched, unmatched, target));
    report.n_matched = matched.size();
    report.n_unmatched = unmatched.size();
    return report;
}

namespace {

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Short label for an FPR target, e.g. 0.001 -> "0.001".
std::string target_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

}  // namespace

void write_report_csv(std::ostream& out, const VerificationReport& report) {
    out << "metric,value\n";
    out << "accuracy," << fmt(report.accuracy) << '\n';
    out << "accuracy_threshold," << fmt(report.accuracy_threshold) << '\n';
    out << "auc," << fmt(report.auc) << '\n';
    for (const TprAtFpr& p : report.tpr_points) {
        const std::string label = target_label(p.target_fpr);
        out << "TPR@FPR=" << label << ',' << fmt(p.tpr) << '\n';
        out << "threshold@FPR=" << label << ',' << fmt(p.threshold) << '\n';
        out << "achieved_fpr@FPR=" << label << ',' << fmt(p.fpr) << '\n';
    }
    out << "n_matched," << report.n_matched << '\n';
    out << "n_unmatched," << report.n_unmatched << '\n';
    out << "roc_points\n";
    out << "threshold,fpr,tpr\n";
    for (const RocPoint& p : report.roc.points) {
        out << fmt(p.threshold) << ',' << fmt(p.fpr) << ',' << fmt(p.tpr) << '\n';
    }
}

}  // namespace pyramid
