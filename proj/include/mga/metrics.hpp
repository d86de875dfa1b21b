#pragma once

#include <array>
#include <string>
#include <vector>

#include "mga/tensor.hpp"

namespace mga {

// Saliency evaluation suite. Predictions are [0,1] maps, ground truth is
// binary {0,1}, shapes must match (any rank). Dataset-level numbers are means
// of per-image values computed with a sorted reduction, so results do not
// depend on sample order.

double stable_mean(std::vector<double> values);

double mae(const Tensor& pred, const Tensor& gt);

// Intersection-over-union of (pred >= threshold) against gt; both-empty
// counts as a perfect 1.
double iou(const Tensor& pred, const Tensor& gt, double threshold = 0.5);

// Structural similarity for saliency maps: alpha * object-aware +
// (1-alpha) * region-aware, with the customary degenerate conventions
// (all-zero gt scores 1 - mean(pred), all-one gt scores mean(pred), the
// combined score is clamped at 0, and empty quadrants contribute 0).
double s_measure(const Tensor& pred, const Tensor& gt, double alpha = 0.5);

// 256-threshold precision/recall sweep pooled over a dataset: thresholds are
// k/255, a pixel is positive when pred >= threshold. Per-image precision is 0
// when nothing is predicted positive; recall is 0 for an empty ground truth.
// Per-threshold dataset means feed F = (1+beta2) P R / (beta2 P + R).
struct PrCurves {
    std::array<double, 256> precision{}, recall{}, f{};
    double max_f = 0.0;
};
PrCurves f_measure_curves(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                          double beta2 = 0.3);

struct MetricReport {
    double mae = 0.0, s_measure = 0.0, max_f = 0.0, j_mean = 0.0;
    std::array<double, 256> precision{}, recall{}, f_curve{};
    struct SequenceRow {
        std::string name;
        double mae = 0.0, s_measure = 0.0, max_f = 0.0, j_mean = 0.0;
    };
    std::vector<SequenceRow> per_sequence;
};

// sequence_of[i] names the clip sample i belongs to; the per-sequence
// breakdown groups by that name (aggregates stay pooled over all samples).
MetricReport evaluate_maps(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                           const std::vector<std::string>& sequence_of);

void write_metric_csv(const std::string& path, const MetricReport& report);
void write_pr_curve_csv(const std::string& path, const MetricReport& report);
void write_f_curve_csv(const std::string& path, const MetricReport& report);
void write_per_sequence_csv(const std::string& path, const MetricReport& report);

}  // namespace mga
