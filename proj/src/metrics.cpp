#include "mga/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "mga/error.hpp"

namespace mga {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void check_pair(const Tensor& pred, const Tensor& gt) {
    if (!pred.defined() || !gt.defined()) throw ValidationError("metric inputs must be defined");
    if (pred.shape() != gt.shape())
        throw DimensionError("prediction and ground truth shapes do not match");
    for (double v : pred.data())
        if (!(v >= 0.0 && v <= 1.0))
            throw ValidationError("prediction values must lie in [0, 1]");
    for (double v : gt.data())
        if (v != 0.0 && v != 1.0) throw ValidationError("ground truth must be binary");
}

void check_dataset(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
    if (preds.empty()) throw ValidationError("metric dataset is empty");
    if (preds.size() != gts.size())
        throw ValidationError("prediction and ground truth counts do not match");
    for (std::size_t i = 0; i < preds.size(); ++i) check_pair(preds[i], gts[i]);
}

// Largest k in [0,255] with pred >= k/255, sharing the binarization predicate
// with the per-threshold definition so the sweep is exact.
int threshold_cutoff(double pred) {
    int lo = 0, hi = 255;
    while (lo < hi) {
        const int mid = (lo + hi + 1) / 2;
        if (pred >= static_cast<double>(mid) / 255.0)
            lo = mid;
        else
            hi = mid - 1;
    }
    return lo;
}

// ---- structural similarity pieces ---------------------------------------

double region_ssim(std::span<const double> pred, std::span<const double> gt, int h0, int h1,
                   int w0, int w1, int width) {
    const std::int64_t n = static_cast<std::int64_t>(h1 - h0) * (w1 - w0);
    if (n <= 0) return 0.0;
    double mx = 0.0, my = 0.0;
    for (int i = h0; i < h1; ++i)
        for (int j = w0; j < w1; ++j) {
            mx += pred[static_cast<std::size_t>(i) * width + j];
            my += gt[static_cast<std::size_t>(i) * width + j];
        }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sx = 0.0, sy = 0.0, sxy = 0.0;
    for (int i = h0; i < h1; ++i)
        for (int j = w0; j < w1; ++j) {
            const double dx = pred[static_cast<std::size_t>(i) * width + j] - mx;
            const double dy = gt[static_cast<std::size_t>(i) * width + j] - my;
            sx += dx * dx;
            sy += dy * dy;
            sxy += dx * dy;
        }
    const double denom = static_cast<double>(n) - 1.0 + kEps;
    sx /= denom;
    sy /= denom;
    sxy /= denom;
    const double a = 4.0 * mx * my * sxy;
    const double b = (mx * mx + my * my) * (sx + sy);
    if (a != 0.0) return a / (b + kEps);
    return b == 0.0 ? 1.0 : 0.0;
}

double object_score(std::span<const double> pred, std::span<const double> gt, bool region) {
    std::int64_t n = 0;
    double mean = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if ((gt[i] != 0.0) == region) {
            mean += pred[i];
            ++n;
        }
    if (n == 0) return 0.0;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if ((gt[i] != 0.0) == region) {
            const double d = pred[i] - mean;
            var += d * d;
        }
    const double sd = n > 1 ? std::sqrt(var / (static_cast<double>(n) - 1.0)) : 0.0;
    return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double s_object(std::span<const double> pred, std::span<const double> gt, double gt_mean) {
    std::vector<double> inverted(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) inverted[i] = 1.0 - pred[i];
    const double fg = object_score(pred, gt, true);
    const double bg = object_score(inverted, gt, false);
    return gt_mean * fg + (1.0 - gt_mean) * bg;
}

double s_region(std::span<const double> pred, std::span<const double> gt, int height, int width) {
    // Foreground centroid with one-based half-away-from-zero rounding.
    double total = 0.0, sum_x = 0.0, sum_y = 0.0;
    for (int i = 0; i < height; ++i)
        for (int j = 0; j < width; ++j) {
            const double g = gt[static_cast<std::size_t>(i) * width + j];
            total += g;
            sum_x += g * static_cast<double>(j + 1);
            sum_y += g * static_cast<double>(i + 1);
        }
    const int cx = static_cast<int>(std::lround(sum_x / total));
    const int cy = static_cast<int>(std::lround(sum_y / total));

    const double area = static_cast<double>(height) * width;
    const double w1 = static_cast<double>(cx) * cy / area;
    const double w2 = static_cast<double>(width - cx) * cy / area;
    const double w3 = static_cast<double>(cx) * (height - cy) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    return w1 * region_ssim(pred, gt, 0, cy, 0, cx, width) +
           w2 * region_ssim(pred, gt, 0, cy, cx, width, width) +
           w3 * region_ssim(pred, gt, cy, height, 0, cx, width) +
           w4 * region_ssim(pred, gt, cy, height, cx, width, width);
}

void write_csv(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open " + path + " for writing");
    const std::size_t written = std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
    if (written != text.size()) throw IoError("short write to " + path);
}

std::string format_value(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

}  // namespace

double stable_mean(std::vector<double> values) {
    if (values.empty()) throw ValidationError("mean of an empty set");
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += v;
    return sum / static_cast<double>(values.size());
}

double mae(const Tensor& pred, const Tensor& gt) {
    check_pair(pred, gt);
    const auto p = pred.data();
    const auto g = gt.data();
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - g[i]);
    return sum / static_cast<double>(p.size());
}

double iou(const Tensor& pred, const Tensor& gt, double threshold) {
    check_pair(pred, gt);
    const auto p = pred.data();
    const auto g = gt.data();
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const bool bp = p[i] >= threshold;
        const bool bg = g[i] != 0.0;
        inter += bp && bg;
        uni += bp || bg;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double s_measure(const Tensor& pred, const Tensor& gt, double alpha) {
    check_pair(pred, gt);
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
    if (pred.ndim() < 2) throw DimensionError("structural similarity needs spatial maps");
    const int height = pred.dim(pred.ndim() - 2);
    const int width = pred.dim(pred.ndim() - 1);
    if (static_cast<std::int64_t>(height) * width != pred.numel())
        throw DimensionError("structural similarity expects a single-channel map");

    const auto p = pred.data();
    const auto g = gt.data();
    double gt_mean = 0.0;
    for (double v : g) gt_mean += v;
    gt_mean /= static_cast<double>(g.size());

    double pred_mean = 0.0;
    for (double v : p) pred_mean += v;
    pred_mean /= static_cast<double>(p.size());

    if (gt_mean == 0.0) return 1.0 - pred_mean;
    if (gt_mean == 1.0) return pred_mean;
    const double q =
        alpha * s_object(p, g, gt_mean) + (1.0 - alpha) * s_region(p, g, height, width);
    return std::max(q, 0.0);
}

PrCurves f_measure_curves(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                          double beta2) {
    check_dataset(preds, gts);
    if (!(beta2 > 0.0)) throw ValidationError("beta2 must be positive");

    const std::size_t n = preds.size();
    std::vector<std::array<double, 256>> prec(n), rec(n);
    for (std::size_t s = 0; s < n; ++s) {
        const auto p = preds[s].data();
        const auto g = gts[s].data();
        // Bucket each pixel at its highest passing threshold, then suffix-sum
        // so bucket k holds the counts for "pred >= k/255".
        std::array<std::int64_t, 256> predicted{}, hits{};
        std::int64_t positives = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const int k = threshold_cutoff(p[i]);
            ++predicted[k];
            if (g[i] != 0.0) {
                ++hits[k];
                ++positives;
            }
        }
        for (int k = 254; k >= 0; --k) {
            predicted[k] += predicted[k + 1];
            hits[k] += hits[k + 1];
        }
        for (int k = 0; k < 256; ++k) {
            prec[s][k] = predicted[k] > 0
                             ? static_cast<double>(hits[k]) / static_cast<double>(predicted[k])
                             : 0.0;
            rec[s][k] = positives > 0
                            ? static_cast<double>(hits[k]) / static_cast<double>(positives)
                            : 0.0;
        }
    }

    PrCurves out;
    std::vector<double> column(n);
    for (int k = 0; k < 256; ++k) {
        for (std::size_t s = 0; s < n; ++s) column[s] = prec[s][k];
        out.precision[k] = stable_mean(column);
        for (std::size_t s = 0; s < n; ++s) column[s] = rec[s][k];
        out.recall[k] = stable_mean(column);
        const double denom = beta2 * out.precision[k] + out.recall[k];
        out.f[k] = denom > 0.0 ? (1.0 + beta2) * out.precision[k] * out.recall[k] / denom : 0.0;
        out.max_f = std::max(out.max_f, out.f[k]);
    }
    return out;
}

MetricReport evaluate_maps(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                           const std::vector<std::string>& sequence_of) {
    check_dataset(preds, gts);
    if (sequence_of.size() != preds.size())
        throw ValidationError("sequence labels do not match the sample count");

    MetricReport report;
    std::vector<double> maes(preds.size()), svals(preds.size()), jvals(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        maes[i] = mae(preds[i], gts[i]);
        svals[i] = s_measure(preds[i], gts[i]);
        jvals[i] = iou(preds[i], gts[i]);
    }
    report.mae = stable_mean(maes);
    report.s_measure = stable_mean(svals);
    report.j_mean = stable_mean(jvals);
    const PrCurves curves = f_measure_curves(preds, gts);
    report.precision = curves.precision;
    report.recall = curves.recall;
    report.f_curve = curves.f;
    report.max_f = curves.max_f;

    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < preds.size(); ++i) groups[sequence_of[i]].push_back(i);
    for (const auto& [name, idx] : groups) {
        MetricReport::SequenceRow row;
        row.name = name;
        std::vector<double> m, s, j;
        std::vector<Tensor> gp, gg;
        for (std::size_t i : idx) {
            m.push_back(maes[i]);
            s.push_back(svals[i]);
            j.push_back(jvals[i]);
            gp.push_back(preds[i]);
            gg.push_back(gts[i]);
        }
        row.mae = stable_mean(m);
        row.s_measure = stable_mean(s);
        row.j_mean = stable_mean(j);
        row.max_f = f_measure_curves(gp, gg).max_f;
        report.per_sequence.push_back(std::move(row));
    }
    return report;
}

void write_metric_csv(const std::string& path, const MetricReport& report) {
    std::string text = "metric,value\n";
    text += "MAE," + format_value(report.mae) + "\n";
    text += "S-m," + format_value(report.s_measure) + "\n";
    text += "maxF," + format_value(report.max_f) + "\n";
    text += "J-mean," + format_value(report.j_mean) + "\n";
    write_csv(path, text);
}

void write_pr_curve_csv(const std::string& path, const MetricReport& report) {
    std::string text = "threshold,precision,recall\n";
    for (int k = 0; k < 256; ++k)
        text += format_value(k / 255.0) + "," + format_value(report.precision[k]) + "," +
                format_value(report.recall[k]) + "\n";
    write_csv(path, text);
}

void write_f_curve_csv(const std::string& path, const MetricReport& report) {
    std::string text = "threshold,f\n";
    for (int k = 0; k < 256; ++k)
        text += format_value(k / 255.0) + "," + format_value(report.f_curve[k]) + "\n";
    write_csv(path, text);
}

void write_per_sequence_csv(const std::string& path, const MetricReport& report) {
    std::string text = "sequence,MAE,S-m,maxF,J-mean\n";
    for (const auto& row : report.per_sequence)
        text += row.name + "," + format_value(row.mae) + "," + format_value(row.s_measure) + "," +
                format_value(row.max_f) + "," + format_value(row.j_mean) + "\n";
    write_csv(path, text);
}

}  // namespace mga
