#pragma once

// Brute-force metric implementations kept deliberately separate from the
// library: naive per-threshold sweeps and explicit region vectors instead of
// histograms and index arithmetic. The test suites compare against these.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "mga/metrics.hpp"
#include "mga/tensor.hpp"

inline double oracle_mae(const mga::Tensor& p, const mga::Tensor& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.data().size(); ++i) s += std::fabs(p.data()[i] - g.data()[i]);
    return s / p.data().size();
}

inline double oracle_iou(const mga::Tensor& p, const mga::Tensor& g) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.data().size(); ++i) {
        const bool a = p.data()[i] >= 0.5, b = g.data()[i] != 0.0;
        if (a && b) ++inter;
        if (a || b) ++uni;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// Naive 256-threshold sweep, recomputing the binarization per threshold.
inline double oracle_max_f(const std::vector<mga::Tensor>& preds,
                           const std::vector<mga::Tensor>& gts,
                           std::array<double, 256>* f_out = nullptr) {
    double best = 0.0;
    for (int k = 0; k < 256; ++k) {
        const double thr = k / 255.0;
        std::vector<double> ps, rs;
        for (std::size_t s = 0; s < preds.size(); ++s) {
            std::int64_t tp = 0, pp = 0, pos = 0;
            const auto p = preds[s].data();
            const auto g = gts[s].data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const bool bp = p[i] >= thr;
                const bool bg = g[i] != 0.0;
                if (bp) ++pp;
                if (bg) ++pos;
                if (bp && bg) ++tp;
            }
            ps.push_back(pp > 0 ? double(tp) / pp : 0.0);
            rs.push_back(pos > 0 ? double(tp) / pos : 0.0);
        }
        const double mp = mga::stable_mean(ps), mr = mga::stable_mean(rs);
        const double denom = 0.3 * mp + mr;
        const double f = denom > 0.0 ? 1.3 * mp * mr / denom : 0.0;
        if (f_out) (*f_out)[k] = f;
        best = std::max(best, f);
    }
    return best;
}

// Second structural-similarity implementation, organized around explicit
// region vectors instead of index arithmetic.
inline double vec_mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

inline double oracle_ssim(const std::vector<double>& x, const std::vector<double>& y) {
    const double eps = 2.220446049250313e-16;
    const double n = double(x.size());
    const double mx = vec_mean(x), my = vec_mean(y);
    double sx = 0, sy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += (x[i] - mx) * (x[i] - mx);
        sy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    sx /= n - 1 + eps;
    sy /= n - 1 + eps;
    sxy /= n - 1 + eps;
    const double a = 4 * mx * my * sxy;
    const double b = (mx * mx + my * my) * (sx + sy);
    if (a != 0) return a / (b + eps);
    return b == 0 ? 1.0 : 0.0;
}

inline double oracle_s_measure(const mga::Tensor& pred, const mga::Tensor& gt) {
    const double eps = 2.220446049250313e-16;
    const int h = pred.dim(pred.ndim() - 2), w = pred.dim(pred.ndim() - 1);
    std::vector<double> p(pred.data().begin(), pred.data().end());
    std::vector<double> g(gt.data().begin(), gt.data().end());
    const double gm = vec_mean(g);
    if (gm == 0.0) return 1.0 - vec_mean(p);
    if (gm == 1.0) return vec_mean(p);

    // object term
    auto masked_score = [&](bool fg) {
        std::vector<double> vals;
        for (std::size_t i = 0; i < p.size(); ++i)
            if ((g[i] > 0.5) == fg) vals.push_back(fg ? p[i] : 1.0 - p[i]);
        const double m = vec_mean(vals);
        double var = 0;
        for (double v : vals) var += (v - m) * (v - m);
        const double sd = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1.0)) : 0.0;
        return 2.0 * m / (m * m + 1.0 + sd + eps);
    };
    const double s_obj = gm * masked_score(true) + (1.0 - gm) * masked_score(false);

    // region term
    double tot = 0, sx = 0, sy = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double v = g[std::size_t(i) * w + j];
            tot += v;
            sx += v * (j + 1);
            sy += v * (i + 1);
        }
    const int cx = int(std::lround(sx / tot)), cy = int(std::lround(sy / tot));
    auto slice = [&](const std::vector<double>& src, int r0, int r1, int c0, int c1) {
        std::vector<double> out;
        for (int i = r0; i < r1; ++i)
            for (int j = c0; j < c1; ++j) out.push_back(src[std::size_t(i) * w + j]);
        return out;
    };
    double s_reg = 0;
    const double area = double(h) * w;
    const int rs[4][4] = {{0, cy, 0, cx}, {0, cy, cx, w}, {cy, h, 0, cx}, {cy, h, cx, w}};
    for (int q = 0; q < 4; ++q) {
        const auto px = slice(p, rs[q][0], rs[q][1], rs[q][2], rs[q][3]);
        const auto gx = slice(g, rs[q][0], rs[q][1], rs[q][2], rs[q][3]);
        const double weight = double(px.size()) / area;
        if (!px.empty()) s_reg += weight * oracle_ssim(px, gx);
    }
    return std::max(0.5 * s_obj + 0.5 * s_reg, 0.0);
}
