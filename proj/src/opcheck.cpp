#include "mga/opcheck.hpp"

#include <cmath>
#include <functional>

#include "mga/attention.hpp"
#include "mga/rng.hpp"
#include "mga/tensor.hpp"

namespace mga {

namespace {

std::vector<double> draw(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -2.0, double hi = 2.0) {
    const auto n = static_cast<std::size_t>([&] {
        std::int64_t p = 1;
        for (int d : shape) p *= d;
        return p;
    }());
    return Tensor::from_data(std::move(shape), draw(rng, n, lo, hi));
}

struct OpCase {
    std::string name;
    // Builds inputs and a forward closure for one trial.
    std::function<GradReport(Rng&, double)> run;
};

GradReport run_case(const std::function<Tensor()>& fwd, std::vector<Tensor> inputs,
                    double step) {
    return check_gradients(fwd, std::move(inputs), step);
}

}  // namespace

std::vector<OpCheckOutcome> run_op_gradchecks(int trials, std::uint64_t seed, double step) {
    std::vector<OpCase> cases;

    cases.push_back({"conv2d_3x3_pad", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 6, 6});
        auto w = rand_tensor(rng, {2, 3, 3, 3}, -1.0, 1.0);
        auto b = rand_tensor(rng, {2}, -1.0, 1.0);
        auto wts = rand_tensor(rng, {2, 2, 6, 6}, -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(conv2d(x, w, b, 1, 1, 1), wts)); },
                        {x, w, b}, step);
    }});
    cases.push_back({"conv2d_dilated", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 6, 6});
        auto w = rand_tensor(rng, {2, 3, 3, 3}, -1.0, 1.0);
        auto b = rand_tensor(rng, {2}, -1.0, 1.0);
        auto wts = rand_tensor(rng, {2, 2, 6, 6}, -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(conv2d(x, w, b, 1, 2, 2), wts)); },
                        {x, w, b}, step);
    }});
    cases.push_back({"conv2d_strided_1x1", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {1, 4, 6, 6});
        auto w = rand_tensor(rng, {3, 4, 1, 1}, -1.0, 1.0);
        auto wts = rand_tensor(rng, {1, 3, 6, 6}, -1.0, 1.0);
        return run_case(
            [&] { return sum(elem_mul(conv2d(x, w, std::nullopt, 1, 0, 1), wts)); }, {x, w},
            step);
    }});
    cases.push_back({"conv2d_stride2_7x7", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {1, 2, 9, 9});
        auto w = rand_tensor(rng, {2, 2, 7, 7}, -0.5, 0.5);
        auto b = rand_tensor(rng, {2}, -1.0, 1.0);
        auto wts = rand_tensor(rng, {1, 2, 5, 5}, -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(conv2d(x, w, b, 2, 3, 1), wts)); },
                        {x, w, b}, step);
    }});
    cases.push_back({"relu", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 4, 4});
        for (auto& v : x.data())  // keep clear of the kink where FD is invalid
            if (std::abs(v) < 1e-3) v = v < 0 ? -1e-3 : 1e-3;
        auto wts = rand_tensor(rng, x.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(relu(x), wts)); }, {x}, step);
    }});
    cases.push_back({"sigmoid", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 4, 4});
        auto wts = rand_tensor(rng, x.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(sigmoid(x), wts)); }, {x}, step);
    }});
    cases.push_back({"softmax_channel", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 5, 1, 1});
        auto wts = rand_tensor(rng, x.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(softmax(x, 1), wts)); }, {x}, step);
    }});
    cases.push_back({"softmax_spatial", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {1, 2, 3, 4});
        auto wts = rand_tensor(rng, x.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(softmax(x, 3), wts)); }, {x}, step);
    }});
    cases.push_back({"global_avg_pool", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 4, 5});
        auto wts = rand_tensor(rng, {2, 3, 1, 1}, -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(global_avg_pool(x), wts)); }, {x}, step);
    }});
    cases.push_back({"avg_pool", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {1, 2, 8, 8});
        auto wts = rand_tensor(rng, {1, 2, 2, 2}, -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(avg_pool(x, 4), wts)); }, {x}, step);
    }});
    cases.push_back({"elem_mul_same", [](Rng& rng, double step) {
        auto a = rand_tensor(rng, {2, 3, 4, 4});
        auto b = rand_tensor(rng, {2, 3, 4, 4});
        auto wts = rand_tensor(rng, a.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(elem_mul(a, b), wts)); }, {a, b}, step);
    }});
    cases.push_back({"elem_mul_map", [](Rng& rng, double step) {
        auto a = rand_tensor(rng, {2, 3, 4, 4});
        auto b = rand_tensor(rng, {2, 1, 4, 4});
        auto wts = rand_tensor(rng, a.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(elem_mul(a, b), wts)); }, {a, b}, step);
    }});
    cases.push_back({"elem_mul_map2d", [](Rng& rng, double step) {
        auto a = rand_tensor(rng, {2, 3, 4, 4});
        auto b = rand_tensor(rng, {4, 4});
        auto wts = rand_tensor(rng, a.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(elem_mul(a, b), wts)); }, {a, b}, step);
    }});
    cases.push_back({"elem_mul_chanvec", [](Rng& rng, double step) {
        auto a = rand_tensor(rng, {2, 3, 4, 4});
        auto b = rand_tensor(rng, {2, 3, 1, 1});
        auto wts = rand_tensor(rng, a.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(elem_mul(a, b), wts)); }, {a, b}, step);
    }});
    cases.push_back({"elem_add_map", [](Rng& rng, double step) {
        auto a = rand_tensor(rng, {2, 3, 4, 4});
        auto b = rand_tensor(rng, {2, 1, 4, 4});
        auto wts = rand_tensor(rng, a.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(elem_add(a, b), wts)); }, {a, b}, step);
    }});
    cases.push_back({"concat_channel", [](Rng& rng, double step) {
        auto a = rand_tensor(rng, {2, 2, 3, 3});
        auto b = rand_tensor(rng, {2, 3, 3, 3});
        auto wts = rand_tensor(rng, {2, 5, 3, 3}, -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(concat({a, b}, 1), wts)); }, {a, b}, step);
    }});
    cases.push_back({"bilinear_upsample", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {1, 2, 3, 3});
        auto wts = rand_tensor(rng, {1, 2, 6, 6}, -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(bilinear_upsample(x, 2), wts)); }, {x},
                        step);
    }});
    cases.push_back({"broadcast_hw", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 1, 1});
        auto wts = rand_tensor(rng, {2, 3, 4, 5}, -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(broadcast_hw(x, 4, 5), wts)); }, {x}, step);
    }});
    cases.push_back({"channel_norm", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 4, 4});
        auto g = rand_tensor(rng, {3}, 0.5, 1.5);
        auto b = rand_tensor(rng, {3}, -0.5, 0.5);
        auto wts = rand_tensor(rng, x.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(channel_norm(x, g, b), wts)); }, {x, g, b},
                        step);
    }});
    cases.push_back({"channel_norm_frozen", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 4, 4});
        auto g = rand_tensor(rng, {3}, 0.5, 1.5);
        auto b = rand_tensor(rng, {3}, -0.5, 0.5);
        auto mean = draw(rng, 3, -0.5, 0.5);
        auto var = draw(rng, 3, 0.5, 1.5);
        auto wts = rand_tensor(rng, x.shape(), -1.0, 1.0);
        return run_case(
            [&] { return sum(elem_mul(channel_norm_frozen(x, g, b, mean, var), wts)); },
            {x, g, b}, step);
    }});
    cases.push_back({"bce_after_sigmoid", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {1, 1, 4, 4});
        std::vector<double> t(16);
        for (auto& v : t) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        auto target = Tensor::from_data({1, 1, 4, 4}, std::move(t));
        return run_case([&] { return bce_loss(sigmoid(x), target); }, {x}, step);
    }});
    cases.push_back({"scale_sum", [](Rng& rng, double step) {
        auto x = rand_tensor(rng, {2, 3, 2, 2});
        return run_case([&] { return sum(scale(x, -1.7)); }, {x}, step);
    }});

    std::vector<OpCheckOutcome> results;
    Rng root(seed);
    for (auto& c : cases) {
        OpCheckOutcome out;
        out.op = c.name;
        Rng rng = root.fork(std::hash<std::string>{}(c.name));
        for (int t = 0; t < trials; ++t) {
            GradReport r = c.run(rng, step);
            out.max_rel_err = std::max(out.max_rel_err, r.max_rel_err);
            out.checked += r.checked;
        }
        results.push_back(std::move(out));
    }
    return results;
}

namespace {

std::vector<Tensor> with_params(std::vector<Tensor> inputs, AttentionParams& p) {
    for (Parameter* par : attention_parameters(p)) inputs.push_back(par->tensor);
    return inputs;
}

}  // namespace

std::vector<OpCheckOutcome> run_module_gradchecks(int trials, std::uint64_t seed, double step) {
    const int C = 4, CM = 3, H = 5, W = 5;
    std::vector<OpCase> cases;

    cases.push_back({"mga_m", [=](Rng& rng, double step) {
        auto fa = rand_tensor(rng, {1, C, H, W});
        // interior of [0,1]: perturbed map values must stay valid
        auto pm = rand_tensor(rng, {1, 1, H, W}, 0.01, 0.99);
        auto wts = rand_tensor(rng, fa.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(mga_m(fa, pm), wts)); }, {fa, pm}, step);
    }});
    cases.push_back({"mga_t", [=](Rng& rng, double step) {
        auto fa = rand_tensor(rng, {1, C, H, W});
        auto fm = rand_tensor(rng, {1, CM, H, W});
        auto p = make_attention_params(AttentionKind::MgaT, C, CM, rng, "t");
        auto wts = rand_tensor(rng, fa.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(mga_t(fa, fm, p), wts)); },
                        with_params({fa, fm}, p), step);
    }});
    cases.push_back({"mga_tm", [=](Rng& rng, double step) {
        auto fa = rand_tensor(rng, {1, C, H, W});
        auto fm = rand_tensor(rng, {1, CM, H, W});
        auto p = make_attention_params(AttentionKind::MgaTm, C, CM, rng, "tm");
        auto wts = rand_tensor(rng, fa.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(mga_tm(fa, fm, p), wts)); },
                        with_params({fa, fm}, p), step);
    }});
    cases.push_back({"mga_tmc", [=](Rng& rng, double step) {
        auto fa = rand_tensor(rng, {1, C, H, W});
        auto fm = rand_tensor(rng, {1, CM, H, W});
        auto p = make_attention_params(AttentionKind::MgaTmc, C, CM, rng, "tmc");
        auto wts = rand_tensor(rng, fa.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(mga_tmc(fa, fm, p), wts)); },
                        with_params({fa, fm}, p), step);
    }});
    cases.push_back({"fuse_concat", [=](Rng& rng, double step) {
        auto fa = rand_tensor(rng, {1, C, H, W});
        auto fm = rand_tensor(rng, {1, CM, H, W});
        auto p = make_attention_params(AttentionKind::Concat, C, CM, rng, "cat");
        auto wts = rand_tensor(rng, fa.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(fuse_concat(fa, fm, p), wts)); },
                        with_params({fa, fm}, p), step);
    }});
    cases.push_back({"fuse_mul_tensor", [=](Rng& rng, double step) {
        auto fa = rand_tensor(rng, {1, C, H, W});
        auto fm = rand_tensor(rng, {1, CM, H, W});
        auto p = make_attention_params(AttentionKind::Mul, C, CM, rng, "mul");
        auto wts = rand_tensor(rng, fa.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(fuse_mul(fa, fm, p), wts)); },
                        with_params({fa, fm}, p), step);
    }});
    cases.push_back({"fuse_add_map", [=](Rng& rng, double step) {
        auto fa = rand_tensor(rng, {1, C, H, W});
        auto pm = rand_tensor(rng, {1, 1, H, W}, 0.01, 0.99);
        auto p = make_attention_params(AttentionKind::Add, C, 1, rng, "add");
        auto wts = rand_tensor(rng, fa.shape(), -1.0, 1.0);
        return run_case([&] { return sum(elem_mul(fuse_add(fa, pm, p), wts)); }, {fa, pm},
                        step);
    }});

    std::vector<OpCheckOutcome> results;
    Rng root(seed);
    for (auto& c : cases) {
        OpCheckOutcome out;
        out.op = c.name;
        Rng rng = root.fork(std::hash<std::string>{}(c.name));
        for (int t = 0; t < trials; ++t) {
            GradReport r = c.run(rng, step);
            out.max_rel_err = std::max(out.max_rel_err, r.max_rel_err);
            out.checked += r.checked;
        }
        results.push_back(std::move(out));
    }
    return results;
}

}  // namespace mga
