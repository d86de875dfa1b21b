#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mga/attention.hpp"
#include "mga/error.hpp"
#include "mga/opcheck.hpp"
#include "mga/rng.hpp"
#include "mga/tensor.hpp"

using namespace mga;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<int> shape, double lo = -2.0, double hi = 2.0) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v));
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool approx_all(std::span<const double> a, std::span<const double> b, double tol) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i] - b[i]) > tol) return false;
    return true;
}

}  // namespace

TEST_CASE("mga_m fixtures") {
    Rng rng(101);
    Tensor fa = rand_tensor(rng, {1, 3, 4, 4});

    Tensor zeros = Tensor::zeros({1, 1, 4, 4});
    CHECK(bit_equal(mga_m(fa, zeros).data(), fa.data()));

    Tensor ones = Tensor::full({1, 1, 4, 4}, 1.0);
    Tensor doubled = mga_m(fa, ones);
    for (std::size_t i = 0; i < fa.data().size(); ++i)
        CHECK(doubled.data()[i] == doctest::Approx(2.0 * fa.data()[i]));

    Tensor small = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor map = Tensor::from_data({1, 1, 2, 2}, {0.0, 1.0, 0.5, 0.0});
    Tensor out = mga_m(small, map);
    CHECK(out.data()[0] == doctest::Approx(1.0));
    CHECK(out.data()[1] == doctest::Approx(4.0));
    CHECK(out.data()[2] == doctest::Approx(4.5));
    CHECK(out.data()[3] == doctest::Approx(4.0));

    CHECK_THROWS_AS(mga_m(fa, Tensor::full({1, 1, 4, 4}, 1.5)), ValidationError);
    CHECK_THROWS_AS(mga_m(fa, Tensor::full({1, 1, 4, 4}, -0.1)), ValidationError);
    CHECK_THROWS_AS(mga_m(fa, Tensor::zeros({1, 1, 3, 3})), DimensionError);
    CHECK_THROWS_AS(mga_m(fa, Tensor::zeros({1, 3, 4, 4})), DimensionError);
}

TEST_CASE("mga_t fixtures and compositional oracle") {
    Rng rng(103);
    const int C = 4, CM = 3;
    Tensor fa = rand_tensor(rng, {2, C, 5, 5});
    Tensor fm = rand_tensor(rng, {2, CM, 5, 5});

    AttentionParams p = make_attention_params(AttentionKind::MgaT, C, CM, rng, "t");
    p.g_weight.tensor.zero_grad();

    SUBCASE("zero conv gives the residual identity") {
        AttentionParams z = make_attention_params(AttentionKind::MgaT, C, CM, rng, "z");
        std::fill(z.g_weight.tensor.data().begin(), z.g_weight.tensor.data().end(), 0.0);
        CHECK(bit_equal(mga_t(fa, fm, z).data(), fa.data()));
        std::fill(z.g_bias.tensor.data().begin(), z.g_bias.tensor.data().end(), 1.0);
        Tensor out = mga_t(fa, fm, z);
        for (std::size_t i = 0; i < fa.data().size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(2.0 * fa.data()[i]));
    }
    SUBCASE("matches the hand-composed pipeline bit-exactly") {
        Tensor expect =
            elem_add(elem_mul(fa, conv2d(fm, p.g_weight.tensor, p.g_bias.tensor)), fa);
        CHECK(bit_equal(mga_t(fa, fm, p).data(), expect.data()));
    }
    SUBCASE("channel mismatch is rejected") {
        Tensor bad = rand_tensor(rng, {2, CM + 2, 5, 5});
        CHECK_THROWS_AS(mga_t(fa, bad, p), DimensionError);
    }
}

TEST_CASE("mga_tm fixtures and compositional oracle") {
    Rng rng(107);
    const int C = 4, CM = 3;
    Tensor fa = rand_tensor(rng, {1, C, 6, 6});
    Tensor fm = rand_tensor(rng, {1, CM, 6, 6});

    SUBCASE("zeroed h gives 1.5x") {
        AttentionParams z = make_attention_params(AttentionKind::MgaTm, C, CM, rng, "z");
        std::fill(z.h_weight.tensor.data().begin(), z.h_weight.tensor.data().end(), 0.0);
        Tensor out = mga_tm(fa, fm, z);
        for (std::size_t i = 0; i < fa.data().size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(1.5 * fa.data()[i]));
    }
    SUBCASE("saturated h approaches 2x") {
        AttentionParams z = make_attention_params(AttentionKind::MgaTm, C, CM, rng, "z");
        std::fill(z.h_weight.tensor.data().begin(), z.h_weight.tensor.data().end(), 0.0);
        z.h_bias.tensor.data()[0] = 50.0;
        Tensor out = mga_tm(fa, fm, z);
        for (std::size_t i = 0; i < fa.data().size(); ++i)
            CHECK(std::abs(out.data()[i] - 2.0 * fa.data()[i]) <= 1e-9);
    }
    SUBCASE("matches sigmoid-conv composition bit-exactly") {
        AttentionParams p = make_attention_params(AttentionKind::MgaTm, C, CM, rng, "p");
        Tensor map = sigmoid(conv2d(fm, p.h_weight.tensor, p.h_bias.tensor));
        Tensor expect = elem_add(elem_mul(fa, map), fa);
        CHECK(bit_equal(mga_tm(fa, fm, p).data(), expect.data()));
    }
}

TEST_CASE("mga_tmc fixtures, channel-weight normalization, compositional oracle") {
    Rng rng(109);
    const int C = 5, CM = 3;
    Tensor fa = rand_tensor(rng, {1, C, 4, 4});
    Tensor fm = rand_tensor(rng, {1, CM, 4, 4});

    SUBCASE("zeroed hp gives uniform channel weights") {
        AttentionParams p = make_attention_params(AttentionKind::MgaTmc, C, CM, rng, "p");
        std::fill(p.hp_weight.tensor.data().begin(), p.hp_weight.tensor.data().end(), 0.0);
        Tensor map = sigmoid(conv2d(fm, p.h_weight.tensor, p.h_bias.tensor));
        Tensor fp = elem_mul(fa, map);
        Tensor expect = elem_add(fp, fa);
        CHECK(approx_all(mga_tmc(fa, fm, p).data(), expect.data(), 1e-12));
    }
    SUBCASE("zeroed h and hp gives 1.5x") {
        AttentionParams p = make_attention_params(AttentionKind::MgaTmc, C, CM, rng, "p");
        std::fill(p.h_weight.tensor.data().begin(), p.h_weight.tensor.data().end(), 0.0);
        std::fill(p.hp_weight.tensor.data().begin(), p.hp_weight.tensor.data().end(), 0.0);
        Tensor out = mga_tmc(fa, fm, p);
        for (std::size_t i = 0; i < fa.data().size(); ++i)
            CHECK(out.data()[i] == doctest::Approx(1.5 * fa.data()[i]));
    }
    SUBCASE("channel weights sum to C and the full output matches the composition") {
        for (int trial = 0; trial < 25; ++trial) {
            AttentionParams p = make_attention_params(AttentionKind::MgaTmc, C, CM, rng, "p");
            Tensor a = rand_tensor(rng, {2, C, 4, 4});
            Tensor m = rand_tensor(rng, {2, CM, 4, 4});

            Tensor map = sigmoid(conv2d(m, p.h_weight.tensor, p.h_bias.tensor));
            Tensor fp = elem_mul(a, map);
            Tensor w = scale(
                softmax(conv2d(global_avg_pool(fp), p.hp_weight.tensor, p.hp_bias.tensor), 1),
                static_cast<double>(C));
            for (int n = 0; n < 2; ++n) {
                double total = 0.0;
                for (int c = 0; c < C; ++c) total += w.at4(n, c, 0, 0);
                CHECK(std::abs(total - C) <= 1e-9);
            }
            Tensor expect = elem_add(elem_mul(fp, w), a);
            CHECK(bit_equal(mga_tmc(a, m, p).data(), expect.data()));
        }
    }
}

TEST_CASE("fusion baselines") {
    Rng rng(113);
    const int C = 4, CM = 3;
    Tensor fa = rand_tensor(rng, {1, C, 4, 4});
    Tensor fm = rand_tensor(rng, {1, CM, 4, 4});

    SUBCASE("add with zeroed alignment conv returns f_a") {
        AttentionParams p = make_attention_params(AttentionKind::Add, C, CM, rng, "a");
        std::fill(p.g_weight.tensor.data().begin(), p.g_weight.tensor.data().end(), 0.0);
        CHECK(bit_equal(fuse_add(fa, fm, p).data(), fa.data()));
    }
    SUBCASE("mul with an all-ones map returns f_a") {
        AttentionParams p = make_attention_params(AttentionKind::Mul, C, 1, rng, "m");
        Tensor ones = Tensor::full({1, 1, 4, 4}, 1.0);
        CHECK(bit_equal(fuse_mul(fa, ones, p).data(), fa.data()));
    }
    SUBCASE("concat with channel-selecting weights recovers f_a exactly") {
        AttentionParams p = make_attention_params(AttentionKind::Concat, C, CM, rng, "c");
        auto w = p.fuse_weight.tensor.data();
        std::fill(w.begin(), w.end(), 0.0);
        for (int c = 0; c < C; ++c) w[static_cast<std::size_t>(c) * (C + CM) + c] = 1.0;
        CHECK(bit_equal(fuse_concat(fa, fm, p).data(), fa.data()));
    }
    SUBCASE("no residual: mul with a zero map gives zeros") {
        AttentionParams p = make_attention_params(AttentionKind::Mul, C, 1, rng, "m");
        Tensor z = fuse_mul(fa, Tensor::zeros({1, 1, 4, 4}), p);
        for (double v : z.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("attention blocks preserve the appearance shape") {
    Rng rng(127);
    const int C = 4, CM = 3;
    Tensor fa = rand_tensor(rng, {2, C, 6, 6});
    Tensor fm = rand_tensor(rng, {2, CM, 6, 6});
    Tensor pm = rand_tensor(rng, {2, 1, 6, 6}, 0.0, 1.0);

    for (AttentionKind k : {AttentionKind::MgaT, AttentionKind::MgaTm, AttentionKind::MgaTmc,
                            AttentionKind::Concat, AttentionKind::Mul, AttentionKind::Add}) {
        AttentionParams p = make_attention_params(k, C, CM, rng, attention_kind_name(k));
        CHECK(apply_attention(k, fa, fm, p).shape() == fa.shape());
    }
    for (AttentionKind k :
         {AttentionKind::MgaM, AttentionKind::Concat, AttentionKind::Mul, AttentionKind::Add}) {
        AttentionParams p = make_attention_params(k, C, 1, rng, attention_kind_name(k));
        CHECK(apply_attention(k, fa, pm, p).shape() == fa.shape());
    }
    AttentionParams none;
    CHECK(apply_attention(AttentionKind::None, fa, fm, none).same_node(fa));
}

TEST_CASE("residual bounds for nonnegative features") {
    Rng rng(131);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor fa = rand_tensor(rng, {1, 3, 5, 5}, 0.0, 3.0);
        Tensor pm = rand_tensor(rng, {1, 1, 5, 5}, 0.0, 1.0);
        Tensor out = mga_m(fa, pm);
        const int chw = 3 * 5 * 5;
        for (int i = 0; i < chw; ++i) {
            const double base = fa.data()[i];
            CHECK(out.data()[i] >= base - 1e-12);
            CHECK(out.data()[i] <= 2.0 * base + 1e-12);
        }
        AttentionParams p = make_attention_params(AttentionKind::MgaTm, 3, 2, rng, "p");
        Tensor fm = rand_tensor(rng, {1, 2, 5, 5});
        Tensor out2 = mga_tm(fa, fm, p);
        for (int i = 0; i < chw; ++i) {
            const double base = fa.data()[i];
            CHECK(out2.data()[i] >= base - 1e-12);
            CHECK(out2.data()[i] <= 2.0 * base + 1e-12);
        }
    }
}

TEST_CASE("the residual path keeps appearance gradients alive") {
    Rng rng(137);
    Tensor fa = rand_tensor(rng, {1, 3, 4, 4}, 0.0, 2.0);
    Tensor pm = rand_tensor(rng, {1, 1, 4, 4}, 0.0, 1.0);
    fa.set_requires_grad(true);
    sum(mga_m(fa, pm)).backward();
    for (double g : fa.grad()) CHECK(g >= 1.0);  // 1 + P_m >= 1
}

TEST_CASE("attention kind names round-trip") {
    for (AttentionKind k : {AttentionKind::None, AttentionKind::MgaM, AttentionKind::MgaT,
                            AttentionKind::MgaTm, AttentionKind::MgaTmc, AttentionKind::Concat,
                            AttentionKind::Mul, AttentionKind::Add})
        CHECK(attention_kind_from_name(attention_kind_name(k)) == k);
    CHECK_THROWS_AS(attention_kind_from_name("mga-x"), ValidationError);
}

TEST_CASE("module gradient sweep (reduced trial count)") {
    for (const auto& out : run_module_gradchecks(5, 20260815)) {
        INFO(out.op);
        CHECK(out.checked > 0);
        CHECK(out.max_rel_err <= 1e-4);
    }
}
