#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "mvcl/rng.hpp"
#include "mvcl/tensor.hpp"

using namespace mvcl;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v));
}

// Straightforward triple loop, independent of the library kernel.
std::vector<double> naive_matmul(const std::vector<double>& a,
                                 const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
            for (std::size_t j = 0; j < n; ++j)
                c[i * n + j] += a[i * k + p] * b[p * n + j];
    return c;
}

}  // namespace

TEST_CASE("matmul matches hand-computed products") {
    auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from_data({2, 2}, {2, 3, 4, 5});
    auto out = matmul(eye, m);
    CHECK(out.to_vector() == std::vector<double>{2, 3, 4, 5});

    auto a = Tensor::from_data({1, 2}, {1, 2});
    auto b = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul agrees with a naive triple loop on random inputs") {
    Rng rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = 1 + rng.bounded(8), k = 1 + rng.bounded(8),
                          n = 1 + rng.bounded(8);
        auto a = random_tensor({m, k}, rng);
        auto b = random_tensor({k, n}, rng);
        auto got = matmul(a, b).to_vector();
        auto want = naive_matmul(a.to_vector(), b.to_vector(), m, k, n);
        for (std::size_t i = 0; i < want.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul_nt equals matmul with an explicit transpose") {
    Rng rng(55);
    auto a = random_tensor({4, 6}, rng);
    auto b = random_tensor({5, 6}, rng);
    auto direct = matmul_nt(a, b).to_vector();
    auto viaT = matmul(a, transpose(b)).to_vector();
    for (std::size_t i = 0; i < direct.size(); ++i)
        CHECK(direct[i] == doctest::Approx(viaT[i]).epsilon(1e-13));
}

TEST_CASE("batched products agree with per-slice matmul") {
    Rng rng(77);
    auto a = random_tensor({3, 4, 5}, rng);
    auto b = random_tensor({3, 5, 2}, rng);
    auto c = bmm(a, b);
    CHECK(c.shape() == Shape{3, 4, 2});
    for (std::size_t s = 0; s < 3; ++s) {
        std::vector<double> as(a.data() + s * 20, a.data() + (s + 1) * 20);
        std::vector<double> bs(b.data() + s * 10, b.data() + (s + 1) * 10);
        auto want = naive_matmul(as, bs, 4, 5, 2);
        for (std::size_t i = 0; i < 8; ++i)
            CHECK(c.data()[s * 8 + i] == doctest::Approx(want[i]).epsilon(1e-12));
    }

    auto bt = random_tensor({3, 2, 5}, rng);
    auto c2 = bmm_nt(a, bt);
    auto c2ref = bmm(a, transpose_last(bt));
    for (std::size_t i = 0; i < c2.size(); ++i)
        CHECK(c2.data()[i] == doctest::Approx(c2ref.data()[i]).epsilon(1e-13));
}

TEST_CASE("matmul broadcast over a leading batch axis") {
    Rng rng(31);
    auto a = random_tensor({2, 3, 4}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto out = matmul(a, w);
    CHECK(out.shape() == Shape{2, 3, 5});
    for (std::size_t s = 0; s < 2; ++s) {
        std::vector<double> as(a.data() + s * 12, a.data() + (s + 1) * 12);
        auto want = naive_matmul(as, w.to_vector(), 3, 4, 5);
        for (std::size_t i = 0; i < 15; ++i)
            CHECK(out.data()[s * 15 + i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("shape mismatches are rejected") {
    auto a = Tensor({2, 3});
    auto b = Tensor({2, 3});
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(sub(a, Tensor({3, 2})), ShapeError);
    CHECK_THROWS_AS(mul(a, Tensor({2, 2})), ShapeError);
    CHECK_THROWS_AS(add(a, Tensor({2})), ShapeError);  // [2] is not a suffix of [2,3]
    CHECK_THROWS_AS(reshape(a, {7}), ShapeError);
    CHECK_THROWS_AS(diagonal(Tensor({2, 3})), ShapeError);
}

TEST_CASE("add broadcasts a trailing-suffix operand") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto bias = Tensor::from_data({3}, {10, 20, 30});
    CHECK(add(x, bias).to_vector() ==
          std::vector<double>{11, 22, 33, 14, 25, 36});

    auto pos = Tensor::from_data({2, 2}, {1, 1, 2, 2});
    auto seq = Tensor::from_data({2, 2, 2}, {0, 0, 0, 0, 1, 1, 1, 1});
    CHECK(add(seq, pos).to_vector() ==
          std::vector<double>{1, 1, 2, 2, 2, 2, 3, 3});
}

TEST_CASE("softmax of a constant row is uniform and rows sum to one") {
    auto t = softmax(Tensor::from_data({1, 3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i)
        CHECK(t.data()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Rng rng(13);
    auto x = random_tensor({5, 7}, rng, -30.0, 30.0);
    auto y = softmax(x);
    for (std::size_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
            double v = y.data()[r * 7 + c];
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax over a middle axis normalizes that axis") {
    Rng rng(17);
    auto x = random_tensor({2, 3, 4}, rng);
    auto y = softmax(x, 1);
    for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t in = 0; in < 4; ++in) {
            double s = 0.0;
            for (std::size_t j = 0; j < 3; ++j) s += y.data()[o * 12 + j * 4 + in];
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("logsumexp is overflow-safe and exact on constant rows") {
    auto t = logsumexp_rows(Tensor::from_data({1, 3}, {1000, 1000, 1000}));
    CHECK(t.item() == doctest::Approx(1000.0 + std::log(3.0)).epsilon(1e-15));
    auto one = logsumexp_rows(Tensor::from_data({1, 1}, {-5.0}));
    CHECK(one.item() == -5.0);  // single column: exactly the entry
}

TEST_CASE("l2_normalize gives unit rows and maps zero to zero") {
    auto t = l2_normalize(Tensor::from_data({1, 2}, {3, 4}));
    // The norm guard (n + 1e-12) shifts entries by ~1e-13 relative.
    CHECK(t.data()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(t.data()[1] == doctest::Approx(0.8).epsilon(1e-12));

    auto z = l2_normalize(Tensor::from_data({1, 3}, {0, 0, 0}));
    for (int i = 0; i < 3; ++i) CHECK(z.data()[i] == 0.0);

    Rng rng(19);
    auto x = random_tensor({6, 8}, rng);
    auto y = l2_normalize(x);
    for (std::size_t r = 0; r < 6; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < 8; ++c) sq += y.data()[r * 8 + c] * y.data()[r * 8 + c];
        CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("layer_norm rows have zero mean and unit variance") {
    Rng rng(23);
    auto x = random_tensor({4, 16}, rng, -5.0, 5.0);
    auto y = layer_norm(x);
    for (std::size_t r = 0; r < 4; ++r) {
        double m = 0.0, v = 0.0;
        for (std::size_t c = 0; c < 16; ++c) m += y.data()[r * 16 + c];
        m /= 16.0;
        for (std::size_t c = 0; c < 16; ++c) {
            double d = y.data()[r * 16 + c] - m;
            v += d * d;
        }
        v /= 16.0;
        CHECK(std::abs(m) < 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts it slightly
    }
}

TEST_CASE("log rejects non-positive entries and reciprocal rejects zero") {
    CHECK_THROWS_AS(log(Tensor::from_data({1}, {0.0})), DomainError);
    CHECK_THROWS_AS(log(Tensor::from_data({2}, {1.0, -3.0})), DomainError);
    CHECK_THROWS_AS(reciprocal(Tensor::from_data({1}, {0.0})), DomainError);
}

TEST_CASE("dropout identity cases leave data and RNG untouched") {
    Rng rng(42);
    auto x = Tensor::from_data({4}, {1, 2, 3, 4});
    auto before = rng.next_u64();
    Rng r1(9), r2(9);
    auto y_eval = dropout(x, 0.5, r1, /*train=*/false);
    auto y_p0 = dropout(x, 0.0, r2, /*train=*/true);
    CHECK(y_eval.to_vector() == x.to_vector());
    CHECK(y_p0.to_vector() == x.to_vector());
    CHECK(r1.next_u64() == Rng(9).next_u64());  // no draws consumed
    CHECK(r2.next_u64() == Rng(9).next_u64());
    (void)before;
    CHECK_THROWS_AS(dropout(x, 1.0, rng, true), ParamError);
    CHECK_THROWS_AS(dropout(x, -0.1, rng, true), ParamError);
}

TEST_CASE("dropout zeroes about p of a large tensor and rescales the rest") {
    Rng rng(42);
    Tensor ones({10000}, 1.0);
    auto y = dropout(ones, 0.5, rng, true);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y.data()[i] == 0.0)
            ++zeros;
        else
            CHECK(y.data()[i] == 2.0);
    }
    CHECK(std::abs(zeros / 10000.0 - 0.5) < 0.01);

    // Same seed, same mask.
    Rng ra(7), rb(7);
    auto m1 = dropout(ones, 0.3, ra, true);
    auto m2 = dropout(ones, 0.3, rb, true);
    CHECK(m1.to_vector() == m2.to_vector());
}

TEST_CASE("reductions and diagonal") {
    auto x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    CHECK(sum(x).item() == 10.0);
    CHECK(mean(x).item() == 2.5);
    CHECK(diagonal(x).to_vector() == std::vector<double>{1, 4});
    auto m = mean_axis(Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}), 1);
    CHECK(m.to_vector() == std::vector<double>{2, 5});
    auto m0 = mean_axis(Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}), 0);
    CHECK(m0.to_vector() == std::vector<double>{2.5, 3.5, 4.5});
}

TEST_CASE("embedding_lookup gathers rows and validates ids") {
    auto table = Tensor::from_data({3, 2}, {0, 1, 10, 11, 20, 21});
    auto out = embedding_lookup(table, {2, 0, 2}, {3});
    CHECK(out.shape() == Shape{3, 2});
    CHECK(out.to_vector() == std::vector<double>{20, 21, 0, 1, 20, 21});
    CHECK_THROWS_AS(embedding_lookup(table, {3}, {1}), DomainError);
    CHECK_THROWS_AS(embedding_lookup(table, {-1}, {1}), DomainError);
}

TEST_CASE("no-grad mode records no graph") {
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4}, /*requires_grad=*/true);
    {
        NoGradGuard guard;
        auto y = matmul(a, a);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node() == nullptr);
    }
    auto y = matmul(a, a);
    CHECK(y.requires_grad());
    CHECK(y.node() != nullptr);
}

TEST_CASE("a reused subexpression is backpropagated exactly once") {
    auto x = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
    auto sq = mul(x, x);
    auto y = sum(add(sq, sq));  // y = 2*sum(x^2), dy/dx = 4x
    backward(y);
    auto g = x.grad_vector();
    CHECK(g[0] == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(-8.0).epsilon(1e-15));
    CHECK(g[2] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("backward demands a scalar root with gradient") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), ShapeError);
    auto frozen = Tensor::from_data({1}, {3.0}, false);
    CHECK_THROWS_AS(backward(frozen), Error);
}

TEST_CASE("bias broadcast gradient is the column sum") {
    auto x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor::from_data({3}, {0, 0, 0}, true);
    auto y = sum(add(x, b));
    backward(y);
    CHECK(b.grad_vector() == std::vector<double>{2, 2, 2});
}

TEST_CASE("gradient check covers every primitive operation") {
    Rng rng(2024);
    const double tol = 1e-6;  // these are small, smooth test points

    auto x23 = random_tensor({2, 3}, rng);
    auto x34 = random_tensor({3, 4}, rng);
    auto w34 = random_tensor({3, 4}, rng);
    auto w = random_tensor({3, 4}, rng);
    auto b53 = random_tensor({5, 3}, rng);

    CHECK(grad_check([&](const Tensor& t) { return sum(matmul(t, w)); }, x23) < tol);
    CHECK(grad_check([&](const Tensor& t) { return sum(matmul_nt(t, b53)); }, x23) < tol);
    CHECK(grad_check([&](const Tensor& t) { return sum(transpose(t)); }, x23) < tol);
    CHECK(grad_check([&](const Tensor& t) { return mean(relu(t)); },
                     random_tensor({4, 4}, rng)) < tol);
    CHECK(grad_check([&](const Tensor& t) { return sum(exp(t)); }, x23) < tol);
    CHECK(grad_check([&](const Tensor& t) { return sum(log(t)); },
                     random_tensor({3, 3}, rng, 0.5, 2.0)) < tol);
    // Weight the outputs of softmax / layer_norm: their plain sums are
    // constants (rows sum to 1 / have zero mean), which would make the
    // finite-difference comparison degenerate.
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(softmax(t), w34)); }, x34) < tol);
    {
        auto x38 = random_tensor({3, 8}, rng);
        auto w38 = random_tensor({3, 8}, rng);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(layer_norm(t), w38)); }, x38) < tol);
    }
    CHECK(grad_check([&](const Tensor& t) { return sum(mul(l2_normalize(t), w34)); }, x34) < tol);
    CHECK(grad_check([&](const Tensor& t) { return sum(logsumexp_rows(t)); }, x34) < tol);
    CHECK(grad_check([&](const Tensor& t) { return sum(diagonal(matmul_nt(t, t))); }, x34) < tol);
    CHECK(grad_check([&](const Tensor& t) { return mean(mean_axis(mul(t, t), 1)); }, x34) < tol);
}

TEST_CASE("gradient check rejects non-finite functions") {
    auto x = Tensor::from_data({1}, {2.0});
    CHECK_THROWS_AS(
        grad_check([](const Tensor& t) { return scale(t, std::numeric_limits<double>::infinity()); }, x),
        NumericError);
}
