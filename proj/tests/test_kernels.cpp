#include "dictas/kernels.hpp"
#include "dictas/scoring.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace dictas;
using dictas::testing::random_matrix;
using dictas::testing::same_bits;

TEST_SUITE("kernels") {

TEST_CASE("parallel kernels reproduce the serial loops bit for bit") {
    Rng rng(11);
    namespace S = kernels::serial;
    namespace P = kernels::parallel;
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t n = 3 + uniform_index(rng, 40), m = 2 + uniform_index(rng, 60), c = 8 * (1 + uniform_index(rng, 4));
        const Matrix q = random_matrix(n, c, rng), k = random_matrix(m, c, rng), v = random_matrix(m, c, rng);
        const Matrix w = random_matrix(c, c, rng);
        const Matrix z = S::matmul_nt(q, k);
        CHECK(same_bits(z, P::matmul_nt(q, k)));
        CHECK(same_bits(S::matmul_nn(k, w), P::matmul_nn(k, w)));
        CHECK(same_bits(S::matmul_tn(k, v), P::matmul_tn(k, v)));
        CHECK(same_bits(S::softmax_rows(z), P::softmax_rows(z)));
        CHECK(same_bits(S::sparsemax_rows(z), P::sparsemax_rows(z)));
        CHECK(same_bits(S::onehot_argmax_rows(z), P::onehot_argmax_rows(z)));
        CHECK(S::cosine_rows(k, v) == P::cosine_rows(k, v));
        const Matrix grid = random_matrix(2 * 5 * 7, c, rng);
        CHECK(same_bits(S::box_filter_grid(grid, 2, 5, 7, 3), P::box_filter_grid(grid, 2, 5, 7, 3)));
        CHECK(same_bits(S::attention_rows(k, k, v, 4, 0.3), P::attention_rows(k, k, v, 4, 0.3)));
        const Matrix field = random_matrix(5, 6, rng, 0.0, 1.0);
        const Matrix up = S::upsample_bilinear(field, 37, 41);
        CHECK(same_bits(up, P::upsample_bilinear(field, 37, 41)));
        CHECK(same_bits(S::gaussian_blur(up, 2.0), P::gaussian_blur(up, 2.0)));
    }
}

TEST_CASE("matmul variants agree with index loops") {
    Rng rng(3);
    const Matrix a = random_matrix(4, 3, rng), b = random_matrix(5, 3, rng), c = random_matrix(3, 2, rng);
    const Matrix nt = kernels::serial::matmul_nt(a, b);
    const Matrix nn = kernels::serial::matmul_nn(a, c);
    const Matrix tn = kernels::serial::matmul_tn(a, a);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(nt(i, j) == doctest::Approx(dot(a.row(i), b.row(j))).epsilon(1e-14));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double s = 0;
            for (std::size_t t = 0; t < 3; ++t) s += a(i, t) * c(t, j);
            CHECK(nn(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t t = 0; t < 4; ++t) s += a(t, i) * a(t, j);
            CHECK(tn(i, j) == doctest::Approx(s).epsilon(1e-14));
        }
}

TEST_CASE("sparsemax row matches the bisection projection") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 30);
        std::vector<double> z(n), out(n);
        for (auto& e : z) e = uniform(rng, -3, 3);
        kernels::sparsemax_row(z, out);
        const auto ref = dictas::testing::simplex_projection_bisection(z);
        for (std::size_t u = 0; u < n; ++u) CHECK(std::abs(out[u] - ref[u]) <= 1e-9);
        CHECK(std::accumulate(out.begin(), out.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("uniform scores give tau = c - 1/n") {
    const std::vector<double> z(4, 0.75);
    CHECK(kernels::simplex_threshold(z) == 0.5);
}

TEST_CASE("softmax rows sum to one and survive large logits") {
    std::vector<double> z = {1000.0, 999.0, -1000.0}, out(3);
    kernels::softmax_row(z, out);
    CHECK(out[0] + out[1] + out[2] == doctest::Approx(1.0));
    CHECK(out[0] / out[1] == doctest::Approx(std::exp(1.0)));
    CHECK(out[2] == 0.0);
}

TEST_CASE("argmax picks the first maximum") {
    const std::vector<double> z = {0.1, 0.7, 0.7, 0.2};
    CHECK(kernels::argmax_row(z) == 1);
}

TEST_CASE("box filter keeps constants and spreads a centre impulse") {
    Matrix grid(9, 1, 0.0);
    grid(4, 0) = 1.0;
    const Matrix out = kernels::serial::box_filter_grid(grid, 1, 3, 3, 3);
    CHECK(out(4, 0) == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
    const Matrix flat(12, 2, 0.5);
    CHECK(kernels::serial::box_filter_grid(flat, 1, 3, 4, 3) == flat);
    CHECK(kernels::serial::box_filter_grid(grid, 1, 3, 3, 1) == grid);
}

TEST_CASE("single-token attention returns its own value row") {
    Rng rng(2);
    const Matrix q = random_matrix(1, 8, rng), v = random_matrix(1, 8, rng);
    CHECK(same_bits(kernels::serial::attention_rows(q, q, v, 2, 0.5), v));
}

}
