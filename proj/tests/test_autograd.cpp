#include "dictas/autograd.hpp"
#include "dictas/kernels.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace dictas;
using dictas::testing::random_matrix;

namespace {

using ScalarFn = std::function<Var(Tape&, Var)>;

// Worst relative error of the tape gradient against central differences.
double grad_error(const Matrix& x0, const ScalarFn& f, double h = 1e-6) {
    Tape tape;
    const Var x = tape.variable(x0);
    tape.backward(f(tape, x));
    const Matrix g = tape.grad(x);
    double diff = 0, scale = 0;
    Matrix x1 = x0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        auto eval = [&](double d) {
            x1.data()[i] = x0.data()[i] + d;
            Tape t(false);
            const double v = t.value(f(t, t.constant(x1)))(0, 0);
            x1.data()[i] = x0.data()[i];
            return v;
        };
        const double num = (eval(h) - eval(-h)) / (2 * h);
        diff += (num - g.data()[i]) * (num - g.data()[i]);
        scale += num * num;
    }
    return std::sqrt(diff) / std::max(std::sqrt(scale), 1e-12);
}

// sum(y .* w) for a fixed, non-uniform w, so every entry gets a distinct upstream gradient.
Var weighted(Tape& t, Var y) {
    const Matrix& v = t.value(y);
    Matrix w(v.rows(), v.cols());
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
    Var acc = t.constant(Matrix(1, 1, 0.0));
    for (std::size_t r = 0; r < v.rows(); ++r) {
        Matrix sel(1, v.rows(), 0.0);
        sel(0, r) = 1.0;
        const Var row = ag::matmul_nn(t, t.constant(sel), y);
        Matrix wr(1, v.cols());
        for (std::size_t c = 0; c < v.cols(); ++c) wr(0, c) = w(r, c);
        acc = ag::add(t, acc, ag::matmul_nt(t, row, t.constant(wr)));
    }
    return acc;
}

} // namespace

TEST_SUITE("autograd") {

TEST_CASE("elementwise and matrix ops match finite differences") {
    Rng rng(1);
    const Matrix x = random_matrix(3, 4, rng);
    const Matrix b = random_matrix(5, 4, rng), c = random_matrix(4, 2, rng), bias = random_matrix(1, 5, rng);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::matmul_nt(t, v, t.constant(b))); }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::matmul_nn(t, v, t.constant(c))); }) < 1e-7);
    CHECK(grad_error(b, [&](Tape& t, Var v) { return weighted(t, ag::matmul_nt(t, t.constant(x), v)); }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) {
              return weighted(t, ag::linear(t, v, t.constant(b), t.constant(bias)));
          }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::gelu(t, v)); }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::softmax_rows(t, v)); }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::scale(t, ag::sub(t, v, ag::add(t, v, v)), 3.0)); }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::slice_cols(t, v, 1, 3)); }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::normalize_rows(t, v)); }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::mean_rows(t, v)); }) < 1e-7);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return ag::sum_all(t, ag::scale(t, v, 2.0)); }) < 1e-7);
    const Matrix y = random_matrix(3, 4, rng);
    CHECK(grad_error(x, [&](Tape& t, Var v) { return weighted(t, ag::cosine_rows(t, v, t.constant(y))); }) < 1e-7);
    const std::vector<std::size_t> rows = {0, 2};
    CHECK(grad_error(x, [&](Tape& t, Var v) {
              return ag::mean_of(t, ag::cosine_rows(t, t.constant(y), v), rows);
          }) < 1e-7);
    const Matrix logits = random_matrix(1, 3, rng);
    CHECK(grad_error(logits, [&](Tape& t, Var v) { return ag::cross_entropy(t, v, 2); }) < 1e-7);
}

TEST_CASE("sparsemax backward applies the support-restricted Jacobian") {
    Rng rng(4);
    int checked = 0;
    for (int trial = 0; trial < 50 && checked < 20; ++trial) {
        const Matrix z = random_matrix(3, 6, rng, -1.5, 1.5);
        double margin = 1e300;
        for (std::size_t r = 0; r < z.rows(); ++r) {
            const double tau = kernels::simplex_threshold(z.row(r));
            for (double v : z.row(r)) margin = std::min(margin, std::abs(v - tau));
        }
        if (margin < 1e-3) continue;
        CHECK(grad_error(z, [&](Tape& t, Var v) { return weighted(t, ag::sparsemax_rows(t, v)); }) < 1e-6);
        ++checked;
    }
    CHECK(checked == 20);
}

TEST_CASE("relu and onehot") {
    Tape t;
    const Var x = t.variable(Matrix{{-1.0, 2.0, 2.0}});
    CHECK(t.value(ag::relu(t, x)) == Matrix{{0.0, 2.0, 2.0}});
    const Var h = ag::onehot_argmax_rows(t, x);
    CHECK(t.value(h) == Matrix{{0.0, 1.0, 0.0}});
    t.backward(ag::sum_all(t, ag::relu(t, x)));
    CHECK(t.grad(x) == Matrix{{0.0, 1.0, 1.0}});
}

TEST_CASE("params bind once and report gradients") {
    const Matrix w{{1.0, 2.0}};
    Tape t;
    const Var a = t.param(w), b = t.param(w);
    CHECK(a.id == b.id);
    t.backward(ag::sum_all(t, ag::scale(t, a, 3.0)));
    REQUIRE(t.param_grad(w) != nullptr);
    CHECK(*t.param_grad(w) == Matrix{{3.0, 3.0}});
    const Matrix other{{0.0}};
    CHECK(t.param_grad(other) == nullptr);
}

TEST_CASE("no-grad tape computes the same values") {
    Rng rng(9);
    const Matrix x = random_matrix(4, 4, rng), w = random_matrix(4, 4, rng);
    auto run = [&](Tape& t) {
        const Var v = t.constant(x);
        return t.value(ag::sparsemax_rows(t, ag::gelu(t, ag::matmul_nt(t, v, t.param(w)))));
    };
    Tape a(true), b(false);
    CHECK(dictas::testing::same_bits(run(a), run(b)));
}

TEST_CASE("normalize_rows rejects a zero row") {
    Tape t;
    CHECK_THROWS_AS(ag::normalize_rows(t, t.constant(Matrix(1, 3, 0.0))), Error);
}

}
