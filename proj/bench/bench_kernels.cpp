// Times every kernel in its serial and OpenMP form and checks the outputs match.

#include "dictas/kernels.hpp"
#include "dictas/rng.hpp"
#include "dictas/scoring.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>

using namespace dictas;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = scale * uniform(rng, -1.0, 1.0);
    return m;
}

template <class T>
bool same_bits(const T& a, const T& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && same_bits(a.data(), b.data());
}

// Best of `reps` wall-clock runs, in milliseconds.
double time_ms(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

template <class Out>
void row(const char* name, int reps, const std::function<Out()>& serial, const std::function<Out()>& parallel) {
    Out a, b;
    const double ts = time_ms(reps, [&] { a = serial(); });
    const double tp = time_ms(reps, [&] { b = parallel(); });
    std::printf("%-22s %10.2f %10.2f %8.2fx   %s\n", name, ts, tp, ts / tp, same_bits(a, b) ? "identical" : "DIFFERENT");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial vs parallel kernel timings"};
    std::size_t grid = 24, channels = 768, shots = 4;
    int reps = 3, threads = 0;
    app.add_option("--grid", grid, "patch grid side (query has grid^2 rows)");
    app.add_option("--channels", channels);
    app.add_option("--shots", shots, "dictionary holds shots * grid^2 rows");
    app.add_option("--reps", reps)->check(CLI::PositiveNumber);
    app.add_option("--threads", threads, "OpenMP threads, 0 keeps the runtime default");
    CLI11_PARSE(app, argc, argv);
    if (threads > 0) omp_set_num_threads(threads);

    const std::size_t n = grid * grid, m = shots * n, c = channels;
    const Matrix q = random_matrix(n, c, 1), k = random_matrix(m, c, 2), v = random_matrix(m, c, 3);
    const Matrix w = random_matrix(c, c, 4, 1.0 / std::sqrt(static_cast<double>(c)));
    const Matrix z = kernels::parallel::matmul_nt(q, k);
    const Matrix field = random_matrix(grid, grid, 5, 0.5);
    const std::size_t side = grid * 14;

    std::printf("threads %d, query %zu x %zu, dictionary %zu rows, best of %d\n", omp_get_max_threads(), n, c, m, reps);
    std::printf("%-22s %10s %10s %9s   %s\n", "kernel", "serial ms", "omp ms", "speedup", "outputs");
    namespace S = kernels::serial;
    namespace P = kernels::parallel;
    row<Matrix>("matmul_nt (q k^T)", reps, [&] { return S::matmul_nt(q, k); }, [&] { return P::matmul_nt(q, k); });
    row<Matrix>("matmul_nn (x W)", reps, [&] { return S::matmul_nn(k, w); }, [&] { return P::matmul_nn(k, w); });
    row<Matrix>("matmul_tn (x^T g)", reps, [&] { return S::matmul_tn(k, v); }, [&] { return P::matmul_tn(k, v); });
    row<Matrix>("softmax_rows", reps, [&] { return S::softmax_rows(z); }, [&] { return P::softmax_rows(z); });
    row<Matrix>("sparsemax_rows", reps, [&] { return S::sparsemax_rows(z); }, [&] { return P::sparsemax_rows(z); });
    row<Matrix>("onehot_argmax_rows", reps, [&] { return S::onehot_argmax_rows(z); },
                [&] { return P::onehot_argmax_rows(z); });
    row<std::vector<double>>("cosine_rows", reps, [&] { return S::cosine_rows(q, q); },
                             [&] { return P::cosine_rows(q, q); });
    row<Matrix>("box_filter_grid k=3", reps, [&] { return S::box_filter_grid(k, shots, grid, grid, 3); },
                [&] { return P::box_filter_grid(k, shots, grid, grid, 3); });
    const double scale = 1.0 / std::sqrt(static_cast<double>(c));
    row<Matrix>("attention_rows 8 heads", reps, [&] { return S::attention_rows(k, k, v, 8, scale); },
                [&] { return P::attention_rows(k, k, v, 8, scale); });
    row<Matrix>("upsample_bilinear", reps, [&] { return S::upsample_bilinear(field, side, side); },
                [&] { return P::upsample_bilinear(field, side, side); });
    const Matrix big = P::upsample_bilinear(field, side, side);
    row<Matrix>("gaussian_blur s=4", reps, [&] { return S::gaussian_blur(big, 4.0); },
                [&] { return P::gaussian_blur(big, 4.0); });
    return 0;
}
