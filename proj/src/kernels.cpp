#include "dictas/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dictas::kernels {

namespace {

// Scores are taken relative to m = floor(max z). Integer shifts of z then give
// bit-identical relative scores, and the cumulative sums stay small when raw
// dot products are large.
double relative_threshold(std::span<const double> z, double m) {
    std::vector<double> sorted(z.size());
    for (std::size_t u = 0; u < z.size(); ++u) sorted[u] = z[u] - m;
    std::stable_sort(sorted.begin(), sorted.end(), std::greater<>());
    double cum = 0.0;
    double tau = 0.0;
    for (std::size_t t = 1; t <= sorted.size(); ++t) {
        cum += sorted[t - 1];
        const double candidate = (cum - 1.0) / static_cast<double>(t);
        // The qualifying t form a prefix, but scan all of them: the last hit wins.
        if (sorted[t - 1] > candidate) tau = candidate;
    }
    return tau;
}

double floor_of_max(std::span<const double> z) {
    return std::floor(*std::max_element(z.begin(), z.end()));
}

} // namespace

double simplex_threshold(std::span<const double> z) {
    if (z.empty()) throw Error("simplex_threshold: empty score vector");
    const double m = floor_of_max(z);
    return relative_threshold(z, m) + m;
}

double sparsemax_row(std::span<const double> z, std::span<double> out) {
    if (z.empty()) throw Error("simplex_threshold: empty score vector");
    const double m = floor_of_max(z);
    const double tau = relative_threshold(z, m);
    for (std::size_t u = 0; u < z.size(); ++u) out[u] = std::max((z[u] - m) - tau, 0.0);
    return tau + m;
}

void softmax_row(std::span<const double> z, std::span<double> out) {
    const double peak = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t u = 0; u < z.size(); ++u) {
        out[u] = std::exp(z[u] - peak);
        total += out[u];
    }
    for (std::size_t u = 0; u < z.size(); ++u) out[u] /= total;
}

std::size_t argmax_row(std::span<const double> z) {
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

namespace {

void check_inner(const Matrix& a, const Matrix& b, std::size_t ak, std::size_t bk,
                 const char* what) {
    if (ak != bk) {
        throw Error(std::string(what) + ": inner dimension mismatch " + shape_string(a) + " vs " +
                    shape_string(b));
    }
}

void check_grid(const Matrix& rows, std::size_t images, std::size_t height, std::size_t width,
                std::size_t kernel) {
    if (kernel == 0 || kernel % 2 == 0) throw Error("box filter kernel must be odd and >= 1");
    if (rows.rows() != images * height * width) throw Error("box filter: grid size mismatch");
}

// sqrt of the product of squared norms: identical rows give exactly 1.
inline double cosine_of(std::span<const double> a, std::span<const double> b) {
    const double aa = dot(a, a);
    const double bb = dot(b, b);
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return dot(a, b) / std::sqrt(aa * bb);
}

// One output cell of the clamped box filter.
inline void box_cell(const Matrix& rows, Matrix& out, std::size_t img, std::size_t height,
                     std::size_t width, std::size_t y, std::size_t x, std::size_t kernel) {
    const auto half = static_cast<std::ptrdiff_t>(kernel / 2);
    const auto h = static_cast<std::ptrdiff_t>(height);
    const auto w = static_cast<std::ptrdiff_t>(width);
    const std::size_t base = img * height * width;
    auto dst = out.row(base + y * width + x);
    std::fill(dst.begin(), dst.end(), 0.0);
    for (std::ptrdiff_t dy = -half; dy <= half; ++dy) {
        const auto yy = std::clamp(static_cast<std::ptrdiff_t>(y) + dy, std::ptrdiff_t{0}, h - 1);
        for (std::ptrdiff_t dx = -half; dx <= half; ++dx) {
            const auto xx =
                std::clamp(static_cast<std::ptrdiff_t>(x) + dx, std::ptrdiff_t{0}, w - 1);
            auto src = rows.row(base + static_cast<std::size_t>(yy) * width +
                                static_cast<std::size_t>(xx));
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
    }
    const double norm = 1.0 / static_cast<double>(kernel * kernel);
    for (double& v : dst) v *= norm;
}

// One output row of multi-head attention. `logits` is scratch of length k.rows().
inline void attention_row(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                          double scale, std::size_t i, std::vector<double>& logits,
                          std::span<double> out) {
    const std::size_t d = q.cols() / heads;
    const std::size_t n = k.rows();
    logits.resize(n);
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto qi = q.row(i).subspan(h * d, d);
        for (std::size_t j = 0; j < n; ++j) logits[j] = dot(qi, k.row(j).subspan(h * d, d)) * scale;
        softmax_row(logits, logits);
        for (std::size_t j = 0; j < n; ++j) {
            const double p = logits[j];
            const auto vj = v.row(j).subspan(h * d, d);
            for (std::size_t c = 0; c < d; ++c) out[h * d + c] += p * vj[c];
        }
    }
}

void check_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads) {
    if (heads == 0 || q.cols() % heads != 0) throw Error("channels not divisible by num_heads");
    if (q.cols() != k.cols() || q.cols() != v.cols() || k.rows() != v.rows())
        throw Error("attention: q/k/v shape mismatch");
}

} // namespace

namespace serial {

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.cols(), b.cols(), "matmul_nt");
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.cols(), b.rows(), "matmul_nn");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.rows(), b.rows(), "matmul_tn");
    Matrix out(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

Matrix softmax_rows(const Matrix& z) {
    Matrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) softmax_row(z.row(i), out.row(i));
    return out;
}

Matrix sparsemax_rows(const Matrix& z) {
    Matrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) sparsemax_row(z.row(i), out.row(i));
    return out;
}

Matrix onehot_argmax_rows(const Matrix& z) {
    Matrix out(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.rows(); ++i) out(i, argmax_row(z.row(i))) = 1.0;
    return out;
}

std::vector<double> cosine_rows(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "cosine_rows");
    std::vector<double> out(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) out[i] = cosine_of(a.row(i), b.row(i));
    return out;
}

Matrix box_filter_grid(const Matrix& rows, std::size_t images, std::size_t height,
                       std::size_t width, std::size_t kernel) {
    check_grid(rows, images, height, width, kernel);
    Matrix out(rows.rows(), rows.cols());
    for (std::size_t img = 0; img < images; ++img)
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                box_cell(rows, out, img, height, width, y, x, kernel);
    return out;
}

Matrix attention_rows(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                      double scale) {
    check_attention(q, k, v, heads);
    Matrix out(q.rows(), q.cols());
    std::vector<double> logits;
    for (std::size_t i = 0; i < q.rows(); ++i) attention_row(q, k, v, heads, scale, i, logits, out.row(i));
    return out;
}

} // namespace serial

namespace parallel {

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.cols(), b.cols(), "matmul_nt");
    Matrix out(a.rows(), b.rows());
    const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto ai = a.row(static_cast<std::size_t>(i));
        auto oi = out.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < b.rows(); ++j) oi[j] = dot(ai, b.row(j));
    }
    return out;
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.cols(), b.rows(), "matmul_nn");
    Matrix out(a.rows(), b.cols());
    const auto n = static_cast<std::ptrdiff_t>(a.rows());
    // i-k-j order streams rows of b; each out(i, j) still accumulates k ascending.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto ai = a.row(static_cast<std::size_t>(i));
        auto oi = out.row(static_cast<std::size_t>(i));
        for (std::size_t k = 0; k < ai.size(); ++k) {
            const double aik = ai[k];
            const auto bk = b.row(k);
            for (std::size_t j = 0; j < oi.size(); ++j) oi[j] += aik * bk[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_inner(a, b, a.rows(), b.rows(), "matmul_tn");
    Matrix out(a.cols(), b.cols());
    const auto n = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        auto oi = out.row(static_cast<std::size_t>(i));
        for (std::size_t k = 0; k < a.rows(); ++k) {
            const double aki = a(k, static_cast<std::size_t>(i));
            const auto bk = b.row(k);
            for (std::size_t j = 0; j < oi.size(); ++j) oi[j] += aki * bk[j];
        }
    }
    return out;
}

Matrix softmax_rows(const Matrix& z) {
    Matrix out(z.rows(), z.cols());
    const auto n = static_cast<std::ptrdiff_t>(z.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        softmax_row(z.row(static_cast<std::size_t>(i)), out.row(static_cast<std::size_t>(i)));
    return out;
}

Matrix sparsemax_rows(const Matrix& z) {
    Matrix out(z.rows(), z.cols());
    const auto n = static_cast<std::ptrdiff_t>(z.rows());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i)
        sparsemax_row(z.row(static_cast<std::size_t>(i)), out.row(static_cast<std::size_t>(i)));
    return out;
}

Matrix onehot_argmax_rows(const Matrix& z) {
    Matrix out(z.rows(), z.cols());
    const auto n = static_cast<std::ptrdiff_t>(z.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        out(r, argmax_row(z.row(r))) = 1.0;
    }
    return out;
}

std::vector<double> cosine_rows(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "cosine_rows");
    std::vector<double> out(a.rows());
    const auto n = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto r = static_cast<std::size_t>(i);
        out[r] = cosine_of(a.row(r), b.row(r));
    }
    return out;
}

Matrix box_filter_grid(const Matrix& rows, std::size_t images, std::size_t height,
                       std::size_t width, std::size_t kernel) {
    check_grid(rows, images, height, width, kernel);
    Matrix out(rows.rows(), rows.cols());
    const auto n = static_cast<std::ptrdiff_t>(images * height);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t iy = 0; iy < n; ++iy) {
        const std::size_t img = static_cast<std::size_t>(iy) / height;
        const std::size_t y = static_cast<std::size_t>(iy) % height;
        for (std::size_t x = 0; x < width; ++x) box_cell(rows, out, img, height, width, y, x, kernel);
    }
    return out;
}

Matrix attention_rows(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                      double scale) {
    check_attention(q, k, v, heads);
    Matrix out(q.rows(), q.cols());
    const auto n = static_cast<std::ptrdiff_t>(q.rows());
#pragma omp parallel
    {
        std::vector<double> logits;
#pragma omp for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            const auto r = static_cast<std::size_t>(i);
            attention_row(q, k, v, heads, scale, r, logits, out.row(r));
        }
    }
    return out;
}

} // namespace parallel

} // namespace dictas::kernels
