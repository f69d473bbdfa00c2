#include "dictas/scoring.hpp"

#include "dictas/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace dictas {

namespace {

struct Tap {
    std::size_t lo;
    std::size_t hi;
    double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(src);
        taps[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return taps;
}

inline double bilinear_at(const Matrix& f, const Tap& ty, const Tap& tx) {
    // a + t (b - a) returns a exactly when a == b, so constant fields stay constant.
    const double top = f(ty.lo, tx.lo) + tx.frac * (f(ty.lo, tx.hi) - f(ty.lo, tx.lo));
    const double bottom = f(ty.hi, tx.lo) + tx.frac * (f(ty.hi, tx.hi) - f(ty.hi, tx.lo));
    return top + ty.frac * (bottom - top);
}

/// Unnormalized taps; blur_tap divides by their sum.
std::vector<double> gaussian_weights(double sigma) {
    const auto radius = static_cast<std::ptrdiff_t>(4.0 * sigma + 0.5);
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    for (std::ptrdiff_t i = -radius; i <= radius; ++i)
        w[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    return w;
}

/// Half-sample symmetric reflection (d c b a | a b c d | d c b a).
inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    const auto period = static_cast<std::ptrdiff_t>(2 * n);
    i %= period;
    if (i < 0) i += period;
    if (i >= static_cast<std::ptrdiff_t>(n)) i = period - 1 - i;
    return static_cast<std::size_t>(i);
}

inline double blur_tap(const Matrix& src, const std::vector<double>& w, std::size_t y, std::size_t x,
                       bool along_rows) {
    const auto radius = static_cast<std::ptrdiff_t>(w.size() / 2);
    double s = 0.0, total = 0.0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const double wk = w[static_cast<std::size_t>(k + radius)];
        total += wk;
        if (along_rows)
            s += wk * src(y, reflect(static_cast<std::ptrdiff_t>(x) + k, src.cols()));
        else
            s += wk * src(reflect(static_cast<std::ptrdiff_t>(y) + k, src.rows()), x);
    }
    // Same summation order as s, so a constant 1 (or 0) input comes back exactly.
    return s / total;
}

void check_upsample(const Matrix& field, std::size_t out_h, std::size_t out_w) {
    if (field.empty() || out_h == 0 || out_w == 0) throw Error("upsample: empty field or output");
}

void check_sigma(double sigma) {
    if (!(sigma > 0.0)) throw Error("gaussian_blur: sigma must be positive");
}

} // namespace

namespace kernels::serial {

Matrix upsample_bilinear(const Matrix& field, std::size_t out_h, std::size_t out_w) {
    check_upsample(field, out_h, out_w);
    const auto ty = bilinear_taps(field.rows(), out_h);
    const auto tx = bilinear_taps(field.cols(), out_w);
    Matrix out(out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) out(y, x) = bilinear_at(field, ty[y], tx[x]);
    return out;
}

Matrix gaussian_blur(const Matrix& map, double sigma) {
    check_sigma(sigma);
    const auto w = gaussian_weights(sigma);
    Matrix tmp(map.rows(), map.cols());
    for (std::size_t y = 0; y < map.rows(); ++y)
        for (std::size_t x = 0; x < map.cols(); ++x) tmp(y, x) = blur_tap(map, w, y, x, true);
    Matrix out(map.rows(), map.cols());
    for (std::size_t y = 0; y < map.rows(); ++y)
        for (std::size_t x = 0; x < map.cols(); ++x) out(y, x) = blur_tap(tmp, w, y, x, false);
    return out;
}

} // namespace kernels::serial

namespace kernels::parallel {

Matrix upsample_bilinear(const Matrix& field, std::size_t out_h, std::size_t out_w) {
    check_upsample(field, out_h, out_w);
    const auto ty = bilinear_taps(field.rows(), out_h);
    const auto tx = bilinear_taps(field.cols(), out_w);
    Matrix out(out_h, out_w);
    const auto n = static_cast<std::ptrdiff_t>(out_h);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t y = 0; y < n; ++y) {
        const auto r = static_cast<std::size_t>(y);
        for (std::size_t x = 0; x < out_w; ++x) out(r, x) = bilinear_at(field, ty[r], tx[x]);
    }
    return out;
}

Matrix gaussian_blur(const Matrix& map, double sigma) {
    check_sigma(sigma);
    const auto w = gaussian_weights(sigma);
    Matrix tmp(map.rows(), map.cols());
    Matrix out(map.rows(), map.cols());
    const auto n = static_cast<std::ptrdiff_t>(map.rows());
#pragma omp parallel
    {
#pragma omp for schedule(static)
        for (std::ptrdiff_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < map.cols(); ++x)
                tmp(static_cast<std::size_t>(y), x) = blur_tap(map, w, static_cast<std::size_t>(y), x, true);
#pragma omp for schedule(static)
        for (std::ptrdiff_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < map.cols(); ++x)
                out(static_cast<std::size_t>(y), x) = blur_tap(tmp, w, static_cast<std::size_t>(y), x, false);
    }
    return out;
}

} // namespace kernels::parallel

Matrix patch_distance_field(std::span<const Matrix> query, std::span<const Matrix> retrieved,
                            std::size_t grid_h, std::size_t grid_w) {
    if (query.empty() || query.size() != retrieved.size())
        throw Error("anomaly map: layer counts differ or are zero");
    Matrix field(grid_h, grid_w);
    const double norm = 1.0 / (2.0 * static_cast<double>(query.size()));
    for (std::size_t l = 0; l < query.size(); ++l) {
        require_same_shape(query[l], retrieved[l], "anomaly map");
        if (query[l].rows() != grid_h * grid_w) throw Error("anomaly map: grid size mismatch");
        const auto cos = kernels::parallel::cosine_rows(query[l], retrieved[l]);
        for (std::size_t j = 0; j < cos.size(); ++j) field.data()[j] += 1.0 - cos[j];
    }
    for (double& v : field.data()) v = std::clamp(v * norm, 0.0, 1.0);
    return field;
}

Matrix anomaly_map(const PatchFeatureStack& query, const RetrievalResult& retrieved, std::size_t out_h,
                   std::size_t out_w, const ScoringOptions& options) {
    if (query.image_count != 1) throw Error("anomaly map expects a single query image");
    Matrix map = kernels::parallel::upsample_bilinear(
        patch_distance_field(query.layers, retrieved.layers, query.height, query.width), out_h, out_w);
    if (options.smooth) map = kernels::parallel::gaussian_blur(map, options.smooth_sigma);
    for (double& v : map.data()) v = std::clamp(v, 0.0, 1.0);
    return map;
}

double image_score(const Matrix& map) {
    if (map.empty()) throw Error("image_score: empty map");
    return *std::max_element(map.data().begin(), map.data().end());
}

} // namespace dictas
