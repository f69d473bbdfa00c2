#include "dictas/synthesis.hpp"

#include "dictas/image.hpp"
#include "dictas/rng.hpp"
#include "dictas/tensor.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dictas {

void SynthesisConfig::validate() const {
    if (noise_scales.empty()) throw Error("synthesis: no noise scales");
    for (int r : noise_scales)
        if (r < 1) throw Error("synthesis: noise resolution must be >= 1");
    if (gamma_min < 0.0 || gamma_max > 1.0 || gamma_min > gamma_max)
        throw Error("synthesis: blend range must satisfy 0 <= gamma_min <= gamma_max <= 1");
    if (normal_probability < 0.0 || normal_probability > 1.0)
        throw Error("synthesis: normal_probability outside [0, 1]");
    if (max_mask_attempts < 1) throw Error("synthesis: max_mask_attempts must be >= 1");
    if (rotate_min_deg > rotate_max_deg) throw Error("synthesis: empty rotation range");
    if (coarse_max_holes < 0 || coarse_max_size < 1) throw Error("synthesis: bad coarse dropout");
}

namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

} // namespace

cv::Mat perlin_noise(int height, int width, int res_x, int res_y, std::uint64_t seed) {
    if (height <= 0 || width <= 0) throw Error("perlin_noise: non-positive image size");
    if (res_x < 1 || res_y < 1) throw Error("perlin_noise: resolution must be >= 1");
    Rng rng(mix64(seed));
    const auto gx = static_cast<std::size_t>(res_x) + 1;
    const auto gy = static_cast<std::size_t>(res_y) + 1;
    std::vector<double> grad_x(gx * gy);
    std::vector<double> grad_y(gx * gy);
    for (std::size_t i = 0; i < gx * gy; ++i) {
        const double angle = 2.0 * std::numbers::pi * uniform(rng);
        grad_x[i] = std::cos(angle);
        grad_y[i] = std::sin(angle);
    }
    auto corner = [&](std::size_t ix, std::size_t iy, double dx, double dy) {
        const std::size_t i = iy * gx + ix;
        return grad_x[i] * dx + grad_y[i] * dy;
    };

    cv::Mat out(height, width, CV_64FC1);
    for (int y = 0; y < height; ++y) {
        const double py = static_cast<double>(y) * res_y / height;
        const auto iy = static_cast<std::size_t>(py);
        const double fy = py - static_cast<double>(iy);
        for (int x = 0; x < width; ++x) {
            const double px = static_cast<double>(x) * res_x / width;
            const auto ix = static_cast<std::size_t>(px);
            const double fx = px - static_cast<double>(ix);
            const double n00 = corner(ix, iy, fx, fy);
            const double n10 = corner(ix + 1, iy, fx - 1.0, fy);
            const double n01 = corner(ix, iy + 1, fx, fy - 1.0);
            const double n11 = corner(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
            const double u = fade(fx);
            const double v = fade(fy);
            const double top = n00 + u * (n10 - n00);
            const double bottom = n01 + u * (n11 - n01);
            out.at<double>(y, x) = std::numbers::sqrt2 * (top + v * (bottom - top));
        }
    }
    return out;
}

SynthesizedQuery blend_anomaly(const cv::Mat& image, const cv::Mat& source, const cv::Mat& mask,
                               double gamma) {
    if (image.type() != CV_32FC3 || source.type() != CV_32FC3)
        throw Error("blend_anomaly expects CV_32FC3 images");
    if (image.size() != source.size() || image.size() != mask.size())
        throw Error("blend_anomaly: image, source and mask sizes differ");
    if (mask.type() != CV_8UC1) throw Error("blend_anomaly expects a CV_8UC1 mask");
    SynthesizedQuery out{image.clone(), mask.clone(), 0};
    for (int y = 0; y < image.rows; ++y)
        for (int x = 0; x < image.cols; ++x) {
            if (mask.at<std::uint8_t>(y, x) == 0) continue;
            out.label = 1;
            const auto& a = source.at<cv::Vec3f>(y, x);
            const auto& xv = image.at<cv::Vec3f>(y, x);
            auto& q = out.image.at<cv::Vec3f>(y, x);
            for (int c = 0; c < 3; ++c)
                q[c] = static_cast<float>(gamma * a[c] + (1.0 - gamma) * xv[c]);
        }
    return out;
}

SynthesizedQuery synthesize_query(const cv::Mat& image, const cv::Mat& source,
                                  const SynthesisConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const cv::Mat src = source.size() == image.size()
                            ? source
                            : resize_bicubic(source, image.rows, image.cols);
    if (src.size() != image.size()) throw Error("anomaly source size mismatch after resize");

    Rng rng(mix64(seed));
    if (bernoulli(rng, cfg.normal_probability))
        return {image.clone(), cv::Mat::zeros(image.size(), CV_8UC1), 0};

    const double gamma = uniform(rng, cfg.gamma_min, cfg.gamma_max);
    for (int attempt = 0; attempt < cfg.max_mask_attempts; ++attempt) {
        const int rx = cfg.noise_scales[uniform_index(rng, cfg.noise_scales.size())];
        const int ry = cfg.noise_scales[uniform_index(rng, cfg.noise_scales.size())];
        const cv::Mat noise = perlin_noise(image.rows, image.cols, rx, ry, rng());
        cv::Mat mask(image.size(), CV_8UC1);
        for (int y = 0; y < image.rows; ++y)
            for (int x = 0; x < image.cols; ++x)
                mask.at<std::uint8_t>(y, x) = noise.at<double>(y, x) > cfg.binarize_threshold ? 1 : 0;
        if (cv::countNonZero(mask) > 0) return blend_anomaly(image, src, mask, gamma);
    }
    throw Error("synthesize_query: no non-empty mask after max_mask_attempts draws");
}

cv::Mat rotate90(const cv::Mat& image, int k) {
    k = ((k % 4) + 4) % 4;
    cv::Mat out;
    switch (k) {
    case 0: return image.clone();
    case 1: cv::rotate(image, out, cv::ROTATE_90_COUNTERCLOCKWISE); break;
    case 2: cv::rotate(image, out, cv::ROTATE_180); break;
    default: cv::rotate(image, out, cv::ROTATE_90_CLOCKWISE); break;
    }
    return out;
}

namespace {

void grid_dropout(cv::Mat& img, double ratio) {
    const int unit_w = std::max(2, img.cols / 10);
    const int unit_h = std::max(2, img.rows / 10);
    const int hole_w = static_cast<int>(unit_w * ratio);
    const int hole_h = static_cast<int>(unit_h * ratio);
    if (hole_w <= 0 || hole_h <= 0) return;
    for (int y0 = 0; y0 < img.rows; y0 += unit_h)
        for (int x0 = 0; x0 < img.cols; x0 += unit_w) {
            const cv::Rect hole(x0, y0, std::min(hole_w, img.cols - x0), std::min(hole_h, img.rows - y0));
            img(hole).setTo(cv::Scalar::all(0));
        }
}

void coarse_dropout(cv::Mat& img, int holes, int size, Rng& rng) {
    const int hh = std::min(size, img.rows);
    const int hw = std::min(size, img.cols);
    for (int i = 0; i < holes; ++i) {
        const auto y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(img.rows - hh + 1)));
        const auto x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(img.cols - hw + 1)));
        img(cv::Rect(x, y, hw, hh)).setTo(cv::Scalar::all(0));
    }
}

} // namespace

cv::Mat transform_reference(const cv::Mat& image, const SynthesisConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix64(seed));
    cv::Mat out = image.clone();
    if (bernoulli(rng, cfg.p_rotate90)) {
        int k = static_cast<int>(uniform_index(rng, 4));
        if (out.rows != out.cols) k = (k % 2) * 2;
        out = rotate90(out, k);
    }
    if (bernoulli(rng, cfg.p_rotate)) {
        const double angle = uniform(rng, cfg.rotate_min_deg, cfg.rotate_max_deg);
        const cv::Point2f centre(static_cast<float>(out.cols - 1) / 2.0f,
                                 static_cast<float>(out.rows - 1) / 2.0f);
        const cv::Mat affine = cv::getRotationMatrix2D(centre, angle, 1.0);
        cv::Mat rotated;
        cv::warpAffine(out, rotated, affine, out.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
        out = rotated;
    }
    if (bernoulli(rng, cfg.p_hflip)) cv::flip(out, out, 1);
    if (bernoulli(rng, cfg.p_vflip)) cv::flip(out, out, 0);
    if (bernoulli(rng, cfg.p_grid_dropout)) grid_dropout(out, cfg.grid_dropout_ratio);
    if (bernoulli(rng, cfg.p_coarse_dropout)) coarse_dropout(out, cfg.coarse_max_holes, cfg.coarse_max_size, rng);
    return out;
}

SyntheticSample make_training_pair(const cv::Mat& image, const cv::Mat& source,
                                   const SynthesisConfig& cfg, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw Error("make_training_pair: k must be >= 1");
    auto query = synthesize_query(image, source, cfg, derive_seed(seed, "query"));
    SyntheticSample sample{std::move(query.image), std::move(query.mask), query.label, {}};
    for (std::size_t i = 0; i < k; ++i)
        sample.references.push_back(transform_reference(image, cfg, derive_seed(seed, "reference", i)));
    return sample;
}

std::vector<std::uint8_t> mask_to_patch_grid(const cv::Mat& mask, std::size_t grid_h,
                                             std::size_t grid_w) {
    if (mask.type() != CV_8UC1) throw Error("mask_to_patch_grid expects a CV_8UC1 mask");
    if (grid_h == 0 || grid_w == 0) throw Error("mask_to_patch_grid: empty grid");
    const auto h = static_cast<std::size_t>(mask.rows);
    const auto w = static_cast<std::size_t>(mask.cols);
    std::vector<std::uint8_t> grid(grid_h * grid_w, 0);
    for (std::size_t py = 0; py < grid_h; ++py) {
        const std::size_t y0 = py * h / grid_h;
        const std::size_t y1 = std::max(y0 + 1, ((py + 1) * h + grid_h - 1) / grid_h);
        for (std::size_t px = 0; px < grid_w; ++px) {
            const std::size_t x0 = px * w / grid_w;
            const std::size_t x1 = std::max(x0 + 1, ((px + 1) * w + grid_w - 1) / grid_w);
            bool hit = false;
            for (std::size_t y = y0; y < std::min(y1, h) && !hit; ++y)
                for (std::size_t x = x0; x < std::min(x1, w) && !hit; ++x)
                    hit = mask.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) != 0;
            grid[py * grid_w + px] = hit ? 1 : 0;
        }
    }
    return grid;
}

} // namespace dictas
