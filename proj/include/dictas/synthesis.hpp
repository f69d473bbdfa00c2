#pragma once

#include <opencv2/core.hpp>

#include <cstdint>
#include <vector>

namespace dictas {

struct SynthesisConfig {
    // Query anomalies.
    std::vector<int> noise_scales = {1, 2, 4, 8}; // r_x and r_y are drawn independently
    double binarize_threshold = 0.5;             // on Perlin noise in [-1, 1]
    double gamma_min = 0.2;                       // blend weight of the anomaly source
    double gamma_max = 0.8;
    double normal_probability = 0.5;
    int max_mask_attempts = 1000;

    // Reference transforms, applied in this order.
    double p_rotate90 = 1.0;
    double p_rotate = 1.0;
    double rotate_min_deg = 30.0;
    double rotate_max_deg = 270.0;
    double p_hflip = 0.5;
    double p_vflip = 0.5;
    double p_grid_dropout = 0.5;
    double grid_dropout_ratio = 0.3;
    double p_coarse_dropout = 0.5;
    int coarse_max_holes = 8;
    int coarse_max_size = 32;

    void validate() const;
};

/// Query image, binary mask G (CV_8UC1, {0,1}), image label y_q, and k references.
struct SyntheticSample {
    cv::Mat query;
    cv::Mat mask;
    int label = 0;
    std::vector<cv::Mat> references;
};

struct SynthesizedQuery {
    cv::Mat image;
    cv::Mat mask;
    int label = 0;
};

/// Gradient-lattice Perlin noise on an (res_y + 1) x (res_x + 1) lattice of random
/// unit gradients, quintic fade interpolation, scaled by sqrt(2) so values lie in
/// [-1, 1]. Returns CV_64FC1. Lattice points evaluate to exactly 0.
cv::Mat perlin_noise(int height, int width, int res_x, int res_y, std::uint64_t seed);

/// X_q = gamma * (G . A) + (1 - gamma) * (G . X) + (1 - G) . X, label = [sum G > 0].
/// Pixels outside the mask are copied bit-exactly from X.
SynthesizedQuery blend_anomaly(const cv::Mat& image, const cv::Mat& source, const cv::Mat& mask,
                               double gamma);

/// With probability normal_probability returns X unchanged with an empty mask;
/// otherwise resamples Perlin noise until the binarized mask is non-empty and
/// blends the anomaly source (resized to X if needed).
SynthesizedQuery synthesize_query(const cv::Mat& image, const cv::Mat& source,
                                  const SynthesisConfig& cfg, std::uint64_t seed);

/// Counter-clockwise rotation by k * 90 degrees.
cv::Mat rotate90(const cv::Mat& image, int k);

/// Geometric and occlusion augmentations simulating a normal reference image.
/// Output size equals input size; non-square inputs only take 0/180 degree
/// quarter turns.
cv::Mat transform_reference(const cv::Mat& image, const SynthesisConfig& cfg, std::uint64_t seed);

/// Query via synthesize_query and k references via transform_reference, each with
/// its own derived seed.
SyntheticSample make_training_pair(const cv::Mat& image, const cv::Mat& source,
                                   const SynthesisConfig& cfg, std::size_t k, std::uint64_t seed);

/// Max-pools a pixel mask onto a grid_h x grid_w patch grid (row-major): a patch
/// is anomalous iff any pixel it covers is.
std::vector<std::uint8_t> mask_to_patch_grid(const cv::Mat& mask, std::size_t grid_h,
                                             std::size_t grid_w);

} // namespace dictas
