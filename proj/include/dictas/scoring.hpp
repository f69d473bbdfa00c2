#pragma once

#include "dictas/backbone.hpp"
#include "dictas/lookup.hpp"
#include "dictas/tensor.hpp"

#include <span>

namespace dictas {

struct ScoringOptions {
    bool smooth = true;
    double smooth_sigma = 4.0; // pixels
};

/// Full-resolution map with values in [0, 1] and its image-level score.
struct AnomalyMap {
    Matrix map; // out_h x out_w
    double image_score = 0.0;
};

/// Per-patch (1 / 2L) * sum_l (1 - cos(F_q^l, F_r^l)) on the H x W grid, clamped to [0, 1].
Matrix patch_distance_field(std::span<const Matrix> query, std::span<const Matrix> retrieved,
                            std::size_t grid_h, std::size_t grid_w);

/// Distance field, bilinear upsampling to out_h x out_w and optional Gaussian smoothing.
Matrix anomaly_map(const PatchFeatureStack& query, const RetrievalResult& retrieved, std::size_t out_h,
                   std::size_t out_w, const ScoringOptions& options);

/// Maximum pixel value.
double image_score(const Matrix& map);

namespace kernels::serial {
/// Half-pixel-centre bilinear resize with clamped borders.
Matrix upsample_bilinear(const Matrix& field, std::size_t out_h, std::size_t out_w);
/// Separable Gaussian blur, radius round(4 sigma), mirrored borders.
Matrix gaussian_blur(const Matrix& map, double sigma);
} // namespace kernels::serial

namespace kernels::parallel {
Matrix upsample_bilinear(const Matrix& field, std::size_t out_h, std::size_t out_w);
Matrix gaussian_blur(const Matrix& map, double sigma);
} // namespace kernels::parallel

} // namespace dictas
