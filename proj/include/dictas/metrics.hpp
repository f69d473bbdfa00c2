#pragma once

#include "dictas/tensor.hpp"

#include <opencv2/core.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace dictas {

/// Scores with binary labels (pixels or images).
struct EvalPair {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;

    void append(std::span<const double> s, std::span<const std::uint8_t> l);
    std::size_t positives() const;
};

/// Rank-based ROC AUC with midranks for ties. Throws unless both classes occur.
double auroc(const EvalPair& pair);

/// Sum over distinct thresholds of (R_i - R_{i-1}) * P_i. Throws without positives.
double average_precision(const EvalPair& pair);

/// Best F1 over thresholds "score >= t". Throws without positives.
double f1_max(const EvalPair& pair);

/// 8-connected components of a CV_8UC1 mask; 0 is background, regions are 1..n.
/// Returns a row-major label image and the region count.
std::vector<std::uint32_t> connected_components(const cv::Mat& mask, std::size_t& regions);

/// Per-region overlap curve integrated up to fpr_limit and divided by it.
/// Thresholds sweep every distinct score; the curve starts at (0, 0) and is cut
/// at fpr_limit by linear interpolation. Throws when no mask has a region.
double pro(std::span<const Matrix> maps, std::span<const cv::Mat> masks, double fpr_limit = 0.3);

} // namespace dictas
