#pragma once

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dictas {

// Procedural texture corpus for desk-scale runs and tests. Classes:
//   "stripes"  sinusoidal bands with random orientation and phase
//   "checker"  axis-aligned checkerboard with random phase
//   "dots"     regular dot lattice with random offset
//   "waves"    sum of two crossing sinusoids
// Each class has a fixed palette with a small per-image jitter; periods scale
// with the image size. Defects are "square" (a flat, saturated colour) and
// "blob" (an ellipse filled with coarse random speckle).

struct ToyCorpusOptions {
    int size = 128;
    std::size_t train_per_class = 16;
    std::size_t test_good = 8;
    std::size_t test_per_defect = 8;
    std::uint64_t seed = 1;
};

/// Normal image of a texture class, CV_32FC3 in [0, 1].
cv::Mat toy_texture(const std::string& kind, int size, std::uint64_t seed);

struct ToyDefect {
    cv::Mat image;
    cv::Mat mask; // CV_8UC1 {0, 1}, never empty
};

/// Injects a "square" or "blob" defect into a copy of `image`.
ToyDefect toy_defect(const cv::Mat& image, const std::string& kind, std::uint64_t seed);

/// Writes root/<class>/{train/good, test/{good,square,blob}, ground_truth/{square,blob}}.
void write_toy_corpus(const std::filesystem::path& root, const std::vector<std::string>& classes,
                      const ToyCorpusOptions& options);

} // namespace dictas
