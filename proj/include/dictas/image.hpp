#pragma once

#include "dictas/tensor.hpp"

#include <opencv2/core.hpp>

#include <filesystem>
#include <vector>

namespace dictas {

// Images are CV_32FC3 matrices in RGB order with values in [0, 1]. Masks are
// CV_8UC1 with values {0, 1}. Real-valued maps are Matrix (rows = height).

cv::Mat load_rgb(const std::filesystem::path& path);
void save_rgb(const std::filesystem::path& path, const cv::Mat& rgb);

/// Loads a ground-truth mask; any nonzero pixel is anomalous.
cv::Mat load_mask(const std::filesystem::path& path);

/// Bicubic resize to (height, width); returns the input when it already matches.
cv::Mat resize_bicubic(const cv::Mat& img, int height, int width);

/// Nearest-neighbour resize for masks.
cv::Mat resize_mask(const cv::Mat& mask, int height, int width);

/// Writes a [0, 1] map as 16-bit grayscale PNG, value = round(65535 * m).
void save_map_png16(const std::filesystem::path& path, const Matrix& map);
/// Inverse of save_map_png16 (values quantized to 1/65535).
Matrix load_map_png16(const std::filesystem::path& path);

/// Image files (png, jpg, jpeg, bmp, tif, tiff) directly inside `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

} // namespace dictas
