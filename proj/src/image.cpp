#include "dictas/image.hpp"

#include "dictas/tensor.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>

namespace dictas {

namespace fs = std::filesystem;

cv::Mat load_rgb(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR | cv::IMREAD_ANYDEPTH);
    if (bgr.empty()) throw Error("image decode failure: " + path.string());
    const double scale = bgr.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(rgb, CV_32FC3, scale);
    return rgb;
}

void save_rgb(const fs::path& path, const cv::Mat& rgb) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    bgr.convertTo(bgr, CV_8UC3, 255.0);
    if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write image: " + path.string());
}

cv::Mat load_mask(const fs::path& path) {
    cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw Error("mask decode failure: " + path.string());
    cv::Mat mask = gray > 0;
    mask.convertTo(mask, CV_8UC1, 1.0 / 255.0);
    return mask;
}

cv::Mat resize_bicubic(const cv::Mat& img, int height, int width) {
    if (img.rows == height && img.cols == width) return img.clone();
    cv::Mat out;
    cv::resize(img, out, cv::Size(width, height), 0, 0, cv::INTER_CUBIC);
    return out;
}

cv::Mat resize_mask(const cv::Mat& mask, int height, int width) {
    if (mask.rows == height && mask.cols == width) return mask.clone();
    cv::Mat out;
    cv::resize(mask, out, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
    return out;
}

void save_map_png16(const fs::path& path, const Matrix& map) {
    cv::Mat out(static_cast<int>(map.rows()), static_cast<int>(map.cols()), CV_16UC1);
    for (int y = 0; y < out.rows; ++y)
        for (int x = 0; x < out.cols; ++x) {
            const double v = std::clamp(map(static_cast<std::size_t>(y), static_cast<std::size_t>(x)), 0.0, 1.0);
            out.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::lround(65535.0 * v));
        }
    if (!cv::imwrite(path.string(), out)) throw Error("cannot write map: " + path.string());
}

Matrix load_map_png16(const fs::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty() || raw.channels() != 1) throw Error("map decode failure: " + path.string());
    cv::Mat wide;
    const double scale = raw.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
    raw.convertTo(wide, CV_64FC1, scale);
    Matrix out(static_cast<std::size_t>(wide.rows), static_cast<std::size_t>(wide.cols));
    for (int y = 0; y < wide.rows; ++y)
        for (int x = 0; x < wide.cols; ++x)
            out(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = wide.at<double>(y, x);
    return out;
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
            ext == ".tiff")
            out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace dictas
