#include "dictas/toy.hpp"

#include "dictas/image.hpp"
#include "dictas/rng.hpp"
#include "dictas/synthesis.hpp"
#include "dictas/tensor.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <numbers>

namespace fs = std::filesystem;

namespace dictas {

namespace {


cv::Vec3f random_colour(Rng& rng, double lo, double hi) {
    return {static_cast<float>(uniform(rng, lo, hi)), static_cast<float>(uniform(rng, lo, hi)),
            static_cast<float>(uniform(rng, lo, hi))};
}

// Each class has a fixed palette; images jitter it slightly.
cv::Mat paint(int size, Rng& rng, const std::string& kind, const auto& intensity) {
    Rng pal(derive_seed(0, "toy-palette:" + kind));
    cv::Vec3f dark = random_colour(pal, 0.1, 0.25);
    cv::Vec3f light = random_colour(pal, 0.7, 0.9);
    for (int c = 0; c < 3; ++c) {
        dark[c] += static_cast<float>(uniform(rng, -0.03, 0.03));
        light[c] += static_cast<float>(uniform(rng, -0.03, 0.03));
    }
    cv::Mat img(size, size, CV_32FC3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double t = std::clamp(intensity(static_cast<double>(x), static_cast<double>(y)), 0.0, 1.0);
            const double n = 0.02 * (uniform(rng) - 0.5);
            for (int c = 0; c < 3; ++c)
                img.at<cv::Vec3f>(y, x)[c] = static_cast<float>(std::clamp(dark[c] + t * (light[c] - dark[c]) + n, 0.0, 1.0));
        }
    return img;
}

} // namespace

cv::Mat toy_texture(const std::string& kind, int size, std::uint64_t seed) {
    if (size < 8) throw Error("toy_texture: size must be >= 8");
    Rng rng(mix64(seed));
    const double pi = std::numbers::pi;
    const double s = size / 64.0; // periods are given for 64 px
    if (kind == "stripes") {
        const double angle = uniform(rng, 0.0, pi);
        const double period = s * uniform(rng, 7.0, 11.0);
        const double phase = uniform(rng, 0.0, 2.0 * pi);
        const double cx = std::cos(angle), cy = std::sin(angle);
        return paint(size, rng, kind, [=](double x, double y) {
            return 0.5 + 0.5 * std::sin(2.0 * pi * (cx * x + cy * y) / period + phase);
        });
    }
    if (kind == "checker") {
        const double cell = s * uniform(rng, 6.0, 10.0);
        const double ox = uniform(rng, 0.0, 2.0 * cell), oy = uniform(rng, 0.0, 2.0 * cell);
        return paint(size, rng, kind, [=](double x, double y) {
            const auto ix = static_cast<long>(std::floor((x + ox) / cell));
            const auto iy = static_cast<long>(std::floor((y + oy) / cell));
            return ((ix + iy) % 2 == 0) ? 1.0 : 0.0;
        });
    }
    if (kind == "dots") {
        const double pitch = s * uniform(rng, 8.0, 12.0);
        const double radius = pitch * uniform(rng, 0.22, 0.32);
        const double ox = uniform(rng, 0.0, pitch), oy = uniform(rng, 0.0, pitch);
        return paint(size, rng, kind, [=](double x, double y) {
            const double dx = std::fmod(x + ox, pitch) - pitch / 2.0;
            const double dy = std::fmod(y + oy, pitch) - pitch / 2.0;
            return std::sqrt(dx * dx + dy * dy) < radius ? 1.0 : 0.0;
        });
    }
    if (kind == "waves") {
        const double p1 = s * uniform(rng, 9.0, 14.0), p2 = s * uniform(rng, 9.0, 14.0);
        const double a1 = uniform(rng, 0.0, pi), a2 = a1 + uniform(rng, pi / 4.0, 3.0 * pi / 4.0);
        const double f1 = uniform(rng, 0.0, 2.0 * pi), f2 = uniform(rng, 0.0, 2.0 * pi);
        return paint(size, rng, kind, [=](double x, double y) {
            return 0.5 + 0.25 * std::sin(2.0 * pi * (std::cos(a1) * x + std::sin(a1) * y) / p1 + f1) +
                   0.25 * std::sin(2.0 * pi * (std::cos(a2) * x + std::sin(a2) * y) / p2 + f2);
        });
    }
    throw Error("unknown toy texture: " + kind);
}

ToyDefect toy_defect(const cv::Mat& image, const std::string& kind, std::uint64_t seed) {
    if (image.type() != CV_32FC3) throw Error("toy_defect expects CV_32FC3");
    Rng rng(mix64(seed));
    const int size = std::min(image.rows, image.cols);
    ToyDefect out{image.clone(), cv::Mat::zeros(image.size(), CV_8UC1)};
    if (kind == "square") {
        const int side = static_cast<int>(uniform(rng, 0.12, 0.25) * size);
        const int y0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.rows - side)));
        const int x0 = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.cols - side)));
        // A saturated colour, far from the near-grey texture palettes.
        cv::Vec3f colour(0.05f, 0.05f, 0.05f);
        colour[static_cast<int>(uniform_index(rng, 3))] = static_cast<float>(uniform(rng, 0.8, 1.0));
        const cv::Rect r(x0, y0, side, side);
        out.image(r).setTo(cv::Scalar(colour[0], colour[1], colour[2]));
        out.mask(r).setTo(1);
    } else if (kind == "blob") {
        const double cx = uniform(rng, 0.25, 0.75) * image.cols, cy = uniform(rng, 0.25, 0.75) * image.rows;
        const double rx = uniform(rng, 0.08, 0.16) * size, ry = uniform(rng, 0.08, 0.16) * size;
        const double tilt = uniform(rng, 0.0, std::numbers::pi);
        // Coarse random speckle: unlike every texture class.
        const cv::Vec3f a = random_colour(rng, 0.0, 1.0), b = random_colour(rng, 0.0, 1.0);
        cv::Mat fill(image.size(), CV_32FC3);
        for (int y = 0; y < image.rows; y += 2)
            for (int x = 0; x < image.cols; x += 2)
                fill(cv::Rect(x, y, std::min(2, image.cols - x), std::min(2, image.rows - y))).setTo(uniform(rng) < 0.5 ? a : b);
        for (int y = 0; y < image.rows; ++y)
            for (int x = 0; x < image.cols; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double u = (std::cos(tilt) * dx + std::sin(tilt) * dy) / rx;
                const double v = (-std::sin(tilt) * dx + std::cos(tilt) * dy) / ry;
                if (u * u + v * v > 1.0) continue;
                out.mask.at<std::uint8_t>(y, x) = 1;
                out.image.at<cv::Vec3f>(y, x) = 0.2f * image.at<cv::Vec3f>(y, x) + 0.8f * fill.at<cv::Vec3f>(y, x);
            }
    } else {
        throw Error("unknown toy defect: " + kind);
    }
    if (cv::countNonZero(out.mask) == 0) throw Error("toy_defect produced an empty mask");
    return out;
}

void write_toy_corpus(const fs::path& root, const std::vector<std::string>& classes, const ToyCorpusOptions& o) {
    auto name = [](std::size_t i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03zu", i);
        return std::string(buf);
    };
    auto write_mask = [](const fs::path& p, const cv::Mat& mask) {
        cv::Mat m8;
        mask.convertTo(m8, CV_8UC1, 255.0);
        if (!cv::imwrite(p.string(), m8)) throw Error("cannot write " + p.string());
    };
    for (const auto& cls : classes) {
        const std::uint64_t base = derive_seed(o.seed, cls);
        const fs::path dir = root / cls;
        fs::create_directories(dir / "train" / "good");
        fs::create_directories(dir / "test" / "good");
        for (std::size_t i = 0; i < o.train_per_class; ++i)
            save_rgb(dir / "train" / "good" / (name(i) + ".png"), toy_texture(cls, o.size, derive_seed(base, "train", i)));
        for (std::size_t i = 0; i < o.test_good; ++i)
            save_rgb(dir / "test" / "good" / (name(i) + ".png"), toy_texture(cls, o.size, derive_seed(base, "good", i)));
        for (const std::string defect : {"square", "blob"}) {
            fs::create_directories(dir / "test" / defect);
            fs::create_directories(dir / "ground_truth" / defect);
            for (std::size_t i = 0; i < o.test_per_defect; ++i) {
                const cv::Mat normal = toy_texture(cls, o.size, derive_seed(base, defect, i));
                const ToyDefect d = toy_defect(normal, defect, derive_seed(base, defect + "-inject", i));
                save_rgb(dir / "test" / defect / (name(i) + ".png"), d.image);
                write_mask(dir / "ground_truth" / defect / (name(i) + "_mask.png"), d.mask);
            }
        }
    }
}

} // namespace dictas
