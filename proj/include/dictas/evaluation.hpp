#pragma once

#include "dictas/config.hpp"
#include "dictas/dataset.hpp"
#include "dictas/tensor.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dictas {

/// Shot counts and reference draws of the full benchmark protocol.
inline constexpr std::array<std::size_t, 5> kProtocolShots = {1, 2, 4, 8, 16};
inline constexpr std::size_t kProtocolSeeds = 5;

/// Pixel AUROC, PRO, AP followed by image AUROC, F1-max, AP.
struct MetricSet {
    static constexpr std::size_t kCount = 6;
    static constexpr std::array<std::string_view, kCount> kKeys = {
        "pixel.auroc", "pixel.pro", "pixel.ap", "image.auroc", "image.f1_max", "image.ap"};
    std::array<double, kCount> values{};

    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
};

/// Metrics of one set of predictions over a category's test split. Maps must be
/// at the mask resolution; image scores default to the map maximum when empty.
MetricSet evaluate_predictions(const std::vector<TestItem>& items, const std::vector<Matrix>& maps,
                               const std::vector<double>& scores, const EvalConfig& cfg);

struct CategoryReport {
    std::string name;
    std::vector<MetricSet> per_seed;
    MetricSet mean;
    MetricSet std;
};

struct EvalReport {
    std::vector<CategoryReport> categories;
    /// Mean row: per-seed averages over categories, then mean and std over seeds.
    MetricSet mean;
    MetricSet std;
    std::size_t seeds = 0;
    std::map<std::string, std::string> info; // shots, lookup, ...

    /// Fills mean/std of every category and the mean row from per_seed values.
    void finalize();
    /// Fixed-width table in percent, "mean±std" per cell.
    std::string table() const;
    /// Sections "[category]" with lines "metric.pixel.auroc = value" and "... .std = value".
    std::string manifest() const;
    static EvalReport parse_manifest(const std::string& text);
};

/// Mean and sample standard deviation (0 for a single value).
std::pair<double, double> mean_std(const std::vector<double>& v);

/// Reads "<pred_dir>/<category>/seed_<s>/" for s < seeds (a single run may also sit
/// directly in "<pred_dir>/<category>/"). Throws on a missing map.
EvalReport evaluate_directory(const std::filesystem::path& pred_dir, const DatasetLayout& data,
                              std::size_t seeds, const EvalConfig& cfg,
                              const std::vector<std::string>& categories = {});

/// Writes the table to `path` and the manifest to `path` + ".kv".
void write_report(const EvalReport& report, const std::filesystem::path& path);

} // namespace dictas
