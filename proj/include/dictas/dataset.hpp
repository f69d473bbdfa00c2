#pragma once

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dictas {

/// Directory conventions of an MVTec-style dataset. Paths are relative to a category directory.
struct LayoutOptions {
    std::string train_dir = "train/good";
    std::string test_dir = "test";
    std::string ground_truth_dir = "ground_truth";
    std::string normal_name = "good";
    std::string mask_suffix = "_mask";
};

/// One test image with its defect type and, for anomalous images, the mask path.
struct TestItem {
    std::filesystem::path image;
    std::optional<std::filesystem::path> mask;
    std::string defect;   // subdirectory name under test/
    std::string relative; // "<defect>/<file stem>", unique within the category
    int label = 0;
};

/// root/<category>/{train/good, test/<defect>, ground_truth/<defect>/<stem>_mask.png}.
/// A root that is itself a category directory is accepted as a one-category dataset.
class DatasetLayout {
public:
    explicit DatasetLayout(std::filesystem::path root, LayoutOptions options = {});

    const std::filesystem::path& root() const { return root_; }
    std::vector<std::string> categories() const;
    std::filesystem::path category_dir(const std::string& category) const;

    /// Normal training images, sorted by file name.
    std::vector<std::filesystem::path> train_images(const std::string& category) const;
    /// Every test image sorted by (defect, file name). Throws when an anomalous
    /// image has no mask.
    std::vector<TestItem> test_items(const std::string& category) const;

private:
    std::filesystem::path root_;
    LayoutOptions options_;
};

/// Loads a test mask, or an all-zero mask of the image's size for normal items.
/// Throws when the mask and image sizes differ.
cv::Mat load_item_mask(const TestItem& item, int height, int width);

/// Uniform sample of k distinct paths, deterministic for a seed.
std::vector<std::filesystem::path> sample_references(const std::vector<std::filesystem::path>& pool,
                                                     std::size_t k, std::uint64_t seed);

/// Category name as it appears in prompts ("metal_nut" -> "metal nut").
std::string prompt_class_name(const std::string& category);

} // namespace dictas
