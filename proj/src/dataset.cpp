#include "dictas/dataset.hpp"

#include "dictas/image.hpp"
#include "dictas/rng.hpp"
#include "dictas/tensor.hpp"

#include <algorithm>
#include <numeric>

namespace fs = std::filesystem;

namespace dictas {

DatasetLayout::DatasetLayout(fs::path root, LayoutOptions options)
    : root_(std::move(root)), options_(std::move(options)) {
    if (!fs::is_directory(root_)) throw Error("dataset root is not a directory: " + root_.string());
}

namespace {

bool looks_like_category(const fs::path& dir, const LayoutOptions& o) {
    return fs::is_directory(dir / o.train_dir) || fs::is_directory(dir / o.test_dir);
}

std::vector<std::string> sorted_subdirs(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

std::vector<std::string> DatasetLayout::categories() const {
    if (looks_like_category(root_, options_)) return {root_.filename().string()};
    std::vector<std::string> out;
    for (const auto& name : sorted_subdirs(root_))
        if (looks_like_category(root_ / name, options_)) out.push_back(name);
    return out;
}

fs::path DatasetLayout::category_dir(const std::string& category) const {
    if (looks_like_category(root_, options_) && category == root_.filename().string()) return root_;
    const fs::path dir = root_ / category;
    if (!looks_like_category(dir, options_)) throw Error("unknown category: " + category);
    return dir;
}

std::vector<fs::path> DatasetLayout::train_images(const std::string& category) const {
    const fs::path dir = category_dir(category) / options_.train_dir;
    if (!fs::is_directory(dir)) return {};
    return list_images(dir);
}

std::vector<TestItem> DatasetLayout::test_items(const std::string& category) const {
    const fs::path cat = category_dir(category);
    std::vector<TestItem> items;
    for (const auto& defect : sorted_subdirs(cat / options_.test_dir)) {
        const bool normal = defect == options_.normal_name;
        for (const auto& img : list_images(cat / options_.test_dir / defect)) {
            TestItem item;
            item.image = img;
            item.defect = defect;
            item.relative = defect + "/" + img.stem().string();
            item.label = normal ? 0 : 1;
            if (!normal) {
                const fs::path gt = cat / options_.ground_truth_dir / defect;
                const fs::path candidates[] = {gt / (img.stem().string() + options_.mask_suffix + ".png"),
                                               gt / (img.stem().string() + ".png")};
                for (const auto& c : candidates)
                    if (fs::is_regular_file(c)) {
                        item.mask = c;
                        break;
                    }
                if (!item.mask) throw Error("missing mask for anomalous test image " + img.string());
            }
            items.push_back(std::move(item));
        }
    }
    return items;
}

cv::Mat load_item_mask(const TestItem& item, int height, int width) {
    if (!item.mask) return cv::Mat::zeros(height, width, CV_8UC1);
    cv::Mat m = load_mask(*item.mask);
    if (m.rows != height || m.cols != width)
        throw Error("mask " + item.mask->string() + " does not match its image size");
    return m;
}

std::vector<fs::path> sample_references(const std::vector<fs::path>& pool, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw Error("sample_references: k must be >= 1");
    if (k > pool.size())
        throw Error("sample_references: requested " + std::to_string(k) + " references from " +
                    std::to_string(pool.size()) + " images");
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = make_rng(seed, "references");
    // Partial Fisher-Yates: the first k slots are a uniform sample without replacement.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, pool.size() - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<fs::path> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(pool[idx[i]]);
    return out;
}

std::string prompt_class_name(const std::string& category) {
    std::string out = category;
    std::replace(out.begin(), out.end(), '_', ' ');
    return out;
}

} // namespace dictas
