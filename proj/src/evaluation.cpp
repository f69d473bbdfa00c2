#include "dictas/evaluation.hpp"

#include "dictas/image.hpp"
#include "dictas/metrics.hpp"
#include "dictas/scoring.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace dictas {

namespace {

std::vector<std::uint8_t> mask_labels(const cv::Mat& mask) {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(mask.rows) * static_cast<std::size_t>(mask.cols));
    std::size_t i = 0;
    for (int y = 0; y < mask.rows; ++y)
        for (int x = 0; x < mask.cols; ++x) out[i++] = mask.at<std::uint8_t>(y, x) ? 1 : 0;
    return out;
}

} // namespace

MetricSet evaluate_predictions(const std::vector<TestItem>& items, const std::vector<Matrix>& maps,
                               const std::vector<double>& scores, const EvalConfig& cfg) {
    if (items.size() != maps.size()) throw Error("evaluation: one map per test image required");
    if (!scores.empty() && scores.size() != items.size()) throw Error("evaluation: one score per test image required");
    std::vector<Matrix> eval_maps;
    std::vector<cv::Mat> masks;
    EvalPair pixels;
    EvalPair images;
    double per_image_auroc = 0.0;
    double per_image_ap = 0.0;
    std::size_t per_image_count = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        Matrix map = maps[i];
        cv::Mat mask = load_item_mask(items[i], static_cast<int>(map.rows()), static_cast<int>(map.cols()));
        if (cfg.resolution > 0) {
            map = kernels::parallel::upsample_bilinear(map, cfg.resolution, cfg.resolution);
            mask = resize_mask(mask, static_cast<int>(cfg.resolution), static_cast<int>(cfg.resolution));
        }
        const auto labels = mask_labels(mask);
        if (cfg.pooled_pixels) {
            pixels.append(map.data(), labels);
        } else if (items[i].label == 1) {
            EvalPair one;
            one.append(map.data(), labels);
            if (one.positives() > 0 && one.positives() < labels.size()) {
                per_image_auroc += auroc(one);
                per_image_ap += average_precision(one);
                ++per_image_count;
            }
        }
        const double s = scores.empty() ? image_score(map) : scores[i];
        const std::uint8_t l = static_cast<std::uint8_t>(items[i].label);
        images.append(std::span<const double>(&s, 1), std::span<const std::uint8_t>(&l, 1));
        eval_maps.push_back(std::move(map));
        masks.push_back(std::move(mask));
    }
    MetricSet m;
    if (cfg.pooled_pixels) {
        m[0] = auroc(pixels);
        m[2] = average_precision(pixels);
    } else {
        if (per_image_count == 0) throw Error("evaluation: no anomalous image with both pixel classes");
        m[0] = per_image_auroc / static_cast<double>(per_image_count);
        m[2] = per_image_ap / static_cast<double>(per_image_count);
    }
    m[1] = pro(eval_maps, masks, cfg.fpr_limit);
    m[3] = auroc(images);
    m[4] = f1_max(images);
    m[5] = average_precision(images);
    return m;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) throw Error("mean_std: no values");
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

void EvalReport::finalize() {
    if (categories.empty()) throw Error("report has no categories");
    seeds = categories.front().per_seed.size();
    for (auto& c : categories) {
        if (c.per_seed.size() != seeds) throw Error("categories were evaluated with different seed counts");
        for (std::size_t k = 0; k < MetricSet::kCount; ++k) {
            std::vector<double> v;
            for (const auto& s : c.per_seed) v.push_back(s[k]);
            std::tie(c.mean[k], c.std[k]) = mean_std(v);
        }
    }
    for (std::size_t k = 0; k < MetricSet::kCount; ++k) {
        std::vector<double> per_seed(seeds, 0.0);
        for (std::size_t s = 0; s < seeds; ++s) {
            for (const auto& c : categories) per_seed[s] += c.per_seed[s][k];
            per_seed[s] /= static_cast<double>(categories.size());
        }
        std::tie(mean[k], std[k]) = mean_std(per_seed);
    }
}

std::string EvalReport::table() const {
    static constexpr std::array<const char*, MetricSet::kCount> headers = {"AUROC", "PRO", "AP",
                                                                          "AUROC", "F1-max", "AP"};
    std::size_t name_w = 8;
    for (const auto& c : categories) name_w = std::max(name_w, c.name.size());
    auto cell = [&](double m, double s) {
        char buf[32];
        if (seeds > 1)
            std::snprintf(buf, sizeof buf, "%.1f±%.1f", 100.0 * m, 100.0 * s);
        else
            std::snprintf(buf, sizeof buf, "%.1f", 100.0 * m);
        return std::string(buf);
    };
    const int w = seeds > 1 ? 12 : 7;
    std::ostringstream os;
    for (const auto& [k, v] : info) os << "# " << k << ": " << v << '\n';
    os << "# seeds: " << seeds << ", values in %\n";
    os << std::left << std::setw(static_cast<int>(name_w)) << "category" << " | "
       << std::setw(3 * (w + 1)) << "pixel (AUROC, PRO, AP)" << "| image (AUROC, F1-max, AP)\n";
    os << std::setw(static_cast<int>(name_w)) << "" << " | ";
    for (std::size_t k = 0; k < MetricSet::kCount; ++k) {
        if (k == 3) os << "| ";
        os << std::setw(w) << headers[k] << ' ';
    }
    os << '\n';
    auto row = [&](const std::string& name, const MetricSet& m, const MetricSet& s) {
        os << std::setw(static_cast<int>(name_w)) << name << " | ";
        for (std::size_t k = 0; k < MetricSet::kCount; ++k) {
            if (k == 3) os << "| ";
            const std::string c = cell(m[k], s[k]);
            const int visible = static_cast<int>(c.size()) - (seeds > 1 ? 1 : 0); // '±' is two bytes
            os << c << std::string(static_cast<std::size_t>(std::max(0, w - visible)), ' ') << ' ';
        }
        os << '\n';
    };
    for (const auto& c : categories) row(c.name, c.mean, c.std);
    row("mean", mean, std);
    return os.str();
}

std::string EvalReport::manifest() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "seeds = " << seeds << '\n';
    for (const auto& [k, v] : info) os << k << " = " << v << '\n';
    auto section = [&](const std::string& name, const MetricSet& m, const MetricSet& s) {
        os << "\n[" << name << "]\n";
        for (std::size_t k = 0; k < MetricSet::kCount; ++k) {
            os << "metric." << MetricSet::kKeys[k] << " = " << m[k] << '\n';
            os << "metric." << MetricSet::kKeys[k] << ".std = " << s[k] << '\n';
        }
    };
    for (const auto& c : categories) section(c.name, c.mean, c.std);
    section("mean", mean, std);
    return os.str();
}

EvalReport EvalReport::parse_manifest(const std::string& text) {
    EvalReport r;
    std::istringstream in(text);
    std::string line;
    std::size_t current = 0; // 1-based index into r.categories, 0 = none
    bool in_mean = false;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            const std::string name = line.substr(1, line.size() - 2);
            in_mean = name == "mean";
            if (!in_mean) r.categories.push_back({name, {}, {}, {}});
            current = in_mean ? 0 : r.categories.size();
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("report manifest: malformed line: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!current && !in_mean) {
            if (key == "seeds")
                r.seeds = std::stoul(value);
            else
                r.info[key] = value;
            continue;
        }
        MetricSet& m = in_mean ? r.mean : r.categories[current - 1].mean;
        MetricSet& s = in_mean ? r.std : r.categories[current - 1].std;
        bool matched = false;
        for (std::size_t k = 0; k < MetricSet::kCount; ++k) {
            const std::string base = "metric." + std::string(MetricSet::kKeys[k]);
            if (key == base) {
                m[k] = std::stod(value);
                matched = true;
            } else if (key == base + ".std") {
                s[k] = std::stod(value);
                matched = true;
            }
        }
        if (!matched) throw Error("report manifest: unknown key " + key);
    }
    if (r.categories.empty()) throw Error("report manifest has no category sections");
    return r;
}

namespace {

std::map<std::string, double> read_scores(const fs::path& file) {
    std::map<std::string, double> out;
    std::ifstream in(file);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        out[line.substr(0, tab)] = std::stod(line.substr(tab + 1));
    }
    return out;
}

} // namespace

EvalReport evaluate_directory(const fs::path& pred_dir, const DatasetLayout& data, std::size_t seeds,
                              const EvalConfig& cfg, const std::vector<std::string>& categories) {
    if (seeds == 0) throw Error("eval: seeds must be >= 1");
    EvalReport report;
    const auto cats = categories.empty() ? data.categories() : categories;
    if (cats.empty()) throw Error("eval: no categories under " + data.root().string());
    for (const auto& cat : cats) {
        const auto items = data.test_items(cat);
        if (items.empty()) throw Error("eval: category " + cat + " has no test images");
        CategoryReport c;
        c.name = cat;
        for (std::size_t s = 0; s < seeds; ++s) {
            fs::path dir = pred_dir / cat / ("seed_" + std::to_string(s));
            if (!fs::is_directory(dir) && seeds == 1) dir = pred_dir / cat;
            if (!fs::is_directory(dir)) throw Error("eval: missing prediction directory " + dir.string());
            const auto score_table = read_scores(dir / "scores.tsv");
            std::vector<Matrix> maps;
            std::vector<double> scores;
            for (const auto& item : items) {
                const fs::path map_path = dir / (item.relative + ".png");
                if (!fs::is_regular_file(map_path)) throw Error("eval: missing map " + map_path.string());
                maps.push_back(load_map_png16(map_path));
                auto it = score_table.find(item.relative);
                scores.push_back(it != score_table.end() ? it->second : image_score(maps.back()));
            }
            c.per_seed.push_back(evaluate_predictions(items, maps, scores, cfg));
        }
        report.categories.push_back(std::move(c));
    }
    report.finalize();
    return report;
}

void write_report(const EvalReport& report, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream table(path);
    if (!table) throw Error("cannot write report " + path.string());
    table << report.table();
    std::ofstream kv(path.string() + ".kv");
    if (!kv) throw Error("cannot write report manifest " + path.string() + ".kv");
    kv << report.manifest();
}

} // namespace dictas
