#include "dictas/metrics.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

namespace dictas {

void EvalPair::append(std::span<const double> s, std::span<const std::uint8_t> l) {
    if (s.size() != l.size()) throw Error("EvalPair: scores and labels differ in length");
    scores.insert(scores.end(), s.begin(), s.end());
    for (std::uint8_t v : l) labels.push_back(v ? 1 : 0);
}

std::size_t EvalPair::positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

namespace {

void check_pair(const EvalPair& pair) {
    if (pair.scores.size() != pair.labels.size())
        throw Error("metric: scores and labels differ in length");
    if (pair.scores.empty()) throw Error("metric: empty input");
}

/// Indices sorted by descending score; ties keep input order.
std::vector<std::size_t> order_descending(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

/// Calls fn(tp, fp) after every group of tied scores, highest scores first.
template <class Fn>
void sweep(const EvalPair& pair, Fn&& fn) {
    const auto idx = order_descending(pair.scores);
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (pair.labels[idx[i]] ? tp : fp) += 1;
        if (i + 1 == idx.size() || pair.scores[idx[i + 1]] != pair.scores[idx[i]]) fn(tp, fp);
    }
}

} // namespace

double auroc(const EvalPair& pair) {
    check_pair(pair);
    const std::size_t n = pair.scores.size();
    const std::size_t pos = pair.positives();
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw Error("auroc: needs both positive and negative labels");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return pair.scores[a] < pair.scores[b]; });
    // Sum of positive midranks, doubled to stay integral.
    double twice_rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && pair.scores[idx[j]] == pair.scores[idx[i]]) ++j;
        const double twice_mid = static_cast<double>(i + 1 + j); // 2 * mean of ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (pair.labels[idx[t]]) twice_rank_sum += twice_mid;
        i = j;
    }
    const double p = static_cast<double>(pos);
    const double u = 0.5 * twice_rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(neg));
}

double average_precision(const EvalPair& pair) {
    check_pair(pair);
    const std::size_t pos = pair.positives();
    if (pos == 0) throw Error("average_precision: no positive labels");
    // Recall steps are (tp - prev_tp) / pos; accumulate in long double, round once.
    long double ap = 0.0L;
    std::size_t prev_tp = 0;
    sweep(pair, [&](std::size_t tp, std::size_t fp) {
        ap += static_cast<long double>(tp - prev_tp) * static_cast<long double>(tp) / static_cast<long double>(tp + fp);
        prev_tp = tp;
    });
    return static_cast<double>(ap / static_cast<long double>(pos));
}

double f1_max(const EvalPair& pair) {
    check_pair(pair);
    const std::size_t pos = pair.positives();
    if (pos == 0) throw Error("f1_max: no positive labels");
    double best = 0.0;
    sweep(pair, [&](std::size_t tp, std::size_t fp) {
        const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + pos);
        best = std::max(best, f1);
    });
    return best;
}

std::vector<std::uint32_t> connected_components(const cv::Mat& mask, std::size_t& regions) {
    if (mask.type() != CV_8UC1) throw Error("connected_components expects a CV_8UC1 mask");
    const int h = mask.rows;
    const int w = mask.cols;
    std::vector<std::uint32_t> label(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0);
    auto at = [w](int y, int x) { return static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x); };
    regions = 0;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (mask.at<std::uint8_t>(y, x) == 0 || label[at(y, x)] != 0) continue;
            const auto id = static_cast<std::uint32_t>(++regions);
            label[at(y, x)] = id;
            queue.emplace_back(y, x);
            while (!queue.empty()) {
                const auto [cy, cx] = queue.front();
                queue.pop_front();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy;
                        const int nx = cx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        if (mask.at<std::uint8_t>(ny, nx) == 0 || label[at(ny, nx)] != 0) continue;
                        label[at(ny, nx)] = id;
                        queue.emplace_back(ny, nx);
                    }
            }
        }
    return label;
}

double pro(std::span<const Matrix> maps, std::span<const cv::Mat> masks, double fpr_limit) {
    if (maps.size() != masks.size()) throw Error("pro: map and mask counts differ");
    if (maps.empty()) throw Error("pro: empty input");
    if (!(fpr_limit > 0.0) || fpr_limit > 1.0) throw Error("pro: fpr_limit must lie in (0, 1]");

    // Per-image component labelling is independent; region ids are offset afterwards
    // in image order so the result does not depend on scheduling.
    std::vector<std::vector<std::uint32_t>> labels(maps.size());
    std::vector<std::size_t> counts(maps.size(), 0);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (masks[i].rows != static_cast<int>(maps[i].rows()) || masks[i].cols != static_cast<int>(maps[i].cols()))
            throw Error("pro: map and mask sizes differ");
        if (masks[i].type() != CV_8UC1) throw Error("pro: masks must be CV_8UC1");
    }
    const auto n_images = static_cast<std::ptrdiff_t>(maps.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n_images; ++i) {
        const auto u = static_cast<std::size_t>(i);
        labels[u] = connected_components(masks[u], counts[u]);
    }

    std::size_t total_pixels = 0;
    for (const auto& m : maps) total_pixels += m.size();
    std::vector<double> score(total_pixels);
    std::vector<std::uint32_t> region(total_pixels); // 0 = normal pixel
    std::vector<double> region_size;
    {
        std::size_t offset = 0;
        std::uint32_t base = 0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            for (std::size_t j = 0; j < maps[i].size(); ++j) {
                score[offset + j] = maps[i].data()[j];
                region[offset + j] = labels[i][j] == 0 ? 0 : base + labels[i][j];
            }
            offset += maps[i].size();
            base += static_cast<std::uint32_t>(counts[i]);
        }
        region_size.assign(base + 1, 0.0);
        for (std::uint32_t r : region) region_size[r] += 1.0;
    }
    const std::size_t n_regions = region_size.size() - 1;
    if (n_regions == 0) throw Error("pro: no anomalous regions in the ground truth");
    const double negatives = region_size[0];
    if (negatives == 0.0) throw Error("pro: no normal pixels, false positive rate undefined");

    std::vector<std::size_t> idx(total_pixels);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

    // Per-region coverage fractions live in the leaves of a fixed-shape sum tree,
    // so the mean overlap depends only on the current coverage, never on the
    // order in which pixels were added.
    std::size_t leaves = 1;
    while (leaves < n_regions) leaves *= 2;
    std::vector<double> tree(2 * leaves, 0.0);
    std::vector<double> covered(n_regions + 1, 0.0);
    std::vector<std::uint32_t> dirty;
    double fp = 0.0;
    double prev_fpr = 0.0;
    double prev_pro = 0.0;
    double area = 0.0;
    for (std::size_t i = 0; i < total_pixels; ++i) {
        const std::uint32_t r = region[idx[i]];
        if (r == 0) {
            fp += 1.0;
        } else {
            if (covered[r] == 0.0 || dirty.empty() || dirty.back() != r) dirty.push_back(r);
            covered[r] += 1.0;
        }
        const bool group_end = i + 1 == total_pixels || score[idx[i + 1]] != score[idx[i]];
        if (!group_end) continue;
        for (std::uint32_t d : dirty) {
            std::size_t node = leaves + d - 1;
            tree[node] = covered[d] / region_size[d];
            for (node /= 2; node >= 1; node /= 2) tree[node] = tree[2 * node] + tree[2 * node + 1];
        }
        dirty.clear();
        const double fpr = fp / negatives;
        const double cur = tree[1] / static_cast<double>(n_regions);
        if (fpr >= fpr_limit) {
            const double t = fpr == prev_fpr ? 0.0 : (fpr_limit - prev_fpr) / (fpr - prev_fpr);
            const double at_limit = prev_pro + t * (cur - prev_pro);
            area += 0.5 * (fpr_limit - prev_fpr) * (prev_pro + at_limit);
            return area / fpr_limit;
        }
        area += 0.5 * (fpr - prev_fpr) * (prev_pro + cur);
        prev_fpr = fpr;
        prev_pro = cur;
    }
    // Unreachable: the final group has fpr = 1 >= fpr_limit.
    return area / fpr_limit;
}

} // namespace dictas
