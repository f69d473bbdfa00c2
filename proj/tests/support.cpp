#include "support.hpp"

#include "dictas/autograd.hpp"
#include "dictas/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace dictas::testing {

std::vector<double> simplex_projection_bisection(std::span<const double> z) {
    double lo = *std::min_element(z.begin(), z.end()) - 1.0;
    double hi = *std::max_element(z.begin(), z.end());
    auto mass = [&](double tau) {
        double s = 0.0;
        for (double v : z) s += std::max(v - tau, 0.0);
        return s;
    };
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (mass(mid) > 1.0 ? lo : hi) = mid;
    }
    const double tau = 0.5 * (lo + hi);
    std::vector<double> w(z.size());
    for (std::size_t u = 0; u < z.size(); ++u) w[u] = std::max(z[u] - tau, 0.0);
    return w;
}

double auroc_pairs(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    double good = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) good += 1.0;
            else if (scores[i] == scores[j]) good += 0.5;
        }
    }
    return good / pairs;
}

namespace {

struct Counts {
    double tp = 0, fp = 0;
};

Counts count_at(std::span<const double> scores, std::span<const std::uint8_t> labels, double t) {
    Counts c;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (scores[i] >= t) (labels[i] ? c.tp : c.fp) += 1.0;
    return c;
}

std::vector<double> thresholds_desc(std::span<const double> scores) {
    std::set<double> s(scores.begin(), scores.end());
    return {s.rbegin(), s.rend()};
}

} // namespace

double ap_sweep(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    double ap = 0.0, prev_recall = 0.0;
    for (double t : thresholds_desc(scores)) {
        const Counts c = count_at(scores, labels, t);
        const double recall = c.tp / pos;
        ap += (recall - prev_recall) * (c.tp / (c.tp + c.fp));
        prev_recall = recall;
    }
    return ap;
}

double f1_sweep(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    double best = 0.0;
    for (double t : thresholds_desc(scores)) {
        const Counts c = count_at(scores, labels, t);
        if (c.tp == 0) continue;
        const double p = c.tp / (c.tp + c.fp), r = c.tp / pos;
        best = std::max(best, 2.0 * p * r / (p + r));
    }
    return best;
}

namespace {

// Region labels by depth-first flood fill over the 8 neighbours.
std::vector<int> flood_regions(const cv::Mat& mask, int& count) {
    const int h = mask.rows, w = mask.cols;
    std::vector<int> label(static_cast<std::size_t>(h * w), -1);
    count = 0;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            if (!mask.at<std::uint8_t>(y0, x0) || label[static_cast<std::size_t>(y0 * w + x0)] >= 0) continue;
            std::vector<std::pair<int, int>> stack = {{y0, x0}};
            label[static_cast<std::size_t>(y0 * w + x0)] = count;
            while (!stack.empty()) {
                auto [y, x] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
                        const auto idx = static_cast<std::size_t>(ny * w + nx);
                        if (!mask.at<std::uint8_t>(ny, nx) || label[idx] >= 0) continue;
                        label[idx] = count;
                        stack.push_back({ny, nx});
                    }
            }
            ++count;
        }
    return label;
}

} // namespace

double pro_sweep(const std::vector<Matrix>& maps, const std::vector<cv::Mat>& masks, double fpr_limit) {
    struct Region {
        std::size_t image;
        std::vector<std::size_t> pixels;
    };
    std::vector<Region> regions;
    std::set<double> values;
    double negatives = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        int count = 0;
        const auto lab = flood_regions(masks[i], count);
        const std::size_t first = regions.size();
        for (int r = 0; r < count; ++r) regions.push_back({i, {}});
        for (std::size_t p = 0; p < lab.size(); ++p) {
            if (lab[p] >= 0) regions[first + static_cast<std::size_t>(lab[p])].pixels.push_back(p);
            else negatives += 1.0;
        }
        values.insert(maps[i].data().begin(), maps[i].data().end());
    }
    std::vector<std::pair<double, double>> curve = {{0.0, 0.0}};
    for (auto it = values.rbegin(); it != values.rend(); ++it) {
        const double t = *it;
        double fp = 0.0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            const auto& d = maps[i].data();
            for (std::size_t p = 0; p < d.size(); ++p)
                if (d[p] >= t && !masks[i].data[p]) fp += 1.0;
        }
        double overlap = 0.0;
        for (const auto& r : regions) {
            double hit = 0.0;
            for (std::size_t p : r.pixels) hit += maps[r.image].data()[p] >= t ? 1.0 : 0.0;
            overlap += hit / static_cast<double>(r.pixels.size());
        }
        curve.push_back({fp / negatives, overlap / static_cast<double>(regions.size())});
    }
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        auto [x0, y0] = curve[i - 1];
        auto [x1, y1] = curve[i];
        if (x0 >= fpr_limit) break;
        if (x1 > fpr_limit) {
            y1 = y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0);
            x1 = fpr_limit;
        }
        area += 0.5 * (x1 - x0) * (y0 + y1);
    }
    return area / fpr_limit;
}

namespace {

// Solves the square system a x = b by Gaussian elimination with partial pivoting;
// false when a is (numerically) singular.
bool solve_dense(std::vector<std::vector<double>> a, std::vector<double> b, std::vector<double>& x) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        if (std::abs(a[piv][col]) < 1e-12) return false;
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t j = col; j < n; ++j) a[r][j] -= f * a[col][j];
            b[r] -= f * b[col];
        }
    }
    x.assign(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t j = i + 1; j < n; ++j) acc -= a[i][j] * x[j];
        x[i] = acc / a[i][i];
    }
    return true;
}

} // namespace

double convex_hull_violation(const Matrix& v, std::span<const double> x) {
    const std::size_t m = v.rows(), c = v.cols();
    if (m < c + 1) throw std::invalid_argument("convex_hull_violation needs at least cols + 1 vertices");
    std::vector<bool> pick(m, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(c + 1), true);
    double best = std::numeric_limits<double>::infinity();
    do {
        std::vector<std::size_t> idx;
        for (std::size_t r = 0; r < m; ++r)
            if (pick[r]) idx.push_back(r);
        // Rows: the c coordinates, then sum of weights = 1.
        std::vector<std::vector<double>> a(c + 1, std::vector<double>(c + 1, 1.0));
        std::vector<double> rhs(c + 1, 1.0), lambda;
        for (std::size_t j = 0; j < c; ++j) {
            for (std::size_t s = 0; s <= c; ++s) a[j][s] = v(idx[s], j);
            rhs[j] = x[j];
        }
        if (!solve_dense(a, rhs, lambda)) continue;
        double worst = 0.0;
        for (double l : lambda) worst = std::max(worst, -l);
        best = std::min(best, worst);
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return best;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
    Matrix m(rows, cols);
    for (auto& e : m.data()) e = uniform(rng, lo, hi);
    return m;
}

PatchFeatureStack random_stack(std::size_t layers, std::size_t images, std::size_t h, std::size_t w,
                               std::size_t c, Rng& rng) {
    PatchFeatureStack s;
    s.image_count = images;
    s.height = h;
    s.width = w;
    s.channels = c;
    for (std::size_t l = 0; l < layers; ++l) s.layers.push_back(random_matrix(images * h * w, c, rng));
    return s;
}

TextEmbeddingPair random_text(std::size_t dim, Rng& rng) {
    TextEmbeddingPair t;
    t.rows = random_matrix(2, dim, rng);
    for (std::size_t r = 0; r < 2; ++r) {
        double n = 0.0;
        for (double e : t.rows.row(r)) n += e * e;
        n = std::sqrt(n);
        for (auto& e : t.rows.row(r)) e /= n;
    }
    return t;
}

cv::Mat random_image(int h, int w, Rng& rng) {
    cv::Mat img(h, w, CV_32FC3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at<cv::Vec3f>(y, x)[c] = static_cast<float>(uniform(rng));
    return img;
}

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool same_bits(const cv::Mat& a, const cv::Mat& b) {
    if (a.size() != b.size() || a.type() != b.type()) return false;
    const cv::Mat ac = a.isContinuous() ? a : a.clone(), bc = b.isContinuous() ? b : b.clone();
    return std::memcmp(ac.data, bc.data, ac.total() * ac.elemSize()) == 0;
}

BackboneSpec tiny_spec(std::size_t layers, std::size_t grid, std::size_t channels, std::size_t embed_dim) {
    BackboneSpec s;
    s.name = "tiny";
    s.grid_height = s.grid_width = grid;
    s.channels = channels;
    for (std::size_t l = 0; l < layers; ++l) s.selected_layers.push_back(static_cast<int>(l + 1));
    s.embed_dim = embed_dim;
    s.input_height = s.input_width = static_cast<int>(8 * grid);
    return s;
}

namespace {

double loss_value(const Model& model, const TrainingExample& ex, const LossWeights& w, const LookupOptions& lk) {
    Tape tape(false);
    return tape.value(example_loss(tape, model, ex, w, lk))(0, 0);
}

} // namespace

GradCheck check_model_gradients(const Model& model, const TrainingExample& ex, const LossWeights& weights,
                                const LookupOptions& lookup, double h) {
    std::map<std::string, Matrix> analytic;
    {
        Tape tape;
        const Var loss = example_loss(tape, model, ex, weights, lookup);
        tape.backward(loss);
        model.visit([&](const std::string& name, const Matrix& p) {
            const Matrix* g = tape.param_grad(p);
            analytic[name] = g ? *g : Matrix(p.rows(), p.cols());
        });
    }
    GradCheck out;
    Model probe = model;
    std::vector<std::pair<std::string, Matrix*>> params;
    probe.visit([&](const std::string& name, Matrix& p) { params.push_back({name, &p}); });
    for (auto& [name, p] : params) {
        const Matrix& a = analytic.at(name);
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t i = 0; i < p->size(); ++i) {
            const double keep = p->data()[i];
            p->data()[i] = keep + h;
            const double up = loss_value(probe, ex, weights, lookup);
            p->data()[i] = keep - h;
            const double down = loss_value(probe, ex, weights, lookup);
            p->data()[i] = keep;
            const double num = (up - down) / (2.0 * h);
            diff += (a.data()[i] - num) * (a.data()[i] - num);
            na += a.data()[i] * a.data()[i];
            nn += num * num;
            ++out.checked;
        }
        const double scale = std::max(std::sqrt(na), std::sqrt(nn));
        const double rel = std::sqrt(diff) / std::max(scale, kGradFloor);
        if (rel >= out.worst_rel) {
            out.worst_rel = rel;
            out.worst_name = name;
        }
    }
    return out;
}

GradFixture make_grad_fixture(std::size_t layers, std::size_t grid, std::size_t channels, std::uint64_t seed,
                              int label) {
    Rng rng(derive_seed(seed, "grad-fixture"));
    GeneratorInit init;
    init.num_heads = 2;
    init.zero_value_output = false;
    const auto spec = tiny_spec(layers, grid, channels, channels);
    GradFixture f;
    f.model = Model::init(spec, init, seed);
    f.base.query = random_stack(layers, 1, grid, grid, channels, rng);
    f.base.references = random_stack(layers, 1, grid, grid, channels, rng);
    std::vector<std::uint8_t> g(grid * grid, 0);
    if (label == 1) g[uniform_index(rng, g.size())] = 1;
    f.base.labels = PatchLabelGrid::from_grid(g);
    f.base.label = label;
    f.text = random_text(channels, rng);
    return f;
}

double sparse_support_margin(const Model& model, const TrainingExample& ex) {
    double margin = 1e300;
    for (std::size_t l = 0; l < ex.query.layer_count(); ++l) {
        const auto& g = model.generators.layers[l];
        const Matrix q = generate_query(ex.query.layers[l], g.query);
        const Matrix k = generate_key(ex.references.layers[l], g.key);
        for (std::size_t r = 0; r < q.rows(); ++r) {
            const auto z = match_query_key(q.row(r), k);
            const double tau = adaptive_threshold(z);
            for (double v : z) margin = std::min(margin, std::abs(v - tau));
        }
    }
    return margin;
}

} // namespace dictas::testing
