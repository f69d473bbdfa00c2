#include "dictas/backbone.hpp"

#include "dictas/image.hpp"
#include "dictas/kernels.hpp"
#include "dictas/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dictas {

void BackboneSpec::validate() const {
    if (selected_layers.empty()) throw Error("backbone spec: no layers selected");
    if (grid_height == 0 || grid_width == 0 || channels == 0 || embed_dim == 0)
        throw Error("backbone spec: zero-sized dimension");
    if (input_height <= 0 || input_width <= 0) throw Error("backbone spec: bad input resolution");
    for (std::size_t i = 1; i < selected_layers.size(); ++i)
        if (selected_layers[i] <= selected_layers[i - 1])
            throw Error("backbone spec: selected layers must be strictly increasing");
}

std::string BackboneSpec::fingerprint() const {
    std::ostringstream os;
    os << name << ";grid=" << grid_height << 'x' << grid_width << ";C=" << channels << ";layers=";
    for (std::size_t i = 0; i < selected_layers.size(); ++i)
        os << (i ? "," : "") << selected_layers[i];
    os << ";embed=" << embed_dim << ";input=" << input_height << 'x' << input_width;
    return os.str();
}

void PatchFeatureStack::validate() const {
    if (layers.empty()) throw Error("feature stack has no layers");
    if (image_count == 0) throw Error("feature stack has no images");
    for (const auto& layer : layers) {
        if (layer.rows() != image_count * height * width || layer.cols() != channels)
            throw Error("feature stack layer shape " + shape_string(layer) + " disagrees with " +
                        std::to_string(image_count) + "x" + std::to_string(height) + "x" +
                        std::to_string(width) + "x" + std::to_string(channels));
        if (!layer.all_finite()) throw Error("feature stack contains non-finite values");
    }
}

PatchFeatureStack PatchFeatureStack::image(std::size_t index) const {
    if (index >= image_count) throw Error("feature stack image index out of range");
    PatchFeatureStack out{1, height, width, channels, {}};
    const std::size_t n = patches_per_image();
    for (const auto& layer : layers) out.layers.push_back(slice_rows(layer, index * n, (index + 1) * n));
    return out;
}

PatchFeatureStack PatchFeatureStack::concat(std::span<const PatchFeatureStack> parts) {
    if (parts.empty()) throw Error("concat: no feature stacks");
    const auto& first = parts.front();
    PatchFeatureStack out{0, first.height, first.width, first.channels, {}};
    for (const auto& p : parts) {
        if (p.height != first.height || p.width != first.width || p.channels != first.channels ||
            p.layer_count() != first.layer_count())
            throw Error("concat: feature stack shapes differ");
        out.image_count += p.image_count;
    }
    for (std::size_t l = 0; l < first.layer_count(); ++l) {
        std::vector<Matrix> pieces;
        for (const auto& p : parts) pieces.push_back(p.layers[l]);
        out.layers.push_back(vstack(pieces));
    }
    return out;
}

PatchFeatureStack extract_patch_features(const Backbone& backbone, std::span<const cv::Mat> images) {
    if (images.empty()) throw Error("empty batch");
    const auto& spec = backbone.spec();
    std::vector<cv::Mat> resized;
    resized.reserve(images.size());
    for (const auto& img : images) {
        if (img.empty() || img.type() != CV_32FC3) throw Error("expected a CV_32FC3 RGB image");
        resized.push_back(resize_bicubic(img, spec.input_height, spec.input_width));
    }
    auto stack = backbone.extract_resized(resized);
    stack.validate();
    return stack;
}

PatchFeatureStack pool_patch_features(const PatchFeatureStack& stack, std::size_t kernel) {
    if (kernel == 0 || kernel % 2 == 0) throw Error("pooling kernel must be odd and >= 1");
    PatchFeatureStack out = stack;
    if (kernel == 1) return out;
    for (auto& layer : out.layers)
        layer = kernels::parallel::box_filter_grid(layer, stack.image_count, stack.height,
                                                   stack.width, kernel);
    return out;
}

// ---------------------------------------------------------------------------
// Prompts

PromptSet PromptSet::defaults() {
    PromptSet p;
    p.templates = {
        "a cropped photo of the [state] [class].",
        "a cropped photo of a [state] [class].",
        "a close-up photo of a [state] [class].",
        "a close-up photo of the [state] [class].",
        "a bright photo of a [state] [class].",
        "a bright photo of the [state] [class].",
        "a dark photo of the [state] [class].",
        "a dark photo of a [state] [class].",
        "a jpeg corrupted photo of a [state] [class].",
        "a jpeg corrupted photo of the [state] [class].",
        "a blurry photo of the [state] [class].",
        "a blurry photo of a [state] [class].",
        "a photo of a [state] [class].",
        "a photo of the [state] [class].",
        "a photo of a small [state] [class].",
        "a photo of the small [state] [class].",
        "a photo of a large [state] [class].",
        "a photo of the large [state] [class].",
        "a photo of the [state] [class] for visual inspection.",
        "a photo of a [state] [class] for visual inspection.",
        "a photo of the [state] [class] for anomaly detection.",
        "a photo of a [state] [class] for anomaly detection.",
    };
    p.normal_states = {"", "flawless", "perfect", "unblemished", "good", "normal"};
    p.abnormal_states = {"damaged", "broken", "defective", "flawed", "abnormal", "anomalous"};
    return p;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

} // namespace

PromptSet PromptSet::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open prompt file: " + path.string());
    PromptSet p;
    std::string line;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        if (t.rfind("normal:", 0) == 0) {
            p.normal_states.push_back(trim(t.substr(7)));
        } else if (t.rfind("abnormal:", 0) == 0) {
            p.abnormal_states.push_back(trim(t.substr(9)));
        } else {
            if (t.find("[class]") == std::string::npos || t.find("[state]") == std::string::npos)
                throw Error("prompt template lacks [state] or [class]: " + t);
            p.templates.push_back(t);
        }
    }
    return p;
}

std::vector<std::string> PromptSet::prompts(const std::string& class_name, bool abnormal) const {
    const auto& states = abnormal ? abnormal_states : normal_states;
    if (templates.empty() || states.empty()) throw Error("empty template/state list");
    std::vector<std::string> out;
    for (const auto& tpl : templates)
        for (const auto& state : states) {
            std::string s = tpl;
            replace_all(s, "[state]", state);
            replace_all(s, "[class]", class_name);
            replace_all(s, "  ", " ");
            out.push_back(trim(s));
        }
    return out;
}

TextEmbeddingPair build_text_embeddings(const std::string& class_name, const PromptSet& prompts,
                                        const TextEncoder& encoder) {
    TextEmbeddingPair pair{Matrix(2, encoder.dim())};
    for (int polarity = 0; polarity < 2; ++polarity) {
        const auto texts = prompts.prompts(class_name, polarity == 1);
        auto row = pair.rows.row(static_cast<std::size_t>(polarity));
        for (const auto& text : texts) {
            const auto e = encoder.encode(text);
            if (e.size() != row.size()) throw Error("text encoder returned wrong dimension");
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += e[j];
        }
        const double norm = l2_norm(row);
        if (norm == 0.0) throw Error("prompt ensemble averaged to a zero vector");
        for (double& v : row) v /= norm;
    }
    return pair;
}

std::vector<double> HashTextEncoder::encode(const std::string& prompt) const {
    Rng rng(mix64(seed_ ^ fnv1a(prompt)));
    std::vector<double> v(dim_);
    for (double& x : v) x = standard_normal(rng);
    const double norm = l2_norm(v);
    for (double& x : v) x /= norm;
    return v;
}

// ---------------------------------------------------------------------------
// Test backbone

namespace {

std::size_t cell_size(int layer) { return std::size_t{1} << (layer - 1); }

std::size_t layer_input_dim(int layer, int patch) {
    const std::size_t cells = static_cast<std::size_t>(patch) / cell_size(layer);
    return cells * cells * 3 + (layer >= 3 ? 3 : 0);
}

} // namespace

TestBackbone::TestBackbone(TestBackboneOptions options)
    : options_(std::move(options)), text_(options_.embed_dim, options_.seed) {
    if (options_.patch_size <= 0 || options_.patch_size % 8 != 0)
        throw Error("test backbone patch size must be a positive multiple of 8");
    for (int l : options_.selected_layers)
        if (l < 1 || l > kDepth)
            throw Error("unsupported layer index " + std::to_string(l) + " for test backbone");
    spec_.name = "test";
    spec_.grid_height = spec_.grid_width = options_.grid;
    spec_.channels = options_.channels;
    spec_.selected_layers = options_.selected_layers;
    spec_.embed_dim = options_.embed_dim;
    spec_.input_height = spec_.input_width = static_cast<int>(options_.grid) * options_.patch_size;
    spec_.validate();

    for (int l : options_.selected_layers) {
        Rng rng = make_rng(options_.seed, "test-backbone", static_cast<std::uint64_t>(l));
        const std::size_t in = layer_input_dim(l, options_.patch_size);
        Matrix w(options_.channels, in);
        const double sd = options_.gain / std::sqrt(static_cast<double>(in));
        for (double& v : w.data()) v = sd * standard_normal(rng);
        Matrix b(1, options_.channels);
        for (double& v : b.data()) v = 0.1 * standard_normal(rng);
        projections_.push_back(std::move(w));
        biases_.push_back(std::move(b));
    }
}

PatchFeatureStack TestBackbone::extract_resized(std::span<const cv::Mat> images) const {
    if (images.empty()) throw Error("empty batch");
    const std::size_t grid = options_.grid;
    const auto patch = static_cast<std::size_t>(options_.patch_size);
    PatchFeatureStack out{images.size(), grid, grid, options_.channels, {}};

    for (std::size_t li = 0; li < options_.selected_layers.size(); ++li) {
        const int layer = options_.selected_layers[li];
        const std::size_t cell = cell_size(layer);
        const std::size_t cells = patch / cell;
        const std::size_t in = layer_input_dim(layer, options_.patch_size);
        Matrix inputs(images.size() * grid * grid, in);

        for (std::size_t n = 0; n < images.size(); ++n) {
            const cv::Mat& img = images[n];
            if (img.rows != spec_.input_height || img.cols != spec_.input_width || img.type() != CV_32FC3)
                throw Error("test backbone expects CV_32FC3 images at its input resolution");
            // Per-block RGB means for the neighbourhood term.
            std::vector<double> block_mean(grid * grid * 3, 0.0);
            for (std::size_t by = 0; by < grid; ++by)
                for (std::size_t bx = 0; bx < grid; ++bx) {
                    auto row = inputs.row((n * grid + by) * grid + bx);
                    for (std::size_t cy = 0; cy < cells; ++cy)
                        for (std::size_t cx = 0; cx < cells; ++cx) {
                            double acc[3] = {0, 0, 0};
                            for (std::size_t py = 0; py < cell; ++py)
                                for (std::size_t px = 0; px < cell; ++px) {
                                    const auto& pix = img.at<cv::Vec3f>(
                                        static_cast<int>(by * patch + cy * cell + py),
                                        static_cast<int>(bx * patch + cx * cell + px));
                                    for (int c = 0; c < 3; ++c) acc[c] += pix[c];
                                }
                            const double inv = 1.0 / static_cast<double>(cell * cell);
                            for (std::size_t c = 0; c < 3; ++c) {
                                const double m = acc[c] * inv;
                                row[(cy * cells + cx) * 3 + c] = m - 0.5;
                                block_mean[(by * grid + bx) * 3 + c] +=
                                    m / static_cast<double>(cells * cells);
                            }
                        }
                }
            if (layer >= 3) {
                for (std::size_t by = 0; by < grid; ++by)
                    for (std::size_t bx = 0; bx < grid; ++bx) {
                        double acc[3] = {0, 0, 0};
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const auto yy = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
                                    static_cast<std::ptrdiff_t>(by) + dy, 0, static_cast<std::ptrdiff_t>(grid) - 1));
                                const auto xx = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(
                                    static_cast<std::ptrdiff_t>(bx) + dx, 0, static_cast<std::ptrdiff_t>(grid) - 1));
                                for (std::size_t c = 0; c < 3; ++c) acc[c] += block_mean[(yy * grid + xx) * 3 + c];
                            }
                        auto row = inputs.row((n * grid + by) * grid + bx);
                        for (std::size_t c = 0; c < 3; ++c) row[in - 3 + c] = acc[c] / 9.0 - 0.5;
                    }
            }
        }

        Matrix features = kernels::parallel::matmul_nt(inputs, projections_[li]);
        for (std::size_t r = 0; r < features.rows(); ++r) {
            auto row = features.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::tanh(row[c] + biases_[li](0, c));
        }
        out.layers.push_back(std::move(features));
    }
    return out;
}

} // namespace dictas
