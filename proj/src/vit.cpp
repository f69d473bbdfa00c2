#include "dictas/vit.hpp"

#include "dictas/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace dictas {

PrecomputedTextEncoder::PrecomputedTextEncoder(std::vector<std::string> prompts, const Matrix& embeddings)
    : dim_(embeddings.cols()) {
    if (prompts.size() != embeddings.rows())
        throw Error("text embeddings: " + std::to_string(prompts.size()) + " prompts but " +
                    std::to_string(embeddings.rows()) + " rows");
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto r = embeddings.row(i);
        table_[prompts[i]] = std::vector<double>(r.begin(), r.end());
    }
}

std::vector<double> PrecomputedTextEncoder::encode(const std::string& prompt) const {
    auto it = table_.find(prompt);
    if (it == table_.end())
        throw Error("no precomputed text embedding for prompt \"" + prompt +
                    "\"; re-run the exporter with this class name");
    return it->second;
}

namespace {

void layer_norm(Matrix& x, const Matrix& gamma, const Matrix& beta) {
    const std::size_t c = x.cols();
    if (gamma.size() != c || beta.size() != c) throw Error("layer norm: parameter size mismatch");
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto row = x.row(i);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < c; ++j) row[j] = (row[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
    }
}

/// x W^T + b with W (out x in) and b stored as 1 x out.
Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = kernels::parallel::matmul_nt(x, w);
    if (b.size() != y.cols()) throw Error("linear layer: bias size mismatch");
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b.data()[j];
    return y;
}

Matrix cols(const Matrix& m, std::size_t begin, std::size_t end) {
    Matrix out(m.rows(), end - begin);
    for (std::size_t i = 0; i < m.rows(); ++i)
        std::copy(m.row(i).begin() + static_cast<std::ptrdiff_t>(begin),
                  m.row(i).begin() + static_cast<std::ptrdiff_t>(end), out.row(i).begin());
    return out;
}

Matrix rows_of(const Matrix& m, std::size_t begin, std::size_t end) {
    if (end > m.rows()) throw Error("weight has too few rows");
    return slice_rows(m, begin, end);
}

std::size_t meta_size(const nlohmann::json& meta, const char* key) {
    if (!meta.contains(key)) throw Error(std::string("ViT archive meta lacks '") + key + "'");
    return meta.at(key).get<std::size_t>();
}

} // namespace

ClipVitBackbone::ClipVitBackbone(const std::filesystem::path& archive, std::vector<int> layers)
    : ClipVitBackbone(TensorArchive::load(archive), std::move(layers)) {}

ClipVitBackbone::ClipVitBackbone(TensorArchive archive, std::vector<int> layers) : weights_(std::move(archive)) {
    const auto& meta = weights_.meta;
    width_ = meta_size(meta, "width");
    depth_ = meta_size(meta, "depth");
    heads_ = meta_size(meta, "heads");
    patch_ = meta_size(meta, "patch_size");
    const std::size_t image = meta_size(meta, "image_size");
    const std::size_t embed = meta_size(meta, "embed_dim");
    quick_gelu_ = meta.value("quick_gelu", true);
    mean_ = meta.value("mean", std::array<double, 3>{0.48145466, 0.4578275, 0.40821073});
    std_ = meta.value("std", std::array<double, 3>{0.26862954, 0.26130258, 0.27577711});
    if (layers.empty()) layers = meta.value("default_layers", std::vector<int>{6, 12, 18, 24});
    for (int l : layers)
        if (l < 1 || static_cast<std::size_t>(l) > depth_)
            throw Error("layer " + std::to_string(l) + " is not supported by a " + std::to_string(depth_) +
                        "-block ViT");
    if (image % patch_ != 0) throw Error("ViT image size is not a multiple of the patch size");
    if (width_ % heads_ != 0) throw Error("ViT width is not divisible by the head count");

    spec_.name = meta.value("name", std::string("clip-vit"));
    spec_.grid_height = spec_.grid_width = image / patch_;
    spec_.channels = embed;
    spec_.selected_layers = layers;
    spec_.embed_dim = embed;
    spec_.input_height = spec_.input_width = static_cast<int>(image);
    spec_.validate();

    const std::size_t tokens = 1 + spec_.patch_count();
    auto expect = [&](const std::string& name, std::size_t r, std::size_t c) {
        const Matrix& m = weights_.at(name);
        if (m.rows() != r || m.cols() != c)
            throw Error("ViT tensor " + name + " has shape " + shape_string(m) + ", expected (" +
                        std::to_string(r) + ", " + std::to_string(c) + ")");
    };
    expect("conv1.weight", width_, 3 * patch_ * patch_);
    expect("class_embedding", 1, width_);
    expect("positional_embedding", tokens, width_);
    expect("proj", width_, embed);

    if (weights_.contains("text_embeddings")) {
        const auto prompts = meta.value("prompts", std::vector<std::string>{});
        text_ = PrecomputedTextEncoder(prompts, weights_.at("text_embeddings"));
    }
}

std::vector<Matrix> ClipVitBackbone::forward(const cv::Mat& image) const {
    const int side = spec_.input_height;
    if (image.type() != CV_32FC3 || image.rows != side || image.cols != side)
        throw Error("ViT expects a " + std::to_string(side) + "x" + std::to_string(side) + " CV_32FC3 image");
    const std::size_t grid = spec_.grid_width;
    const std::size_t p = patch_;

    // Patch embedding: unfold to (G*G) x (3*p*p) in channel, row, column order.
    Matrix patches(grid * grid, 3 * p * p);
    for (std::size_t gy = 0; gy < grid; ++gy)
        for (std::size_t gx = 0; gx < grid; ++gx) {
            auto row = patches.row(gy * grid + gx);
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x) {
                        const auto& px = image.at<cv::Vec3f>(static_cast<int>(gy * p + y), static_cast<int>(gx * p + x));
                        row[(c * p + y) * p + x] = (static_cast<double>(px[static_cast<int>(c)]) - mean_[c]) / std_[c];
                    }
        }
    const Matrix embedded = kernels::parallel::matmul_nt(patches, weights_.at("conv1.weight"));

    Matrix x(1 + grid * grid, width_);
    const Matrix& cls = weights_.at("class_embedding");
    const Matrix& pos = weights_.at("positional_embedding");
    for (std::size_t j = 0; j < width_; ++j) x(0, j) = cls(0, j) + pos(0, j);
    for (std::size_t t = 0; t < grid * grid; ++t)
        for (std::size_t j = 0; j < width_; ++j) x(t + 1, j) = embedded(t, j) + pos(t + 1, j);
    layer_norm(x, weights_.at("ln_pre.weight"), weights_.at("ln_pre.bias"));

    const int last = *std::max_element(spec_.selected_layers.begin(), spec_.selected_layers.end());
    const double scale = 1.0 / std::sqrt(static_cast<double>(width_ / heads_));
    std::vector<Matrix> out;
    for (int block = 1; block <= last; ++block) {
        const std::string pre = "transformer.resblocks." + std::to_string(block - 1) + ".";
        Matrix h = x;
        layer_norm(h, weights_.at(pre + "ln_1.weight"), weights_.at(pre + "ln_1.bias"));
        const Matrix qkv = affine(h, weights_.at(pre + "attn.in_proj_weight"), weights_.at(pre + "attn.in_proj_bias"));
        const Matrix attended = kernels::parallel::attention_rows(cols(qkv, 0, width_), cols(qkv, width_, 2 * width_),
                                                                  cols(qkv, 2 * width_, 3 * width_), heads_, scale);
        const Matrix a = affine(attended, weights_.at(pre + "attn.out_proj.weight"), weights_.at(pre + "attn.out_proj.bias"));
        for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += a.data()[i];

        h = x;
        layer_norm(h, weights_.at(pre + "ln_2.weight"), weights_.at(pre + "ln_2.bias"));
        Matrix m = affine(h, weights_.at(pre + "mlp.c_fc.weight"), weights_.at(pre + "mlp.c_fc.bias"));
        for (double& v : m.data())
            v = quick_gelu_ ? v / (1.0 + std::exp(-1.702 * v)) : 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        m = affine(m, weights_.at(pre + "mlp.c_proj.weight"), weights_.at(pre + "mlp.c_proj.bias"));
        for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += m.data()[i];

        if (std::find(spec_.selected_layers.begin(), spec_.selected_layers.end(), block) ==
            spec_.selected_layers.end())
            continue;
        Matrix tokens = rows_of(x, 1, x.rows());
        layer_norm(tokens, weights_.at("ln_post.weight"), weights_.at("ln_post.bias"));
        out.push_back(kernels::parallel::matmul_nn(tokens, weights_.at("proj")));
    }
    return out;
}

PatchFeatureStack ClipVitBackbone::extract_resized(std::span<const cv::Mat> images) const {
    if (images.empty()) throw Error("empty batch");
    PatchFeatureStack stack;
    stack.image_count = images.size();
    stack.height = spec_.grid_height;
    stack.width = spec_.grid_width;
    stack.channels = spec_.channels;
    std::vector<std::vector<Matrix>> per_image;
    for (const auto& img : images) per_image.push_back(forward(img));
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
        std::vector<Matrix> parts;
        for (auto& f : per_image) parts.push_back(std::move(f[l]));
        stack.layers.push_back(vstack(parts));
    }
    return stack;
}

} // namespace dictas
