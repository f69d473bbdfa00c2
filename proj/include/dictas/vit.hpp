#pragma once

#include "dictas/archive.hpp"
#include "dictas/backbone.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dictas {

/// Prompt embeddings computed offline by the exporter, looked up by exact prompt text.
class PrecomputedTextEncoder final : public TextEncoder {
public:
    PrecomputedTextEncoder() = default;
    PrecomputedTextEncoder(std::vector<std::string> prompts, const Matrix& embeddings);

    std::size_t dim() const override { return dim_; }
    std::vector<double> encode(const std::string& prompt) const override;
    std::size_t size() const { return table_.size(); }

private:
    std::size_t dim_ = 0;
    std::map<std::string, std::vector<double>> table_;
};

/// CLIP-style vision transformer reading a TensorArchive written by
/// tools/export_clip.py. Patch tokens of the selected residual blocks are passed
/// through ln_post and the output projection, so C equals the joint embedding size.
///
/// Expected tensors (open_clip naming without the "visual." prefix):
///   conv1.weight (width x 3*p*p, channel-major), class_embedding (1 x width),
///   positional_embedding (1+G*G x width), ln_pre.{weight,bias},
///   transformer.resblocks.{i}.{ln_1,ln_2}.{weight,bias},
///   transformer.resblocks.{i}.attn.{in_proj_weight,in_proj_bias,out_proj.weight,out_proj.bias},
///   transformer.resblocks.{i}.mlp.{c_fc,c_proj}.{weight,bias}, ln_post.{weight,bias},
///   proj (width x embed_dim), and optionally text_embeddings (P x embed_dim).
/// Meta: width, depth, heads, patch_size, image_size, embed_dim, quick_gelu,
/// default_layers, prompts, mean, std.
class ClipVitBackbone final : public Backbone {
public:
    ClipVitBackbone(const std::filesystem::path& archive, std::vector<int> layers = {});
    explicit ClipVitBackbone(TensorArchive archive, std::vector<int> layers = {});

    const BackboneSpec& spec() const override { return spec_; }
    PatchFeatureStack extract_resized(std::span<const cv::Mat> images) const override;
    const TextEncoder& text_encoder() const override { return text_; }

    /// Projected patch tokens ((G*G) x embed_dim) after every residual block
    /// listed in spec().selected_layers, for one image.
    std::vector<Matrix> forward(const cv::Mat& image) const;

private:
    TensorArchive weights_;
    BackboneSpec spec_;
    std::size_t width_ = 0;
    std::size_t depth_ = 0;
    std::size_t heads_ = 0;
    std::size_t patch_ = 0;
    bool quick_gelu_ = true;
    std::array<double, 3> mean_{};
    std::array<double, 3> std_{};
    PrecomputedTextEncoder text_;
};

} // namespace dictas
