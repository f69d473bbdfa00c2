#pragma once

#include "dictas/tensor.hpp"

#include <opencv2/core.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dictas {

/// Shape contract of a frozen feature extractor.
struct BackboneSpec {
    std::string name;
    std::size_t grid_height = 0;  // H, patches
    std::size_t grid_width = 0;   // W, patches
    std::size_t channels = 0;     // C per selected layer
    std::vector<int> selected_layers;
    std::size_t embed_dim = 0;    // joint text-image embedding size
    int input_height = 0;         // pixels fed to the encoder after resize
    int input_width = 0;

    std::size_t layer_count() const { return selected_layers.size(); }
    std::size_t patch_count() const { return grid_height * grid_width; }
    void validate() const;
    /// Canonical text identifying everything that changes feature semantics.
    std::string fingerprint() const;
};

/// Per-layer patch features of a set of images. Each layer is an
/// (image_count * H * W) x C matrix; rows are image-major, then row-major over the grid.
struct PatchFeatureStack {
    std::size_t image_count = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<Matrix> layers;

    std::size_t layer_count() const { return layers.size(); }
    std::size_t patches_per_image() const { return height * width; }
    /// Throws if shapes disagree or a value is not finite.
    void validate() const;
    /// Single-image sub-stack.
    PatchFeatureStack image(std::size_t index) const;
    /// Concatenates stacks along the image axis.
    static PatchFeatureStack concat(std::span<const PatchFeatureStack> parts);
};

/// Unit-norm ensemble text embeddings for the two states of one class.
struct TextEmbeddingPair {
    Matrix rows; // 2 x embed_dim: row 0 normal, row 1 abnormal

    std::span<const double> normal() const { return rows.row(0); }
    std::span<const double> abnormal() const { return rows.row(1); }
};

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual std::size_t dim() const = 0;
    virtual std::vector<double> encode(const std::string& prompt) const = 0;
};

/// Frozen image encoder.
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual const BackboneSpec& spec() const = 0;
    /// Features of images already at spec().input_height x input_width.
    virtual PatchFeatureStack extract_resized(std::span<const cv::Mat> images) const = 0;
    virtual const TextEncoder& text_encoder() const = 0;
};

/// Resizes (bicubic) every image to the backbone input resolution and extracts
/// all selected layers. Throws on an empty batch.
PatchFeatureStack extract_patch_features(const Backbone& backbone, std::span<const cv::Mat> images);

/// Mean filter of odd size `kernel` over each image's patch grid, replicated borders.
PatchFeatureStack pool_patch_features(const PatchFeatureStack& stack, std::size_t kernel);

/// Template and state lists for the prompt ensemble.
struct PromptSet {
    std::vector<std::string> templates; // contain "[state]" and "[class]"
    std::vector<std::string> normal_states;
    std::vector<std::string> abnormal_states;

    static PromptSet defaults();
    /// Text file: one template per line; "normal: word" / "abnormal: word" lines
    /// declare states; '#' starts a comment line.
    static PromptSet load(const std::filesystem::path& path);

    /// Every template x state instantiation for one polarity.
    std::vector<std::string> prompts(const std::string& class_name, bool abnormal) const;
};

/// Encodes every instantiation per polarity, averages, and L2-normalizes.
TextEmbeddingPair build_text_embeddings(const std::string& class_name, const PromptSet& prompts,
                                        const TextEncoder& encoder);

/// Deterministic pseudo-embeddings keyed by a hash of the prompt text.
class HashTextEncoder final : public TextEncoder {
public:
    explicit HashTextEncoder(std::size_t dim, std::uint64_t seed = 0) : dim_(dim), seed_(seed) {}
    std::size_t dim() const override { return dim_; }
    std::vector<double> encode(const std::string& prompt) const override;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

struct TestBackboneOptions {
    std::uint64_t seed = 7;
    int patch_size = 8;
    std::size_t grid = 8;
    std::size_t channels = 32;
    std::vector<int> selected_layers = {2, 3};
    std::size_t embed_dim = 32;
    double gain = 3.0;
};

/// Weight-free extractor for tests and desk-scale runs. Layer l (1..4) averages
/// each patch_size x patch_size block over 2^(l-1) pixel cells, centres the
/// values, and applies a fixed seeded random projection followed by tanh. Higher
/// layers also mix in the mean of the 3x3 neighbouring blocks.
class TestBackbone final : public Backbone {
public:
    static constexpr int kDepth = 4;

    explicit TestBackbone(TestBackboneOptions options = {});

    const BackboneSpec& spec() const override { return spec_; }
    PatchFeatureStack extract_resized(std::span<const cv::Mat> images) const override;
    const TextEncoder& text_encoder() const override { return text_; }

private:
    TestBackboneOptions options_;
    BackboneSpec spec_;
    std::vector<Matrix> projections_; // per selected layer: C x input_dim
    std::vector<Matrix> biases_;      // per selected layer: 1 x C
    HashTextEncoder text_;
};

} // namespace dictas
