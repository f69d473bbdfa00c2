#pragma once

#include "dictas/backbone.hpp"
#include "dictas/config.hpp"
#include "dictas/dataset.hpp"
#include "dictas/dictionary.hpp"
#include "dictas/losses.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dictas {

/// Every trainable parameter: the generator triples and the TAC head.
struct Model {
    GeneratorSet generators;
    TacHeadParams tac;

    static Model init(const BackboneSpec& spec, const GeneratorInit& init, std::uint64_t seed);
    void visit(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

/// One training pair after feature extraction.
struct TrainingExample {
    PatchFeatureStack query;      // one image, pooled
    PatchFeatureStack references; // k images, pooled
    PatchLabelGrid labels;
    int label = 0;
    const TextEmbeddingPair* text = nullptr;
};

/// Records the full loss of one example on `tape`: dictionary from the
/// references, differentiable retrieval, then L_q + l1 L_CQC + l2 L_TAC. When the
/// query has no normal patch the query term is 0.
Var example_loss(Tape& tape, const Model& model, const TrainingExample& ex, const LossWeights& weights,
                 const LookupOptions& lookup, LossParts* parts = nullptr);

/// Adam with bias correction and no weight decay.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    /// Updates every parameter that has an entry in `grads`.
    void step(Model& model, const std::map<std::string, Matrix>& grads);
    std::size_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, Matrix> m_, v_;
};

struct StepRecord {
    std::size_t step = 0;
    int epoch = 0;
    double total = 0.0;
    LossParts parts;
};

/// Trained parameters with everything needed to reuse them. Parameters are held
/// at float32 precision, the precision of the archive, so a loaded checkpoint
/// reproduces in-memory inference bit for bit.
struct Checkpoint {
    Model model;
    std::string fingerprint;
    std::size_t pool_kernel = 3;
    nlohmann::json config = nlohmann::json::object();
    int epoch = 0;
    std::size_t steps = 0;
    std::vector<std::string> categories;
    std::vector<StepRecord> trace;

    static Checkpoint from_model(Model model, const BackboneSpec& spec, std::size_t pool_kernel);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
    /// Throws unless the checkpoint was trained on features with this spec and pooling.
    void check_backbone(const BackboneSpec& spec) const;
};

/// Identifies the feature semantics generators were trained on.
std::string feature_fingerprint(const BackboneSpec& spec, std::size_t pool_kernel);

/// Lazily loaded training images. `load(i)` must return image i at the backbone input size.
struct TrainingSet {
    std::size_t size = 0;
    std::vector<std::string> category_of;
    std::function<cv::Mat(std::size_t)> load;
    /// Optional external anomaly sources; when empty, other training images are used.
    std::size_t source_count = 0;
    std::function<cv::Mat(std::size_t)> load_source;

    static TrainingSet from_images(std::vector<cv::Mat> images, std::vector<std::string> categories);
    static TrainingSet from_layout(const DatasetLayout& layout, const std::vector<std::string>& categories,
                                   int height, int width, const std::string& anomaly_source_dir = {});
};

/// Self-supervised training. Batches run their examples in parallel with one tape
/// each; gradients are reduced in example order, so results are deterministic.
/// Throws on an empty set or a non-finite loss.
Checkpoint train(const Config& cfg, const TrainingSet& data, const Backbone& backbone,
                 const std::function<void(const StepRecord&)>& on_step = {});

/// Synthesizes training example `index` exactly as `train` does.
TrainingExample make_example(const Config& cfg, const TrainingSet& data, const Backbone& backbone,
                             std::size_t item, std::uint64_t sample_seed,
                             const std::map<std::string, TextEmbeddingPair>& text);

} // namespace dictas
