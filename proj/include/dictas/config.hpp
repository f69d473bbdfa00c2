#pragma once

#include "dictas/backbone.hpp"
#include "dictas/dictionary.hpp"
#include "dictas/lookup.hpp"
#include "dictas/losses.hpp"
#include "dictas/scoring.hpp"
#include "dictas/synthesis.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace dictas {

struct BackboneConfig {
    std::string name = "test";     // "test" or "clip-vit"
    std::string weights_path;      // archive written by tools/export_clip.py
    std::vector<int> layers;       // overrides the backbone's default selection when non-empty
    std::size_t pool_kernel = 3;
    TestBackboneOptions test;
};

struct TrainConfig {
    int epochs = 30;
    /// When positive, train exactly this many optimizer steps instead of `epochs`.
    std::size_t steps = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 24;
    std::size_t k_train = 1;
    std::uint64_t seed = 0;
    /// Training categories; empty means every category found in the data root.
    std::vector<std::string> categories;
    /// Optional directory of anomaly source textures; otherwise other training images are used.
    std::string anomaly_source_dir;
    std::string prompts_path;
};

struct EvalConfig {
    double fpr_limit = 0.3;
    /// Square resolution maps and masks are resized to before pixel metrics; 0 keeps native size.
    std::size_t resolution = 0;
    /// Pool pixels of all test images into one curve (otherwise average per-image metrics).
    bool pooled_pixels = true;
};

struct Config {
    BackboneConfig backbone;
    TrainConfig train;
    SynthesisConfig synthesis;
    LossWeights loss;
    GeneratorInit init;
    LookupOptions lookup;
    ScoringOptions scoring;
    EvalConfig eval;
    /// Test categories of a class-generalizable run; must not overlap train.categories.
    std::vector<std::string> test_categories;
    bool allow_overlap = false;

    nlohmann::json to_json() const;
    static Config from_json(const nlohmann::json& j);
    static Config load(const std::filesystem::path& path);

    /// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a string.
    void set(const std::string& assignment);
    void validate() const;
};

/// Throws when the two category lists share a name.
void check_disjoint_categories(const std::vector<std::string>& train,
                               const std::vector<std::string>& test);

/// Instantiates the configured backbone.
std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg);

} // namespace dictas
