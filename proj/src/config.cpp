#include "dictas/config.hpp"

#include "dictas/vit.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dictas {

NLOHMANN_JSON_SERIALIZE_ENUM(LookupStrategy, {
    {LookupStrategy::maximum, "maximum"},
    {LookupStrategy::dense, "dense"},
    {LookupStrategy::sparse, "sparse"},
})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TestBackboneOptions, seed, patch_size, grid, channels,
                                                selected_layers, embed_dim, gain)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackboneConfig, name, weights_path, layers, pool_kernel, test)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, steps, lr, beta1, beta2, eps, batch_size,
                                                k_train, seed, categories, anomaly_source_dir, prompts_path)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, fpr_limit, resolution, pooled_pixels)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthesisConfig, noise_scales, binarize_threshold, gamma_min,
                                                gamma_max, normal_probability, max_mask_attempts, p_rotate90,
                                                p_rotate, rotate_min_deg, rotate_max_deg, p_hflip, p_vflip,
                                                p_grid_dropout, grid_dropout_ratio, p_coarse_dropout,
                                                coarse_max_holes, coarse_max_size)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, lambda_cqc, lambda_tac, logit_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GeneratorInit, num_heads, hidden_multiplier, attention_scale,
                                                mlp_scale, zero_value_output)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LookupOptions, strategy, normalize_query_key, chunk_rows)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScoringOptions, smooth, smooth_sigma)

nlohmann::json Config::to_json() const {
    return {
        {"backbone", backbone}, {"train", train},   {"synthesis", synthesis},
        {"loss", loss},         {"init", init},     {"lookup", lookup},
        {"scoring", scoring},   {"eval", eval},     {"test_categories", test_categories},
        {"allow_overlap", allow_overlap},
    };
}

namespace {

/// Rejects keys that no field consumes, so typos in config files are not silently ignored.
void check_keys(const nlohmann::json& given, const nlohmann::json& reference, const std::string& prefix) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!reference.contains(key)) throw Error("unknown config key: " + path);
        if (reference.at(key).is_object()) check_keys(value, reference.at(key), path);
    }
}

} // namespace

Config Config::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("config must be a JSON object");
    Config c;
    check_keys(j, c.to_json(), "");
    try {
        if (j.contains("backbone")) c.backbone = j.at("backbone").get<BackboneConfig>();
        if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
        if (j.contains("synthesis")) c.synthesis = j.at("synthesis").get<SynthesisConfig>();
        if (j.contains("loss")) c.loss = j.at("loss").get<LossWeights>();
        if (j.contains("init")) c.init = j.at("init").get<GeneratorInit>();
        if (j.contains("lookup")) c.lookup = j.at("lookup").get<LookupOptions>();
        if (j.contains("scoring")) c.scoring = j.at("scoring").get<ScoringOptions>();
        if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
        if (j.contains("test_categories"))
            c.test_categories = j.at("test_categories").get<std::vector<std::string>>();
        if (j.contains("allow_overlap")) c.allow_overlap = j.at("allow_overlap").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("config: ") + e.what());
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("config " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

void Config::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw Error("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
        value = text;
    }
    nlohmann::json j = to_json();
    nlohmann::json::json_pointer ptr;
    std::stringstream parts(key);
    std::string part;
    while (std::getline(parts, part, '.')) ptr /= part;
    if (!j.contains(ptr)) throw Error("unknown config key: " + key);
    if (j.at(ptr).is_string() && !value.is_string()) value = text;
    j[ptr] = value;
    *this = from_json(j);
}

void Config::validate() const {
    if (backbone.pool_kernel == 0 || backbone.pool_kernel % 2 == 0) throw Error("backbone.pool_kernel must be odd");
    if (train.epochs < 1 && train.steps == 0) throw Error("train.epochs must be positive");
    if (!(train.lr > 0.0)) throw Error("train.lr must be positive");
    if (train.batch_size == 0) throw Error("train.batch_size must be positive");
    if (train.k_train == 0) throw Error("train.k_train must be positive");
    if (loss.lambda_cqc < 0.0 || loss.lambda_tac < 0.0) throw Error("loss weights must be non-negative");
    if (!(loss.logit_scale > 0.0)) throw Error("loss.logit_scale must be positive");
    if (!(eval.fpr_limit > 0.0) || eval.fpr_limit > 1.0) throw Error("eval.fpr_limit must lie in (0, 1]");
    synthesis.validate();
    if (!allow_overlap && !train.categories.empty()) check_disjoint_categories(train.categories, test_categories);
}

void check_disjoint_categories(const std::vector<std::string>& train, const std::vector<std::string>& test) {
    std::vector<std::string> shared;
    for (const auto& c : test)
        if (std::find(train.begin(), train.end(), c) != train.end()) shared.push_back(c);
    if (shared.empty()) return;
    std::string list;
    for (const auto& c : shared) list += (list.empty() ? "" : ", ") + c;
    throw Error("training and test categories overlap (" + list + "); pass --allow-overlap to override");
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg) {
    if (cfg.name == "test") {
        TestBackboneOptions opts = cfg.test;
        if (!cfg.layers.empty()) opts.selected_layers = cfg.layers;
        return std::make_unique<TestBackbone>(opts);
    }
    if (cfg.name == "clip-vit") {
        if (cfg.weights_path.empty()) throw Error("backbone.weights_path is required for clip-vit");
        return std::make_unique<ClipVitBackbone>(cfg.weights_path, cfg.layers);
    }
    throw Error("unknown backbone: " + cfg.name);
}

} // namespace dictas
