#pragma once

#include "dictas/autograd.hpp"
#include "dictas/backbone.hpp"
#include "dictas/rng.hpp"
#include "dictas/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace dictas {

/// y = x W^T + b with W stored (out x in) and b (1 x out).
struct LinearParams {
    Matrix weight;
    Matrix bias;

    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
};

/// Self-attention block: multi-head softmax(QK^T / sqrt(C)) V followed by a
/// two-layer GELU MLP. No residual, no normalization, no positional encoding.
struct AttnBlockParams {
    LinearParams proj_q;
    LinearParams proj_k;
    LinearParams proj_v;
    std::size_t num_heads = 8;
    LinearParams mlp_hidden; // C -> hidden
    LinearParams mlp_out;    // hidden -> C

    std::size_t channels() const { return proj_q.in_dim(); }
    void validate() const;

    void visit(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

struct GeneratorInit {
    std::size_t num_heads = 8;
    std::size_t hidden_multiplier = 4;
    /// Weights are N(0, (scale / sqrt(fan_in))^2).
    double attention_scale = 1.0;
    double mlp_scale = 1.0;
    /// Start from F_V = F_n by zeroing the value generator's last MLP layer.
    bool zero_value_output = true;
};

AttnBlockParams init_attn_block(std::size_t channels, const GeneratorInit& init, Rng& rng,
                                bool zero_output);

/// Query, key and value generators of one feature layer.
struct LayerGenerators {
    AttnBlockParams query;
    AttnBlockParams key;
    AttnBlockParams value;
};

/// One independent generator triple per selected backbone layer.
struct GeneratorSet {
    std::vector<LayerGenerators> layers;

    static GeneratorSet init(std::size_t layer_count, std::size_t channels,
                             const GeneratorInit& init, std::uint64_t seed);

    std::size_t layer_count() const { return layers.size(); }
    /// Every parameter under "gen.{layer}.{q|k|v}.{param}".
    void visit(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

/// Per-layer dictionary key and value, each (kHW x C).
struct Dictionary {
    std::vector<Matrix> key;
    std::vector<Matrix> value;

    std::size_t layer_count() const { return key.size(); }
};

// Forward passes without gradient bookkeeping. Attention is streamed row by
// row, so memory is linear in the number of tokens.
Matrix attn_block_forward(const Matrix& input, const AttnBlockParams& params);
Matrix generate_query(const Matrix& query_features, const AttnBlockParams& g_q);
Matrix generate_key(const Matrix& reference_features, const AttnBlockParams& g_k);
/// reference_features + attn_block_forward(reference_features, g_v).
Matrix generate_value(const Matrix& reference_features, const AttnBlockParams& g_v);
Dictionary build_dictionary(const PatchFeatureStack& references, const GeneratorSet& gens);

// Differentiable counterparts recorded on a tape; parameters are bound with Tape::param.
Var attn_block_forward(Tape& tape, Var input, const AttnBlockParams& params);
Var generate_value(Tape& tape, Var reference_features, const AttnBlockParams& g_v);

struct DictionaryVars {
    std::vector<Var> key;
    std::vector<Var> value;
};

DictionaryVars build_dictionary(Tape& tape, const PatchFeatureStack& references,
                                const GeneratorSet& gens);

} // namespace dictas
