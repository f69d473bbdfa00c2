#pragma once

#include "dictas/autograd.hpp"
#include "dictas/backbone.hpp"
#include "dictas/dictionary.hpp"
#include "dictas/lookup.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace dictas {

/// Patch-level pseudo-labels with the normal (G_j = 0) and anomalous (G_j = 1) index sets.
struct PatchLabelGrid {
    std::vector<std::uint8_t> grid;
    std::vector<std::size_t> normal;
    std::vector<std::size_t> anomalous;

    static PatchLabelGrid from_grid(std::vector<std::uint8_t> grid);
    static PatchLabelGrid all_normal(std::size_t patches);
};

/// Linear map from pooled concatenated layer features (L*C) to the text embedding space.
struct TacHeadParams {
    LinearParams linear;

    static TacHeadParams init(std::size_t in_dim, std::size_t embed_dim, std::uint64_t seed);
    /// Parameters under "tac.weight" and "tac.bias".
    void visit(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit(const std::function<void(const std::string&, const Matrix&)>& fn) const;
};

struct LossWeights {
    double lambda_cqc = 0.1;
    double lambda_tac = 0.1;
    double logit_scale = 100.0;
};

struct LossParts {
    double query = 0.0;
    double cqc = 0.0;
    double tac = 0.0;
};

/// 1 - cosine similarity, in [0, 2]. A zero-norm input yields 1.
double cosine_distance(std::span<const double> a, std::span<const double> b);

// Value API. Layer vectors hold one (HW x C) matrix per feature layer.
double query_loss(std::span<const Matrix> query, std::span<const Matrix> retrieved,
                  const PatchLabelGrid& labels);
double cqc_loss(std::span<const Matrix> query, std::span<const Matrix> retrieved,
                const PatchLabelGrid& labels);
std::vector<double> tac_global_embed(std::span<const Matrix> layers, const TacHeadParams& head);
double tac_loss(std::span<const Matrix> query, std::span<const Matrix> retrieved,
                const TextEmbeddingPair& text, int label, const TacHeadParams& head,
                double logit_scale);
/// CE(s * x_r~ T~^T, 0) + CE(s * x_q~ T~^T, label) from global embeddings.
double tac_loss_from_embeddings(std::span<const double> x_query, std::span<const double> x_retrieved,
                                const TextEmbeddingPair& text, int label, double logit_scale);
double total_loss(const LossParts& parts, double lambda_cqc, double lambda_tac);

// Differentiable API.
/// Sum over layers of the mean cosine distance over normal patches. Throws when
/// there are no normal patches.
Var query_loss(Tape& tape, std::span<const Var> query, std::span<const Var> retrieved,
               const PatchLabelGrid& labels);
/// Sum over layers of max(0, E_N[d] - E_A[d]); layers contribute 0 when either set is empty.
Var cqc_loss(Tape& tape, std::span<const Var> query, std::span<const Var> retrieved,
             const PatchLabelGrid& labels);
Var tac_global_embed(Tape& tape, std::span<const Var> layers, const TacHeadParams& head);
Var tac_loss(Tape& tape, std::span<const Var> query, std::span<const Var> retrieved,
             const TextEmbeddingPair& text, int label, const TacHeadParams& head,
             double logit_scale);
Var total_loss(Tape& tape, Var query, Var cqc, Var tac, double lambda_cqc, double lambda_tac);

} // namespace dictas
