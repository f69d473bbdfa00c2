#pragma once

#include "dictas/autograd.hpp"
#include "dictas/backbone.hpp"
#include "dictas/dictionary.hpp"
#include "dictas/tensor.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dictas {

enum class LookupStrategy { maximum, dense, sparse };

LookupStrategy parse_lookup_strategy(std::string_view name);
std::string to_string(LookupStrategy s);

struct FusionWeights {
    std::vector<double> w;
    LookupStrategy strategy = LookupStrategy::sparse;
};

/// z = x_Q F_K^T, plain dot products.
std::vector<double> match_query_key(std::span<const double> query, const Matrix& keys);

/// Threshold tau of the simplex projection: sort descending, cum_t = sum of the
/// top t scores, tau_t = (cum_t - 1) / t, keep tau at the largest t with z_t > tau_t.
double adaptive_threshold(std::span<const double> z);

/// w_u = max(z_u - tau, 0): the Euclidean projection of z onto the probability simplex.
FusionWeights sparse_project(std::span<const double> z);

/// One-hot argmax (lowest index on ties), softmax, or sparse projection of z.
FusionWeights fusion_weights(std::span<const double> z, LookupStrategy strategy);

/// Weighted fusion w F_V for one query row.
std::vector<double> fuse(std::span<const double> z, const Matrix& values, LookupStrategy strategy);

struct LookupOptions {
    LookupStrategy strategy = LookupStrategy::sparse;
    /// L2-normalize dictionary queries and keys before matching.
    bool normalize_query_key = false;
    /// Query rows per similarity block; 0 processes all rows at once.
    std::size_t chunk_rows = 256;
};

/// Per-layer retrieved features, each (HW x C), row-aligned with the query patches.
struct RetrievalResult {
    std::vector<Matrix> layers;
};

/// Retrieval for one layer from already generated queries (HW x C), keys and values (kHW x C).
Matrix retrieve_layer(const Matrix& queries, const Matrix& keys, const Matrix& values,
                      const LookupOptions& options);

/// Generates dictionary queries for a single-image stack and retrieves every patch.
RetrievalResult retrieve(const PatchFeatureStack& query, const GeneratorSet& gens,
                         const Dictionary& dict, const LookupOptions& options);

/// Differentiable retrieval for one layer.
Var retrieve_layer(Tape& tape, Var queries, Var keys, Var values, const LookupOptions& options);

} // namespace dictas
