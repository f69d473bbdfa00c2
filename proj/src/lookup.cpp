#include "dictas/lookup.hpp"

#include "dictas/kernels.hpp"

#include <algorithm>

namespace dictas {

namespace kp = kernels::parallel;

LookupStrategy parse_lookup_strategy(std::string_view name) {
    if (name == "maximum") return LookupStrategy::maximum;
    if (name == "dense") return LookupStrategy::dense;
    if (name == "sparse") return LookupStrategy::sparse;
    throw Error("unknown lookup strategy '" + std::string(name) + "' (maximum|dense|sparse)");
}

std::string to_string(LookupStrategy s) {
    switch (s) {
    case LookupStrategy::maximum: return "maximum";
    case LookupStrategy::dense: return "dense";
    case LookupStrategy::sparse: return "sparse";
    }
    return "?";
}

std::vector<double> match_query_key(std::span<const double> query, const Matrix& keys) {
    if (query.size() != keys.cols())
        throw Error("match_query_key: query has " + std::to_string(query.size()) +
                    " channels, keys " + std::to_string(keys.cols()));
    std::vector<double> z(keys.rows());
    for (std::size_t u = 0; u < keys.rows(); ++u) z[u] = dot(query, keys.row(u));
    return z;
}

double adaptive_threshold(std::span<const double> z) { return kernels::simplex_threshold(z); }

FusionWeights sparse_project(std::span<const double> z) {
    FusionWeights out{std::vector<double>(z.size()), LookupStrategy::sparse};
    kernels::sparsemax_row(z, out.w);
    return out;
}

FusionWeights fusion_weights(std::span<const double> z, LookupStrategy strategy) {
    if (z.empty()) throw Error("fusion_weights: empty score vector");
    FusionWeights out{std::vector<double>(z.size()), strategy};
    switch (strategy) {
    case LookupStrategy::maximum: out.w[kernels::argmax_row(z)] = 1.0; break;
    case LookupStrategy::dense: kernels::softmax_row(z, out.w); break;
    case LookupStrategy::sparse: kernels::sparsemax_row(z, out.w); break;
    }
    return out;
}

std::vector<double> fuse(std::span<const double> z, const Matrix& values, LookupStrategy strategy) {
    if (z.size() != values.rows())
        throw Error("fuse: " + std::to_string(z.size()) + " weights for " +
                    std::to_string(values.rows()) + " dictionary values");
    const auto weights = fusion_weights(z, strategy);
    std::vector<double> out(values.cols(), 0.0);
    for (std::size_t u = 0; u < values.rows(); ++u) {
        const double w = weights.w[u];
        const auto v = values.row(u);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * v[c];
    }
    return out;
}

namespace {

Matrix normalized_rows(const Matrix& m) {
    Matrix out = m;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        const double n = l2_norm(r);
        if (n == 0.0) throw Error("cannot normalize a zero-norm dictionary row");
        for (double& v : r) v /= n;
    }
    return out;
}

Matrix weights_for(const Matrix& z, LookupStrategy strategy) {
    switch (strategy) {
    case LookupStrategy::maximum: return kp::onehot_argmax_rows(z);
    case LookupStrategy::dense: return kp::softmax_rows(z);
    case LookupStrategy::sparse: return kp::sparsemax_rows(z);
    }
    throw Error("unknown lookup strategy");
}

} // namespace

Matrix retrieve_layer(const Matrix& queries, const Matrix& keys, const Matrix& values,
                      const LookupOptions& options) {
    if (queries.cols() != keys.cols()) throw Error("retrieve: query/key channel mismatch");
    if (keys.rows() != values.rows() || keys.rows() == 0)
        throw Error("retrieve: dictionary key/value row mismatch");
    const Matrix q = options.normalize_query_key ? normalized_rows(queries) : queries;
    const Matrix k = options.normalize_query_key ? normalized_rows(keys) : keys;

    const std::size_t n = q.rows();
    const std::size_t chunk = options.chunk_rows == 0 ? std::max<std::size_t>(n, 1) : options.chunk_rows;
    Matrix out(n, values.cols());
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t end = std::min(n, begin + chunk);
        const Matrix z = kp::matmul_nt(slice_rows(q, begin, end), k);
        const Matrix fused = kp::matmul_nn(weights_for(z, options.strategy), values);
        std::copy(fused.data().begin(), fused.data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(begin * values.cols()));
    }
    return out;
}

RetrievalResult retrieve(const PatchFeatureStack& query, const GeneratorSet& gens,
                         const Dictionary& dict, const LookupOptions& options) {
    query.validate();
    if (query.image_count != 1) throw Error("retrieve expects a single query image");
    if (query.layer_count() != gens.layer_count() || query.layer_count() != dict.layer_count())
        throw Error("retrieve: layer count mismatch");
    RetrievalResult out;
    for (std::size_t l = 0; l < query.layer_count(); ++l) {
        const Matrix fq = generate_query(query.layers[l], gens.layers[l].query);
        out.layers.push_back(retrieve_layer(fq, dict.key[l], dict.value[l], options));
    }
    return out;
}

Var retrieve_layer(Tape& tape, Var queries, Var keys, Var values, const LookupOptions& options) {
    Var q = queries;
    Var k = keys;
    if (options.normalize_query_key) {
        q = ag::normalize_rows(tape, q);
        k = ag::normalize_rows(tape, k);
    }
    const Var z = ag::matmul_nt(tape, q, k);
    Var w;
    switch (options.strategy) {
    case LookupStrategy::maximum: w = ag::onehot_argmax_rows(tape, z); break;
    case LookupStrategy::dense: w = ag::softmax_rows(tape, z); break;
    case LookupStrategy::sparse: w = ag::sparsemax_rows(tape, z); break;
    }
    return ag::matmul_nn(tape, w, values);
}

} // namespace dictas
