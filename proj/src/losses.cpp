#include "dictas/losses.hpp"

#include "dictas/rng.hpp"

#include <cmath>

namespace dictas {

PatchLabelGrid PatchLabelGrid::from_grid(std::vector<std::uint8_t> grid) {
    PatchLabelGrid out;
    out.grid = std::move(grid);
    for (std::size_t j = 0; j < out.grid.size(); ++j)
        (out.grid[j] ? out.anomalous : out.normal).push_back(j);
    return out;
}

PatchLabelGrid PatchLabelGrid::all_normal(std::size_t patches) {
    return from_grid(std::vector<std::uint8_t>(patches, 0));
}

TacHeadParams TacHeadParams::init(std::size_t in_dim, std::size_t embed_dim, std::uint64_t seed) {
    Rng rng = make_rng(seed, "tac-head-init");
    TacHeadParams head{{Matrix(embed_dim, in_dim), Matrix(1, embed_dim)}};
    const double sd = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& v : head.linear.weight.data()) v = sd * standard_normal(rng);
    return head;
}

void TacHeadParams::visit(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("tac.weight", linear.weight);
    fn("tac.bias", linear.bias);
}

void TacHeadParams::visit(const std::function<void(const std::string&, const Matrix&)>& fn) const {
    fn("tac.weight", linear.weight);
    fn("tac.bias", linear.bias);
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("cosine_distance: length mismatch");
    const double aa = dot(a, a);
    const double bb = dot(b, b);
    if (aa == 0.0 || bb == 0.0) return 1.0;
    return 1.0 - dot(a, b) / std::sqrt(aa * bb);
}

namespace {

void check_layers(std::span<const Var> query, std::span<const Var> retrieved) {
    if (query.empty() || query.size() != retrieved.size())
        throw Error("loss: query and retrieved layer counts differ or are zero");
}

/// (N x 1) column of per-patch cosine distances.
Var distances(Tape& tape, Var q, Var r) {
    const Var cos = ag::cosine_rows(tape, q, r);
    const Var ones = tape.constant(Matrix(tape.value(cos).rows(), 1, 1.0));
    return ag::sub(tape, ones, cos);
}

Var sum_terms(Tape& tape, const std::vector<Var>& terms) {
    if (terms.empty()) return tape.constant(Matrix(1, 1, 0.0));
    Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ag::add(tape, acc, terms[i]);
    return acc;
}

std::vector<Var> constants(Tape& tape, std::span<const Matrix> layers) {
    std::vector<Var> out;
    for (const auto& m : layers) out.push_back(tape.constant(m));
    return out;
}

} // namespace

Var query_loss(Tape& tape, std::span<const Var> query, std::span<const Var> retrieved,
               const PatchLabelGrid& labels) {
    check_layers(query, retrieved);
    if (labels.normal.empty()) throw Error("query loss: empty normal patch set");
    std::vector<Var> terms;
    for (std::size_t l = 0; l < query.size(); ++l) {
        if (tape.value(query[l]).rows() != labels.grid.size())
            throw Error("query loss: label grid does not match patch count");
        terms.push_back(ag::mean_of(tape, distances(tape, query[l], retrieved[l]), labels.normal));
    }
    return sum_terms(tape, terms);
}

Var cqc_loss(Tape& tape, std::span<const Var> query, std::span<const Var> retrieved,
             const PatchLabelGrid& labels) {
    check_layers(query, retrieved);
    std::vector<Var> terms;
    if (labels.normal.empty() || labels.anomalous.empty()) return sum_terms(tape, terms);
    for (std::size_t l = 0; l < query.size(); ++l) {
        if (tape.value(query[l]).rows() != labels.grid.size())
            throw Error("cqc loss: label grid does not match patch count");
        const Var d = distances(tape, query[l], retrieved[l]);
        const Var gap = ag::sub(tape, ag::mean_of(tape, d, labels.normal),
                                ag::mean_of(tape, d, labels.anomalous));
        terms.push_back(ag::relu(tape, gap));
    }
    return sum_terms(tape, terms);
}

Var tac_global_embed(Tape& tape, std::span<const Var> layers, const TacHeadParams& head) {
    if (layers.empty()) throw Error("tac_global_embed: no layers");
    std::size_t total = 0;
    for (Var l : layers) total += tape.value(l).cols();
    if (total != head.linear.in_dim())
        throw Error("TAC head expects " + std::to_string(head.linear.in_dim()) +
                    " pooled channels, got " + std::to_string(total));
    const Var joined = layers.size() == 1 ? layers.front() : ag::concat_cols(tape, layers);
    const Var pooled = ag::mean_rows(tape, joined);
    return ag::linear(tape, pooled, tape.param(head.linear.weight), tape.param(head.linear.bias));
}

namespace {

Var tac_from_embeddings(Tape& tape, Var x_query, Var x_retrieved, const TextEmbeddingPair& text,
                        int label, double logit_scale) {
    if (label != 0 && label != 1) throw Error("TAC label must be 0 or 1");
    if (text.rows.rows() != 2) throw Error("TAC needs exactly two text rows");
    for (std::size_t i = 0; i < 2; ++i)
        if (std::abs(l2_norm(text.rows.row(i)) - 1.0) > 1e-6)
            throw Error("TAC text embeddings must be unit norm");
    const Var t = tape.constant(text.rows);
    const Var r_logits =
        ag::scale(tape, ag::matmul_nt(tape, ag::normalize_rows(tape, x_retrieved), t), logit_scale);
    const Var q_logits =
        ag::scale(tape, ag::matmul_nt(tape, ag::normalize_rows(tape, x_query), t), logit_scale);
    return ag::add(tape, ag::cross_entropy(tape, r_logits, 0),
                   ag::cross_entropy(tape, q_logits, static_cast<std::size_t>(label)));
}

} // namespace

Var tac_loss(Tape& tape, std::span<const Var> query, std::span<const Var> retrieved,
             const TextEmbeddingPair& text, int label, const TacHeadParams& head,
             double logit_scale) {
    check_layers(query, retrieved);
    const Var xq = tac_global_embed(tape, query, head);
    const Var xr = tac_global_embed(tape, retrieved, head);
    return tac_from_embeddings(tape, xq, xr, text, label, logit_scale);
}

Var total_loss(Tape& tape, Var query, Var cqc, Var tac, double lambda_cqc, double lambda_tac) {
    if (lambda_cqc < 0.0 || lambda_tac < 0.0) throw Error("loss weights must be non-negative");
    Var total = query;
    if (lambda_cqc != 0.0) total = ag::add(tape, total, ag::scale(tape, cqc, lambda_cqc));
    if (lambda_tac != 0.0) total = ag::add(tape, total, ag::scale(tape, tac, lambda_tac));
    return total;
}

double query_loss(std::span<const Matrix> query, std::span<const Matrix> retrieved,
                  const PatchLabelGrid& labels) {
    Tape tape(false);
    const auto q = constants(tape, query);
    const auto r = constants(tape, retrieved);
    return tape.value(query_loss(tape, q, r, labels))(0, 0);
}

double cqc_loss(std::span<const Matrix> query, std::span<const Matrix> retrieved,
                const PatchLabelGrid& labels) {
    Tape tape(false);
    const auto q = constants(tape, query);
    const auto r = constants(tape, retrieved);
    return tape.value(cqc_loss(tape, q, r, labels))(0, 0);
}

std::vector<double> tac_global_embed(std::span<const Matrix> layers, const TacHeadParams& head) {
    Tape tape(false);
    const auto v = constants(tape, layers);
    return tape.value(tac_global_embed(tape, v, head)).data();
}

double tac_loss(std::span<const Matrix> query, std::span<const Matrix> retrieved,
                const TextEmbeddingPair& text, int label, const TacHeadParams& head,
                double logit_scale) {
    Tape tape(false);
    const auto q = constants(tape, query);
    const auto r = constants(tape, retrieved);
    return tape.value(tac_loss(tape, q, r, text, label, head, logit_scale))(0, 0);
}

double tac_loss_from_embeddings(std::span<const double> x_query, std::span<const double> x_retrieved,
                                const TextEmbeddingPair& text, int label, double logit_scale) {
    Tape tape(false);
    const Var xq = tape.constant(Matrix(1, x_query.size(), {x_query.begin(), x_query.end()}));
    const Var xr = tape.constant(Matrix(1, x_retrieved.size(), {x_retrieved.begin(), x_retrieved.end()}));
    return tape.value(tac_from_embeddings(tape, xq, xr, text, label, logit_scale))(0, 0);
}

double total_loss(const LossParts& parts, double lambda_cqc, double lambda_tac) {
    if (lambda_cqc < 0.0 || lambda_tac < 0.0) throw Error("loss weights must be non-negative");
    return parts.query + lambda_cqc * parts.cqc + lambda_tac * parts.tac;
}

} // namespace dictas
