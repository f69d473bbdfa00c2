#pragma once

// Independent reference implementations and fixtures shared by the unit tests
// and the acceptance binary. Nothing here calls the code it checks.

#include "dictas/backbone.hpp"
#include "dictas/lookup.hpp"
#include "dictas/rng.hpp"
#include "dictas/tensor.hpp"
#include "dictas/training.hpp"

#include <opencv2/core.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dictas::testing {

// Euclidean projection onto the probability simplex by bisection on tau,
// solving sum(max(z - tau, 0)) = 1.
std::vector<double> simplex_projection_bisection(std::span<const double> z);

// AUROC as the fraction of (positive, negative) pairs ordered correctly, ties 1/2.
double auroc_pairs(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Threshold sweep over every distinct score, predicting positive when s >= t.
double ap_sweep(std::span<const double> scores, std::span<const std::uint8_t> labels);
double f1_sweep(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Brute-force PRO: for every distinct threshold, flood-fill regions, mean
// per-region coverage vs global FPR, curve from (0,0), trapezoids up to the
// limit with linear interpolation, divided by the limit.
double pro_sweep(const std::vector<Matrix>& maps, const std::vector<cv::Mat>& masks, double fpr_limit);

// Largest negative barycentric weight needed to write x as a convex combination
// of cols + 1 rows of V, minimized over every such subset (0 inside the hull).
// Assumes a full-dimensional hull.
double convex_hull_violation(const Matrix& vertices, std::span<const double> x);

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0);
PatchFeatureStack random_stack(std::size_t layers, std::size_t images, std::size_t h, std::size_t w,
                               std::size_t c, Rng& rng);
TextEmbeddingPair random_text(std::size_t dim, Rng& rng);
cv::Mat random_image(int h, int w, Rng& rng);
bool same_bits(const Matrix& a, const Matrix& b);
bool same_bits(const cv::Mat& a, const cv::Mat& b);

// A BackboneSpec for hand-built feature stacks.
BackboneSpec tiny_spec(std::size_t layers, std::size_t grid, std::size_t channels, std::size_t embed_dim);

// Gradient norms below this count as zero: tensors whose true gradient vanishes
// (a bias shared by every key of a softmax row) are compared in absolute terms.
inline constexpr double kGradFloor = 1e-4;

struct GradCheck {
    double worst_rel = 0.0; // worst per-tensor ||analytic - numeric|| / max(||analytic||, ||numeric||, kGradFloor)
    std::string worst_name;
    std::size_t checked = 0; // parameter entries
};

// Central finite differences of the full training loss with respect to every
// model parameter, compared per tensor against the tape gradient.
GradCheck check_model_gradients(const Model& model, const TrainingExample& ex, const LossWeights& weights,
                                const LookupOptions& lookup, double h = 1e-6);

// Example for the gradient checks: L layers, H = W = grid, C channels, k = 1.
struct GradFixture {
    Model model;
    TrainingExample base;
    TextEmbeddingPair text;
    // Copy of the example pointing at this fixture's text embeddings.
    TrainingExample example() const {
        TrainingExample e = base;
        e.text = &text;
        return e;
    }
};
GradFixture make_grad_fixture(std::size_t layers, std::size_t grid, std::size_t channels, std::uint64_t seed,
                              int label);

// Smallest |z_u - tau| over every similarity row of the example: how far the
// sparse lookup is from a change of support.
double sparse_support_margin(const Model& model, const TrainingExample& ex);

} // namespace dictas::testing
