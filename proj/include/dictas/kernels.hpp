#pragma once

#include "dictas/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

// Dense numeric kernels used by the attention blocks, the dictionary lookup and
// the anomaly-map stage. Every kernel exists twice:
//
//   kernels::serial    plain single-threaded reference loops
//   kernels::parallel  OpenMP row-parallel versions
//
// Parallel kernels only split work across independent output rows and keep the
// per-element accumulation order of the serial reference, so both produce
// bit-identical results. The unit tests assert exactly that.

namespace dictas::kernels {

/// Sparsemax threshold of one score row: the tau with sum(max(z - tau, 0)) = 1.
/// Sorts descending (stable), forms candidate thresholds (cum_t - 1) / t and
/// keeps the one at the largest t with z_t > tau_t. Works on z - floor(max z),
/// so integer shifts of z that are themselves exact leave the weights bit-identical.
double simplex_threshold(std::span<const double> z);

/// Writes max(z_u - tau, 0) into `out`; returns tau.
double sparsemax_row(std::span<const double> z, std::span<double> out);

/// Writes the numerically stable softmax of `z` into `out`.
void softmax_row(std::span<const double> z, std::span<double> out);

/// Index of the first maximum.
std::size_t argmax_row(std::span<const double> z);

namespace serial {

Matrix matmul_nt(const Matrix& a, const Matrix& b); // a * b^T
Matrix matmul_nn(const Matrix& a, const Matrix& b); // a * b
Matrix matmul_tn(const Matrix& a, const Matrix& b); // a^T * b
Matrix softmax_rows(const Matrix& z);
Matrix sparsemax_rows(const Matrix& z);
Matrix onehot_argmax_rows(const Matrix& z);
std::vector<double> cosine_rows(const Matrix& a, const Matrix& b);
/// Mean filter over an (images x height x width) grid of C-channel rows with
/// replicated borders.
Matrix box_filter_grid(const Matrix& rows, std::size_t images, std::size_t height,
                       std::size_t width, std::size_t kernel);
/// Multi-head scaled dot-product attention, softmax(q_h k_h^T * scale) v_h per
/// head, heads concatenated. Streams one query row at a time, so memory stays
/// O(N) per thread instead of O(N^2).
Matrix attention_rows(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                      double scale);

} // namespace serial

namespace parallel {

Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_nn(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& z);
Matrix sparsemax_rows(const Matrix& z);
Matrix onehot_argmax_rows(const Matrix& z);
std::vector<double> cosine_rows(const Matrix& a, const Matrix& b);
Matrix box_filter_grid(const Matrix& rows, std::size_t images, std::size_t height,
                       std::size_t width, std::size_t kernel);
Matrix attention_rows(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
                      double scale);

} // namespace parallel

} // namespace dictas::kernels
