#include "dictas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dictas {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw Error("matrix data size does not match " + std::to_string(rows_) + "x" +
                    std::to_string(cols_));
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw Error("ragged matrix initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Matrix& m) {
    std::ostringstream os;
    os << '(' << m.rows() << " x " << m.cols() << ')';
    return os.str();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw Error(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                    shape_string(b));
    }
}

Matrix slice_rows(const Matrix& m, std::size_t begin, std::size_t end) {
    if (begin > end || end > m.rows()) throw Error("slice_rows: range out of bounds");
    Matrix out(end - begin, m.cols());
    std::copy(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
              m.data().begin() + static_cast<std::ptrdiff_t>(end * m.cols()), out.data().begin());
    return out;
}

Matrix vstack(std::span<const Matrix> parts) {
    if (parts.empty()) return {};
    std::size_t rows = 0;
    const std::size_t cols = parts.front().cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) throw Error("vstack: column count mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    auto it = out.data().begin();
    for (const auto& p : parts) it = std::copy(p.data().begin(), p.data().end(), it);
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

} // namespace dictas
