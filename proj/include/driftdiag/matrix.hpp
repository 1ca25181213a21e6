#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "driftdiag/errors.hpp"

namespace driftdiag {

// Dense row-major matrix. Rows are contiguous so per-sample feature vectors
// can be handed out as spans without copying.
template <typename T>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const Mat& other) const { return rows == other.rows && cols == other.cols; }

    bool all_finite() const {
        for (const T& v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

template <typename T>
inline void require_shape(const Mat<T>& m, std::size_t rows, std::size_t cols, const std::string& what) {
    if (m.rows != rows || m.cols != cols) {
        throw ShapeError(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + std::to_string(m.rows) + "x" + std::to_string(m.cols));
    }
}

template <typename T>
inline void require_finite(const Mat<T>& m, const std::string& what) {
    if (!m.all_finite()) throw NumericError(what + ": non-finite entries");
}

}  // namespace driftdiag
