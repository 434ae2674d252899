#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "seghgnn/error.hpp"

namespace seghgnn {

/// Integer label per cell of a row-major grid (patch grid or pixel mask).
struct LabelGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<int> labels;

    LabelGrid() = default;
    LabelGrid(std::size_t r, std::size_t c, std::vector<int> l) : rows(r), cols(c), labels(std::move(l)) {
        if (labels.size() != rows * cols) {
            throw Error(ErrorCode::shape_mismatch, "label count " + std::to_string(labels.size()) + " != " +
                                                       std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    int at(std::size_t r, std::size_t c) const { return labels[r * cols + c]; }
    int& at(std::size_t r, std::size_t c) { return labels[r * cols + c]; }
    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }

    friend bool operator==(const LabelGrid&, const LabelGrid&) = default;
};

/// Inclusive pixel coordinates.
struct BoundingBox {
    long x_min = 0;
    long y_min = 0;
    long x_max = 0;
    long y_max = 0;

    long width() const noexcept { return x_max - x_min + 1; }
    long height() const noexcept { return y_max - y_min + 1; }
    long area() const noexcept { return width() * height(); }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

} // namespace seghgnn
