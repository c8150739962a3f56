#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace opqn {

/// Dense column-major matrix of doubles. Column c occupies the contiguous
/// range [c*rows, (c+1)*rows). Codebooks, transform layers, and classifier
/// weights all use this layout so that per-codeword / per-class vectors are
/// contiguous.
struct ColMat {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<double> data;

    ColMat() = default;
    ColMat(std::uint32_t r, std::uint32_t c) : rows(r), cols(c), data(std::size_t(r) * c, 0.0) {}

    double* col(std::uint32_t c) { return data.data() + std::size_t(c) * rows; }
    const double* col(std::uint32_t c) const { return data.data() + std::size_t(c) * rows; }

    std::span<double> col_span(std::uint32_t c) { return {col(c), rows}; }
    std::span<const double> col_span(std::uint32_t c) const { return {col(c), rows}; }

    double& at(std::uint32_t r, std::uint32_t c) { return data[std::size_t(c) * rows + r]; }
    double at(std::uint32_t r, std::uint32_t c) const { return data[std::size_t(c) * rows + r]; }

    std::size_t size() const { return data.size(); }

    static ColMat identity(std::uint32_t n) {
        ColMat m(n, n);
        for (std::uint32_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

}  // namespace opqn
