#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <string>

namespace cspine {

using Index = Eigen::Index;

/// Single-channel real image, row-major.
using Image = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Axial slice of Hounsfield values.
using HuImage = Eigen::Array<std::int16_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kHuMin = -1024;
inline constexpr int kHuMax = 3071;

/// Inclusive pixel box: rows r0..r1, columns c0..c1.
struct BBox {
    Index r0 = 0, r1 = -1, c0 = 0, c1 = -1;

    Index height() const { return r1 - r0 + 1; }
    Index width() const { return c1 - c0 + 1; }
    bool empty() const { return r1 < r0 || c1 < c0; }

    bool contains(const BBox& o) const { return r0 <= o.r0 && o.r1 <= r1 && c0 <= o.c0 && o.c1 <= c1; }
    bool contains(double r, double c) const { return r >= r0 && r <= r1 && c >= c0 && c <= c1; }

    BBox dilated(Index px) const { return {r0 - px, r1 + px, c0 - px, c1 + px}; }

    bool operator==(const BBox&) const = default;

    std::string str() const {
        return "rows " + std::to_string(r0) + "-" + std::to_string(r1) + ", cols " + std::to_string(c0) + "-" +
               std::to_string(c1);
    }
};

}  // namespace cspine
