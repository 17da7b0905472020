#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cspine/preprocess/image.hpp"

namespace cspine::data {

struct Demographics {
    int age = 0;
    char sex = 'F';  // 'F' or 'M'
    bool operator==(const Demographics&) const = default;
};

/// One CT case: N axial slices plus image- and case-level fracture labels.
struct HUVolume {
    std::string case_id;
    std::vector<HuImage> slices;
    std::vector<std::uint8_t> image_labels;
    std::uint8_t case_label = 0;
    // Per slice; non-empty exactly on slices with image label 1.
    std::vector<std::vector<BBox>> fracture_boxes;
    Demographics demographics;

    Index num_slices() const { return static_cast<Index>(slices.size()); }
    Index height() const { return slices.empty() ? 0 : slices.front().rows(); }
    Index width() const { return slices.empty() ? 0 : slices.front().cols(); }
    Index positive_slices() const {
        Index n = 0;
        for (auto y : image_labels) n += y;
        return n;
    }

    /// Throws ParamError if labels, boxes and slice dims are inconsistent.
    void validate() const;

    bool operator==(const HUVolume& o) const;
};

}  // namespace cspine::data
