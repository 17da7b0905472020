#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cspine/data/volume.hpp"
#include "cspine/preprocess/image.hpp"

namespace cspine::preprocess {

struct WindowSpec {
    double width = 1.0;
    double center = 0.0;
    std::string name;
};

inline const WindowSpec kSoftTissue{300.0, 80.0, "soft_tissue"};
inline const WindowSpec kStandardBone{1800.0, 500.0, "standard_bone"};
inline const WindowSpec kGrossBone{650.0, 400.0, "gross_bone"};

/// Channel order of every preprocessed slice.
inline const std::array<WindowSpec, 3> kWindows{kSoftTissue, kStandardBone, kGrossBone};

/// clamp((x − (c − w/2)) / w, 0, 1)
double hu_window(double hu, const WindowSpec& spec);
Image window_image(const HuImage& slice, const WindowSpec& spec);

inline constexpr int kOtsuBins = 256;
using Histogram = std::array<std::uint64_t, kOtsuBins>;

/// Bin of a [0,1] value among 256 uniform bins.
int quantize_bin(float v);
Histogram histogram_256(const Image& img);

/// Otsu threshold t ∈ [0,254] maximizing ω0·ω1·(μ0 − μ1)²; foreground is bins > t.
/// Ties resolve to the lowest t. Throws DegenerateImage if < 2 bins are occupied.
int otsu_threshold(const Histogram& hist);
int otsu_threshold(const Image& img);

Mask foreground_mask(const Image& img, int threshold_bin);

/// Tightest inclusive box around true pixels; EmptyForeground if none.
BBox foreground_bbox(const Mask& mask);

/// Grows `box` by round(frac · extent) per side on each axis, clamped to the image.
BBox expand_box(const BBox& box, double margin_frac, Index height, Index width);
Image crop(const Image& img, const BBox& box);

struct CropResult {
    Image image;
    BBox box;
};
CropResult crop_with_margin(const Image& img, const BBox& bbox, double margin_frac = 0.05);

/// Zero-pads the short axis to a square (odd remainder to bottom/right).
Image pad_to_square(const Image& img);
/// Corner-aligned bilinear resampling to rows×cols.
Image resize_bilinear(const Image& img, Index rows, Index cols);
Image pad_and_resize(const Image& img, Index side);

/// Where a preprocessed slice came from, enough to map original pixel
/// coordinates into the S×S frame.
struct Provenance {
    BBox crop_box;
    Index original_height = 0, original_width = 0;
    Index pad_top = 0, pad_left = 0, padded_side = 0;
    bool cropped = true;  // false when Otsu/bbox failed and the full frame was used

    /// Maps an original-image (row, col) to preprocessed coordinates.
    std::pair<double, double> to_output(double r, double c, Index side) const;
    /// Maps an original-image box to the preprocessed frame (rounded outward).
    BBox box_to_output(const BBox& b, Index side) const;
};

struct PreprocessedSlice {
    Index side = 0;
    // 3·S·S values: channel-major (soft tissue, standard bone, gross bone).
    std::vector<float> values;
    Provenance provenance;

    Eigen::Map<const Image> channel(int c) const {
        return {values.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(side * side), side, side};
    }
    Eigen::Map<Image> channel(int c) {
        return {values.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(side * side), side, side};
    }
    bool operator==(const PreprocessedSlice& o) const { return side == o.side && values == o.values; }
};

struct PreprocessedCase {
    std::string case_id;
    std::vector<PreprocessedSlice> slices;
    std::vector<std::uint8_t> image_labels;
    std::uint8_t case_label = 0;
    Index side = 0;

    Index num_slices() const { return static_cast<Index>(slices.size()); }
    Index uncropped_slices() const {
        Index n = 0;
        for (const auto& s : slices) n += s.provenance.cropped ? 0 : 1;
        return n;
    }
};

PreprocessedSlice preprocess_slice(const HuImage& slice, Index side);
PreprocessedCase preprocess_case(const data::HUVolume& volume, Index side);

struct AugmentParams {
    bool flip = false;
    double angle_deg = 0.0;
};

inline constexpr double kMaxRotationDeg = 10.0;

AugmentParams draw_augmentation(std::mt19937_64& rng);
/// Horizontal flip (if set) then rotation about the image center; bilinear,
/// out-of-frame samples are 0.
PreprocessedSlice apply_augmentation(const PreprocessedSlice& slice, const AugmentParams& params);
PreprocessedSlice augment(const PreprocessedSlice& slice, std::mt19937_64& rng);

Image flip_horizontal(const Image& img);
Image rotate(const Image& img, double angle_deg);

/// P5 binary PGM, maxval 255, values clamped from [0,1].
void write_pgm(const std::string& path, const Image& img);
Image read_pgm(const std::string& path);

}  // namespace cspine::preprocess
