#include "cspine/preprocess/preprocess.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "cspine/core/errors.hpp"

namespace cspine::preprocess {

double hu_window(double hu, const WindowSpec& spec) {
    const double lower = spec.center - spec.width / 2.0;
    return std::clamp((hu - lower) / spec.width, 0.0, 1.0);
}

Image window_image(const HuImage& slice, const WindowSpec& spec) {
    if (!(spec.width > 0)) throw ParamError("window width must be positive");
    return slice.unaryExpr([&](std::int16_t v) { return static_cast<float>(hu_window(v, spec)); });
}

int quantize_bin(float v) {
    const int b = static_cast<int>(std::floor(static_cast<double>(v) * kOtsuBins));
    return std::clamp(b, 0, kOtsuBins - 1);
}

Histogram histogram_256(const Image& img) {
    Histogram h{};
    for (Index i = 0; i < img.size(); ++i) ++h[static_cast<std::size_t>(quantize_bin(img.data()[i]))];
    return h;
}

int otsu_threshold(const Histogram& hist) {
    int occupied = 0;
    std::uint64_t total = 0, weighted_total = 0;
    for (int b = 0; b < kOtsuBins; ++b) {
        occupied += hist[static_cast<std::size_t>(b)] ? 1 : 0;
        total += hist[static_cast<std::size_t>(b)];
        weighted_total += static_cast<std::uint64_t>(b) * hist[static_cast<std::size_t>(b)];
    }
    if (occupied < 2) throw DegenerateImage("Otsu needs at least two occupied histogram bins");

    // Running integer sums keep ω and μ exact up to the final divisions.
    std::uint64_t below = 0, weighted_below = 0;
    double best = -1.0;
    int best_t = 0;
    const double n = static_cast<double>(total);
    for (int t = 0; t < kOtsuBins - 1; ++t) {
        below += hist[static_cast<std::size_t>(t)];
        weighted_below += static_cast<std::uint64_t>(t) * hist[static_cast<std::size_t>(t)];
        const std::uint64_t above = total - below;
        double var = 0.0;
        if (below > 0 && above > 0) {
            const double w0 = static_cast<double>(below) / n;
            const double w1 = static_cast<double>(above) / n;
            const double mu0 = static_cast<double>(weighted_below) / static_cast<double>(below);
            const double mu1 = static_cast<double>(weighted_total - weighted_below) / static_cast<double>(above);
            var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        }
        if (var > best) {
            best = var;
            best_t = t;
        }
    }
    return best_t;
}

int otsu_threshold(const Image& img) { return otsu_threshold(histogram_256(img)); }

Mask foreground_mask(const Image& img, int threshold_bin) {
    return img.unaryExpr([&](float v) { return quantize_bin(v) > threshold_bin; });
}

BBox foreground_bbox(const Mask& mask) {
    BBox box{mask.rows(), -1, mask.cols(), -1};
    for (Index r = 0; r < mask.rows(); ++r)
        for (Index c = 0; c < mask.cols(); ++c)
            if (mask(r, c)) {
                box.r0 = std::min(box.r0, r);
                box.r1 = std::max(box.r1, r);
                box.c0 = std::min(box.c0, c);
                box.c1 = std::max(box.c1, c);
            }
    if (box.empty()) throw EmptyForeground("mask has no foreground pixels");
    return box;
}

BBox expand_box(const BBox& box, double margin_frac, Index height, Index width) {
    if (box.empty() || box.r0 < 0 || box.c0 < 0 || box.r1 >= height || box.c1 >= width)
        throw BoxError("box " + box.str() + " outside " + std::to_string(height) + "x" + std::to_string(width) + " image");
    if (!(margin_frac >= 0)) throw ParamError("margin fraction must be nonnegative");
    // Round half up.
    const Index mr = static_cast<Index>(std::floor(margin_frac * static_cast<double>(box.height()) + 0.5));
    const Index mc = static_cast<Index>(std::floor(margin_frac * static_cast<double>(box.width()) + 0.5));
    return {std::max<Index>(0, box.r0 - mr), std::min(height - 1, box.r1 + mr), std::max<Index>(0, box.c0 - mc),
            std::min(width - 1, box.c1 + mc)};
}

Image crop(const Image& img, const BBox& box) {
    if (box.empty() || box.r0 < 0 || box.c0 < 0 || box.r1 >= img.rows() || box.c1 >= img.cols())
        throw BoxError("box " + box.str() + " outside image");
    return img.block(box.r0, box.c0, box.height(), box.width());
}

CropResult crop_with_margin(const Image& img, const BBox& bbox, double margin_frac) {
    const BBox grown = expand_box(bbox, margin_frac, img.rows(), img.cols());
    return {crop(img, grown), grown};
}

namespace {

struct PadGeometry {
    Index side, top, left;
};

PadGeometry pad_geometry(Index rows, Index cols) {
    const Index side = std::max(rows, cols);
    return {side, (side - rows) / 2, (side - cols) / 2};
}

// Corner-aligned source coordinate of destination index i.
double source_coord(Index i, Index src_len, Index dst_len) {
    if (dst_len == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(src_len - 1) / static_cast<double>(dst_len - 1);
}

float sample_bilinear_zero(const Image& img, double y, double x) {
    const double fy = std::floor(y), fx = std::floor(x);
    const Index y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
    const double wy = y - fy, wx = x - fx;
    auto at = [&](Index r, Index c) -> double {
        return (r >= 0 && r < img.rows() && c >= 0 && c < img.cols()) ? static_cast<double>(img(r, c)) : 0.0;
    };
    const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                     wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
    return static_cast<float>(v);
}

}  // namespace

Image pad_to_square(const Image& img) {
    if (img.rows() < 1 || img.cols() < 1) throw ParamError("cannot pad an empty image");
    const auto g = pad_geometry(img.rows(), img.cols());
    Image out = Image::Zero(g.side, g.side);
    out.block(g.top, g.left, img.rows(), img.cols()) = img;
    return out;
}

Image resize_bilinear(const Image& img, Index rows, Index cols) {
    if (img.rows() < 1 || img.cols() < 1 || rows < 1 || cols < 1) throw ParamError("resize of an empty image");
    Image out(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const double y = source_coord(r, img.rows(), rows);
        const Index y0 = static_cast<Index>(std::floor(y));
        const Index y1 = std::min(y0 + 1, img.rows() - 1);
        const double wy = y - static_cast<double>(y0);
        for (Index c = 0; c < cols; ++c) {
            const double x = source_coord(c, img.cols(), cols);
            const Index x0 = static_cast<Index>(std::floor(x));
            const Index x1 = std::min(x0 + 1, img.cols() - 1);
            const double wx = x - static_cast<double>(x0);
            const double top = (1 - wx) * img(y0, x0) + wx * img(y0, x1);
            const double bottom = (1 - wx) * img(y1, x0) + wx * img(y1, x1);
            out(r, c) = static_cast<float>((1 - wy) * top + wy * bottom);
        }
    }
    return out;
}

Image pad_and_resize(const Image& img, Index side) {
    Image sq = pad_to_square(img);
    if (sq.rows() == side) return sq;
    return resize_bilinear(sq, side, side);
}

std::pair<double, double> Provenance::to_output(double r, double c, Index side) const {
    const double scale = padded_side > 1 ? static_cast<double>(side - 1) / static_cast<double>(padded_side - 1) : 0.0;
    return {(r - static_cast<double>(crop_box.r0) + static_cast<double>(pad_top)) * scale,
            (c - static_cast<double>(crop_box.c0) + static_cast<double>(pad_left)) * scale};
}

BBox Provenance::box_to_output(const BBox& b, Index side) const {
    auto [r0, c0] = to_output(static_cast<double>(b.r0), static_cast<double>(b.c0), side);
    auto [r1, c1] = to_output(static_cast<double>(b.r1), static_cast<double>(b.c1), side);
    return {static_cast<Index>(std::floor(r0)), static_cast<Index>(std::ceil(r1)), static_cast<Index>(std::floor(c0)),
            static_cast<Index>(std::ceil(c1))};
}

PreprocessedSlice preprocess_slice(const HuImage& slice, Index side) {
    if (side < 1) throw ParamError("target side must be positive");
    std::array<Image, 3> channels;
    for (int c = 0; c < 3; ++c) channels[static_cast<std::size_t>(c)] = window_image(slice, kWindows[static_cast<std::size_t>(c)]);

    PreprocessedSlice out;
    out.side = side;
    Provenance& prov = out.provenance;
    prov.original_height = slice.rows();
    prov.original_width = slice.cols();
    prov.crop_box = {0, slice.rows() - 1, 0, slice.cols() - 1};
    try {
        const Image& gross = channels[2];
        const BBox fg = foreground_bbox(foreground_mask(gross, otsu_threshold(gross)));
        prov.crop_box = expand_box(fg, 0.05, slice.rows(), slice.cols());
    } catch (const DegenerateImage&) {
        prov.cropped = false;
    } catch (const EmptyForeground&) {
        prov.cropped = false;
    }
    const auto g = pad_geometry(prov.crop_box.height(), prov.crop_box.width());
    prov.pad_top = g.top;
    prov.pad_left = g.left;
    prov.padded_side = g.side;

    out.values.resize(static_cast<std::size_t>(3 * side * side));
    for (int c = 0; c < 3; ++c) out.channel(c) = pad_and_resize(crop(channels[static_cast<std::size_t>(c)], prov.crop_box), side);
    return out;
}

PreprocessedCase preprocess_case(const data::HUVolume& volume, Index side) {
    if (volume.slices.empty()) throw EmptyCase("case " + volume.case_id + " has no slices");
    PreprocessedCase out;
    out.case_id = volume.case_id;
    out.image_labels = volume.image_labels;
    out.case_label = volume.case_label;
    out.side = side;
    out.slices.reserve(volume.slices.size());
    for (const auto& s : volume.slices) out.slices.push_back(preprocess_slice(s, side));
    return out;
}

Image flip_horizontal(const Image& img) { return img.rowwise().reverse(); }

Image rotate(const Image& img, double angle_deg) {
    const double th = angle_deg * std::numbers::pi / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const double cy = static_cast<double>(img.rows() - 1) / 2.0, cx = static_cast<double>(img.cols() - 1) / 2.0;
    Image out(img.rows(), img.cols());
    for (Index y = 0; y < img.rows(); ++y)
        for (Index x = 0; x < img.cols(); ++x) {
            const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
            out(y, x) = sample_bilinear_zero(img, -sn * dx + cs * dy + cy, cs * dx + sn * dy + cx);
        }
    return out;
}

AugmentParams draw_augmentation(std::mt19937_64& rng) {
    std::bernoulli_distribution flip(0.5);
    std::uniform_real_distribution<double> angle(-kMaxRotationDeg, kMaxRotationDeg);
    AugmentParams p;
    p.flip = flip(rng);
    p.angle_deg = angle(rng);
    return p;
}

PreprocessedSlice apply_augmentation(const PreprocessedSlice& slice, const AugmentParams& params) {
    PreprocessedSlice out = slice;
    for (int c = 0; c < 3; ++c) {
        Image img = slice.channel(c);
        if (params.flip) img = flip_horizontal(img);
        if (params.angle_deg != 0.0) img = rotate(img, params.angle_deg);
        out.channel(c) = img;
    }
    return out;
}

PreprocessedSlice augment(const PreprocessedSlice& slice, std::mt19937_64& rng) {
    return apply_augmentation(slice, draw_augmentation(rng));
}

void write_pgm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
    for (Index r = 0; r < img.rows(); ++r)
        for (Index c = 0; c < img.cols(); ++c) {
            const double v = std::clamp(static_cast<double>(img(r, c)), 0.0, 1.0);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
        }
    if (!out) throw IoError("write failed for " + path);
}

Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    Index w = 0, h = 0;
    int maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || w < 1 || h < 1 || maxval != 255) throw FormatError(path + " is not an 8-bit P5 PGM");
    in.get();
    Image img(h, w);
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) {
            const int v = in.get();
            if (v == EOF) throw FormatError(path + " is truncated");
            img(r, c) = static_cast<float>(v) / 255.0f;
        }
    return img;
}

}  // namespace cspine::preprocess
