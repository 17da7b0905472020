#include <cmath>
#include <numbers>
#include <random>

#include "cspine/core/errors.hpp"
#include "cspine/data/dataset.hpp"

namespace cspine::data {

void HUVolume::validate() const {
    const auto n = slices.size();
    if (image_labels.size() != n || fracture_boxes.size() != n)
        throw ParamError("case " + case_id + ": label/box tables do not match " + std::to_string(n) + " slices");
    std::uint8_t any = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (slices[i].rows() != height() || slices[i].cols() != width())
            throw ParamError("case " + case_id + ": slice " + std::to_string(i) + " has different dimensions");
        if (image_labels[i] > 1) throw ParamError("case " + case_id + ": image labels must be 0/1");
        if ((image_labels[i] == 1) != !fracture_boxes[i].empty())
            throw ParamError("case " + case_id + ": fracture boxes must be present exactly on positive slices");
        any = std::max(any, image_labels[i]);
    }
    if (case_label != any) throw ParamError("case " + case_id + ": case label must equal max of image labels");
}

bool HUVolume::operator==(const HUVolume& o) const {
    if (case_id != o.case_id || image_labels != o.image_labels || case_label != o.case_label ||
        fracture_boxes != o.fracture_boxes || demographics != o.demographics || slices.size() != o.slices.size())
        return false;
    for (std::size_t i = 0; i < slices.size(); ++i)
        if (slices[i].rows() != o.slices[i].rows() || slices[i].cols() != o.slices[i].cols() ||
            !(slices[i] == o.slices[i]).all())
            return false;
    return true;
}

namespace {

constexpr double kAirHu = -1000.0;

double soft_tissue_hu(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(20.0, 60.0)(rng); }

Demographics draw_demographics(bool positive, std::mt19937_64& rng) {
    // Class-conditional stand-ins: positive 59.4±22.9 y, 66% male; negative 50.4±21.7 y, 65% male.
    std::normal_distribution<double> age(positive ? 59.42 : 50.40, positive ? 22.91 : 21.7);
    std::bernoulli_distribution male(positive ? 13.15 / 19.89 : 51.91 / 80.11);
    Demographics d;
    d.age = static_cast<int>(std::clamp(std::lround(age(rng)), 18L, 100L));
    d.sex = male(rng) ? 'M' : 'F';
    return d;
}

}  // namespace

Phantom generate_phantom(std::uint64_t seed, bool positive, Index num_slices, Index side) {
    if (num_slices < 4) throw ParamError("phantom needs at least 4 slices");
    if (side < 32) throw ParamError("phantom side must be at least 32");
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const double s = static_cast<double>(side);

    const double body_r = uni(0.40, 0.46) * s;
    const double body_cy = s / 2 + uni(-0.03, 0.03) * s, body_cx = s / 2 + uni(-0.03, 0.03) * s;
    const double ring_cy = s / 2 + uni(-0.05, 0.05) * s, ring_cx = s / 2 + uni(-0.05, 0.05) * s;
    const double drift = uni(0.02, 0.05) * s;
    const double phase_r = uni(0, 2 * std::numbers::pi), phase_c = uni(0, 2 * std::numbers::pi);
    const double outer = uni(0.20, 0.26) * s;
    const double thickness = uni(0.07, 0.10) * s;
    const double bone_base = uni(700, 1200);
    const double texture_phase = uni(0, 2 * std::numbers::pi);
    const int texture_lobes = std::uniform_int_distribution<int>(2, 5)(rng);

    Phantom ph;
    HUVolume& v = ph.volume;
    v.demographics = draw_demographics(positive, rng);
    v.case_label = positive ? 1 : 0;
    v.image_labels.assign(static_cast<std::size_t>(num_slices), 0);
    v.fracture_boxes.assign(static_cast<std::size_t>(num_slices), {});

    Index run_start = -1, run_len = 0;
    double cut_angle = 0, cut_width = 0;
    if (positive) {
        run_len = std::uniform_int_distribution<Index>(1, 3)(rng);
        run_start = std::uniform_int_distribution<Index>(0, num_slices - run_len)(rng);
        cut_angle = uni(0, 2 * std::numbers::pi);
        cut_width = uni(0.12, 0.18) * s;
    }

    std::normal_distribution<double> bone_noise(0.0, 40.0);
    for (Index n = 0; n < num_slices; ++n) {
        const double t = static_cast<double>(n) / static_cast<double>(num_slices - 1);
        RingGeometry ring;
        ring.center_row = ring_cy + drift * std::sin(std::numbers::pi * t + phase_r);
        ring.center_col = ring_cx + drift * std::sin(std::numbers::pi * t + phase_c);
        ring.outer_radius = outer * (1.0 + 0.04 * std::sin(2 * std::numbers::pi * t + phase_c));
        ring.inner_radius = ring.outer_radius - thickness;

        const bool fractured = positive && n >= run_start && n < run_start + run_len;
        const double angle = cut_angle + (fractured ? uni(-0.1, 0.1) : 0.0);
        const double ux = std::cos(angle), uy = std::sin(angle);

        HuImage img(side, side);
        BBox box{side, -1, side, -1};
        for (Index r = 0; r < side; ++r)
            for (Index c = 0; c < side; ++c) {
                const double y = static_cast<double>(r), x = static_cast<double>(c);
                double hu = kAirHu;
                if (std::hypot(y - body_cy, x - body_cx) <= body_r) hu = soft_tissue_hu(rng);
                const double dy = y - ring.center_row, dx = x - ring.center_col;
                const double rad = std::hypot(dy, dx);
                if (rad >= ring.inner_radius && rad <= ring.outer_radius) {
                    const double along = dx * ux + dy * uy;
                    const double across = std::abs(-dx * uy + dy * ux);
                    if (fractured && along > 0 && across <= cut_width / 2) {
                        hu = soft_tissue_hu(rng);
                        box.r0 = std::min(box.r0, r);
                        box.r1 = std::max(box.r1, r);
                        box.c0 = std::min(box.c0, c);
                        box.c1 = std::max(box.c1, c);
                    } else {
                        const double theta = std::atan2(dy, dx);
                        hu = bone_base + 150.0 * std::cos(texture_lobes * theta + texture_phase) + bone_noise(rng);
                        hu = std::clamp(hu, 300.0, 1500.0);
                    }
                }
                img(r, c) = static_cast<std::int16_t>(std::lround(std::clamp(hu, double(kHuMin), double(kHuMax))));
            }
        if (fractured && !box.empty()) {
            v.image_labels[static_cast<std::size_t>(n)] = 1;
            v.fracture_boxes[static_cast<std::size_t>(n)].push_back(box);
        }
        v.slices.push_back(std::move(img));
        ph.rings.push_back(ring);
    }
    // A cut narrower than a pixel column could in principle miss every pixel;
    // the case label follows whatever was actually drawn.
    v.case_label = v.positive_slices() > 0 ? 1 : 0;
    v.validate();
    return ph;
}

HUVolume generate_case(std::uint64_t seed, bool positive, Index num_slices, Index side) {
    return generate_phantom(seed, positive, num_slices, side).volume;
}

}  // namespace cspine::data
