#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cspine/data/volume.hpp"

namespace cspine::data {

// ---------------------------------------------------------------------------
// Synthetic phantoms

/// Ground-truth geometry of the bone ring on one slice.
struct RingGeometry {
    double center_row = 0, center_col = 0;
    double inner_radius = 0, outer_radius = 0;
};

struct Phantom {
    HUVolume volume;
    std::vector<RingGeometry> rings;  // per slice
};

/// Air background, a soft-tissue body disk, and a bone annulus whose center
/// drifts smoothly across slices. Positive cases get a soft-tissue cut
/// through the ring on a contiguous run of 1–3 slices.
Phantom generate_phantom(std::uint64_t seed, bool positive, Index num_slices, Index side);
HUVolume generate_case(std::uint64_t seed, bool positive, Index num_slices, Index side);

// ---------------------------------------------------------------------------
// Case files

/// Case file layout (little-endian):
///   "CSVL" | u16 version | u32 N | u32 H | u32 W | u8 case label | u8 label[N]
///   per slice: u16 box count, then boxes as u16 r0,r1,c0,c1
///   i16 HU[N·H·W] | u32 CRC32 of every preceding byte
inline constexpr std::uint16_t kCaseFileVersion = 1;

std::vector<std::uint8_t> encode_case(const HUVolume& volume);
/// `case_id` is not stored in the file; callers pass it (usually the file stem).
HUVolume decode_case(std::span<const std::uint8_t> bytes, const std::string& case_id);

void write_case(const HUVolume& volume, const std::string& path);
HUVolume read_case(const std::string& path);

std::string case_filename(const std::string& case_id);

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
    std::string case_id;
    Index num_slices = 0;
    std::uint8_t case_label = 0;
    Index positive_slices = 0;
    std::uint64_t seed = 0;
    Demographics demographics;
    bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    Index num_cases() const { return static_cast<Index>(entries.size()); }
    Index num_positive_cases() const;
    Index num_slices() const;
    Index num_positive_slices() const;

    const ManifestEntry& find(const std::string& case_id) const;

    std::string to_json() const;
    static Manifest from_json(const std::string& text);
};

void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

ManifestEntry manifest_entry(const HUVolume& v, std::uint64_t seed);

struct ManifestStats {
    // Percent of all cases, indexed [sex F/M][class positive/negative].
    double female_positive = 0, female_negative = 0, male_positive = 0, male_negative = 0;
    double age_mean_positive = 0, age_std_positive = 0;
    double age_mean_negative = 0, age_std_negative = 0;
    Index positives = 0, negatives = 0;

    /// Positive/Negative columns, Female/Male/Age rows.
    std::string table() const;
};

/// Class percentages by sex and age mean ± sample std per class.
ManifestStats manifest_stats(const Manifest& m);

// ---------------------------------------------------------------------------
// Cross-validation folds

struct LabeledCase {
    std::string case_id;
    std::uint8_t label = 0;
};

struct Fold {
    std::vector<std::string> train, validation, test;
};

struct FoldPlan {
    int k = 0;
    std::uint64_t seed = 0;
    std::map<std::string, int> assignment;  // case id → test fold
    std::vector<Fold> folds;
};

inline constexpr double kValidationFraction = 0.10;

/// Stratified K-fold: positives then negatives are shuffled and dealt
/// round-robin (negatives continue where positives stopped). Within each
/// fold's training part, 10% of each class is held out for validation.
FoldPlan kfold_split(std::span<const LabeledCase> cases, int k, std::uint64_t seed);

struct TestSets {
    std::vector<LabeledCase> imbalanced, balanced;
};

/// Imbalanced = the full fold; balanced = all positives plus an equal-count
/// seeded uniform sample of negatives.
TestSets build_test_sets(std::span<const LabeledCase> test_cases, std::uint64_t seed);

}  // namespace cspine::data
