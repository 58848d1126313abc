#pragma once

// Privacy-aware patch extraction: blackout of sensitive rectangles,
// non-overlapping tiling, removal of mostly-black tiles, random
// subsampling, order shuffling and anonymous file naming.

#include "patchpad/document.hpp"
#include "patchpad/image.hpp"
#include "patchpad/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace patchpad {

struct Rect {
    std::size_t x = 0, y = 0, w = 0, h = 0;
    friend bool operator==(const Rect&, const Rect&) = default;
};

std::string to_string(const Rect& r);

struct AnonymizationSpec {
    AnonLevel level = AnonLevel::non;
    std::vector<Rect> rects;  // must be empty for AnonLevel::non
};

struct ExtractionConfig {
    std::size_t patch_size = 64;  // 64 or 128
    double black_threshold = 0.8;
    double keep_prob = 0.9;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

/// A grid tile before sampling. grid_index is row-major over the tile grid
/// and never leaves the holder side.
struct CandidatePatch {
    RgbImage pixels;
    std::size_t grid_index = 0;
    double black_fraction = 0.0;
};

struct PatchRecord {
    RgbImage pixels;
    std::string export_name;  // six decimal digits
    double black_fraction = 0.0;
    std::size_t grid_index = 0;
};

inline constexpr std::size_t kMaxPatchesPerDocument = 1'000'000;
inline constexpr const char* kPatchExtension = ".ppm";

/// Paints every rect pure black. Throws if a rect leaves the image or if
/// rects are given for AnonLevel::non.
RgbImage apply_anonymization(const RgbImage& img, const AnonymizationSpec& spec);

/// floor(W/p) * floor(H/p) disjoint tiles in row-major order; remainder
/// pixels on the right and bottom are dropped.
std::vector<CandidatePatch> tile(const RgbImage& img, std::size_t p);

/// Fraction of pixels exactly equal to (0,0,0).
double black_fraction(const RgbImage& patch);

/// Draw order: one uniform per candidate in grid order, drawn whether or not
/// the candidate passes the black filter, then a single Fisher-Yates shuffle
/// of the survivors. Drawing for every tile keeps the keep decision of a
/// tile independent of the masks, so stronger anonymization can only remove
/// patches.
std::vector<CandidatePatch> filter_and_sample(std::vector<CandidatePatch> candidates, const ExtractionConfig& cfg,
                                              Rng& rng);

/// Assigns unique random six-digit names (redrawing on collision).
std::vector<PatchRecord> assign_export_names(std::vector<CandidatePatch> kept, Rng& rng);

/// Writes each record as <doc_dir>/<export_name>.ppm and returns the records
/// (the name to grid mapping stays with the caller). Creates doc_dir.
std::vector<PatchRecord> export_patchset(std::vector<CandidatePatch> kept, const std::filesystem::path& doc_dir,
                                         Rng& rng);

/// Anonymize -> tile -> filter/sample -> name, seeded from cfg.rng_seed.
/// Nothing is written.
std::vector<PatchRecord> extract_patches(const RgbImage& img, const AnonymizationSpec& spec,
                                         const ExtractionConfig& cfg);

/// Writes records under doc_dir; fails if a file cannot be written.
void write_patchset(const std::vector<PatchRecord>& records, const std::filesystem::path& doc_dir);

/// Reads every *.ppm file of an exported folder, sorted by file name.
std::vector<PatchRecord> read_patchset(const std::filesystem::path& doc_dir);

}  // namespace patchpad
