#pragma once

// Synthetic document generator for desk-scale end-to-end runs. Each class
// carries a texture that survives patching:
//   real       smooth card gradient and fine guilloche sinusoids
//   print      attenuated guilloche, desaturation and ink-dot noise
//   screen     a superposed two-frequency sinusoidal grid and a colour tint
//   composite  a real document with rectangles carrying the print texture

#include "patchpad/document.hpp"
#include "patchpad/image.hpp"
#include "patchpad/manifest.hpp"
#include "patchpad/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace patchpad {

struct FixtureConfig {
    std::size_t subjects = 50;
    /// Documents per class, indexed by Label; document k of a class belongs
    /// to subject k mod subjects.
    std::array<std::size_t, kNumClasses> class_counts{50, 50, 50, 50};
    std::size_t width = 512;
    std::size_t height = 320;
    std::size_t patch_size = 64;
    /// Subjects rendered with template version 1 (forced into evaluation).
    std::size_t template1_subjects = 2;
    std::size_t composite_rects_min = 1;
    std::size_t composite_rects_max = 2;
    double guilloche_amplitude = 18.0;
    double print_attenuation = 0.4;
    double print_desaturation = 0.45;
    double print_noise = 24.0;
    double screen_amplitude = 12.0;
    std::string dataset_name = "synthetic-fixture";

    void validate() const;
};

struct FixtureDocument {
    ManifestRow row;
    RgbImage image;
    /// Composite only: the real rendering the rectangles were pasted on.
    RgbImage base;
    std::vector<Rect> composite_rects;
};

/// Deterministic for a seed. Anonymization rects are nested: every pseudo
/// rect is also a full rect.
std::vector<FixtureDocument> generate_fixture(const FixtureConfig& cfg, std::uint64_t seed);

/// Print texture over a window; every pixel of the window changes.
void apply_print_texture(RgbImage& img, const Rect& r, const FixtureConfig& cfg, Rng& rng);

/// Writes <out>/images/<doc_id>.ppm and <out>/manifest.jsonl (paths
/// relative to <out>) and returns the manifest.
Manifest write_fixture(const FixtureConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace patchpad
