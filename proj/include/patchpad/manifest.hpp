#pragma once

// Dataset manifests (JSON Lines, one document per line) and
// subject-disjoint development / evaluation splits.

#include "patchpad/document.hpp"
#include "patchpad/patch_pipeline.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace patchpad {

struct ManifestRow {
    std::string doc_id;
    std::string subject_id;
    std::string label = "real";  // "real" or "attack"
    AttackType attack_type = AttackType::none;
    std::string device = "other";
    std::string illumination = "bright_noflash";
    double height_cm = 10.0;
    AnonLevel anon_level = AnonLevel::non;
    int template_version = 2;
    std::string image_path;  // source document image (holder side)
    std::string patch_dir;   // exported patch folder
    std::size_t n_patches = 0;
    std::string dataset_name;
    std::vector<Rect> pseudo_rects;
    std::vector<Rect> full_rects;

    bool is_attack() const { return attack_type != AttackType::none; }
    /// Rects blacked out at the given level (none for AnonLevel::non).
    AnonymizationSpec anonymization(AnonLevel level) const;
};

struct Manifest {
    std::vector<ManifestRow> rows;
    /// Directory relative paths are resolved against.
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& p) const;
    /// Throws on duplicate doc ids or label / attack type disagreement.
    void validate() const;
    /// Throws io_error naming the first referenced file that is missing.
    void check_paths() const;
};

/// Margin-head class of a row; throws for attack types without a class.
Label head_class(const ManifestRow& row);

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
std::string manifest_line(const ManifestRow& row);
ManifestRow parse_manifest_line(const std::string& line);

/// Seeded uniform subsample of exactly n rows, kept in manifest order.
/// Throws if n exceeds the row count.
Manifest sample_rows(const Manifest& manifest, std::size_t n, std::uint64_t seed);

struct SplitSpec {
    double dev_fraction = 0.8;
    /// Subjects owning a document with one of these template versions go to
    /// evaluation.
    std::set<int> forced_eval_template_versions{1};
    std::uint64_t seed = 0;
};

struct Split {
    std::vector<std::size_t> dev;   // row indices, ascending
    std::vector<std::size_t> eval;  // row indices, ascending
};

/// Subject-level split. Forced subjects land in eval; of the rest,
/// min(round(dev_fraction * subjects), rest) seeded picks land in dev.
/// Throws if some class present in the manifest has fewer than two dev
/// subjects.
Split make_splits(const Manifest& manifest, const SplitSpec& spec);

/// Subject-level division of `rows` into (train, val) with round(fraction *
/// subjects) validation subjects (at least one when there are two or more).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(const Manifest& manifest,
                                                                              std::span<const std::size_t> rows,
                                                                              double val_fraction, std::uint64_t seed);

}  // namespace patchpad
