#pragma once

// Run configuration shared by the CLI and the benchmark protocols, loadable
// from a "key = value" text file.

#include "patchpad/embedding.hpp"
#include "patchpad/fusion.hpp"
#include "patchpad/manifest.hpp"
#include "patchpad/margin_head.hpp"
#include "patchpad/patch_pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace patchpad {

struct PipelineConfig {
    std::uint64_t seed = 0;
    ExtractionConfig extraction;
    AnonLevel train_anon = AnonLevel::pseudo;
    AnonLevel eval_anon = AnonLevel::non;
    SplitSpec split;
    double val_fraction = 0.2;
    StubEmbedderConfig embedder;
    std::size_t augment_variants = 0;  // augmented copies per training patch
    AugmentConfig augment;
    HeadTrainConfig head;
    FusionTrainConfig fusion;
    bool joint_head = false;

    /// Sets one key; throws invalid_argument on an unknown key or bad value.
    void set(const std::string& key, const std::string& value);
    /// Every key with its current value, sorted by key.
    std::vector<std::pair<std::string, std::string>> entries() const;
    static std::vector<std::string> keys();
};

/// "key = value" lines; '#' starts a comment; blank lines are ignored.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);

/// Applies a config file on top of `base`.
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

}  // namespace patchpad
