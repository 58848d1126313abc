#pragma once

// End-to-end pipeline stages and the evaluation protocols built on them:
// intra-database, leave-one-attack-out, leave-one-sensor-out and
// cross-database.

#include "patchpad/config.hpp"
#include "patchpad/embedding.hpp"
#include "patchpad/fusion.hpp"
#include "patchpad/manifest.hpp"
#include "patchpad/margin_head.hpp"
#include "patchpad/metrics.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace patchpad {

/// Per-document extraction seed, shared by every anonymization level.
std::uint64_t document_seed(std::uint64_t seed, const std::string& doc_id);

// Stages ------------------------------------------------------------------

/// Extracts (from image_path) or reads (from patch_dir) the patches of each
/// row at `level`, embeds them with the stub embedder and appends them to
/// `store` as "<doc_id>/<export_name>". With `augmented`, cfg.augment_variants
/// augmented copies per patch are added as "...#aug<k>".
void embed_documents(const Manifest& manifest, std::span<const std::size_t> rows, AnonLevel level,
                     const PipelineConfig& cfg, bool augmented, EmbeddingStore& store);

/// Store row indices of a document's patches (augmented copies excluded).
std::vector<std::size_t> document_rows(const EmbeddingStore& store, const std::string& doc_id);

/// One sample per stored patch of the rows, labelled with the patch class.
std::vector<HeadSample> head_samples(const Manifest& manifest, std::span<const std::size_t> rows,
                                     const EmbeddingStore& store);

/// Fusion inputs: head embeddings, or backbone rows when head is null.
/// Throws if a document has no stored patches.
std::vector<FusionDoc> fusion_documents(const Manifest& manifest, std::span<const std::size_t> rows,
                                        const EmbeddingStore& store, const MarginHead* head);

/// Development rows of the manifest split into (train, val), as every
/// protocol and the training commands use them.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> dev_train_val(const Manifest& manifest,
                                                                            const PipelineConfig& cfg);

struct TrainedModels {
    MarginHead head;
    FusionModel fusion;
    std::size_t head_best_epoch = 0;
    std::size_t fusion_best_epoch = 0;
    std::vector<HeadEpochLog> head_log;
    std::vector<FusionEpochLog> fusion_log;
};

/// Trains the head on patches of `train`/`val`, then the fusion module on
/// the same documents (joint with the head when cfg.joint_head).
TrainedModels train_models(const Manifest& manifest, std::span<const std::size_t> train,
                           std::span<const std::size_t> val, const EmbeddingStore& store, const PipelineConfig& cfg,
                           const std::array<std::uint8_t, kNumClasses>& inactive = {});

std::vector<ScoreRecord> score_rows(const Manifest& manifest, std::span<const std::size_t> rows,
                                    const EmbeddingStore& store, const MarginHead& head, const FusionModel& fusion,
                                    const PipelineConfig& cfg);

/// Bona fide pool from label "real", attack pools keyed by attack type.
ScoreSet score_set(const std::vector<ScoreRecord>& scores);

// Protocols ---------------------------------------------------------------

enum class ProtocolKind { intra, leave_one_attack_out, leave_one_sensor_out, cross_database };

ProtocolKind parse_protocol_kind(std::string_view s);  // intra | loao | loso | crossdb
std::string_view to_string(ProtocolKind k);

struct ProtocolSpec {
    ProtocolKind kind = ProtocolKind::intra;
    std::optional<std::string> held_out;  // attack type (loao) or device (loso)
    AnonLevel train_anon = AnonLevel::pseudo;
    AnonLevel eval_anon = AnonLevel::non;

    /// held_out must be present exactly for the leave-one-out kinds.
    void validate() const;
};

struct RowCounts {
    std::size_t train = 0, val = 0, eval = 0, unused = 0;
    std::size_t total() const { return train + val + eval + unused; }
};

struct ResultRow {
    std::string name;
    PaiReport report;
};

struct ProtocolResult {
    ProtocolSpec spec;
    std::vector<std::string> columns;  // attack-type keys of the table
    std::vector<ResultRow> rows;
    /// Keyed by "<dataset>/<attack type>"; sums reconcile with the manifests.
    std::map<std::string, RowCounts> counts;
    std::vector<ScoreRecord> scores;
    std::size_t head_best_epoch = 0;
    std::size_t fusion_best_epoch = 0;
};

/// Table columns (attack-type keys) for a protocol kind.
std::vector<std::string> protocol_columns(ProtocolKind kind);

/// cfg.train_anon / cfg.eval_anon are replaced by the ProtocolSpec pair. Foreign
/// manifests are only read by the cross-database kind: their real documents
/// become hq_print attacks scored against the home evaluation bona fide pool.
ProtocolResult run_protocol(const ProtocolSpec& spec, const Manifest& home, const std::vector<Manifest>& foreign,
                            const PipelineConfig& cfg);

// Class-weighting comparison ------------------------------------------------

struct WeightingRun {
    std::uint64_t seed = 0;
    ClassWeighting weighting = ClassWeighting::none;
    double minority_recall = 0.0;
    double accuracy = 0.0;
};

/// Trains the head on separable Gaussian clusters where the composite class
/// is a `minority_share` minority lying next to the real class, once per
/// (seed, weighting); recall is measured on a balanced held-out set.
std::vector<WeightingRun> run_weighting_benchmark(const PipelineConfig& cfg, std::size_t seeds = 5,
                                                  double minority_share = 0.03);

}  // namespace patchpad
