#pragma once

// Document-level fusion of patch embeddings: two masked multi-head
// self-attention blocks, an attention pool and a sigmoid scorer.

#include "patchpad/autodiff.hpp"
#include "patchpad/checkpoint.hpp"
#include "patchpad/margin_head.hpp"
#include "patchpad/optim.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace patchpad {

inline constexpr std::size_t kContextLength = 384;
inline constexpr std::size_t kFirstBlockHeads = 8;
inline constexpr std::size_t kSecondBlockHeads = 4;

/// Per-row attend flags: 1 = real patch, 0 = padding.
using AttendMask = std::vector<std::uint8_t>;

/// softmax(Q K^T / sqrt(d_k) with -inf on non-attended key columns) V.
ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const AttendMask& attend);

struct MhsaBlock {
    std::size_t heads = 1;
    std::vector<ad::Parameter> wq, wk, wv;  // per head, d x d/h
    ad::Parameter wo;                       // d x d
    ad::Parameter ln_gamma, ln_beta;        // 1 x d

    MhsaBlock() = default;
    MhsaBlock(std::size_t d, std::size_t heads, const std::string& prefix, Rng& rng);

    std::size_t dim() const { return wo.value.rows(); }
    std::vector<ad::Parameter*> parameters();
};

/// concat_h(attention(X Wq_h, X Wk_h, X Wv_h)) Wo
ad::Var mhsa(ad::Tape& tape, ad::Var x, MhsaBlock& block, const AttendMask& attend);

/// Pre-norm: Z + mask_rows(mhsa(LN(Z))). Post-norm: LN(Z + mhsa(Z)) on
/// attended rows. Padded rows pass through unchanged in both forms.
ad::Var block_forward(ad::Tape& tape, ad::Var z, MhsaBlock& block, const AttendMask& attend, bool pre_norm = true);

/// Softmax over attended rows of Z q^T / sqrt(d), then the weighted sum of
/// rows (1 x d). q is 1 x d.
ad::Var attn_pool(ad::Var z, ad::Var q, const AttendMask& attend);

/// Attention weights of attn_pool (1 x n), exposed for tests.
ad::Var attn_pool_weights(ad::Var z, ad::Var q, const AttendMask& attend);

/// sigmoid(z_o w^T + b), 1 x 1.
ad::Var score(ad::Var z_o, ad::Var w, ad::Var b);

struct BceWeights {
    double real = 3.0;
    double attack = 1.0;
};

inline constexpr double kBceClamp = 1e-12;

/// -w_y (y log s + (1 - y) log(1 - s)) with s clamped to [1e-12, 1 - 1e-12];
/// y = 1 for attacks.
double weighted_bce(double s, int is_attack, const BceWeights& w);
/// Graph version for a 1 x 1 score.
ad::Var weighted_bce(ad::Var s, int is_attack, const BceWeights& w);

class FusionModel {
public:
    FusionModel() = default;
    FusionModel(std::size_t d, std::uint64_t seed, bool pre_norm = true, std::size_t heads1 = kFirstBlockHeads,
                std::size_t heads2 = kSecondBlockHeads);

    std::size_t dim() const { return pool_query.value.cols(); }

    /// Score (1 x 1) for one document Z (n x d).
    ad::Var forward(ad::Tape& tape, ad::Var z, const AttendMask& attend);
    /// Convenience: builds a private tape. An empty mask attends to all rows.
    double score_document(const ad::Tensor& z, const AttendMask& attend = {}) const;

    std::vector<ad::Parameter*> parameters();
    void save(Checkpoint& ckpt) const;
    static FusionModel load(const Checkpoint& ckpt);

    MhsaBlock block1, block2;
    ad::Parameter pool_query;  // 1 x d
    ad::Parameter score_w;     // 1 x d
    ad::Parameter score_b;     // 1 x 1
    bool pre_norm = true;
};

/// Zero-padded copy of z with `length` rows plus its attend mask.
std::pair<ad::Tensor, AttendMask> pad_sequence(const ad::Tensor& z, std::size_t length);

/// Row indices to keep: all rows if n <= context, otherwise a seeded uniform
/// subset of `context` rows in ascending order.
std::vector<std::size_t> subsample_rows(std::size_t n, std::size_t context, Rng& rng);

// Training ----------------------------------------------------------------

struct FusionDoc {
    std::string doc_id;
    int is_attack = 0;
    std::string attack_type = "none";
    ad::Tensor z;  // n x d patch embeddings (backbone rows when joint training)
};

struct FusionTrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 4;
    double lr_initial = 1.25e-4;
    double lr_final = 1.25e-5;
    std::size_t warmup_epochs = 1;
    AdamConfig adam{0.9, 0.999, 1e-8, 0.0, true};
    BceWeights bce;
    std::size_t context = kContextLength;
    /// Pad every sequence to `context` rows (results are identical, only slower).
    bool pad_to_context = false;
    bool pre_norm = true;
    std::uint64_t seed = 0;
};

struct FusionEpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct FusionTrainResult {
    FusionModel model;
    std::optional<MarginHead> head;  // set when the head was trained jointly
    std::vector<FusionEpochLog> log;
    std::size_t best_epoch = 0;
};

/// Documents are truncated to cfg.context rows (seeded) once, up front.
/// With `joint_head`, doc.z holds backbone rows and the head projection is
/// trained together with the fusion module.
FusionTrainResult train_fusion(std::vector<FusionDoc> train, std::vector<FusionDoc> val, const FusionTrainConfig& cfg,
                               const MarginHead* joint_head = nullptr);

/// Mean weighted BCE over documents.
double fusion_loss(const FusionModel& model, const std::vector<FusionDoc>& docs, const BceWeights& w,
                   const MarginHead* joint_head = nullptr);

std::string fusion_log_json(const std::vector<FusionEpochLog>& log);

// Scores ------------------------------------------------------------------

struct ScoreRecord {
    std::string doc_id;
    std::string label;
    std::string attack_type;
    double score = 0.0;
};

/// Scores documents in parallel (each thread runs on its own model copy).
std::vector<double> score_documents(const FusionModel& model, const std::vector<FusionDoc>& docs,
                                    std::size_t context = kContextLength, std::uint64_t seed = 0);

void write_scores(const std::vector<ScoreRecord>& scores, const std::filesystem::path& path);
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path);

}  // namespace patchpad
