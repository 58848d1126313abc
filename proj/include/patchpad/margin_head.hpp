#pragma once

// Trainable patch-embedding head: a linear projection of backbone
// embeddings, cosine alignment against class prototypes, margin softmax
// losses and per-class loss weights that anneal towards one.

#include "patchpad/autodiff.hpp"
#include "patchpad/checkpoint.hpp"
#include "patchpad/document.hpp"
#include "patchpad/embedding.hpp"
#include "patchpad/optim.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace patchpad {

enum class MarginLoss { cosface, arcface, adaface };
enum class ClassWeighting { none, static_weights, dynamic };

MarginLoss parse_margin_loss(std::string_view s);
ClassWeighting parse_class_weighting(std::string_view s);
std::string_view to_string(MarginLoss v);
std::string_view to_string(ClassWeighting v);

struct LossConfig {
    MarginLoss variant = MarginLoss::adaface;
    double margin = 0.4;
    double scale = 64.0;
    // CosFace target: false -> s*(cos(theta) - m); true -> s*cos(theta - m).
    bool cosface_angular = false;
    // AdaFace additive term: false -> s*(cos(.) - g_add); true -> s*cos(.) - g_add.
    bool adaface_unscaled_add = false;

    void validate() const;
};

/// Running statistics of embedding norms for the adaptive margin.
struct NormStats {
    double mean = 0.0;
    double stddev = 1.0;
    double momentum = 0.01;
    double concentration = 0.33;
    bool initialized = false;

    /// Folds a batch of raw norms into the running statistics (the first
    /// batch initializes them directly).
    void update(std::span<const double> norms);
    /// concentration * (norm - mean) / (stddev + 1e-3), clipped to [-1, 1].
    double normalized(double norm) const;
};

/// Target-class logit for one sample (non-target entries are scale * cos).
/// `zhat` is the normalized norm and only read by AdaFace.
double margin_target(double cos_theta, const LossConfig& cfg, double zhat = 0.0);
/// d margin_target / d cos_theta.
double margin_target_derivative(double cos_theta, const LossConfig& cfg, double zhat = 0.0);

/// Full margin-adjusted logit vector; throws on a bad label or a zhat outside
/// [-1, 1].
std::vector<double> margin_logits(std::span<const double> cos_theta, int label, const LossConfig& cfg,
                                  double zhat = 0.0);

/// -log softmax(f)[label] with max subtraction.
double softmax_margin_loss(std::span<const double> logits, int label);

/// Entry j of normalize(z) . W_j^T; throws numeric_error on a zero z.
std::vector<double> cosine_alignment(std::span<const double> z, const ad::Tensor& prototypes);

/// Inverse-frequency weights. Default: rescaled so they sum to C (mean 1).
/// literal = true evaluates w_i = (N/N_i) * sum_j C/(N/N_j) as written,
/// which reduces to C*N/N_i.
std::vector<double> initial_class_weights(std::span<const std::size_t> counts, bool literal = false);

/// w_t = (1 - lambda_t) * 1 + lambda_t * w0 with lambda_t = 1 - t/e.
struct ClassWeightSchedule {
    std::vector<double> w0;
    std::size_t total_epochs = 70;

    double lambda(std::size_t t) const;
    std::vector<double> at(std::size_t t) const;
};

std::vector<double> update_class_weights(const ClassWeightSchedule& schedule, std::size_t t);

inline double weighted_loss(double loss, int label, std::span<const double> weights) { return weights[label] * loss; }

// Graph ops ------------------------------------------------------------------

/// Margin logits over a batch of cosines (rows x C).
ad::Var margin_logits(ad::Var cos_theta, const std::vector<int>& labels, const LossConfig& cfg,
                      const std::vector<double>& zhat);

/// Mean over the batch of weights[label_i] * loss_i.
ad::Var weighted_batch_loss(ad::Var per_sample_loss, const std::vector<int>& labels, std::span<const double> weights);

// Head --------------------------------------------------------------------

inline constexpr std::size_t kHeadEmbeddingDim = 128;

class MarginHead {
public:
    MarginHead() = default;
    MarginHead(std::size_t input_dim, std::size_t embed_dim, LossConfig loss, std::uint64_t seed, bool with_bias = true);

    std::size_t input_dim() const { return projection.value.rows(); }
    std::size_t embed_dim() const { return projection.value.cols(); }

    /// x (rows x D) -> z (rows x d)
    ad::Var project(ad::Tape& tape, ad::Var x);
    /// z -> cos(theta) against unit prototypes (rows x C)
    ad::Var cosine(ad::Tape& tape, ad::Var z);
    /// Per-sample margin softmax loss (rows x 1). `zhat` holds one
    /// normalized norm per row (ignored unless AdaFace).
    ad::Var per_sample_loss(ad::Tape& tape, ad::Var x, const std::vector<int>& labels, const std::vector<double>& zhat,
                            std::span<const std::uint8_t> inactive_classes = {});

    /// Inference: z for one backbone embedding.
    std::vector<double> embed(std::span<const float> backbone) const;
    /// Inference for many rows of a store (in parallel).
    ad::Tensor embed_rows(const EmbeddingStore& store, std::span<const std::size_t> rows) const;

    void renormalize_prototypes();
    std::vector<ad::Parameter*> parameters();

    void save(Checkpoint& ckpt) const;
    static MarginHead load(const Checkpoint& ckpt);

    ad::Parameter projection;  // D x d
    ad::Parameter bias;        // 1 x d (unused when has_bias is false)
    ad::Parameter prototypes;  // C x d, unit rows
    bool has_bias = true;
    LossConfig loss;
    NormStats norm_stats;
};

// Training -----------------------------------------------------------------

struct HeadSample {
    std::vector<std::size_t> variants;  // store rows; one is drawn per epoch
    int label = 0;
};

struct HeadTrainConfig {
    LossConfig loss;
    ClassWeighting weighting = ClassWeighting::dynamic;
    bool literal_initial_weights = false;
    std::size_t embed_dim = kHeadEmbeddingDim;
    bool with_bias = true;
    std::size_t max_epochs = 70;
    std::size_t batch_size = 256;
    std::size_t patience = 5;
    double lr_initial = 1.25e-3;
    double lr_final = 1.25e-4;
    std::size_t warmup_epochs = 0;
    AdamConfig adam{0.9, 0.999, 1e-8, 1e-4, true};
    std::uint64_t seed = 0;
    /// Classes excluded from the softmax (e.g. a held-out attack).
    std::array<std::uint8_t, kNumClasses> inactive{};
};

struct HeadEpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
    double lambda = 0.0;
    std::vector<double> weights;
};

struct HeadTrainResult {
    MarginHead head;
    std::vector<HeadEpochLog> log;
    std::size_t best_epoch = 0;
};

HeadTrainResult train_head(const EmbeddingStore& store, const std::vector<HeadSample>& train,
                           const std::vector<HeadSample>& val, const HeadTrainConfig& cfg);

/// Unweighted mean loss of `head` over samples (first variant of each).
double evaluate_head_loss(const MarginHead& head, const EmbeddingStore& store, const std::vector<HeadSample>& samples,
                          std::span<const std::uint8_t> inactive = {});

/// Arg-max prototype per sample (first variant).
std::vector<int> predict_classes(const MarginHead& head, const EmbeddingStore& store,
                                 const std::vector<HeadSample>& samples);

std::string head_log_json(const std::vector<HeadEpochLog>& log);

}  // namespace patchpad
