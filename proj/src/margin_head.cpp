#include "patchpad/margin_head.hpp"

#include "patchpad/error.hpp"
#include "patchpad/kernels.hpp"
#include "patchpad/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace patchpad {

MarginLoss parse_margin_loss(std::string_view s) {
    if (s == "cosface") return MarginLoss::cosface;
    if (s == "arcface") return MarginLoss::arcface;
    if (s == "adaface") return MarginLoss::adaface;
    throw invalid_argument("unknown loss '" + std::string(s) + "' (cosface|arcface|adaface)");
}

ClassWeighting parse_class_weighting(std::string_view s) {
    if (s == "none") return ClassWeighting::none;
    if (s == "static") return ClassWeighting::static_weights;
    if (s == "dynamic") return ClassWeighting::dynamic;
    throw invalid_argument("unknown class weighting '" + std::string(s) + "' (none|static|dynamic)");
}

std::string_view to_string(MarginLoss v) {
    switch (v) {
        case MarginLoss::cosface: return "cosface";
        case MarginLoss::arcface: return "arcface";
        default: return "adaface";
    }
}

std::string_view to_string(ClassWeighting v) {
    switch (v) {
        case ClassWeighting::none: return "none";
        case ClassWeighting::static_weights: return "static";
        default: return "dynamic";
    }
}

void LossConfig::validate() const {
    if (!(margin > 0.0 && margin < 1.0) && margin != 0.0) throw invalid_argument("margin must lie in (0, 1)");
    if (!(scale > 0.0)) throw invalid_argument("scale must be positive");
}

void NormStats::update(std::span<const double> norms) {
    if (norms.empty()) return;
    const double n = static_cast<double>(norms.size());
    double mu = 0.0;
    for (double v : norms) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : norms) var += (v - mu) * (v - mu);
    const double sd = norms.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
    if (!initialized) {
        mean = mu;
        stddev = sd;
        initialized = true;
        return;
    }
    mean = momentum * mu + (1.0 - momentum) * mean;
    stddev = momentum * sd + (1.0 - momentum) * stddev;
}

double NormStats::normalized(double norm) const {
    const double v = concentration * (norm - mean) / (stddev + 1e-3);
    return std::clamp(v, -1.0, 1.0);
}

namespace {

double sin_of(double c) { return std::sqrt(std::max(0.0, 1.0 - c * c)); }

// Floor on sin(theta) inside derivatives of the angular forms.
constexpr double kMinSin = 1e-12;

}  // namespace

double margin_target(double cos_theta, const LossConfig& cfg, double zhat) {
    const double c = std::clamp(cos_theta, -1.0, 1.0);
    const double s = cfg.scale, m = cfg.margin;
    switch (cfg.variant) {
        case MarginLoss::cosface:
            return cfg.cosface_angular ? s * (c * std::cos(m) + sin_of(c) * std::sin(m)) : s * (c - m);
        case MarginLoss::arcface:
            // cos(theta + m) expanded to stay away from acos near +-1.
            return s * (c * std::cos(m) - sin_of(c) * std::sin(m));
        case MarginLoss::adaface: {
            const double shift = m * zhat;  // angle becomes theta - m*zhat
            const double cos_shifted = c * std::cos(shift) + sin_of(c) * std::sin(shift);
            const double add = m * zhat + m;
            return cfg.adaface_unscaled_add ? s * cos_shifted - add : s * (cos_shifted - add);
        }
    }
    return 0.0;
}

double margin_target_derivative(double cos_theta, const LossConfig& cfg, double zhat) {
    const double c = std::clamp(cos_theta, -1.0, 1.0);
    const double s = cfg.scale, m = cfg.margin;
    const double ratio = c / std::max(sin_of(c), kMinSin);  // -d sin(theta) / d cos(theta)
    switch (cfg.variant) {
        case MarginLoss::cosface:
            return cfg.cosface_angular ? s * (std::cos(m) - ratio * std::sin(m)) : s;
        case MarginLoss::arcface:
            return s * (std::cos(m) + ratio * std::sin(m));
        case MarginLoss::adaface: {
            const double shift = m * zhat;
            return s * (std::cos(shift) - ratio * std::sin(shift));
        }
    }
    return 0.0;
}

std::vector<double> margin_logits(std::span<const double> cos_theta, int label, const LossConfig& cfg, double zhat) {
    if (label < 0 || static_cast<std::size_t>(label) >= cos_theta.size()) {
        throw invalid_argument("label " + std::to_string(label) + " outside [0, " + std::to_string(cos_theta.size()) + ")");
    }
    if (cfg.variant == MarginLoss::adaface && !(zhat >= -1.0 && zhat <= 1.0)) {
        throw invalid_argument("normalized embedding norm must lie in [-1, 1]");
    }
    std::vector<double> f(cos_theta.size());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = cfg.scale * cos_theta[j];
    f[label] = margin_target(cos_theta[label], cfg, zhat);
    return f;
}

double softmax_margin_loss(std::span<const double> logits, int label) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    return std::max(0.0, mx + std::log(z) - logits[label]);
}

std::vector<double> cosine_alignment(std::span<const double> z, const ad::Tensor& prototypes) {
    if (z.size() != prototypes.cols()) {
        throw invalid_argument("embedding of size " + std::to_string(z.size()) + " vs prototypes " + prototypes.shape_str());
    }
    double norm = 0.0;
    for (double v : z) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw numeric_error("cosine alignment of a zero-norm embedding");
    std::vector<double> out(prototypes.rows());
    for (std::size_t j = 0; j < out.size(); ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) dot += z[k] * prototypes(j, k);
        out[j] = dot / norm;
    }
    return out;
}

std::vector<double> initial_class_weights(std::span<const std::size_t> counts, bool literal) {
    if (counts.empty()) throw invalid_argument("no classes given");
    double total = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] == 0) throw invalid_argument("class " + std::to_string(i) + " has zero samples");
        total += static_cast<double>(counts[i]);
    }
    const double C = static_cast<double>(counts.size());
    std::vector<double> inv(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) inv[i] = total / static_cast<double>(counts[i]);
    std::vector<double> w(counts.size());
    if (literal) {
        double factor = 0.0;
        for (double v : inv) factor += C / v;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = inv[i] * factor;
    } else {
        const double sum = std::accumulate(inv.begin(), inv.end(), 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = C * inv[i] / sum;
    }
    return w;
}

double ClassWeightSchedule::lambda(std::size_t t) const {
    if (t > total_epochs) throw invalid_argument("epoch " + std::to_string(t) + " beyond schedule length " + std::to_string(total_epochs));
    return 1.0 - static_cast<double>(t) / static_cast<double>(total_epochs);
}

std::vector<double> ClassWeightSchedule::at(std::size_t t) const {
    const double lam = lambda(t);
    std::vector<double> w(w0.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = (1.0 - lam) + lam * w0[i];
    return w;
}

std::vector<double> update_class_weights(const ClassWeightSchedule& schedule, std::size_t t) { return schedule.at(t); }

ad::Var margin_logits(ad::Var cos_theta, const std::vector<int>& labels, const LossConfig& cfg,
                      const std::vector<double>& zhat) {
    const ad::Tensor& C = cos_theta.value();
    const std::size_t r = C.rows(), c = C.cols();
    if (labels.size() != r) throw invalid_argument("margin_logits: label count does not match batch");
    const bool ada = cfg.variant == MarginLoss::adaface;
    if (ada && zhat.size() != r) throw invalid_argument("margin_logits: AdaFace needs one normalized norm per row");
    ad::Tensor out = ad::Tensor::zeros(r, c);
    std::vector<double> dtarget(r);
    for (std::size_t i = 0; i < r; ++i) {
        const double zh = ada ? zhat[i] : 0.0;
        const auto row = margin_logits(std::span<const double>(&C.data()[i * c], c), labels[i], cfg, zh);
        std::copy(row.begin(), row.end(), &out.data()[i * c]);
        dtarget[i] = margin_target_derivative(C(i, labels[i]), cfg, zh);
    }
    return cos_theta.tape->record(
        "margin_logits", std::move(out), {cos_theta.id},
        [ic = cos_theta.id, labels, dtarget = std::move(dtarget), s = cfg.scale, r, c](ad::Tape& t, int, const ad::Tensor& g) {
            if (ad::Tensor* gc = t.grad_sink(ic)) {
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                        (*gc)(i, j) += g(i, j) * (static_cast<int>(j) == labels[i] ? dtarget[i] : s);
            }
        });
}

ad::Var weighted_batch_loss(ad::Var per_sample_loss, const std::vector<int>& labels, std::span<const double> weights) {
    ad::Tensor w = ad::Tensor::zeros(labels.size(), 1);
    for (std::size_t i = 0; i < labels.size(); ++i) w[i] = weights[labels[i]];
    return ad::mean(ad::mul(per_sample_loss, per_sample_loss.tape->constant(std::move(w))));
}

// ---------------------------------------------------------------------------

MarginHead::MarginHead(std::size_t input_dim, std::size_t embed_dim, LossConfig loss_cfg, std::uint64_t seed, bool with_bias)
    : has_bias(with_bias), loss(loss_cfg) {
    loss.validate();
    Rng rng(seed);
    ad::Tensor p = ad::Tensor::zeros(input_dim, embed_dim);
    const double a = std::sqrt(6.0 / static_cast<double>(input_dim + embed_dim));
    for (double& v : p.data()) v = rng.uniform(-a, a);
    projection = ad::Parameter("head.projection", std::move(p));
    bias = ad::Parameter("head.bias", ad::Tensor::zeros(1, embed_dim));
    ad::Tensor w = ad::Tensor::zeros(kNumClasses, embed_dim);
    for (double& v : w.data()) v = rng.normal();
    prototypes = ad::Parameter("head.prototypes", std::move(w));
    renormalize_prototypes();
}

ad::Var MarginHead::project(ad::Tape& tape, ad::Var x) {
    if (x.value().cols() != input_dim()) {
        throw invalid_argument("head input has dimension " + std::to_string(x.value().cols()) + ", expected " +
                               std::to_string(input_dim()));
    }
    ad::Var z = ad::matmul(x, tape.param(projection));
    return has_bias ? ad::add(z, tape.param(bias)) : z;
}

ad::Var MarginHead::cosine(ad::Tape& tape, ad::Var z) {
    return ad::matmul(ad::row_l2_normalize(z), ad::transpose(tape.param(prototypes)));
}

ad::Var MarginHead::per_sample_loss(ad::Tape& tape, ad::Var x, const std::vector<int>& labels,
                                    const std::vector<double>& zhat, std::span<const std::uint8_t> inactive) {
    ad::Var f = margin_logits(cosine(tape, project(tape, x)), labels, loss, zhat);
    if (!inactive.empty() && std::any_of(inactive.begin(), inactive.end(), [](auto v) { return v != 0; })) {
        f = ad::masked_fill(f, std::vector<std::uint8_t>(inactive.begin(), inactive.end()),
                            -std::numeric_limits<double>::infinity());
    }
    return ad::softmax_cross_entropy(f, labels);
}

std::vector<double> MarginHead::embed(std::span<const float> backbone) const {
    if (backbone.size() != input_dim()) throw invalid_argument("backbone embedding dimension mismatch");
    const std::size_t d = embed_dim();
    std::vector<double> z(d, 0.0);
    for (std::size_t k = 0; k < backbone.size(); ++k) {
        const double xv = backbone[k];
        for (std::size_t j = 0; j < d; ++j) z[j] += xv * projection.value(k, j);
    }
    if (has_bias)
        for (std::size_t j = 0; j < d; ++j) z[j] += bias.value[j];
    return z;
}

ad::Tensor MarginHead::embed_rows(const EmbeddingStore& store, std::span<const std::size_t> rows) const {
    const std::size_t D = input_dim(), d = embed_dim();
    if (store.dim() != D) throw invalid_argument("store dimension does not match head input");
    ad::Tensor x = ad::Tensor::zeros(rows.size(), D);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto v = store.values(rows[i]);
        std::copy(v.begin(), v.end(), &x.data()[i * D]);
    }
    ad::Tensor z = ad::Tensor::zeros(rows.size(), d);
    kernels::gemm_nn(rows.size(), d, D, x.data(), projection.value.data(), z.data());
    if (has_bias)
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += bias.value[i % d];
    return z;
}

void MarginHead::renormalize_prototypes() {
    ad::Tensor& w = prototypes.value;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        double n = 0.0;
        for (std::size_t j = 0; j < w.cols(); ++j) n += w(i, j) * w(i, j);
        n = std::sqrt(n);
        if (n == 0.0) throw numeric_error("prototype " + std::to_string(i) + " collapsed to zero");
        for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) /= n;
    }
}

std::vector<ad::Parameter*> MarginHead::parameters() {
    std::vector<ad::Parameter*> out{&projection};
    if (has_bias) out.push_back(&bias);
    out.push_back(&prototypes);
    return out;
}

void MarginHead::save(Checkpoint& ckpt) const {
    ckpt.put(projection);
    ckpt.put(bias);
    ckpt.put(prototypes);
    ckpt.meta["head.loss"] = std::string(to_string(loss.variant));
    ckpt.meta["head.margin"] = std::to_string(loss.margin);
    ckpt.meta["head.scale"] = std::to_string(loss.scale);
    ckpt.meta["head.bias"] = has_bias ? "1" : "0";
    ckpt.meta["head.cosface_angular"] = loss.cosface_angular ? "1" : "0";
    ckpt.meta["head.adaface_unscaled_add"] = loss.adaface_unscaled_add ? "1" : "0";
    ad::Tensor stats(1, 3, {norm_stats.mean, norm_stats.stddev, norm_stats.initialized ? 1.0 : 0.0});
    ckpt.tensors.emplace_back("head.norm_stats", std::move(stats));
}

MarginHead MarginHead::load(const Checkpoint& ckpt) {
    MarginHead h;
    h.projection = ad::Parameter("head.projection", ckpt.tensor("head.projection"));
    h.bias = ad::Parameter("head.bias", ckpt.tensor("head.bias"));
    h.prototypes = ad::Parameter("head.prototypes", ckpt.tensor("head.prototypes"));
    h.has_bias = ckpt.meta_at("head.bias") == "1";
    h.loss.variant = parse_margin_loss(ckpt.meta_at("head.loss"));
    h.loss.margin = std::stod(ckpt.meta_at("head.margin"));
    h.loss.scale = std::stod(ckpt.meta_at("head.scale"));
    h.loss.cosface_angular = ckpt.meta_at("head.cosface_angular") == "1";
    h.loss.adaface_unscaled_add = ckpt.meta_at("head.adaface_unscaled_add") == "1";
    const ad::Tensor& s = ckpt.tensor("head.norm_stats");
    h.norm_stats.mean = s[0];
    h.norm_stats.stddev = s[1];
    h.norm_stats.initialized = s[2] != 0.0;
    if (h.prototypes.value.cols() != h.projection.value.cols() || h.bias.value.cols() != h.projection.value.cols()) {
        throw Error(ErrorKind::format, "inconsistent head tensor shapes in checkpoint");
    }
    return h;
}

// ---------------------------------------------------------------------------

namespace {

struct Batch {
    ad::Tensor x;
    std::vector<int> labels;
};

Batch gather(const EmbeddingStore& store, const std::vector<HeadSample>& samples, std::span<const std::size_t> order,
             std::size_t begin, std::size_t end, Rng* rng) {
    const std::size_t D = store.dim();
    Batch b{ad::Tensor::zeros(end - begin, D), {}};
    for (std::size_t i = begin; i < end; ++i) {
        const HeadSample& s = samples[order[i]];
        const std::size_t row = rng && s.variants.size() > 1 ? s.variants[rng->below(s.variants.size())] : s.variants[0];
        auto v = store.values(row);
        std::copy(v.begin(), v.end(), &b.x.data()[(i - begin) * D]);
        b.labels.push_back(s.label);
    }
    return b;
}

std::vector<double> row_norms(const ad::Tensor& z) {
    std::vector<double> n(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) s += z(i, j) * z(i, j);
        // Same clip range as the reference AdaFace implementation.
        n[i] = std::clamp(std::sqrt(s), 1e-3, 100.0);
    }
    return n;
}

std::vector<double> zhat_of(const NormStats& stats, const std::vector<double>& norms) {
    std::vector<double> out(norms.size());
    for (std::size_t i = 0; i < norms.size(); ++i) out[i] = stats.normalized(norms[i]);
    return out;
}

double batch_loss_value(MarginHead& head, const Batch& b, std::span<const std::uint8_t> inactive) {
    ad::Tape tape;
    ad::Var x = tape.constant(b.x);
    std::vector<double> zhat;
    if (head.loss.variant == MarginLoss::adaface) {
        zhat = zhat_of(head.norm_stats, row_norms(head.project(tape, x).value()));
    }
    ad::Var per = head.per_sample_loss(tape, x, b.labels, zhat, inactive);
    double s = 0.0;
    for (double v : per.value().data()) s += v;
    return s;
}

}  // namespace

double evaluate_head_loss(const MarginHead& head_in, const EmbeddingStore& store, const std::vector<HeadSample>& samples,
                          std::span<const std::uint8_t> inactive) {
    if (samples.empty()) return 0.0;
    MarginHead head = head_in;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    constexpr std::size_t kChunk = 1024;
    for (std::size_t b = 0; b < samples.size(); b += kChunk) {
        total += batch_loss_value(head, gather(store, samples, order, b, std::min(samples.size(), b + kChunk), nullptr), inactive);
    }
    return total / static_cast<double>(samples.size());
}

std::vector<int> predict_classes(const MarginHead& head, const EmbeddingStore& store, const std::vector<HeadSample>& samples) {
    std::vector<std::size_t> rows;
    for (const auto& s : samples) rows.push_back(s.variants[0]);
    const ad::Tensor z = head.embed_rows(store, rows);
    std::vector<int> out(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto cosv = cosine_alignment(std::span<const double>(&z.data()[i * z.cols()], z.cols()), head.prototypes.value);
        out[i] = static_cast<int>(std::max_element(cosv.begin(), cosv.end()) - cosv.begin());
    }
    return out;
}

HeadTrainResult train_head(const EmbeddingStore& store, const std::vector<HeadSample>& train,
                           const std::vector<HeadSample>& val, const HeadTrainConfig& cfg) {
    if (train.empty()) throw invalid_argument("empty training split");
    if (cfg.batch_size == 0 || cfg.max_epochs == 0) throw invalid_argument("batch size and epochs must be positive");
    std::array<std::size_t, kNumClasses> counts{};
    for (const auto& s : train) {
        if (s.label < 0 || s.label >= kNumClasses) throw invalid_argument("sample label out of range");
        if (s.variants.empty()) throw invalid_argument("sample without embedding");
        if (cfg.inactive[s.label]) throw invalid_argument("training sample of an excluded class");
        ++counts[s.label];
    }
    std::vector<std::size_t> active_counts;
    for (int c = 0; c < kNumClasses; ++c) {
        if (cfg.inactive[c]) continue;
        if (counts[c] == 0) throw invalid_argument("class '" + std::string(to_string(static_cast<Label>(c))) + "' has no training samples");
        active_counts.push_back(counts[c]);
    }

    // Weights are computed over the active classes; excluded classes keep 1.
    std::vector<double> w0(kNumClasses, 1.0);
    if (cfg.weighting != ClassWeighting::none) {
        const auto wa = initial_class_weights(active_counts, cfg.literal_initial_weights);
        for (int c = 0, k = 0; c < kNumClasses; ++c)
            if (!cfg.inactive[c]) w0[c] = wa[k++];
    }
    const ClassWeightSchedule schedule{w0, cfg.max_epochs};

    Rng rng(cfg.seed);
    HeadTrainResult res;
    MarginHead head(store.dim(), cfg.embed_dim, cfg.loss, rng.fork(), cfg.with_bias);
    Adam adam(head.parameters(), cfg.adam);
    const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const LrSchedule lr = LrSchedule::from_epochs(cfg.lr_initial, cfg.lr_final, cfg.warmup_epochs, cfg.max_epochs, steps_per_epoch);
    const std::span<const std::uint8_t> inactive(cfg.inactive);

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::size_t stale = 0;
    std::size_t step = 0;
    res.head = head;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::vector<double> w;
        switch (cfg.weighting) {
            case ClassWeighting::none: w.assign(kNumClasses, 1.0); break;
            case ClassWeighting::static_weights: w = w0; break;
            case ClassWeighting::dynamic: w = update_class_weights(schedule, epoch); break;
        }
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < train.size(); b += cfg.batch_size) {
            const Batch batch = gather(store, train, order, b, std::min(train.size(), b + cfg.batch_size), &rng);
            ad::Tape tape;
            ad::Var x = tape.constant(batch.x);
            std::vector<double> zhat;
            if (head.loss.variant == MarginLoss::adaface) {
                // Norms are treated as constants in the graph.
                const auto norms = row_norms(head.project(tape, x).value());
                head.norm_stats.update(norms);
                zhat = zhat_of(head.norm_stats, norms);
            }
            ad::Var per = head.per_sample_loss(tape, x, batch.labels, zhat, inactive);
            ad::Var loss = weighted_batch_loss(per, batch.labels, w);
            tape.backward(loss);
            adam.step(lr.at(++step));
            adam.zero_grad();
            head.renormalize_prototypes();
            epoch_loss += loss.value()[0] * static_cast<double>(batch.labels.size());
        }
        epoch_loss /= static_cast<double>(train.size());
        if (!std::isfinite(epoch_loss)) throw numeric_error("non-finite training loss at epoch " + std::to_string(epoch));
        const double val_loss = val.empty() ? epoch_loss : evaluate_head_loss(head, store, val, inactive);
        res.log.push_back({epoch, epoch_loss, val_loss, lr.at(step), schedule.lambda(epoch), w});
        if (val_loss < best) {
            best = val_loss;
            stale = 0;
            res.head = head;
            res.best_epoch = epoch;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    return res;
}

std::string head_log_json(const std::vector<HeadEpochLog>& log) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : log) {
        arr.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"val_loss", e.val_loss},
                       {"lr", e.lr},
                       {"lambda_t", e.lambda},
                       {"w_t", e.weights}});
    }
    return arr.dump(2);
}

}  // namespace patchpad
