#include "patchpad/fusion.hpp"

#include "patchpad/error.hpp"
#include "patchpad/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace patchpad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

AttendMask inverted(const AttendMask& attend) {
    AttendMask out(attend.size());
    for (std::size_t i = 0; i < attend.size(); ++i) out[i] = attend[i] ? 0 : 1;
    return out;
}

void check_mask(const AttendMask& attend, std::size_t n, const char* where) {
    if (attend.size() != n) {
        throw invalid_argument(std::string(where) + ": mask of length " + std::to_string(attend.size()) + " for " +
                               std::to_string(n) + " rows");
    }
    if (std::none_of(attend.begin(), attend.end(), [](auto v) { return v != 0; })) {
        throw invalid_argument(std::string(where) + ": no attendable position");
    }
}

ad::Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    ad::Tensor t = ad::Tensor::zeros(fan_in, fan_out);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.data()) v = rng.uniform(-a, a);
    return t;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

ad::Tensor select_rows(const ad::Tensor& z, const std::vector<std::size_t>& rows) {
    ad::Tensor out = ad::Tensor::zeros(rows.size(), z.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(&z.data()[rows[i] * z.cols()], z.cols(), &out.data()[i * z.cols()]);
    return out;
}

}  // namespace

ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const AttendMask& attend) {
    const std::size_t n = k.value().rows();
    check_mask(attend, n, "attention");
    if (q.value().cols() != k.value().cols()) {
        throw invalid_argument("attention: query " + q.value().shape_str() + " vs key " + k.value().shape_str());
    }
    if (v.value().rows() != n) {
        throw invalid_argument("attention: key " + k.value().shape_str() + " vs value " + v.value().shape_str());
    }
    const double dk = static_cast<double>(q.value().cols());
    ad::Var logits = ad::scale(ad::matmul(q, ad::transpose(k)), 1.0 / std::sqrt(dk));
    if (std::any_of(attend.begin(), attend.end(), [](auto a) { return a == 0; })) {
        logits = ad::masked_fill(logits, inverted(attend), kNegInf);
    }
    return ad::matmul(ad::row_softmax(logits), v);
}

MhsaBlock::MhsaBlock(std::size_t d, std::size_t h, const std::string& prefix, Rng& rng) : heads(h) {
    if (h == 0 || d % h != 0) {
        throw invalid_argument("model dimension " + std::to_string(d) + " is not divisible by " + std::to_string(h) + " heads");
    }
    const std::size_t dh = d / h;
    for (std::size_t i = 0; i < h; ++i) {
        const std::string s = std::to_string(i);
        wq.emplace_back(prefix + ".wq" + s, xavier(d, dh, rng));
        wk.emplace_back(prefix + ".wk" + s, xavier(d, dh, rng));
        wv.emplace_back(prefix + ".wv" + s, xavier(d, dh, rng));
    }
    wo = ad::Parameter(prefix + ".wo", xavier(d, d, rng));
    ln_gamma = ad::Parameter(prefix + ".ln_gamma", ad::Tensor({1, d}, 1.0));
    ln_beta = ad::Parameter(prefix + ".ln_beta", ad::Tensor::zeros(1, d));
}

std::vector<ad::Parameter*> MhsaBlock::parameters() {
    std::vector<ad::Parameter*> out;
    for (std::size_t i = 0; i < heads; ++i) {
        out.push_back(&wq[i]);
        out.push_back(&wk[i]);
        out.push_back(&wv[i]);
    }
    out.push_back(&wo);
    out.push_back(&ln_gamma);
    out.push_back(&ln_beta);
    return out;
}

ad::Var mhsa(ad::Tape& tape, ad::Var x, MhsaBlock& block, const AttendMask& attend) {
    if (x.value().cols() != block.dim()) {
        throw invalid_argument("mhsa: input " + x.value().shape_str() + " for model dimension " + std::to_string(block.dim()));
    }
    std::vector<ad::Var> heads;
    heads.reserve(block.heads);
    for (std::size_t i = 0; i < block.heads; ++i) {
        heads.push_back(attention(ad::matmul(x, tape.param(block.wq[i])), ad::matmul(x, tape.param(block.wk[i])),
                                  ad::matmul(x, tape.param(block.wv[i])), attend));
    }
    ad::Var cat = heads.size() == 1 ? heads[0] : ad::concat_cols(heads);
    return ad::matmul(cat, tape.param(block.wo));
}

ad::Var block_forward(ad::Tape& tape, ad::Var z, MhsaBlock& block, const AttendMask& attend, bool pre_norm) {
    check_mask(attend, z.value().rows(), "block_forward");
    ad::Var gamma = tape.param(block.ln_gamma), beta = tape.param(block.ln_beta);
    if (pre_norm) {
        return ad::add(z, ad::mask_rows(mhsa(tape, ad::layer_norm(z, gamma, beta), block, attend), attend));
    }
    ad::Var mixed = ad::layer_norm(ad::add(z, ad::mask_rows(mhsa(tape, z, block, attend), attend)), gamma, beta);
    return ad::add(ad::mask_rows(mixed, attend), ad::mask_rows(z, inverted(attend)));
}

ad::Var attn_pool_weights(ad::Var z, ad::Var q, const AttendMask& attend) {
    check_mask(attend, z.value().rows(), "attn_pool");
    if (q.value().rows() != 1 || q.value().cols() != z.value().cols()) {
        throw invalid_argument("attn_pool: query " + q.value().shape_str() + " for sequence " + z.value().shape_str());
    }
    const double d = static_cast<double>(z.value().cols());
    ad::Var logits = ad::scale(ad::matmul(q, ad::transpose(z)), 1.0 / std::sqrt(d));
    if (std::any_of(attend.begin(), attend.end(), [](auto a) { return a == 0; })) {
        logits = ad::masked_fill(logits, inverted(attend), kNegInf);
    }
    return ad::row_softmax(logits);
}

ad::Var attn_pool(ad::Var z, ad::Var q, const AttendMask& attend) { return ad::matmul(attn_pool_weights(z, q, attend), z); }

ad::Var score(ad::Var z_o, ad::Var w, ad::Var b) { return ad::sigmoid(ad::add(ad::matmul(z_o, ad::transpose(w)), b)); }

double weighted_bce(double s, int is_attack, const BceWeights& w) {
    const double c = std::clamp(s, kBceClamp, 1.0 - kBceClamp);
    return is_attack ? -w.attack * std::log(c) : -w.real * std::log(1.0 - c);
}

ad::Var weighted_bce(ad::Var s, int is_attack, const BceWeights& w) {
    const ad::Tensor& S = s.value();
    if (S.size() != 1) throw invalid_argument("weighted_bce expects a 1x1 score, got " + S.shape_str());
    const double v = S[0];
    const double c = std::clamp(v, kBceClamp, 1.0 - kBceClamp);
    const bool inside = v == c;
    const double d = !inside ? 0.0 : is_attack ? -w.attack / c : w.real / (1.0 - c);
    return s.tape->record("weighted_bce", ad::Tensor::scalar(weighted_bce(v, is_attack, w)), {s.id},
                          [is = s.id, d](ad::Tape& t, int, const ad::Tensor& g) {
                              if (ad::Tensor* gs = t.grad_sink(is)) (*gs)[0] += g[0] * d;
                          });
}

// ---------------------------------------------------------------------------

FusionModel::FusionModel(std::size_t d, std::uint64_t seed, bool pre, std::size_t heads1, std::size_t heads2)
    : pre_norm(pre) {
    Rng rng(seed);
    block1 = MhsaBlock(d, heads1, "fusion.block1", rng);
    block2 = MhsaBlock(d, heads2, "fusion.block2", rng);
    ad::Tensor q = ad::Tensor::zeros(1, d);
    for (double& v : q.data()) v = rng.normal() / std::sqrt(static_cast<double>(d));
    pool_query = ad::Parameter("fusion.pool_query", std::move(q));
    score_w = ad::Parameter("fusion.score_w", xavier(1, d, rng));
    score_b = ad::Parameter("fusion.score_b", ad::Tensor::zeros(1, 1));
}

ad::Var FusionModel::forward(ad::Tape& tape, ad::Var z, const AttendMask& attend) {
    ad::Var h = block_forward(tape, z, block1, attend, pre_norm);
    h = block_forward(tape, h, block2, attend, pre_norm);
    return score(attn_pool(h, tape.param(pool_query), attend), tape.param(score_w), tape.param(score_b));
}

double FusionModel::score_document(const ad::Tensor& z, const AttendMask& attend) const {
    FusionModel m = *this;
    ad::Tape tape;
    const AttendMask mask = attend.empty() ? AttendMask(z.rows(), 1) : attend;
    return m.forward(tape, tape.constant(z), mask).value()[0];
}

std::vector<ad::Parameter*> FusionModel::parameters() {
    std::vector<ad::Parameter*> out = block1.parameters();
    for (auto* p : block2.parameters()) out.push_back(p);
    out.push_back(&pool_query);
    out.push_back(&score_w);
    out.push_back(&score_b);
    return out;
}

void FusionModel::save(Checkpoint& ckpt) const {
    FusionModel copy = *this;
    for (auto* p : copy.parameters()) ckpt.put(*p);
    ckpt.meta["fusion.heads1"] = std::to_string(block1.heads);
    ckpt.meta["fusion.heads2"] = std::to_string(block2.heads);
    ckpt.meta["fusion.pre_norm"] = pre_norm ? "1" : "0";
}

FusionModel FusionModel::load(const Checkpoint& ckpt) {
    const std::size_t d = ckpt.tensor("fusion.pool_query").cols();
    FusionModel m(d, 0, ckpt.meta_at("fusion.pre_norm") == "1", std::stoul(ckpt.meta_at("fusion.heads1")),
                  std::stoul(ckpt.meta_at("fusion.heads2")));
    for (auto* p : m.parameters()) ckpt.restore(*p);
    return m;
}

std::pair<ad::Tensor, AttendMask> pad_sequence(const ad::Tensor& z, std::size_t length) {
    if (z.rows() > length) {
        throw invalid_argument("sequence of " + std::to_string(z.rows()) + " rows exceeds length " + std::to_string(length));
    }
    ad::Tensor out = ad::Tensor::zeros(length, z.cols());
    std::copy(z.data().begin(), z.data().end(), out.data().begin());
    AttendMask mask(length, 0);
    std::fill_n(mask.begin(), z.rows(), 1);
    return {std::move(out), std::move(mask)};
}

std::vector<std::size_t> subsample_rows(std::size_t n, std::size_t context, Rng& rng) {
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    if (n <= context) return rows;
    // Partial Fisher-Yates: the first `context` slots are a uniform subset.
    for (std::size_t i = 0; i < context; ++i) std::swap(rows[i], rows[i + rng.below(n - i)]);
    rows.resize(context);
    std::sort(rows.begin(), rows.end());
    return rows;
}

// ---------------------------------------------------------------------------

namespace {

ad::Var doc_score(ad::Tape& tape, FusionModel& model, MarginHead* head, const FusionDoc& doc, const FusionTrainConfig& cfg) {
    ad::Var z = tape.constant(doc.z);
    if (head) z = head->project(tape, z);
    if (cfg.pad_to_context) {
        // Padding is applied after projection so padded rows stay exactly zero.
        auto [padded, mask] = pad_sequence(z.value(), cfg.context);
        if (head) {
            const std::size_t n = doc.z.rows();
            ad::Tensor sel = ad::Tensor::zeros(cfg.context, n);
            for (std::size_t i = 0; i < n; ++i) sel(i, i) = 1.0;
            z = ad::matmul(tape.constant(std::move(sel)), z);
        } else {
            z = tape.constant(std::move(padded));
        }
        return model.forward(tape, z, mask);
    }
    return model.forward(tape, z, AttendMask(doc.z.rows(), 1));
}

void truncate_docs(std::vector<FusionDoc>& docs, std::size_t context, Rng& rng) {
    for (auto& d : docs) {
        if (d.z.rows() == 0) throw invalid_argument("document '" + d.doc_id + "' has no patch embeddings");
        if (d.z.rows() > context) d.z = select_rows(d.z, subsample_rows(d.z.rows(), context, rng));
    }
}

double mean_loss(FusionModel& model, MarginHead* head, const std::vector<FusionDoc>& docs, const FusionTrainConfig& cfg) {
    double total = 0.0;
    for (const auto& d : docs) {
        ad::Tape tape;
        total += weighted_bce(doc_score(tape, model, head, d, cfg).value()[0], d.is_attack, cfg.bce);
    }
    return total / static_cast<double>(docs.size());
}

}  // namespace

FusionTrainResult train_fusion(std::vector<FusionDoc> train, std::vector<FusionDoc> val, const FusionTrainConfig& cfg,
                               const MarginHead* joint_head) {
    if (train.empty()) throw invalid_argument("empty fusion training split");
    if (cfg.batch_size == 0 || cfg.epochs == 0) throw invalid_argument("batch size and epochs must be positive");
    Rng rng(cfg.seed);
    truncate_docs(train, cfg.context, rng);
    truncate_docs(val, cfg.context, rng);

    const std::size_t d = joint_head ? joint_head->embed_dim() : train[0].z.cols();
    FusionModel model(d, rng.fork(), cfg.pre_norm);
    std::optional<MarginHead> head;
    if (joint_head) head = *joint_head;
    MarginHead* hp = head ? &*head : nullptr;

    std::vector<ad::Parameter*> params = model.parameters();
    if (hp)
        for (auto* p : hp->parameters()) params.push_back(p);
    Adam adam(params, cfg.adam);
    const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const LrSchedule lr = LrSchedule::from_epochs(cfg.lr_initial, cfg.lr_final, cfg.warmup_epochs, cfg.epochs, steps_per_epoch);

    FusionTrainResult res;
    res.model = model;
    res.head = head;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < train.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(train.size(), b + cfg.batch_size);
            ad::Tape tape;
            std::optional<ad::Var> total;
            for (std::size_t i = b; i < e; ++i) {
                const FusionDoc& doc = train[order[i]];
                ad::Var l = weighted_bce(doc_score(tape, model, hp, doc, cfg), doc.is_attack, cfg.bce);
                total = total ? ad::add(*total, l) : l;
            }
            ad::Var loss = ad::scale(*total, 1.0 / static_cast<double>(e - b));
            tape.backward(loss);
            adam.step(lr.at(++step));
            adam.zero_grad();
            if (hp) hp->renormalize_prototypes();
            epoch_loss += loss.value()[0] * static_cast<double>(e - b);
        }
        epoch_loss /= static_cast<double>(train.size());
        if (!std::isfinite(epoch_loss)) throw numeric_error("non-finite fusion loss at epoch " + std::to_string(epoch));
        const double val_loss = val.empty() ? epoch_loss : mean_loss(model, hp, val, cfg);
        res.log.push_back({epoch, epoch_loss, val_loss, lr.at(step)});
        if (val_loss < best) {
            best = val_loss;
            res.model = model;
            res.head = head;
            res.best_epoch = epoch;
        }
    }
    return res;
}

double fusion_loss(const FusionModel& model_in, const std::vector<FusionDoc>& docs, const BceWeights& w,
                   const MarginHead* joint_head) {
    if (docs.empty()) throw invalid_argument("fusion loss over zero documents");
    FusionModel model = model_in;
    std::optional<MarginHead> head;
    if (joint_head) head = *joint_head;
    FusionTrainConfig cfg;
    cfg.bce = w;
    cfg.context = std::numeric_limits<std::size_t>::max();
    return mean_loss(model, head ? &*head : nullptr, docs, cfg);
}

std::string fusion_log_json(const std::vector<FusionEpochLog>& log) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : log) {
        arr.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"lr", e.lr}});
    }
    return arr.dump(2);
}

std::vector<double> score_documents(const FusionModel& model, const std::vector<FusionDoc>& docs, std::size_t context,
                                    std::uint64_t seed) {
    for (const auto& d : docs)
        if (d.z.rows() == 0) throw invalid_argument("document '" + d.doc_id + "' has no patch embeddings");
    std::vector<double> out(docs.size());
    const long n = static_cast<long>(docs.size());
#pragma omp parallel
    {
        FusionModel local = model;
#pragma omp for schedule(dynamic, 1)
        for (long i = 0; i < n; ++i) {
            const FusionDoc& d = docs[i];
            ad::Tape tape;
            ad::Tensor z = d.z;
            if (z.rows() > context) {
                Rng rng(seed ^ fnv1a(d.doc_id));
                z = select_rows(z, subsample_rows(z.rows(), context, rng));
            }
            out[i] = local.forward(tape, tape.constant(std::move(z)), AttendMask(std::min(d.z.rows(), context), 1)).value()[0];
        }
    }
    return out;
}

void write_scores(const std::vector<ScoreRecord>& scores, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write scores to " + path.string());
    for (const auto& s : scores) {
        nlohmann::json j{{"doc_id", s.doc_id}, {"label", s.label}, {"attack_type", s.attack_type}, {"score", s.score}};
        out << j.dump() << '\n';
    }
    if (!out) throw io_error("failed writing " + path.string());
}

std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open scores file " + path.string());
    std::vector<ScoreRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("doc_id").get<std::string>(), j.at("label").get<std::string>(),
                           j.at("attack_type").get<std::string>(), j.at("score").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!std::isfinite(out.back().score)) {
            throw Error(ErrorKind::format, path.string() + ":" + std::to_string(lineno) + ": non-finite score");
        }
    }
    return out;
}

}  // namespace patchpad
