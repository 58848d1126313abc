#include "patchpad/protocol.hpp"

#include "patchpad/error.hpp"
#include "patchpad/image.hpp"
#include "patchpad/patch_pipeline.hpp"
#include "patchpad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace patchpad {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string aug_id(const std::string& base, std::size_t k) { return base + "#aug" + std::to_string(k); }

std::vector<PatchRecord> load_patches(const Manifest& m, const ManifestRow& row, AnonLevel level,
                                      const PipelineConfig& cfg) {
    if (!row.patch_dir.empty()) return read_patchset(m.resolve(row.patch_dir));
    if (row.image_path.empty()) throw invalid_argument("document '" + row.doc_id + "' names neither image_path nor patch_dir");
    const RgbImage img = read_ppm(m.resolve(row.image_path));
    ExtractionConfig ec = cfg.extraction;
    ec.rng_seed = document_seed(cfg.seed, row.doc_id);
    // Same order as an exported folder read back from disk.
    auto recs = extract_patches(img, row.anonymization(level), ec);
    std::sort(recs.begin(), recs.end(), [](const PatchRecord& a, const PatchRecord& b) { return a.export_name < b.export_name; });
    return recs;
}

std::string dataset_of(const ManifestRow& r) { return r.dataset_name.empty() ? "home" : r.dataset_name; }

}  // namespace

std::uint64_t document_seed(std::uint64_t seed, const std::string& doc_id) { return splitmix(seed ^ fnv1a(doc_id)); }

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> dev_train_val(const Manifest& manifest,
                                                                            const PipelineConfig& cfg) {
    SplitSpec ss = cfg.split;
    ss.seed = cfg.seed;
    return split_train_val(manifest, make_splits(manifest, ss).dev, cfg.val_fraction, splitmix(cfg.seed));
}

void embed_documents(const Manifest& manifest, std::span<const std::size_t> rows, AnonLevel level,
                     const PipelineConfig& cfg, bool augmented, EmbeddingStore& store) {
    if (store.dim() != cfg.embedder.output_dim) throw invalid_argument("store dimension does not match the embedder");
    const StubEmbedder embedder(cfg.embedder);
    for (std::size_t i : rows) {
        const ManifestRow& row = manifest.rows[i];
        const std::vector<PatchRecord> recs = load_patches(manifest, row, level, cfg);
        std::vector<RgbImage> pixels;
        pixels.reserve(recs.size());
        for (const auto& r : recs) pixels.push_back(r.pixels);
        const auto vecs = embedder.embed_batch(pixels);
        for (std::size_t k = 0; k < recs.size(); ++k) store.add(make_patch_id(row.doc_id, recs[k].export_name), vecs[k]);
        if (!augmented || cfg.augment_variants == 0) continue;
        for (std::size_t v = 1; v <= cfg.augment_variants; ++v) {
            Rng rng(splitmix(document_seed(cfg.seed, row.doc_id) + v));
            std::vector<RgbImage> aug;
            aug.reserve(pixels.size());
            for (const auto& p : pixels) aug.push_back(augment(p, cfg.augment, rng));
            const auto avecs = embedder.embed_batch(aug);
            for (std::size_t k = 0; k < recs.size(); ++k)
                store.add(aug_id(make_patch_id(row.doc_id, recs[k].export_name), v), avecs[k]);
        }
    }
}

std::vector<std::size_t> document_rows(const EmbeddingStore& store, const std::string& doc_id) {
    std::vector<std::size_t> out;
    for (std::size_t i : store.indices_of_doc(doc_id))
        if (store.id(i).find('#') == std::string::npos) out.push_back(i);
    return out;
}

std::vector<HeadSample> head_samples(const Manifest& manifest, std::span<const std::size_t> rows,
                                     const EmbeddingStore& store) {
    std::vector<HeadSample> out;
    for (std::size_t i : rows) {
        const ManifestRow& row = manifest.rows[i];
        const int label = static_cast<int>(head_class(row));
        for (std::size_t idx : document_rows(store, row.doc_id)) {
            HeadSample s;
            s.label = label;
            s.variants.push_back(idx);
            for (std::size_t v = 1;; ++v) {
                const auto a = store.find(aug_id(store.id(idx), v));
                if (!a) break;
                s.variants.push_back(*a);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<FusionDoc> fusion_documents(const Manifest& manifest, std::span<const std::size_t> rows,
                                        const EmbeddingStore& store, const MarginHead* head) {
    std::vector<FusionDoc> out;
    out.reserve(rows.size());
    for (std::size_t i : rows) {
        const ManifestRow& row = manifest.rows[i];
        const auto idx = document_rows(store, row.doc_id);
        if (idx.empty()) throw invalid_argument("document '" + row.doc_id + "' has no stored patches");
        FusionDoc d;
        d.doc_id = row.doc_id;
        d.is_attack = row.is_attack() ? 1 : 0;
        d.attack_type = std::string(to_string(row.attack_type));
        if (head) {
            d.z = head->embed_rows(store, idx);
        } else {
            d.z = ad::Tensor::zeros(idx.size(), store.dim());
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const auto v = store.values(idx[r]);
                std::copy(v.begin(), v.end(), &d.z.data()[r * store.dim()]);
            }
        }
        out.push_back(std::move(d));
    }
    return out;
}

TrainedModels train_models(const Manifest& manifest, std::span<const std::size_t> train,
                           std::span<const std::size_t> val, const EmbeddingStore& store, const PipelineConfig& cfg,
                           const std::array<std::uint8_t, kNumClasses>& inactive) {
    Rng rng(cfg.seed);
    HeadTrainConfig hc = cfg.head;
    hc.seed = rng.fork();
    hc.inactive = inactive;
    const HeadTrainResult hr = train_head(store, head_samples(manifest, train, store), head_samples(manifest, val, store), hc);

    FusionTrainConfig fc = cfg.fusion;
    fc.seed = rng.fork();
    const MarginHead* frozen = cfg.joint_head ? nullptr : &hr.head;
    FusionTrainResult fr = train_fusion(fusion_documents(manifest, train, store, frozen),
                                        fusion_documents(manifest, val, store, frozen), fc,
                                        cfg.joint_head ? &hr.head : nullptr);
    TrainedModels out;
    out.head = fr.head ? std::move(*fr.head) : hr.head;
    out.fusion = std::move(fr.model);
    out.head_best_epoch = hr.best_epoch;
    out.fusion_best_epoch = fr.best_epoch;
    out.head_log = hr.log;
    out.fusion_log = std::move(fr.log);
    return out;
}

std::vector<ScoreRecord> score_rows(const Manifest& manifest, std::span<const std::size_t> rows,
                                    const EmbeddingStore& store, const MarginHead& head, const FusionModel& fusion,
                                    const PipelineConfig& cfg) {
    const auto docs = fusion_documents(manifest, rows, store, &head);
    const auto s = score_documents(fusion, docs, cfg.fusion.context, cfg.seed);
    std::vector<ScoreRecord> out;
    out.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const ManifestRow& row = manifest.rows[rows[k]];
        out.push_back({row.doc_id, row.label, std::string(to_string(row.attack_type)), s[k]});
    }
    return out;
}

ScoreSet score_set(const std::vector<ScoreRecord>& scores) {
    ScoreSet set;
    for (const ScoreRecord& r : scores) {
        if (r.label == "real")
            set.bona_fide.push_back(r.score);
        else
            set.attacks[r.attack_type].push_back(r.score);
    }
    return set;
}

ProtocolKind parse_protocol_kind(std::string_view s) {
    if (s == "intra") return ProtocolKind::intra;
    if (s == "loao") return ProtocolKind::leave_one_attack_out;
    if (s == "loso") return ProtocolKind::leave_one_sensor_out;
    if (s == "crossdb") return ProtocolKind::cross_database;
    throw invalid_argument("unknown protocol '" + std::string(s) + "' (intra, loao, loso, crossdb)");
}

std::string_view to_string(ProtocolKind k) {
    switch (k) {
        case ProtocolKind::intra: return "intra";
        case ProtocolKind::leave_one_attack_out: return "loao";
        case ProtocolKind::leave_one_sensor_out: return "loso";
        case ProtocolKind::cross_database: return "crossdb";
    }
    return "?";
}

void ProtocolSpec::validate() const {
    const bool loo = kind == ProtocolKind::leave_one_attack_out || kind == ProtocolKind::leave_one_sensor_out;
    if (loo && (!held_out || held_out->empty()))
        throw invalid_argument("protocol " + std::string(to_string(kind)) + " needs a held-out value");
    if (!loo && held_out) throw invalid_argument("protocol " + std::string(to_string(kind)) + " takes no held-out value");
}

std::vector<std::string> protocol_columns(ProtocolKind kind) {
    if (kind == ProtocolKind::cross_database) return {"screen", "hq_print", "print", "gray_print", "synthetic"};
    return {"screen", "print", "composite"};
}

ProtocolResult run_protocol(const ProtocolSpec& spec, const Manifest& home, const std::vector<Manifest>& foreign,
                            const PipelineConfig& cfg_in) {
    spec.validate();
    home.validate();
    PipelineConfig cfg = cfg_in;
    cfg.train_anon = spec.train_anon;
    cfg.eval_anon = spec.eval_anon;

    ProtocolResult res;
    res.spec = spec;
    res.columns = protocol_columns(spec.kind);

    // Home rows first, then foreign rows under unique ids with absolute paths.
    Manifest all;
    all.base_dir = home.base_dir;
    all.rows = home.rows;
    const std::size_t n_home = home.rows.size();
    std::vector<std::string> foreign_names;
    if (spec.kind == ProtocolKind::cross_database) {
        if (foreign.empty()) throw invalid_argument("cross-database protocol needs at least one foreign manifest");
        for (std::size_t f = 0; f < foreign.size(); ++f) {
            foreign[f].validate();
            std::string name = foreign[f].rows.empty() || foreign[f].rows.front().dataset_name.empty()
                                   ? "foreign" + std::to_string(f + 1)
                                   : foreign[f].rows.front().dataset_name;
            const bool taken = std::any_of(home.rows.begin(), home.rows.end(), [&](const ManifestRow& r) {
                return dataset_of(r) == name;
            }) || std::find(foreign_names.begin(), foreign_names.end(), name) != foreign_names.end();
            if (taken) name += " (" + std::to_string(f + 1) + ")";
            foreign_names.push_back(name);
            for (ManifestRow r : foreign[f].rows) {
                r.doc_id = "f" + std::to_string(f + 1) + ":" + r.doc_id;
                r.dataset_name = name;
                if (!r.image_path.empty()) r.image_path = std::filesystem::absolute(foreign[f].resolve(r.image_path)).string();
                if (!r.patch_dir.empty()) r.patch_dir = std::filesystem::absolute(foreign[f].resolve(r.patch_dir)).string();
                if (r.attack_type == AttackType::none) {
                    r.attack_type = AttackType::hq_print;
                    r.label = "attack";
                }
                all.rows.push_back(std::move(r));
            }
        }
        all.validate();
    }

    SplitSpec ss = cfg.split;
    ss.seed = cfg.seed;
    const Split split = make_splits(home, ss);
    auto [train, val] = split_train_val(home, split.dev, cfg.val_fraction, splitmix(cfg.seed));

    std::array<std::uint8_t, kNumClasses> inactive{};
    auto drop = [&](auto pred) {
        auto keep = [&](std::vector<std::size_t>& v) { v.erase(std::remove_if(v.begin(), v.end(), pred), v.end()); };
        keep(train);
        keep(val);
    };
    if (spec.kind == ProtocolKind::leave_one_attack_out) {
        const AttackType held = parse_attack_type(*spec.held_out);
        if (std::none_of(home.rows.begin(), home.rows.end(), [&](const ManifestRow& r) { return r.attack_type == held; }))
            throw invalid_argument("held-out attack '" + *spec.held_out + "' does not occur in the manifest");
        if (held == AttackType::none) throw invalid_argument("the bona fide class cannot be held out");
        ManifestRow probe;
        probe.attack_type = held;
        inactive[static_cast<std::size_t>(head_class(probe))] = 1;
        drop([&](std::size_t i) { return home.rows[i].attack_type == held; });
    } else if (spec.kind == ProtocolKind::leave_one_sensor_out) {
        const std::string& dev = *spec.held_out;
        if (std::none_of(home.rows.begin(), home.rows.end(), [&](const ManifestRow& r) { return r.device == dev; }))
            throw invalid_argument("held-out device '" + dev + "' does not occur in the manifest");
        drop([&](std::size_t i) { return home.rows[i].device == dev; });
    }

    std::vector<std::size_t> eval;
    for (std::size_t i : split.eval)
        if (spec.kind != ProtocolKind::cross_database || !home.rows[i].is_attack()) eval.push_back(i);
    for (std::size_t i = n_home; i < all.rows.size(); ++i) eval.push_back(i);

    EmbeddingStore store(cfg.embedder.output_dim);
    embed_documents(all, train, cfg.train_anon, cfg, true, store);
    embed_documents(all, val, cfg.train_anon, cfg, false, store);
    embed_documents(all, eval, cfg.eval_anon, cfg, false, store);

    const TrainedModels models = train_models(all, train, val, store, cfg, inactive);
    res.head_best_epoch = models.head_best_epoch;
    res.fusion_best_epoch = models.fusion_best_epoch;
    res.scores = score_rows(all, eval, store, models.head, models.fusion, cfg);

    if (spec.kind == ProtocolKind::cross_database) {
        ScoreSet bona;
        for (const ScoreRecord& r : res.scores)
            if (r.label == "real") bona.bona_fide.push_back(r.score);
        for (const std::string& name : foreign_names) {
            ScoreSet set;
            set.bona_fide = bona.bona_fide;
            for (std::size_t k = 0; k < eval.size(); ++k)
                if (all.rows[eval[k]].dataset_name == name) set.attacks[res.scores[k].attack_type].push_back(res.scores[k].score);
            res.rows.push_back({name, per_pai_report(set, res.columns)});
        }
    } else {
        std::string name;
        if (spec.kind == ProtocolKind::intra)
            name = "train " + std::string(to_string(spec.train_anon)) + " / eval " + std::string(to_string(spec.eval_anon));
        else
            name = "held out " + *spec.held_out;
        res.rows.push_back({name, per_pai_report(score_set(res.scores), res.columns)});
    }

    const std::set<std::size_t> tr(train.begin(), train.end()), va(val.begin(), val.end()), ev(eval.begin(), eval.end());
    for (std::size_t i = 0; i < all.rows.size(); ++i) {
        RowCounts& c = res.counts[dataset_of(all.rows[i]) + "/" + std::string(to_string(all.rows[i].attack_type))];
        if (tr.count(i))
            ++c.train;
        else if (va.count(i))
            ++c.val;
        else if (ev.count(i))
            ++c.eval;
        else
            ++c.unused;
    }
    return res;
}

std::vector<WeightingRun> run_weighting_benchmark(const PipelineConfig& cfg, std::size_t seeds, double minority_share) {
    if (!(minority_share > 0.0 && minority_share < 1.0)) throw invalid_argument("minority share must lie in (0, 1)");
    constexpr std::uint32_t D = 32;
    constexpr std::size_t n_train = 3000, n_val = 600, n_test_per_class = 300;
    const int minority = static_cast<int>(Label::composite);
    std::vector<WeightingRun> out;
    for (std::size_t s = 0; s < seeds; ++s) {
        const std::uint64_t seed = cfg.seed + s;
        Rng rng(splitmix(seed));
        std::array<std::vector<double>, kNumClasses> centers;
        for (auto& c : centers) {
            c.resize(D);
            for (double& v : c) v = 1.5 * rng.normal();
        }
        // The minority class sits two noise units from the real class.
        std::vector<double> dir(D);
        double n = 0.0;
        for (double& v : dir) {
            v = rng.normal();
            n += v * v;
        }
        for (std::size_t j = 0; j < D; ++j) centers[minority][j] = centers[0][j] + 2.0 * dir[j] / std::sqrt(n);

        EmbeddingStore store(D);
        auto draw = [&](std::size_t count, int label, const std::string& prefix, std::vector<HeadSample>& into) {
            for (std::size_t k = 0; k < count; ++k) {
                std::vector<float> x(D);
                for (std::size_t j = 0; j < D; ++j) x[j] = static_cast<float>(centers[label][j] + rng.normal());
                store.add(prefix + std::to_string(label) + "/" + std::to_string(k), x);
                into.push_back({{store.size() - 1}, label});
            }
        };
        auto imbalanced = [&](std::size_t total, const std::string& prefix, std::vector<HeadSample>& into) {
            const auto n_min = static_cast<std::size_t>(std::llround(minority_share * static_cast<double>(total)));
            const std::size_t n_maj = (total - n_min) / (kNumClasses - 1);
            for (int c = 0; c < kNumClasses; ++c) draw(c == minority ? n_min : n_maj, c, prefix, into);
        };
        std::vector<HeadSample> train, val, test;
        imbalanced(n_train, "train", train);
        imbalanced(n_val, "val", val);
        for (int c = 0; c < kNumClasses; ++c) draw(n_test_per_class, c, "test", test);

        for (ClassWeighting w : {ClassWeighting::none, ClassWeighting::static_weights, ClassWeighting::dynamic}) {
            HeadTrainConfig hc = cfg.head;
            hc.weighting = w;
            hc.embed_dim = 16;
            hc.seed = seed;
            const HeadTrainResult r = train_head(store, train, val, hc);
            const auto pred = predict_classes(r.head, store, test);
            std::size_t hit = 0, correct = 0;
            for (std::size_t k = 0; k < test.size(); ++k) {
                correct += pred[k] == test[k].label;
                hit += test[k].label == minority && pred[k] == minority;
            }
            out.push_back({seed, w, static_cast<double>(hit) / n_test_per_class,
                           static_cast<double>(correct) / static_cast<double>(test.size())});
        }
    }
    return out;
}

}  // namespace patchpad
