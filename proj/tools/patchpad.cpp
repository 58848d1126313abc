// patchpad command-line front end.
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 invalid
// argument, 4 I/O error, 5 numeric failure, 6 malformed file, 7 missing
// record.

#include "patchpad/config.hpp"
#include "patchpad/embedding.hpp"
#include "patchpad/error.hpp"
#include "patchpad/fixture.hpp"
#include "patchpad/fusion.hpp"
#include "patchpad/manifest.hpp"
#include "patchpad/margin_head.hpp"
#include "patchpad/metrics.hpp"
#include "patchpad/patch_pipeline.hpp"
#include "patchpad/protocol.hpp"
#include "patchpad/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace patchpad;

namespace {

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::invalid_argument: return 3;
        case ErrorKind::io: return 4;
        case ErrorKind::numeric: return 5;
        case ErrorKind::format: return 6;
        case ErrorKind::not_found: return 7;
    }
    return 1;
}

struct Globals {
    std::uint64_t seed = 0;
    std::string config;
    std::string out;
};

PipelineConfig base_config(const Globals& g, const CLI::App& app) {
    PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_config(g.config);
    if (app.count("--seed")) cfg.seed = g.seed;
    return cfg;
}

const std::string& require_out(const Globals& g, const char* what) {
    if (g.out.empty()) throw invalid_argument(std::string(what) + " needs --out");
    return g.out;
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw io_error("cannot write " + p.string());
    out << text;
    if (!out) throw io_error("failed writing " + p.string());
}

std::vector<std::size_t> select_rows(const Manifest& m, const PipelineConfig& cfg, const std::string& which) {
    if (which == "all") {
        std::vector<std::size_t> all(m.rows.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    SplitSpec ss = cfg.split;
    ss.seed = cfg.seed;
    const Split split = make_splits(m, ss);
    if (which == "eval") return split.eval;
    if (which == "dev") return split.dev;
    throw invalid_argument("--split must be eval, dev or all");
}

EmbeddingStore import_store(const fs::path& path, const Manifest& m) {
    EmbeddingStore src(1);
    if (path.extension() == ".jsonl") {
        std::ifstream in(path);
        if (!in) throw io_error("cannot open " + path.string());
        std::string line;
        std::optional<EmbeddingStore> s;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::format, std::string("malformed embedding line: ") + e.what());
            }
            const auto values = j.at("values").get<std::vector<float>>();
            if (!s) s.emplace(static_cast<std::uint32_t>(values.size()));
            s->add(j.at("patch_id").get<std::string>(), values);
        }
        if (!s) throw Error(ErrorKind::format, "no embeddings in " + path.string());
        src = std::move(*s);
    } else {
        src = load_store(path);
    }
    EmbeddingStore out(src.dim());
    std::string missing;
    for (const ManifestRow& row : m.rows) {
        if (row.patch_dir.empty()) throw invalid_argument("import needs a holder manifest with patch_dir entries");
        for (const PatchRecord& p : read_patchset(m.resolve(row.patch_dir))) {
            const std::string id = make_patch_id(row.doc_id, p.export_name);
            const auto at = src.find(id);
            if (!at) {
                missing += (missing.empty() ? "" : ", ") + id;
                continue;
            }
            out.add(id, src.values(*at));
            for (std::size_t v = 1;; ++v) {
                const auto a = src.find(id + "#aug" + std::to_string(v));
                if (!a) break;
                out.add(id + "#aug" + std::to_string(v), src.values(*a));
            }
        }
    }
    if (!missing.empty()) throw Error(ErrorKind::not_found, "imported embeddings lack patches: " + missing);
    return out;
}

void print_report(const PaiReport& rep) {
    for (const PaiEntry& e : rep.entries) {
        std::printf("%-12s", std::string(display_name(parse_attack_type(e.attack_type))).c_str());
        if (e.eer)
            std::printf(" EER %6.2f%%  (n=%zu)\n", 100.0 * *e.eer, e.count);
        else
            std::printf(" %s\n", e.note.c_str());
    }
    if (rep.all) std::printf("%-12s EER %6.2f%%\n", "All", 100.0 * *rep.all);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patchpad: privacy-aware patch-based detection of fake identity documents"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Global seed");
    app.add_option("--config", g.config, "key = value configuration file")->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "Output file or directory");

    // synth-fixture
    auto* fixture = app.add_subcommand("synth-fixture", "Generate a synthetic document set with a manifest");
    std::size_t fx_subjects = 50, fx_per_class = 50, fx_width = 512, fx_height = 320, fx_patch = 64;
    fixture->add_option("--subjects", fx_subjects, "Number of subjects");
    fixture->add_option("--per-class", fx_per_class, "Documents per class");
    fixture->add_option("--width", fx_width, "Image width");
    fixture->add_option("--height", fx_height, "Image height");
    fixture->add_option("--patch-size", fx_patch, "Patch size the composite regions are scaled to");

    // extract
    auto* extract = app.add_subcommand("extract", "Anonymize, tile, filter and export patches (holder side)");
    std::string ex_manifest, ex_anon = "non", ex_holder;
    std::size_t ex_patch = 0;
    double ex_black = 0.0, ex_keep = 0.0;
    extract->add_option("--manifest", ex_manifest, "Document manifest (image_path rows)")->required();
    extract->add_option("--patch-size", ex_patch, "64 or 128");
    extract->add_option("--black-threshold", ex_black, "Drop patches at least this black");
    extract->add_option("--keep-prob", ex_keep, "Keep probability per surviving patch");
    extract->add_option("--anon-level", ex_anon, "non, pseudo or full");
    extract->add_option("--holder-manifest", ex_holder, "Where to write the holder manifest (default <out>/holder_manifest.jsonl)");

    // embed
    auto* embed = app.add_subcommand("embed", "Embed exported patches into a store");
    std::string em_manifest, em_backend = "stub", em_import;
    std::size_t em_augment = 0;
    embed->add_option("--manifest", em_manifest, "Holder manifest with patch_dir rows")->required();
    embed->add_option("--backend", em_backend, "stub or import")->check(CLI::IsMember({"stub", "import"}));
    embed->add_option("--import-file", em_import, "Precomputed embeddings (store file or JSON Lines)");
    embed->add_option("--augment", em_augment, "Augmented copies per patch (stub backend)");

    // train-head
    auto* thead = app.add_subcommand("train-head", "Train the patch embedding head");
    std::string th_store, th_manifest, th_loss, th_weights, th_log;
    thead->add_option("--store", th_store, "Embedding store")->required();
    thead->add_option("--manifest", th_manifest, "Manifest")->required();
    thead->add_option("--loss", th_loss, "cosface, arcface or adaface")->check(CLI::IsMember({"cosface", "arcface", "adaface"}));
    thead->add_option("--weights", th_weights, "none, static or dynamic")->check(CLI::IsMember({"none", "static", "dynamic"}));
    thead->add_option("--log", th_log, "Training log (default <out>.log.json)");

    // train-fusion
    auto* tfusion = app.add_subcommand("train-fusion", "Train the document-level fusion module");
    std::string tf_store, tf_head, tf_manifest, tf_log;
    tfusion->add_option("--store", tf_store, "Embedding store")->required();
    tfusion->add_option("--head", tf_head, "Head checkpoint")->required();
    tfusion->add_option("--manifest", tf_manifest, "Manifest")->required();
    tfusion->add_option("--log", tf_log, "Training log (default <out>.log.json)");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Score documents and report error rates");
    std::string ev_model, ev_store, ev_manifest, ev_scores, ev_split = "eval", ev_det;
    evaluate->add_option("--model", ev_model, "Fusion checkpoint")->required();
    evaluate->add_option("--store", ev_store, "Embedding store")->required();
    evaluate->add_option("--manifest", ev_manifest, "Manifest")->required();
    evaluate->add_option("--scores", ev_scores, "Score file to write (JSON Lines)")->required();
    evaluate->add_option("--split", ev_split, "eval, dev or all")->check(CLI::IsMember({"eval", "dev", "all"}));
    evaluate->add_option("--det", ev_det, "Write pooled DET points to this CSV");

    // benchmark
    auto* bench = app.add_subcommand("benchmark", "Run an evaluation protocol end to end");
    std::string bm_protocol, bm_hold, bm_manifest, bm_train_anon, bm_eval_anon;
    std::vector<std::string> bm_foreign;
    std::vector<std::size_t> bm_foreign_count;
    std::size_t bm_seeds = 5;
    bench->add_option("--protocol", bm_protocol, "intra, loao, loso, crossdb or weighting")
        ->required()
        ->check(CLI::IsMember({"intra", "loao", "loso", "crossdb", "weighting"}));
    bench->add_option("--hold-out", bm_hold, "Held-out attack type (loao) or device (loso)");
    bench->add_option("--manifest", bm_manifest, "Home manifest");
    bench->add_option("--foreign", bm_foreign, "Foreign manifests (crossdb)");
    bench->add_option("--foreign-count", bm_foreign_count,
                      "Rows sampled from each foreign manifest, in --foreign order (0 keeps all)");
    bench->add_option("--train-anon", bm_train_anon, "Anonymization of training documents");
    bench->add_option("--eval-anon", bm_eval_anon, "Anonymization of evaluation documents");
    bench->add_option("--seeds", bm_seeds, "Seeds of the weighting comparison");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        PipelineConfig cfg = base_config(g, app);

        if (*fixture) {
            FixtureConfig fc;
            fc.subjects = fx_subjects;
            fc.class_counts = {fx_per_class, fx_per_class, fx_per_class, fx_per_class};
            fc.width = fx_width;
            fc.height = fx_height;
            fc.patch_size = fx_patch;
            fc.template1_subjects = std::min<std::size_t>(fc.template1_subjects, fx_subjects);
            const fs::path out = require_out(g, "synth-fixture");
            const Manifest m = write_fixture(fc, cfg.seed, out);
            std::printf("wrote %zu documents and %s\n", m.rows.size(), (out / "manifest.jsonl").string().c_str());
        } else if (*extract) {
            if (extract->count("--patch-size")) cfg.extraction.patch_size = ex_patch;
            if (extract->count("--black-threshold")) cfg.extraction.black_threshold = ex_black;
            if (extract->count("--keep-prob")) cfg.extraction.keep_prob = ex_keep;
            cfg.extraction.validate();
            const AnonLevel level = parse_anon_level(ex_anon);
            const fs::path out = require_out(g, "extract");
            const fs::path holder_path = ex_holder.empty() ? out / "holder_manifest.jsonl" : fs::path(ex_holder);
            const Manifest m = read_manifest(ex_manifest);
            m.check_paths();
            Manifest holder;
            holder.base_dir = holder_path.parent_path();
            std::size_t total = 0;
            for (const ManifestRow& row : m.rows) {
                if (row.doc_id.find_first_of("/\\") != std::string::npos || row.doc_id == "." || row.doc_id == "..")
                    throw invalid_argument("doc_id '" + row.doc_id + "' cannot name a patch folder");
                if (row.image_path.empty()) throw invalid_argument("document '" + row.doc_id + "' has no image_path");
                ExtractionConfig ec = cfg.extraction;
                ec.rng_seed = document_seed(cfg.seed, row.doc_id);
                const auto recs = extract_patches(read_ppm(m.resolve(row.image_path)), row.anonymization(level), ec);
                const fs::path dir = out / "patches" / row.doc_id;
                fs::remove_all(dir);
                write_patchset(recs, dir);
                ManifestRow h = row;
                h.image_path = fs::absolute(m.resolve(row.image_path)).string();
                h.patch_dir = fs::relative(fs::absolute(dir), fs::absolute(holder.base_dir.empty() ? fs::path(".") : holder.base_dir)).string();
                h.n_patches = recs.size();
                h.anon_level = level;
                holder.rows.push_back(std::move(h));
                total += recs.size();
            }
            write_manifest(holder, holder_path);
            std::printf("exported %zu patches from %zu documents; holder manifest %s\n", total, m.rows.size(),
                        holder_path.string().c_str());
        } else if (*embed) {
            const fs::path out = require_out(g, "embed");
            const Manifest m = read_manifest(em_manifest);
            EmbeddingStore store(cfg.embedder.output_dim);
            if (em_backend == "stub") {
                if (embed->count("--augment")) cfg.augment_variants = em_augment;
                for (const ManifestRow& row : m.rows)
                    if (row.patch_dir.empty()) throw invalid_argument("document '" + row.doc_id + "' has no patch_dir; run extract first");
                std::vector<std::size_t> rows(m.rows.size());
                for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
                embed_documents(m, rows, AnonLevel::non, cfg, cfg.augment_variants > 0, store);
            } else {
                if (em_import.empty()) throw invalid_argument("--backend import needs --import-file");
                store = import_store(em_import, m);
            }
            save_store(store, out);
            std::printf("stored %zu embeddings of dimension %u in %s\n", store.size(), store.dim(), out.string().c_str());
        } else if (*thead) {
            const fs::path out = require_out(g, "train-head");
            if (thead->count("--loss")) cfg.head.loss.variant = parse_margin_loss(th_loss);
            if (thead->count("--weights")) cfg.head.weighting = parse_class_weighting(th_weights);
            const Manifest m = read_manifest(th_manifest);
            const EmbeddingStore store = load_store(th_store);
            const auto [train, val] = dev_train_val(m, cfg);
            Rng rng(cfg.seed);
            HeadTrainConfig hc = cfg.head;
            hc.seed = rng.fork();
            const HeadTrainResult r = train_head(store, head_samples(m, train, store), head_samples(m, val, store), hc);
            Checkpoint ckpt;
            r.head.save(ckpt);
            save_checkpoint(ckpt, out);
            write_text(th_log.empty() ? fs::path(out.string() + ".log.json") : fs::path(th_log), head_log_json(r.log));
            std::printf("head trained for %zu epochs (best %zu); checkpoint %s\n", r.log.size(), r.best_epoch,
                        out.string().c_str());
        } else if (*tfusion) {
            const fs::path out = require_out(g, "train-fusion");
            const Manifest m = read_manifest(tf_manifest);
            const EmbeddingStore store = load_store(tf_store);
            const MarginHead head = MarginHead::load(load_checkpoint(tf_head));
            const auto [train, val] = dev_train_val(m, cfg);
            Rng rng(cfg.seed);
            rng.fork();
            FusionTrainConfig fc = cfg.fusion;
            fc.seed = rng.fork();
            const MarginHead* frozen = cfg.joint_head ? nullptr : &head;
            FusionTrainResult r = train_fusion(fusion_documents(m, train, store, frozen),
                                               fusion_documents(m, val, store, frozen), fc,
                                               cfg.joint_head ? &head : nullptr);
            Checkpoint ckpt;
            (r.head ? *r.head : head).save(ckpt);
            r.model.save(ckpt);
            save_checkpoint(ckpt, out);
            write_text(tf_log.empty() ? fs::path(out.string() + ".log.json") : fs::path(tf_log), fusion_log_json(r.log));
            std::printf("fusion trained for %zu epochs (best %zu); checkpoint %s\n", r.log.size(), r.best_epoch,
                        out.string().c_str());
        } else if (*evaluate) {
            const Manifest m = read_manifest(ev_manifest);
            const EmbeddingStore store = load_store(ev_store);
            const Checkpoint ckpt = load_checkpoint(ev_model);
            const MarginHead head = MarginHead::load(ckpt);
            const FusionModel fusion = FusionModel::load(ckpt);
            const auto rows = select_rows(m, cfg, ev_split);
            const auto scores = score_rows(m, rows, store, head, fusion, cfg);
            write_scores(scores, ev_scores);
            const ScoreSet set = score_set(scores);
            if (set.bona_fide.empty() || set.attacks.empty()) {
                std::printf("scored %zu documents; both bona fide and attack documents are needed for error rates\n",
                            scores.size());
            } else {
                print_report(per_pai_report(set, protocol_columns(ProtocolKind::intra)));
                if (!ev_det.empty()) {
                    const auto pooled = set.pooled_attacks();
                    write_det_csv(det_points(set.bona_fide, pooled), ev_det);
                }
            }
        } else if (*bench) {
            const fs::path out = require_out(g, "benchmark");
            ReportProvenance prov;
            if (bm_protocol == "weighting") {
                const auto runs = run_weighting_benchmark(cfg, bm_seeds);
                prov = make_provenance(cfg);
                prov.inputs.emplace_back("seeds", std::to_string(bm_seeds));
                fs::create_directories(out);
                write_text(out / "weighting.md", weighting_markdown(runs, prov));
                write_text(out / "weighting.csv", weighting_csv(runs, prov));
                std::fputs(weighting_markdown(runs, prov).c_str(), stdout);
            } else {
                if (bm_manifest.empty()) throw invalid_argument("benchmark --protocol " + bm_protocol + " needs --manifest");
                ProtocolSpec spec;
                spec.kind = parse_protocol_kind(bm_protocol);
                if (bench->count("--hold-out")) spec.held_out = bm_hold;
                spec.train_anon = bench->count("--train-anon") ? parse_anon_level(bm_train_anon) : cfg.train_anon;
                spec.eval_anon = bench->count("--eval-anon") ? parse_anon_level(bm_eval_anon) : cfg.eval_anon;
                cfg.train_anon = spec.train_anon;
                cfg.eval_anon = spec.eval_anon;
                const Manifest home = read_manifest(bm_manifest);
                home.check_paths();
                if (!bm_foreign_count.empty() && bm_foreign_count.size() != bm_foreign.size())
                    throw invalid_argument("--foreign-count needs one value per --foreign manifest");
                std::vector<Manifest> foreign;
                std::vector<std::size_t> available;
                for (std::size_t k = 0; k < bm_foreign.size(); ++k) {
                    Manifest f = read_manifest(bm_foreign[k]);
                    available.push_back(f.rows.size());
                    const std::size_t n = bm_foreign_count.empty() ? 0 : bm_foreign_count[k];
                    if (n > 0) f = sample_rows(f, n, cfg.seed + k + 1);
                    f.check_paths();
                    foreign.push_back(std::move(f));
                }
                const ProtocolResult r = run_protocol(spec, home, foreign, cfg);
                prov = make_provenance(cfg);
                prov.inputs.emplace_back("manifest", bm_manifest + " (" + std::to_string(home.rows.size()) + " rows)");
                for (std::size_t k = 0; k < foreign.size(); ++k)
                    prov.inputs.emplace_back("foreign", bm_foreign[k] + " (" + std::to_string(foreign[k].rows.size()) +
                                                            " of " + std::to_string(available[k]) + " rows)");
                write_report(out, {r}, prov);
                for (const ResultRow& row : r.rows) {
                    std::printf("%s\n", row.name.c_str());
                    print_report(row.report);
                }
            }
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "patchpad: %s\n", e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "patchpad: %s\n", e.what());
        return 1;
    }
    return 0;
}
