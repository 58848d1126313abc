#include "patchpad/patch_pipeline.hpp"

#include "patchpad/error.hpp"
#include "patchpad/kernels.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_set>

namespace fs = std::filesystem;

namespace patchpad {

std::string to_string(const Rect& r) {
    return "(" + std::to_string(r.x) + ", " + std::to_string(r.y) + ", " + std::to_string(r.w) + ", " +
           std::to_string(r.h) + ")";
}

void ExtractionConfig::validate() const {
    if (patch_size != 64 && patch_size != 128) throw invalid_argument("patch size must be 64 or 128");
    if (!(black_threshold > 0.0 && black_threshold <= 1.0)) throw invalid_argument("black threshold must be in (0, 1]");
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw invalid_argument("keep probability must be in (0, 1]");
}

RgbImage apply_anonymization(const RgbImage& img, const AnonymizationSpec& spec) {
    if (spec.level == AnonLevel::non && !spec.rects.empty()) {
        throw invalid_argument("anonymization level 'non' takes no rectangles");
    }
    for (const Rect& r : spec.rects) {
        if (r.x + r.w > img.width() || r.y + r.h > img.height()) {
            throw invalid_argument("anonymization rectangle " + to_string(r) + " exceeds image bounds " +
                                   std::to_string(img.width()) + "x" + std::to_string(img.height()));
        }
    }
    RgbImage out = img;
    for (const Rect& r : spec.rects) {
        for (std::size_t y = r.y; y < r.y + r.h; ++y) {
            for (std::size_t x = r.x; x < r.x + r.w; ++x) out.set(x, y, {0, 0, 0});
        }
    }
    return out;
}

std::vector<CandidatePatch> tile(const RgbImage& img, std::size_t p) {
    if (p == 0) throw invalid_argument("patch size must be positive");
    if (img.width() < p) {
        throw invalid_argument("image width " + std::to_string(img.width()) + " is smaller than patch size " +
                               std::to_string(p));
    }
    if (img.height() < p) {
        throw invalid_argument("image height " + std::to_string(img.height()) + " is smaller than patch size " +
                               std::to_string(p));
    }
    const std::size_t cols = img.width() / p;
    const std::size_t rows = img.height() / p;
    std::vector<std::uint32_t> counts(rows * cols);
    kernels::tile_black_counts(img, p, counts);

    std::vector<CandidatePatch> out;
    out.reserve(rows * cols);
    const double area = static_cast<double>(p * p);
    for (std::size_t t = 0; t < rows * cols; ++t) {
        out.push_back({img.crop((t % cols) * p, (t / cols) * p, p, p), t, counts[t] / area});
    }
    return out;
}

double black_fraction(const RgbImage& patch) {
    if (patch.empty()) return 0.0;
    std::size_t black = 0;
    const auto& b = patch.bytes();
    for (std::size_t i = 0; i < b.size(); i += 3) black += (b[i] | b[i + 1] | b[i + 2]) == 0;
    return static_cast<double>(black) / static_cast<double>(patch.width() * patch.height());
}

std::vector<CandidatePatch> filter_and_sample(std::vector<CandidatePatch> candidates, const ExtractionConfig& cfg,
                                              Rng& rng) {
    std::vector<CandidatePatch> kept;
    for (auto& c : candidates) {
        const double u = rng.uniform();
        if (c.black_fraction <= cfg.black_threshold && u < cfg.keep_prob) kept.push_back(std::move(c));
    }
    rng.shuffle(std::span<CandidatePatch>(kept));
    return kept;
}

std::vector<PatchRecord> assign_export_names(std::vector<CandidatePatch> kept, Rng& rng) {
    if (kept.size() > kMaxPatchesPerDocument) {
        throw invalid_argument("cannot name " + std::to_string(kept.size()) +
                               " patches: six-digit name space holds 1000000 per document");
    }
    std::unordered_set<std::uint32_t> used;
    std::vector<PatchRecord> out;
    out.reserve(kept.size());
    for (auto& c : kept) {
        std::uint32_t v;
        do {
            v = static_cast<std::uint32_t>(rng.below(kMaxPatchesPerDocument));
        } while (!used.insert(v).second);
        char name[8];
        std::snprintf(name, sizeof name, "%06u", v);
        out.push_back({std::move(c.pixels), name, c.black_fraction, c.grid_index});
    }
    return out;
}

void write_patchset(const std::vector<PatchRecord>& records, const fs::path& doc_dir) {
    std::error_code ec;
    fs::create_directories(doc_dir, ec);
    if (ec) throw io_error("cannot create " + doc_dir.string() + ": " + ec.message());
    for (const auto& r : records) write_ppm(r.pixels, doc_dir / (r.export_name + kPatchExtension));
}

std::vector<PatchRecord> export_patchset(std::vector<CandidatePatch> kept, const fs::path& doc_dir, Rng& rng) {
    auto records = assign_export_names(std::move(kept), rng);
    write_patchset(records, doc_dir);
    return records;
}

std::vector<PatchRecord> extract_patches(const RgbImage& img, const AnonymizationSpec& spec,
                                         const ExtractionConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.rng_seed);
    auto kept = filter_and_sample(tile(apply_anonymization(img, spec), cfg.patch_size), cfg, rng);
    return assign_export_names(std::move(kept), rng);
}

std::vector<PatchRecord> read_patchset(const fs::path& doc_dir) {
    std::error_code ec;
    fs::directory_iterator it(doc_dir, ec);
    if (ec) throw io_error("cannot list " + doc_dir.string() + ": " + ec.message());
    std::vector<fs::path> files;
    for (const auto& entry : it) {
        if (entry.is_regular_file() && entry.path().extension() == kPatchExtension) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<PatchRecord> out;
    out.reserve(files.size());
    for (const auto& f : files) {
        RgbImage px = read_ppm(f);
        const double bf = black_fraction(px);
        out.push_back({std::move(px), f.stem().string(), bf, 0});
    }
    return out;
}

}  // namespace patchpad
