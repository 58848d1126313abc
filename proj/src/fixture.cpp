#include "patchpad/fixture.hpp"

#include "patchpad/error.hpp"
#include "patchpad/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace patchpad {

namespace {

constexpr double kTwoPi = 2.0 * M_PI;

struct Style {
    std::array<double, 3> c0, c1;  // gradient end colours
    double lambda1, lambda2, lambda3, phase1, phase2;
    int template_version;
};

struct Capture {
    std::string device;
    std::string illumination;
    double height_cm;
    double gain;
    double flash;  // highlight amplitude, 0 without flash
    double noise;  // sensor noise standard deviation
};

// Floating-point canvas used while rendering.
struct Canvas {
    std::size_t w, h;
    std::vector<double> px;  // 3 * w * h
    double& at(std::size_t x, std::size_t y, int c) { return px[3 * (y * w + x) + static_cast<std::size_t>(c)]; }
};

std::uint8_t clamp8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

RgbImage to_image(const Canvas& cv) {
    RgbImage img(cv.w, cv.h);
    auto& b = img.bytes();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = clamp8(cv.px[i]);
    return img;
}

Style draw_style(Rng& rng, int template_version) {
    Style s;
    for (int c = 0; c < 3; ++c) {
        s.c0[c] = rng.uniform(150.0, 225.0);
        s.c1[c] = rng.uniform(150.0, 225.0);
    }
    s.lambda1 = rng.uniform(6.0, 10.0);
    s.lambda2 = rng.uniform(40.0, 80.0);
    s.lambda3 = rng.uniform(9.0, 14.0);
    s.phase1 = rng.uniform(0.0, kTwoPi);
    s.phase2 = rng.uniform(0.0, kTwoPi);
    s.template_version = template_version;
    return s;
}

Capture draw_capture(Rng& rng) {
    static const char* devices[] = {"iphone15", "mi9tpro", "redmi9c"};
    static const double noise[] = {1.5, 2.5, 3.5};
    static const char* illums[] = {"no_light_flash", "dim_flash", "dim_noflash", "bright_flash", "bright_noflash"};
    static const double gains[] = {0.7, 0.8, 0.75, 1.0, 0.95};
    static const double heights[] = {10.0, 12.5, 15.0};
    Capture c;
    const auto d = rng.below(3), i = rng.below(5);
    c.device = devices[d];
    c.noise = noise[d];
    c.illumination = illums[i];
    c.gain = gains[i];
    c.flash = (c.illumination.find("noflash") == std::string::npos) ? 35.0 : 0.0;
    c.height_cm = heights[rng.below(3)];
    return c;
}

// Template layout: photo block, personal-data lines and a machine-readable
// zone. Pseudo anonymization hides the photo and the name lines; full adds
// the remaining lines and the zone.
struct Layout {
    Rect photo;
    std::vector<Rect> name_lines;
    std::vector<Rect> other_lines;
    Rect mrz;
    // Full anonymization blacks out the whole details block and MRZ band.
    Rect details_block;
    Rect mrz_band;
};

Layout make_layout(const FixtureConfig& cfg, int template_version, Rng& rng) {
    const double sx = static_cast<double>(cfg.width) / 512.0, sy = static_cast<double>(cfg.height) / 320.0;
    auto R = [&](double x, double y, double w, double h) {
        const double jx = rng.uniform(-3.0, 3.0), jy = rng.uniform(-3.0, 3.0);
        Rect r;
        r.x = static_cast<std::size_t>(std::max(0.0, (x + jx) * sx));
        r.y = static_cast<std::size_t>(std::max(0.0, (y + jy) * sy));
        r.w = std::max<std::size_t>(1, static_cast<std::size_t>(w * sx));
        r.h = std::max<std::size_t>(1, static_cast<std::size_t>(h * sy));
        r.w = std::min(r.w, cfg.width - r.x);
        r.h = std::min(r.h, cfg.height - r.y);
        return r;
    };
    Layout l;
    const bool left = template_version != 1;
    const double photo_x = left ? 24.0 : 360.0, text_x = left ? 176.0 : 24.0;
    l.photo = R(photo_x, 64.0, 128.0, 172.0);
    l.name_lines = {R(text_x, 70.0, 220.0, 14.0), R(text_x, 96.0, 180.0, 14.0)};
    l.other_lines = {R(text_x, 140.0, 120.0, 12.0), R(text_x, 168.0, 150.0, 12.0), R(text_x, 196.0, 100.0, 12.0)};
    l.mrz = R(16.0, 258.0, 480.0, 40.0);
    auto grow = [&](std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1, double px, double py) {
        const auto dx = static_cast<std::size_t>(px * sx), dy = static_cast<std::size_t>(py * sy);
        Rect r;
        r.x = x0 > dx ? x0 - dx : 0;
        r.y = y0 > dy ? y0 - dy : 0;
        r.w = std::min(x1 + dx, cfg.width) - r.x;
        r.h = std::min(y1 + dy, cfg.height) - r.y;
        return r;
    };
    std::size_t bx0 = cfg.width, by0 = cfg.height, bx1 = 0, by1 = 0;
    for (const Rect& r : l.other_lines) {
        bx0 = std::min(bx0, r.x), by0 = std::min(by0, r.y);
        bx1 = std::max(bx1, r.x + r.w), by1 = std::max(by1, r.y + r.h);
    }
    l.details_block = grow(bx0, by0, std::max(bx1, bx0 + static_cast<std::size_t>(220.0 * sx)), by1, 8.0, 12.0);
    l.mrz_band = grow(l.mrz.x, l.mrz.y, l.mrz.x + l.mrz.w, l.mrz.y + l.mrz.h, 8.0, 12.0);
    return l;
}

void fill_block(Canvas& cv, const Rect& r, const std::array<double, 3>& col, double mix) {
    for (std::size_t y = r.y; y < r.y + r.h && y < cv.h; ++y)
        for (std::size_t x = r.x; x < r.x + r.w && x < cv.w; ++x)
            for (int c = 0; c < 3; ++c) cv.at(x, y, c) = (1.0 - mix) * cv.at(x, y, c) + mix * col[c];
}

void draw_text(Canvas& cv, const Rect& line, Rng& rng) {
    std::size_t x = line.x;
    while (x < line.x + line.w) {
        const std::size_t gw = 4 + rng.below(5);
        Rect g{x, line.y, std::min(gw, line.x + line.w - x), line.h};
        fill_block(cv, g, {45.0, 45.0, 60.0}, 0.85);
        x += gw + 2 + rng.below(3);
    }
}

void draw_photo(Canvas& cv, const Rect& r, Rng& rng) {
    const double cx = static_cast<double>(r.x) + r.w / 2.0, cy = static_cast<double>(r.y) + r.h / 2.4;
    const double rad = std::min(r.w, r.h) / 3.0;
    const std::array<double, 3> skin{rng.uniform(110.0, 200.0), rng.uniform(80.0, 150.0), rng.uniform(60.0, 120.0)};
    for (std::size_t y = r.y; y < r.y + r.h && y < cv.h; ++y)
        for (std::size_t x = r.x; x < r.x + r.w && x < cv.w; ++x) {
            const double d = std::hypot(x - cx, (y - cy) * 0.8) / rad;
            const double m = d < 1.0 ? 0.9 : 0.55;
            for (int c = 0; c < 3; ++c) cv.at(x, y, c) = (1.0 - m) * cv.at(x, y, c) + m * (d < 1.0 ? skin[c] : 90.0);
        }
}

// Card background, guilloche and printed content.
Canvas render_card(const FixtureConfig& cfg, const Style& s, const Layout& l, double guilloche_scale,
                   const Capture& cap, Rng& rng) {
    Canvas cv{cfg.width, cfg.height, std::vector<double>(3 * cfg.width * cfg.height)};
    const double fscale = std::sqrt(12.5 / cap.height_cm);
    const double amp = cfg.guilloche_amplitude * guilloche_scale;
    for (std::size_t y = 0; y < cv.h; ++y) {
        const double ty = static_cast<double>(y) / static_cast<double>(cv.h);
        for (std::size_t x = 0; x < cv.w; ++x) {
            const double tx = static_cast<double>(x) / static_cast<double>(cv.w);
            const double t = 0.6 * tx + 0.4 * ty;
            const double g = std::sin(kTwoPi * x * fscale / s.lambda1 + 2.0 * std::sin(kTwoPi * y / s.lambda2) + s.phase1) *
                             std::sin(kTwoPi * y * fscale / s.lambda3 + s.phase2);
            for (int c = 0; c < 3; ++c)
                cv.at(x, y, c) = (1.0 - t) * s.c0[c] + t * s.c1[c] + amp * g * (c == 2 ? 0.6 : 1.0);
        }
    }
    draw_photo(cv, l.photo, rng);
    for (const Rect& r : l.name_lines) draw_text(cv, r, rng);
    for (const Rect& r : l.other_lines) draw_text(cv, r, rng);
    for (std::size_t k = 0; k < 2; ++k) {
        Rect line{l.mrz.x, l.mrz.y + k * (l.mrz.h / 2), l.mrz.w, std::max<std::size_t>(1, l.mrz.h / 2 - 4)};
        line.h = std::min(line.h, cfg.height - line.y);
        draw_text(cv, line, rng);
    }
    return cv;
}

void print_texture(Canvas& cv, const FixtureConfig& cfg, Rng& rng) {
    for (std::size_t y = 0; y < cv.h; ++y)
        for (std::size_t x = 0; x < cv.w; ++x) {
            const double lum = 0.299 * cv.at(x, y, 0) + 0.587 * cv.at(x, y, 1) + 0.114 * cv.at(x, y, 2);
            const double dot = rng.uniform(-cfg.print_noise, cfg.print_noise);
            for (int c = 0; c < 3; ++c) {
                double v = cv.at(x, y, c);
                v += cfg.print_desaturation * (lum - v);
                cv.at(x, y, c) = 0.92 * v + 10.0 + dot + rng.uniform(-cfg.print_noise, cfg.print_noise) / 3.0;
            }
        }
}

void screen_texture(Canvas& cv, const FixtureConfig& cfg, Rng& rng) {
    const double t1 = rng.uniform(3.2, 4.8), t2 = rng.uniform(3.2, 4.8), tb = rng.uniform(40.0, 90.0);
    const double p1 = rng.uniform(0.0, kTwoPi), p2 = rng.uniform(0.0, kTwoPi);
    for (std::size_t y = 0; y < cv.h; ++y)
        for (std::size_t x = 0; x < cv.w; ++x) {
            const double env = 0.6 + 0.4 * std::sin(kTwoPi * static_cast<double>(x + y) / tb);
            const double g = cfg.screen_amplitude * env * (std::sin(kTwoPi * x / t1 + p1) + std::sin(kTwoPi * y / t2 + p2));
            cv.at(x, y, 0) = 0.94 * cv.at(x, y, 0) + g;
            cv.at(x, y, 1) = cv.at(x, y, 1) + g;
            cv.at(x, y, 2) = 1.06 * cv.at(x, y, 2) + 6.0 + g;
        }
}

void capture(Canvas& cv, const Capture& cap, Rng& rng) {
    const double fx = rng.uniform(0.2, 0.8) * cv.w, fy = rng.uniform(0.2, 0.8) * cv.h;
    const double sigma2 = 2.0 * 120.0 * 120.0;
    for (std::size_t y = 0; y < cv.h; ++y)
        for (std::size_t x = 0; x < cv.w; ++x) {
            const double d2 = (x - fx) * (x - fx) + (y - fy) * (y - fy);
            const double hl = cap.flash * std::exp(-d2 / sigma2);
            for (int c = 0; c < 3; ++c) cv.at(x, y, c) = cap.gain * cv.at(x, y, c) + hl + cap.noise * rng.normal();
        }
}

std::vector<Rect> composite_rects(const FixtureConfig& cfg, Rng& rng) {
    const std::size_t n = cfg.composite_rects_min + rng.below(cfg.composite_rects_max - cfg.composite_rects_min + 1);
    const std::size_t p = cfg.patch_size;
    std::vector<Rect> out;
    for (std::size_t k = 0; k < n; ++k) {
        Rect r;
        r.w = 2 * p + rng.below(p / 2 + 1);
        r.h = 2 * p + rng.below(p / 2 + 1);
        bool placed = false;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            r.x = rng.below(cfg.width - r.w + 1);
            r.y = rng.below(cfg.height - r.h + 1);
            placed = std::none_of(out.begin(), out.end(), [&](const Rect& o) {
                return r.x < o.x + o.w && o.x < r.x + r.w && r.y < o.y + o.h && o.y < r.y + r.h;
            });
        }
        if (placed) out.push_back(r);
    }
    return out;
}

}  // namespace

void FixtureConfig::validate() const {
    if (subjects == 0) throw invalid_argument("fixture needs at least one subject");
    if (patch_size == 0) throw invalid_argument("fixture patch_size must be positive");
    if (width < 3 * patch_size || height < 3 * patch_size)
        throw invalid_argument("fixture image must be at least 3 patches wide and tall");
    if (composite_rects_min == 0 || composite_rects_max < composite_rects_min)
        throw invalid_argument("composite rect range must satisfy 1 <= min <= max");
    if (template1_subjects > subjects) throw invalid_argument("template1_subjects exceeds subjects");
    std::size_t total = 0;
    for (std::size_t c : class_counts) total += c;
    if (total == 0) throw invalid_argument("fixture class counts are all zero");
    if (!(print_noise >= 0.0 && screen_amplitude >= 0.0 && guilloche_amplitude >= 0.0))
        throw invalid_argument("fixture texture amplitudes must be non-negative");
}

void apply_print_texture(RgbImage& img, const Rect& r, const FixtureConfig& cfg, Rng& rng) {
    if (r.x + r.w > img.width() || r.y + r.h > img.height()) throw invalid_argument("print rect " + to_string(r) + " leaves the image");
    Canvas cv{r.w, r.h, std::vector<double>(3 * r.w * r.h)};
    for (std::size_t y = 0; y < r.h; ++y)
        for (std::size_t x = 0; x < r.w; ++x) {
            const Rgb p = img.at(r.x + x, r.y + y);
            cv.at(x, y, 0) = p.r;
            cv.at(x, y, 1) = p.g;
            cv.at(x, y, 2) = p.b;
        }
    print_texture(cv, cfg, rng);
    for (std::size_t y = 0; y < r.h; ++y)
        for (std::size_t x = 0; x < r.w; ++x) {
            const Rgb old = img.at(r.x + x, r.y + y);
            Rgb p{clamp8(cv.at(x, y, 0)), clamp8(cv.at(x, y, 1)), clamp8(cv.at(x, y, 2))};
            if (p == old) p.r = old.r == 255 ? 254 : static_cast<std::uint8_t>(old.r + 1);
            img.set(r.x + x, r.y + y, p);
        }
}

std::vector<FixtureDocument> generate_fixture(const FixtureConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    std::vector<std::size_t> order(cfg.subjects);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<Style> styles(cfg.subjects);
    for (std::size_t k = 0; k < cfg.subjects; ++k) {
        const std::size_t s = order[k];
        styles[s] = draw_style(rng, k < cfg.template1_subjects ? 1 : 2);
    }

    std::vector<FixtureDocument> docs;
    for (int cls = 0; cls < kNumClasses; ++cls) {
        const auto label = static_cast<Label>(cls);
        for (std::size_t k = 0; k < cfg.class_counts[static_cast<std::size_t>(cls)]; ++k) {
            Rng drng(rng.fork());
            const std::size_t subject = k % cfg.subjects;
            const Style& st = styles[subject];
            const Capture cap = draw_capture(drng);
            const Layout layout = make_layout(cfg, st.template_version, drng);

            FixtureDocument d;
            char id[64];
            std::snprintf(id, sizeof id, "%s_s%03zu_%03zu", std::string(to_string(label)).c_str(), subject, k);
            ManifestRow& row = d.row;
            row.doc_id = id;
            char sid[32];
            std::snprintf(sid, sizeof sid, "subject%03zu", subject);
            row.subject_id = sid;
            row.attack_type = label == Label::real ? AttackType::none : parse_attack_type(to_string(label));
            row.label = label == Label::real ? "real" : "attack";
            row.device = cap.device;
            row.illumination = cap.illumination;
            row.height_cm = cap.height_cm;
            row.anon_level = AnonLevel::non;
            row.template_version = st.template_version;
            row.dataset_name = cfg.dataset_name;
            row.pseudo_rects.push_back(layout.photo);
            for (const Rect& r : layout.name_lines) row.pseudo_rects.push_back(r);
            row.full_rects = row.pseudo_rects;
            row.full_rects.push_back(layout.details_block);
            row.full_rects.push_back(layout.mrz_band);

            Canvas cv = render_card(cfg, st, layout, label == Label::print ? cfg.print_attenuation : 1.0, cap, drng);
            if (label == Label::print) print_texture(cv, cfg, drng);
            if (label == Label::screen) screen_texture(cv, cfg, drng);
            capture(cv, cap, drng);
            d.image = to_image(cv);
            if (label == Label::composite) {
                d.base = d.image;
                d.composite_rects = composite_rects(cfg, drng);
                for (const Rect& r : d.composite_rects) apply_print_texture(d.image, r, cfg, drng);
            }
            docs.push_back(std::move(d));
        }
    }
    return docs;
}

Manifest write_fixture(const FixtureConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir) {
    const auto docs = generate_fixture(cfg, seed);
    std::filesystem::create_directories(out_dir / "images");
    Manifest m;
    m.base_dir = out_dir;
    for (const FixtureDocument& d : docs) {
        ManifestRow row = d.row;
        row.image_path = "images/" + row.doc_id + ".ppm";
        write_ppm(d.image, out_dir / row.image_path);
        m.rows.push_back(std::move(row));
    }
    write_manifest(m, out_dir / "manifest.jsonl");
    return m;
}

}  // namespace patchpad
