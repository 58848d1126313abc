#include "patchpad/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace patchpad {

namespace {

using cd = std::complex<double>;

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

// In-place iterative radix-2 transform of `n` values spaced by `stride`.
void fft_pow2(cd* x, std::size_t n, std::size_t stride) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i * stride], x[j * stride]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const cd wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                cd& a = x[(i + k) * stride];
                cd& b = x[(i + k + len / 2) * stride];
                const cd t = b * w;
                b = a - t;
                a += t;
                w *= wl;
            }
        }
    }
}

void dft_direct(cd* x, std::size_t n, std::size_t stride) {
    std::vector<cd> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        cd acc = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * M_PI * static_cast<double>(k * t % n) / static_cast<double>(n);
            acc += x[t * stride] * cd(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    for (std::size_t k = 0; k < n; ++k) x[k * stride] = out[k];
}

// Row-column 2-D DFT of a w x h grid stored row-major.
void dft2(std::vector<cd>& grid, std::size_t w, std::size_t h) {
    for (std::size_t y = 0; y < h; ++y) {
        is_pow2(w) ? fft_pow2(&grid[y * w], w, 1) : dft_direct(&grid[y * w], w, 1);
    }
    for (std::size_t x = 0; x < w; ++x) {
        is_pow2(h) ? fft_pow2(&grid[x], h, w) : dft_direct(&grid[x], h, w);
    }
}

struct Normalized {
    std::size_t w, h;
    std::array<std::vector<double>, 3> ch;
    std::vector<double> luma;
};

Normalized normalize(const RgbImage& patch, const StubEmbedderConfig& cfg) {
    Normalized n{patch.width(), patch.height(), {}, {}};
    const std::size_t count = n.w * n.h;
    for (auto& c : n.ch) c.resize(count);
    n.luma.resize(count);
    const auto& b = patch.bytes();
    for (std::size_t i = 0; i < count; ++i) {
        for (int c = 0; c < 3; ++c) n.ch[c][i] = (b[3 * i + c] / 255.0 - cfg.mean[c]) / cfg.stddev[c];
        n.luma[i] = 0.299 * n.ch[0][i] + 0.587 * n.ch[1][i] + 0.114 * n.ch[2][i];
    }
    return n;
}

std::array<double, kFrequencyBands> bands_of(const Normalized& n) {
    std::vector<cd> grid(n.luma.begin(), n.luma.end());
    dft2(grid, n.w, n.h);
    std::array<double, kFrequencyBands> e{};
    const double norm = static_cast<double>(n.w * n.h) * static_cast<double>(n.w * n.h);
    for (std::size_t ky = 0; ky < n.h; ++ky) {
        for (std::size_t kx = 0; kx < n.w; ++kx) {
            // Non-square patches use the smaller side as the reference length.
            const int band = frequency_band(kx, ky, std::min(n.w, n.h));
            if (band >= 0) e[band] += std::norm(grid[ky * n.w + kx]) / norm;
        }
    }
    return e;
}

}  // namespace

std::size_t StubEmbedderConfig::feature_count() const {
    return (color_stats ? 6 : 0) + (gradient_hist ? kGradientBins : 0) + (band_energy ? kFrequencyBands : 0);
}

int frequency_band(std::size_t kx, std::size_t ky, std::size_t p) {
    if (kx == 0 && ky == 0) return -1;
    auto signed_freq = [p](std::size_t k) {
        return k <= p / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(p);
    };
    const double fx = signed_freq(kx), fy = signed_freq(ky);
    // Compare squared radii against squared edges to keep band edges exact.
    const double r2 = fx * fx + fy * fy;
    const double half = static_cast<double>(p) / 2.0;
    if (r2 <= half * half / 64.0) return 0;
    if (r2 <= half * half / 16.0) return 1;
    if (r2 <= half * half / 4.0) return 2;
    return 3;
}

std::array<double, kFrequencyBands> band_energies(const RgbImage& patch, const StubEmbedderConfig& cfg) {
    return bands_of(normalize(patch, cfg));
}

std::vector<double> stub_features(const RgbImage& patch, const StubEmbedderConfig& cfg) {
    if (patch.empty()) throw invalid_argument("cannot embed an empty patch");
    const Normalized n = normalize(patch, cfg);
    const std::size_t count = n.w * n.h;
    std::vector<double> f;
    f.reserve(cfg.feature_count());

    if (cfg.color_stats) {
        for (const auto& c : n.ch) {
            double mean = 0.0;
            for (double v : c) mean += v;
            mean /= static_cast<double>(count);
            double var = 0.0;
            for (double v : c) var += (v - mean) * (v - mean);
            f.push_back(mean);
            f.push_back(std::sqrt(var / static_cast<double>(count)));
        }
    }
    if (cfg.gradient_hist) {
        std::array<double, kGradientBins> hist{};
        std::size_t samples = 0;
        for (std::size_t y = 0; y + 1 < n.h; ++y) {
            for (std::size_t x = 0; x + 1 < n.w; ++x) {
                const double l = n.luma[y * n.w + x];
                const double gx = n.luma[y * n.w + x + 1] - l;
                const double gy = n.luma[(y + 1) * n.w + x] - l;
                const double mag = std::sqrt(gx * gx + gy * gy);
                const auto bin = std::upper_bound(kGradientEdges.begin(), kGradientEdges.end(), mag) - kGradientEdges.begin();
                hist[bin] += 1.0;
                ++samples;
            }
        }
        for (double h : hist) f.push_back(samples ? h / static_cast<double>(samples) : 0.0);
    }
    if (cfg.band_energy) {
        for (double e : bands_of(n)) f.push_back(std::sqrt(e));
    }
    return f;
}

StubEmbedder::StubEmbedder(StubEmbedderConfig cfg) : cfg_(std::move(cfg)) {
    const std::size_t nf = cfg_.feature_count();
    if (nf == 0) throw invalid_argument("stub embedder needs at least one feature group");
    if (cfg_.output_dim == 0) throw invalid_argument("stub embedder output dimension must be positive");
    Rng rng(cfg_.projection_seed);
    projection_.resize(static_cast<std::size_t>(cfg_.output_dim) * nf);
    const double scale = 1.0 / std::sqrt(static_cast<double>(nf));
    for (double& v : projection_) v = rng.normal() * scale;
}

std::vector<float> StubEmbedder::embed(const RgbImage& patch) const {
    const std::vector<double> f = stub_features(patch, cfg_);
    std::vector<float> out(cfg_.output_dim);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) acc += projection_[i * f.size() + j] * f[j];
        out[i] = static_cast<float>(acc);
    }
    return out;
}

std::vector<std::vector<float>> StubEmbedder::embed_batch(std::span<const RgbImage> patches) const {
    std::vector<std::vector<float>> out(patches.size());
    const long n = static_cast<long>(patches.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (long i = 0; i < n; ++i) out[i] = embed(patches[i]);
    return out;
}

std::vector<float> embed_stub(const RgbImage& patch, const StubEmbedderConfig& cfg) {
    return StubEmbedder(cfg).embed(patch);
}

// ---------------------------------------------------------------------------

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

RgbImage gaussian_blur(const RgbImage& img, int k, double sigma) {
    const int r = k / 2;
    std::vector<double> w(k);
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
        w[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    const long W = static_cast<long>(img.width()), H = static_cast<long>(img.height());
    auto reflect = [](long i, long n) {
        if (n == 1) return 0L;
        while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
        return i;
    };
    std::vector<double> tmp(3 * img.width() * img.height());
    const auto& src = img.bytes();
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = 0; i < k; ++i) acc += w[i] * src[3 * (y * W + reflect(x + i - r, W)) + c];
                tmp[3 * (y * W + x) + c] = acc;
            }
        }
    }
    RgbImage out(img.width(), img.height());
    auto& dst = out.bytes();
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = 0; i < k; ++i) acc += w[i] * tmp[3 * (reflect(y + i - r, H) * W + x) + c];
                dst[3 * (y * W + x) + c] = to_byte(acc);
            }
        }
    }
    return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double d = mx - mn;
    v = mx;
    s = mx > 0.0 ? d / mx : 0.0;
    if (d <= 0.0) {
        h = 0.0;
        return;
    }
    if (mx == r) h = std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = (b - r) / d + 2.0;
    else h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
}

RgbImage color_jitter(const RgbImage& img, const AugmentConfig& cfg, Rng& rng) {
    const double fb = rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness);
    const double fc = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast);
    const double fs = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation);
    const double fh = rng.uniform(-cfg.hue, cfg.hue);
    const std::size_t n = img.width() * img.height();
    std::vector<double> px(img.bytes().begin(), img.bytes().end());
    for (double& v : px) v = std::clamp(v * fb, 0.0, 255.0);
    double mean_gray = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_gray += 0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2];
    mean_gray /= static_cast<double>(n);
    for (double& v : px) v = std::clamp((v - mean_gray) * fc + mean_gray, 0.0, 255.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double gray = 0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2];
        for (int c = 0; c < 3; ++c) px[3 * i + c] = std::clamp((px[3 * i + c] - gray) * fs + gray, 0.0, 255.0);
        double h, s, v, r, g, b;
        rgb_to_hsv(px[3 * i] / 255.0, px[3 * i + 1] / 255.0, px[3 * i + 2] / 255.0, h, s, v);
        hsv_to_rgb(h + fh + 1.0, s, v, r, g, b);
        px[3 * i] = r * 255.0;
        px[3 * i + 1] = g * 255.0;
        px[3 * i + 2] = b * 255.0;
    }
    RgbImage out(img.width(), img.height());
    for (std::size_t i = 0; i < px.size(); ++i) out.bytes()[i] = to_byte(px[i]);
    return out;
}

}  // namespace

RgbImage augment(const RgbImage& patch, const AugmentConfig& cfg, Rng& rng) {
    RgbImage out = patch;
    if (rng.uniform() < cfg.prob) out = gaussian_blur(out, cfg.blur_kernel, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
    if (rng.uniform() < cfg.prob) out = color_jitter(out, cfg, rng);
    return out;
}

}  // namespace patchpad
