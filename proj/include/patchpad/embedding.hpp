#pragma once

// Backbone embeddings: the on-disk store and a deterministic hand-crafted
// stand-in embedder for desk-scale runs.

#include "patchpad/error.hpp"
#include "patchpad/image.hpp"
#include "patchpad/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace patchpad {

inline constexpr std::uint32_t kDefaultBackboneDim = 384;

/// Patch ids are "<doc_id>/<export_name>", optionally followed by
/// "#aug<k>" for augmented variants of the same patch.
std::string make_patch_id(std::string_view doc_id, std::string_view export_name);
std::string_view doc_of(std::string_view patch_id);
/// Patch id with any "#aug<k>" suffix removed.
std::string_view base_patch_id(std::string_view patch_id);

enum class StoreErrorKind { bad_magic, dimension_mismatch, truncated, duplicate_id, trailing_bytes, non_finite };

class StoreError : public Error {
public:
    StoreError(StoreErrorKind kind, const std::string& what) : Error(ErrorKind::format, what), store_kind_(kind) {}
    StoreErrorKind store_kind() const noexcept { return store_kind_; }

private:
    StoreErrorKind store_kind_;
};

/// Insertion-ordered patch id -> float vector table. Immutable once built
/// by convention; const access is safe from several threads.
class EmbeddingStore {
public:
    explicit EmbeddingStore(std::uint32_t dim = kDefaultBackboneDim);

    std::uint32_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return ids_.size(); }

    void add(std::string id, std::span<const float> values);

    bool contains(std::string_view id) const;
    std::optional<std::size_t> find(std::string_view id) const;
    const std::string& id(std::size_t i) const { return ids_[i]; }
    std::span<const float> values(std::size_t i) const { return {&data_[i * dim_], dim_}; }
    std::span<const float> at(std::string_view id) const;

    /// Record indices whose id belongs to doc_id, in insertion order.
    std::vector<std::size_t> indices_of_doc(std::string_view doc_id) const;

    friend bool operator==(const EmbeddingStore& a, const EmbeddingStore& b);

private:
    std::uint32_t dim_;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> index_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_doc_;
};

/// Binary layout: "PSEMBED1", u32 dim, u64 count, then per record a u16 id
/// length, the UTF-8 id and dim float32 values; all little-endian.
void save_store(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore load_store(const std::filesystem::path& path, std::optional<std::uint32_t> expected_dim = std::nullopt);

/// Vectors in request order; throws not_found listing every missing id.
std::vector<std::span<const float>> batch_lookup(const EmbeddingStore& store, std::span<const std::string> ids);

// ---------------------------------------------------------------------------
// Stub embedder

struct StubEmbedderConfig {
    std::uint32_t output_dim = kDefaultBackboneDim;
    std::uint64_t projection_seed = 0;
    bool color_stats = true;    // per-channel mean and standard deviation
    bool gradient_hist = true;  // 8-bin luminance gradient-magnitude histogram
    bool band_energy = true;    // 4 radial frequency-band RMS amplitudes
    // Per-channel normalization applied to [0,1] pixel values (ImageNet statistics).
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> stddev{0.229, 0.224, 0.225};

    std::size_t feature_count() const;
};

inline constexpr std::size_t kGradientBins = 8;
inline constexpr std::size_t kFrequencyBands = 4;

/// Upper edges of the gradient bins (last bin is open ended).
inline constexpr std::array<double, kGradientBins - 1> kGradientEdges{0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2};

/// Radial band of a DFT bin, with rho = |f| / (p/2): band 0 is (0, 1/8],
/// 1 is (1/8, 1/4], 2 is (1/4, 1/2], 3 is everything above. Doubling a
/// frequency with rho > 1/16 moves it up exactly one band. Returns -1 for DC.
int frequency_band(std::size_t kx, std::size_t ky, std::size_t p);

/// Pre-projection feature vector, in the order color | gradient | bands.
std::vector<double> stub_features(const RgbImage& patch, const StubEmbedderConfig& cfg);

/// Per-band spectral energy of the normalized luminance (without sqrt);
/// exposed for feature-level tests.
std::array<double, kFrequencyBands> band_energies(const RgbImage& patch, const StubEmbedderConfig& cfg);

class StubEmbedder {
public:
    explicit StubEmbedder(StubEmbedderConfig cfg);

    const StubEmbedderConfig& config() const noexcept { return cfg_; }

    std::vector<float> embed(const RgbImage& patch) const;
    /// Embeds independent patches in parallel; output order follows input.
    std::vector<std::vector<float>> embed_batch(std::span<const RgbImage> patches) const;

private:
    StubEmbedderConfig cfg_;
    std::vector<double> projection_;  // output_dim x feature_count
};

/// One-off convenience wrapper around StubEmbedder.
std::vector<float> embed_stub(const RgbImage& patch, const StubEmbedderConfig& cfg);

// ---------------------------------------------------------------------------
// Training-time augmentation (pixel path only)

struct AugmentConfig {
    double prob = 0.2;  // applied independently to blur and to color jitter
    int blur_kernel = 3;
    double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
    double brightness = 0.2;
    double contrast = 0.25;
    double saturation = 0.2;
    double hue = 0.05;
};

RgbImage augment(const RgbImage& patch, const AugmentConfig& cfg, Rng& rng);

}  // namespace patchpad
