#pragma once

// Presentation-attack error rates over document scores. Scores are attack
// confidences: a presentation is accepted as bona fide iff score < tau, so
// a score equal to the threshold counts as an attack.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace patchpad {

struct ScoreSet {
    std::vector<double> bona_fide;
    std::map<std::string, std::vector<double>> attacks;  // keyed by attack type

    std::vector<double> pooled_attacks() const;
    /// Throws on non-finite scores.
    void validate() const;
};

struct OperatingPoint {
    double threshold = 0.0;
    double bpcer = 0.0;
    double apcer = 0.0;
};

/// Fraction of bona fide scores >= tau.
double bpcer(std::span<const double> bona_fide, double tau);
/// Fraction of attack scores < tau, over the number of attack scores.
double apcer(std::span<const double> attacks, double tau);

/// Candidate thresholds: -inf, midpoints between consecutive distinct
/// values of the pooled scores, +inf; ascending.
std::vector<double> candidate_thresholds(std::span<const double> bona_fide, std::span<const double> attacks);

/// All candidate operating points in ascending threshold order.
std::vector<OperatingPoint> det_points(std::span<const double> bona_fide, std::span<const double> attacks);

struct EerResult {
    double eer = 0.0;
    OperatingPoint point;
};

/// Threshold minimizing |BPCER - APCER| (ties: smaller BPCER + APCER, then
/// smaller threshold); the rate is the mean of the two errors there.
EerResult eer(std::span<const double> bona_fide, std::span<const double> attacks);

/// Linear interpolation of the DET step curve at its BPCER = APCER crossing.
double eer_interpolated(std::span<const double> bona_fide, std::span<const double> attacks);

/// Smallest BPCER over thresholds whose APCER <= target. tau = -inf is always
/// admissible, so the result is at most 1.
double bpcer_at_apcer(std::span<const double> bona_fide, std::span<const double> attacks, double target);

struct PaiEntry {
    std::string attack_type;
    std::optional<double> eer;  // empty when the pool is missing or empty
    std::size_t count = 0;
    std::string note;
};

struct PaiReport {
    std::vector<PaiEntry> entries;
    std::optional<double> all;  // pooled over every attack pool
};

/// EER of each attack pool against the shared bona fide pool. With
/// `columns`, entries follow that order and missing pools are marked N/A;
/// otherwise every non-empty pool in key order is reported.
PaiReport per_pai_report(const ScoreSet& scores, std::span<const std::string> columns = {});

/// "tau,bpcer,apcer" rows for external plotting.
void write_det_csv(std::span<const OperatingPoint> points, const std::filesystem::path& path);

}  // namespace patchpad
