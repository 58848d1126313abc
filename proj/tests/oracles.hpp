#pragma once

// Brute-force references shared by the unit and acceptance suites.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

struct Rates {
    std::uint64_t rejected_bona = 0;
    std::uint64_t accepted_attacks = 0;
};

// Every distinct score plus both infinities as threshold; counts by direct scan.
inline std::vector<Rates> enumerate(const std::vector<double>& bona, const std::vector<double>& attacks) {
    std::vector<double> taus(bona);
    taus.insert(taus.end(), attacks.begin(), attacks.end());
    taus.push_back(-std::numeric_limits<double>::infinity());
    taus.push_back(std::numeric_limits<double>::infinity());
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    std::vector<Rates> out;
    for (double t : taus) {
        Rates r;
        for (double s : bona) r.rejected_bona += s >= t;
        for (double s : attacks) r.accepted_attacks += s < t;
        out.push_back(r);
    }
    return out;
}

inline double eer(const std::vector<double>& bona, const std::vector<double>& attacks) {
    const std::uint64_t nb = bona.size(), na = attacks.size();
    const auto all = enumerate(bona, attacks);
    Rates best = all.front();
    auto key = [&](const Rates& r) {
        const std::int64_t x = static_cast<std::int64_t>(r.rejected_bona * na);
        const std::int64_t y = static_cast<std::int64_t>(r.accepted_attacks * nb);
        return std::make_pair(x > y ? x - y : y - x, x + y);
    };
    for (const auto& r : all)
        if (key(r) < key(best)) best = r;
    return (static_cast<double>(best.rejected_bona) / static_cast<double>(nb) +
            static_cast<double>(best.accepted_attacks) / static_cast<double>(na)) /
           2.0;
}

inline double bpcer_at_apcer(const std::vector<double>& bona, const std::vector<double>& attacks, double target) {
    double best = 1.0;
    for (const auto& r : enumerate(bona, attacks)) {
        const double a = static_cast<double>(r.accepted_attacks) / static_cast<double>(attacks.size());
        if (a <= target) best = std::min(best, static_cast<double>(r.rejected_bona) / static_cast<double>(bona.size()));
    }
    return best;
}

}  // namespace oracle
