#include "patchpad/metrics.hpp"

#include "patchpad/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace patchpad {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_nonempty(std::span<const double> v, const char* what) {
    if (v.empty()) throw invalid_argument(std::string(what) + " pool is empty");
}

std::vector<double> sorted(std::span<const double> v) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    return s;
}

// Error counts at one threshold: bona fide >= tau and attacks < tau.
struct Counts {
    double tau;
    std::size_t bona_rejected;
    std::size_t attacks_accepted;
};

// Counts at every candidate threshold, ascending, by a single merge pass.
std::vector<Counts> sweep(std::span<const double> bona_fide, std::span<const double> attacks) {
    require_nonempty(bona_fide, "bona fide");
    require_nonempty(attacks, "attack");
    const std::vector<double> taus = candidate_thresholds(bona_fide, attacks);
    const std::vector<double> b = sorted(bona_fide), a = sorted(attacks);
    std::vector<Counts> out;
    out.reserve(taus.size());
    std::size_t ib = 0, ia = 0;
    for (double t : taus) {
        while (ib < b.size() && b[ib] < t) ++ib;
        while (ia < a.size() && a[ia] < t) ++ia;
        out.push_back({t, b.size() - ib, ia});
    }
    return out;
}

}  // namespace

std::vector<double> ScoreSet::pooled_attacks() const {
    std::vector<double> out;
    for (const auto& [k, v] : attacks) out.insert(out.end(), v.begin(), v.end());
    return out;
}

void ScoreSet::validate() const {
    auto check = [](const std::vector<double>& v, const std::string& name) {
        for (double s : v)
            if (!std::isfinite(s)) throw invalid_argument("non-finite score in pool '" + name + "'");
    };
    check(bona_fide, "bona fide");
    for (const auto& [k, v] : attacks) check(v, k);
}

double bpcer(std::span<const double> bona_fide, double tau) {
    require_nonempty(bona_fide, "bona fide");
    const auto n = std::count_if(bona_fide.begin(), bona_fide.end(), [tau](double s) { return s >= tau; });
    return static_cast<double>(n) / static_cast<double>(bona_fide.size());
}

double apcer(std::span<const double> attacks, double tau) {
    require_nonempty(attacks, "attack");
    const auto n = std::count_if(attacks.begin(), attacks.end(), [tau](double s) { return s < tau; });
    return static_cast<double>(n) / static_cast<double>(attacks.size());
}

std::vector<double> candidate_thresholds(std::span<const double> bona_fide, std::span<const double> attacks) {
    std::vector<double> all(bona_fide.begin(), bona_fide.end());
    all.insert(all.end(), attacks.begin(), attacks.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    std::vector<double> taus;
    taus.reserve(all.size() + 1);
    taus.push_back(-kInf);
    for (std::size_t i = 0; i + 1 < all.size(); ++i) {
        double mid = all[i] + (all[i + 1] - all[i]) / 2.0;
        // Adjacent doubles can round the midpoint onto the lower value, which
        // would misplace that value; the upper value splits the pair correctly.
        if (!(mid > all[i])) mid = all[i + 1];
        taus.push_back(mid);
    }
    taus.push_back(kInf);
    return taus;
}

std::vector<OperatingPoint> det_points(std::span<const double> bona_fide, std::span<const double> attacks) {
    const double nb = static_cast<double>(bona_fide.size()), na = static_cast<double>(attacks.size());
    std::vector<OperatingPoint> out;
    for (const Counts& c : sweep(bona_fide, attacks)) {
        out.push_back({c.tau, static_cast<double>(c.bona_rejected) / nb, static_cast<double>(c.attacks_accepted) / na});
    }
    return out;
}

EerResult eer(std::span<const double> bona_fide, std::span<const double> attacks) {
    const auto counts = sweep(bona_fide, attacks);
    const std::uint64_t nb = bona_fide.size(), na = attacks.size();
    // Compare rates exactly via cross-multiplied integer counts.
    auto gap = [&](const Counts& c) {
        const std::uint64_t x = c.bona_rejected * na, y = c.attacks_accepted * nb;
        return x > y ? x - y : y - x;
    };
    auto total = [&](const Counts& c) { return c.bona_rejected * na + c.attacks_accepted * nb; };
    const Counts* best = &counts.front();
    for (const Counts& c : counts) {
        const auto g = gap(c), bg = gap(*best);
        if (g < bg || (g == bg && total(c) < total(*best))) best = &c;
    }
    const double b = static_cast<double>(best->bona_rejected) / static_cast<double>(nb);
    const double a = static_cast<double>(best->attacks_accepted) / static_cast<double>(na);
    return {(b + a) / 2.0, {best->tau, b, a}};
}

double eer_interpolated(std::span<const double> bona_fide, std::span<const double> attacks) {
    const auto pts = det_points(bona_fide, attacks);
    // BPCER - APCER starts at 1 (tau = -inf) and ends at -1 (tau = +inf).
    for (std::size_t k = 1; k < pts.size(); ++k) {
        const double d0 = pts[k - 1].bpcer - pts[k - 1].apcer;
        const double d1 = pts[k].bpcer - pts[k].apcer;
        if (d1 == 0.0) return pts[k].bpcer;
        if (d1 < 0.0) {
            const double t = d0 / (d0 - d1);
            return pts[k - 1].bpcer + t * (pts[k].bpcer - pts[k - 1].bpcer);
        }
    }
    return pts.back().bpcer;
}

double bpcer_at_apcer(std::span<const double> bona_fide, std::span<const double> attacks, double target) {
    if (!(target >= 0.0 && target <= 1.0)) throw invalid_argument("APCER target must lie in [0, 1]");
    double best = 1.0;
    for (const auto& p : det_points(bona_fide, attacks))
        if (p.apcer <= target) best = std::min(best, p.bpcer);
    return best;
}

PaiReport per_pai_report(const ScoreSet& scores, std::span<const std::string> columns) {
    scores.validate();
    PaiReport rep;
    std::vector<std::string> keys(columns.begin(), columns.end());
    if (keys.empty())
        for (const auto& [k, v] : scores.attacks) keys.push_back(k);
    for (const auto& k : keys) {
        PaiEntry e{k, std::nullopt, 0, ""};
        const auto it = scores.attacks.find(k);
        if (it == scores.attacks.end()) {
            e.note = "N/A";
        } else if (it->second.empty()) {
            e.note = "empty attack pool skipped";
        } else if (scores.bona_fide.empty()) {
            e.count = it->second.size();
            e.note = "no bona fide scores";
        } else {
            e.count = it->second.size();
            e.eer = eer(scores.bona_fide, it->second).eer;
        }
        rep.entries.push_back(std::move(e));
    }
    const auto pooled = scores.pooled_attacks();
    if (!pooled.empty() && !scores.bona_fide.empty()) rep.all = eer(scores.bona_fide, pooled).eer;
    return rep;
}

void write_det_csv(std::span<const OperatingPoint> points, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write " + path.string());
    out << "tau,bpcer,apcer\n";
    char buf[96];
    for (const auto& p : points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.bpcer, p.apcer);
        out << buf;
    }
    if (!out) throw io_error("failed writing " + path.string());
}

}  // namespace patchpad
