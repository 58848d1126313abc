#include "patchpad/report.hpp"

#include "patchpad/error.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#ifndef PATCHPAD_COMMIT
#define PATCHPAD_COMMIT "unknown"
#endif

namespace patchpad {

namespace {

constexpr const char* kGenerated = "generated";

std::string percent(const std::optional<double>& v) {
    if (!v) return "N/A";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * *v);
    return buf;
}

std::string exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string title_of(const ProtocolResult& r) {
    std::string t(to_string(r.spec.kind));
    if (r.spec.held_out) t += " (held out " + *r.spec.held_out + ")";
    t += ", train " + std::string(to_string(r.spec.train_anon)) + "-anon / eval " +
         std::string(to_string(r.spec.eval_anon)) + "-anon";
    return t;
}

std::string column_title(const std::string& key) { return std::string(display_name(parse_attack_type(key))); }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

void provenance_markdown(std::ostringstream& out, const ReportProvenance& p) {
    out << "## Provenance\n\n";
    out << "- commit: " << p.commit << "\n";
    out << "- seed: " << p.seed << "\n";
    out << "- " << kGenerated << ": " << p.timestamp << "\n";
    for (const auto& [k, v] : p.inputs) out << "- " << k << ": " << v << "\n";
    if (!p.flags.empty()) {
        out << "\n| flag | value |\n|---|---|\n";
        for (const auto& [k, v] : p.flags) out << "| " << k << " | " << v << " |\n";
    }
}

void provenance_csv(std::ostringstream& out, const ReportProvenance& p) {
    out << "# commit," << csv_field(p.commit) << "\n";
    out << "# seed," << p.seed << "\n";
    out << "# " << kGenerated << "," << csv_field(p.timestamp) << "\n";
    for (const auto& [k, v] : p.inputs) out << "# " << csv_field(k) << "," << csv_field(v) << "\n";
    for (const auto& [k, v] : p.flags) out << "# flag." << k << "," << csv_field(v) << "\n";
}

}  // namespace

std::string build_commit() { return PATCHPAD_COMMIT; }

std::string utc_timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ReportProvenance make_provenance(const PipelineConfig& cfg) {
    ReportProvenance p;
    p.seed = cfg.seed;
    p.commit = build_commit();
    p.timestamp = utc_timestamp();
    p.flags = cfg.entries();
    return p;
}

std::string report_markdown(const std::vector<ProtocolResult>& results, const ReportProvenance& prov) {
    std::ostringstream out;
    out << "# patchpad report\n\n";
    provenance_markdown(out, prov);
    for (const ProtocolResult& r : results) {
        out << "\n## " << title_of(r) << "\n\nEER (%)\n\n|  |";
        for (const auto& c : r.columns) out << " " << column_title(c) << " |";
        out << " All |\n|---|";
        for (std::size_t i = 0; i <= r.columns.size(); ++i) out << "---:|";
        out << "\n";
        for (const ResultRow& row : r.rows) {
            out << "| " << row.name << " |";
            for (const PaiEntry& e : row.report.entries) out << " " << percent(e.eer) << " |";
            out << " " << percent(row.report.all) << " |\n";
        }
        out << "\nBest epochs: head " << r.head_best_epoch << ", fusion " << r.fusion_best_epoch << ".\n";
        out << "\n| rows | train | val | eval | unused | total |\n|---|---:|---:|---:|---:|---:|\n";
        for (const auto& [k, c] : r.counts)
            out << "| " << k << " | " << c.train << " | " << c.val << " | " << c.eval << " | " << c.unused << " | "
                << c.total() << " |\n";
    }
    return out.str();
}

std::string report_csv(const std::vector<ProtocolResult>& results, const ReportProvenance& prov) {
    std::ostringstream out;
    provenance_csv(out, prov);
    out << "result,protocol,held_out,train_anon,eval_anon,row,column,eer,count,note\n";
    for (std::size_t k = 0; k < results.size(); ++k) {
        const ProtocolResult& r = results[k];
        const std::string prefix = std::to_string(k) + "," + std::string(to_string(r.spec.kind)) + "," +
                                   csv_field(r.spec.held_out.value_or("")) + "," +
                                   std::string(to_string(r.spec.train_anon)) + "," +
                                   std::string(to_string(r.spec.eval_anon)) + ",";
        for (const ResultRow& row : r.rows) {
            for (const PaiEntry& e : row.report.entries)
                out << prefix << csv_field(row.name) << "," << e.attack_type << "," << (e.eer ? exact(*e.eer) : "")
                    << "," << e.count << "," << csv_field(e.note) << "\n";
            out << prefix << csv_field(row.name) << ",all," << (row.report.all ? exact(*row.report.all) : "") << ",,\n";
        }
    }
    return out.str();
}

void write_report(const std::filesystem::path& dir, const std::vector<ProtocolResult>& results,
                  const ReportProvenance& prov) {
    std::filesystem::create_directories(dir);
    auto put = [&](const std::filesystem::path& p, const std::string& text) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw io_error("cannot write " + p.string());
        out << text;
        if (!out) throw io_error("failed writing " + p.string());
    };
    put(dir / "report.md", report_markdown(results, prov));
    put(dir / "report.csv", report_csv(results, prov));
    for (std::size_t k = 0; k < results.size(); ++k)
        write_scores(results[k].scores, dir / ("scores_" + std::to_string(k) + ".jsonl"));
}

std::string weighting_markdown(const std::vector<WeightingRun>& runs, const ReportProvenance& prov) {
    std::ostringstream out;
    out << "# patchpad class-weighting comparison\n\n";
    provenance_markdown(out, prov);
    out << "\nMinority-class recall (%) on a balanced held-out set.\n\n| seed | none | static | dynamic |\n|---|---:|---:|---:|\n";
    std::map<std::uint64_t, std::map<ClassWeighting, double>> by_seed;
    std::map<ClassWeighting, double> sum;
    for (const WeightingRun& r : runs) {
        by_seed[r.seed][r.weighting] = r.minority_recall;
        sum[r.weighting] += r.minority_recall;
    }
    auto cell = [](const std::map<ClassWeighting, double>& m, ClassWeighting w) {
        const auto it = m.find(w);
        return it == m.end() ? std::string("N/A") : percent(it->second);
    };
    for (const auto& [seed, m] : by_seed)
        out << "| " << seed << " | " << cell(m, ClassWeighting::none) << " | " << cell(m, ClassWeighting::static_weights)
            << " | " << cell(m, ClassWeighting::dynamic) << " |\n";
    if (!by_seed.empty()) {
        const double n = static_cast<double>(by_seed.size());
        std::map<ClassWeighting, double> mean;
        for (const auto& [w, s] : sum) mean[w] = s / n;
        out << "| mean | " << cell(mean, ClassWeighting::none) << " | " << cell(mean, ClassWeighting::static_weights)
            << " | " << cell(mean, ClassWeighting::dynamic) << " |\n";
    }
    return out.str();
}

std::string weighting_csv(const std::vector<WeightingRun>& runs, const ReportProvenance& prov) {
    std::ostringstream out;
    provenance_csv(out, prov);
    out << "seed,weighting,minority_recall,accuracy\n";
    for (const WeightingRun& r : runs)
        out << r.seed << "," << to_string(r.weighting) << "," << exact(r.minority_recall) << "," << exact(r.accuracy) << "\n";
    return out.str();
}

std::string strip_timestamp(const std::string& report) {
    std::istringstream in(report);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line))
        if (line.rfind(std::string("- ") + kGenerated + ":", 0) != 0 && line.rfind(std::string("# ") + kGenerated + ",", 0) != 0)
            out << line << "\n";
    return out.str();
}

}  // namespace patchpad
