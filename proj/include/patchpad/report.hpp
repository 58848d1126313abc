#pragma once

// Markdown and CSV reports for protocol results, with the run provenance
// embedded. The timestamp is the only field that differs between reruns.

#include "patchpad/protocol.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace patchpad {

struct ReportProvenance {
    std::uint64_t seed = 0;
    std::string commit;
    std::string timestamp;
    std::vector<std::pair<std::string, std::string>> flags;
    std::vector<std::pair<std::string, std::string>> inputs;  // manifests, row totals
};

/// Commit id the library was built from ("unknown" outside a checkout).
std::string build_commit();
/// Current UTC time, ISO 8601.
std::string utc_timestamp();

/// Provenance with the commit, the current time and every config entry.
ReportProvenance make_provenance(const PipelineConfig& cfg);

/// EER cells in percent with two decimals; N/A for missing pools.
std::string report_markdown(const std::vector<ProtocolResult>& results, const ReportProvenance& prov);
/// Long format: one line per (result, row, column) with the exact EER.
std::string report_csv(const std::vector<ProtocolResult>& results, const ReportProvenance& prov);

/// Writes report.md, report.csv and scores_<k>.jsonl (one per result).
void write_report(const std::filesystem::path& dir, const std::vector<ProtocolResult>& results,
                  const ReportProvenance& prov);

std::string weighting_markdown(const std::vector<WeightingRun>& runs, const ReportProvenance& prov);
std::string weighting_csv(const std::vector<WeightingRun>& runs, const ReportProvenance& prov);

/// Text with every line carrying the timestamp removed.
std::string strip_timestamp(const std::string& report);

}  // namespace patchpad
