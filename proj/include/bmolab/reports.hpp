#ifndef BMOLAB_REPORTS_HPP
#define BMOLAB_REPORTS_HPP

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bmo {

// bumped on any breaking change to the payload layout
inline constexpr int kReportSchema = 1;
inline constexpr const char* kToolVersion = "0.1.0";

/**
 * One typed result row. The payload carries every number together with the
 * metadata that defines it (quantity name, exponent, backend). Asserted rows
 * decide the process exit code; informational rows never fail a run.
 */
struct Report {
    std::string name;
    std::string kind;
    nlohmann::json payload;
    bool asserted = false;
    bool pass = true;
};

/** Tabular companion to the JSON payload; one CSV file per table. */
struct CsvTable {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/**
 * Everything one run emits: a manifest (config echo, versions, wall clock)
 * plus the typed reports and tables. Payload files are a pure function of
 * (config, build); timestamps and timings live only in the manifest, so
 * reruns of one config produce byte-identical payloads.
 */
struct ReportBundle {
    nlohmann::json manifest;
    std::vector<Report> reports;
    std::vector<CsvTable> tables;

    const Report* first_failure() const;
    bool all_pass() const { return first_failure() == nullptr; }
};

// exact bytes of reports.json / a table's .csv file
std::string payload_text(const ReportBundle& b);
std::string csv_text(const CsvTable& t);
// round-trip numeric cell (shortest representation recovering the double)
std::string csv_cell(double v);

// stages the files in a hidden directory inside out_dir, then renames it
// over out_dir/name, replacing any previous bundle; returns the final path
std::string write_bundle(const ReportBundle& b, const std::string& out_dir,
                         const std::string& name, bool json, bool csv);

}  // namespace bmo

#endif
