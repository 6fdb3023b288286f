#include "bmolab/reports.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <random>

#include "bmolab/tree.hpp"

namespace fs = std::filesystem;

namespace bmo {

namespace {

bool needs_quotes(const std::string& cell) {
    return cell.find_first_of(",\"\n") != std::string::npos;
}

std::string quoted(const std::string& cell) {
    std::string out = "\"";
    for (char ch : cell) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

void spill(const fs::path& file, const std::string& text) {
    std::ofstream f(file, std::ios::binary);
    f << text;
    f.close();
    if (!f) throw Error("write_bundle: cannot write " + file.string());
}

}  // namespace

const Report* ReportBundle::first_failure() const {
    for (const Report& r : reports)
        if (r.asserted && !r.pass) return &r;
    return nullptr;
}

std::string payload_text(const ReportBundle& b) {
    nlohmann::json out;
    out["schema"] = kReportSchema;
    nlohmann::json rows = nlohmann::json::array();
    for (const Report& r : b.reports) {
        nlohmann::json row;
        row["name"] = r.name;
        row["kind"] = r.kind;
        row["asserted"] = r.asserted;
        row["pass"] = r.pass;
        row["payload"] = r.payload;
        rows.push_back(std::move(row));
    }
    out["reports"] = std::move(rows);
    return out.dump(2) + "\n";
}

std::string csv_cell(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) return "nan";
    return std::string(buf, end);
}

std::string csv_text(const CsvTable& t) {
    std::string out;
    auto append_row = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i > 0) out += ',';
            out += needs_quotes(cells[i]) ? quoted(cells[i]) : cells[i];
        }
        out += '\n';
    };
    append_row(t.header);
    for (const auto& row : t.rows) append_row(row);
    return out;
}

std::string write_bundle(const ReportBundle& b, const std::string& out_dir,
                         const std::string& name, bool json, bool csv) {
    if (name.empty()) throw Error("write_bundle: bundle name must not be empty");
    fs::path root(out_dir.empty() ? "." : out_dir);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error("write_bundle: cannot create " + root.string() + ": " + ec.message());

    fs::path stage =
        root / (".stage-" + name + "-" + std::to_string(std::random_device{}()));
    fs::remove_all(stage, ec);
    fs::create_directories(stage, ec);
    if (ec) throw Error("write_bundle: cannot stage in " + root.string() + ": " + ec.message());

    spill(stage / "manifest.json", b.manifest.dump(2) + "\n");
    if (json) spill(stage / "reports.json", payload_text(b));
    if (csv)
        for (const CsvTable& t : b.tables) spill(stage / (t.name + ".csv"), csv_text(t));

    // the rename is the commit point; a half-written bundle never lands
    fs::path target = root / name;
    fs::remove_all(target, ec);
    fs::rename(stage, target, ec);
    if (ec) {
        fs::remove_all(stage);
        throw Error("write_bundle: cannot move bundle into " + target.string() + ": " +
                    ec.message());
    }
    return target.string();
}

}  // namespace bmo
