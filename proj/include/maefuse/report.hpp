#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "maefuse/errors.hpp"

namespace maefuse {

// Percent with two decimals, the tables' number format: 0.9519 -> "95.19".
inline std::string format_pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

// Standard deviations print with three decimals (already in percent units).
inline std::string format_std_pct(double value_pct) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", value_pct);
    return buf;
}

inline std::string format_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// A small rectangular report with a stable column order, rendered as CSV
// and as a Markdown mirror with identical columns.
struct ReportTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    void add_row(std::vector<std::string> cells) {
        if (cells.size() != columns.size()) {
            throw ContractError("report row has " + std::to_string(cells.size()) + " cells, table has " +
                                std::to_string(columns.size()) + " columns");
        }
        rows.push_back(std::move(cells));
    }

    static std::string csv_escape(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string out = "\"";
        for (char c : s) {
            if (c == '"') out += '"';
            out += c;
        }
        return out + "\"";
    }

    std::string csv() const {
        std::string out;
        for (size_t i = 0; i < columns.size(); ++i) {
            if (i) out += ",";
            out += csv_escape(columns[i]);
        }
        out += "\n";
        for (const auto& row : rows) {
            for (size_t i = 0; i < row.size(); ++i) {
                if (i) out += ",";
                out += csv_escape(row[i]);
            }
            out += "\n";
        }
        return out;
    }

    std::string markdown() const {
        std::string out = "|";
        for (const auto& c : columns) out += " " + c + " |";
        out += "\n|";
        for (size_t i = 0; i < columns.size(); ++i) out += " --- |";
        out += "\n";
        for (const auto& row : rows) {
            out += "|";
            for (const auto& cell : row) out += " " + cell + " |";
            out += "\n";
        }
        return out;
    }

    void write(const std::filesystem::path& csv_path, const std::filesystem::path& md_path) const {
        if (rows.empty()) throw ContractError("report: no rows to emit");
        std::ofstream cs(csv_path);
        if (!cs) throw DataError("cannot write " + csv_path.string());
        cs << csv();
        std::ofstream ms(md_path);
        if (!ms) throw DataError("cannot write " + md_path.string());
        ms << markdown();
    }
};

// Re-render an existing report.csv as Markdown (the `report` subcommand).
inline ReportTable read_csv_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    ReportTable t;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cur;
        bool quoted = false;
        for (size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (quoted) {
                if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else if (c == '"') {
                    quoted = false;
                } else {
                    cur += c;
                }
            } else if (c == '"') {
                quoted = true;
            } else if (c == ',') {
                cells.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        cells.push_back(cur);
        if (header) {
            t.columns = cells;
            header = false;
        } else {
            t.add_row(cells);
        }
    }
    if (t.columns.empty()) throw DataError("empty report CSV " + path.string());
    return t;
}

} // namespace maefuse
