#pragma once

// Minimal CSV layer for feature/embedding/score files: header row followed
// by numeric rows. Parsing is locale-independent (std::from_chars) and
// errors carry 1-based line numbers.

#include <Eigen/Dense>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunelab/common.hpp"

namespace prunelab {

struct CsvTable {
    std::vector<std::string> header;
    Eigen::MatrixXd values;  // one row per data line
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

inline double parse_cell(std::string_view cell, const std::filesystem::path& path, size_t line_no) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
        std::ostringstream msg;
        msg << path.string() << ": line " << line_no << ": cannot parse '" << std::string(cell)
            << "' as a number";
        throw std::runtime_error(msg.str());
    }
    return v;
}

}  // namespace detail

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    std::string line;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view sv = detail::trim(line);
        if (sv.empty() || sv.front() == '#') continue;
        auto fields = detail::split_fields(sv);
        if (header.empty()) {
            for (auto f : fields) header.emplace_back(f);
            continue;
        }
        if (fields.size() != header.size()) {
            std::ostringstream msg;
            msg << path.string() << ": line " << line_no << ": expected " << header.size()
                << " fields, got " << fields.size();
            throw std::runtime_error(msg.str());
        }
        std::vector<double> row(fields.size());
        for (size_t j = 0; j < fields.size(); ++j) row[j] = detail::parse_cell(fields[j], path, line_no);
        rows.push_back(std::move(row));
    }
    if (header.empty()) throw std::runtime_error(path.string() + ": empty file");

    CsvTable table;
    table.header = std::move(header);
    table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.header.size()));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < rows[i].size(); ++j)
            table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return table;
}

// Writes atomically (temp file + rename). Values round-trip exactly.
inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values, const std::string& comment = {}) {
    if (values.cols() != static_cast<Eigen::Index>(header.size()))
        throw std::invalid_argument("write_csv: header/value column mismatch");
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        if (!comment.empty()) out << "# " << comment << "\n";
        for (size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
        out << "\n";
        for (Eigen::Index i = 0; i < values.rows(); ++i) {
            for (Eigen::Index j = 0; j < values.cols(); ++j)
                out << (j ? "," : "") << format_double(values(i, j));
            out << "\n";
        }
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace prunelab
