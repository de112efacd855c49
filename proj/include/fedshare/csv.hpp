#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "fedshare/errors.hpp"

namespace fedshare::csv {

// Shortest round-trip representation via to_chars: locale-free and
// deterministic, which keeps rewritten artifacts byte-identical.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string format_int(std::int64_t v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class writer {
public:
    explicit writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw validation_error("csv: cannot open for writing: " + path);
    }

    void raw_row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    template <typename... Ts>
    void row(const Ts&... cells) {
        raw_row({cell(cells)...});
    }

private:
    static std::string cell(double v) { return format_double(v); }
    static std::string cell(int v) { return format_int(v); }
    static std::string cell(std::int64_t v) { return format_int(v); }
    static std::string cell(std::size_t v) { return format_int(static_cast<std::int64_t>(v)); }
    static std::string cell(const char* s) { return s; }
    static std::string cell(const std::string& s) { return s; }

    std::ofstream out_;
};

// Minimal reader: no quoting, comma-separated, used for our own artifacts.
inline std::vector<std::vector<std::string>> read_rows(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("csv: cannot open for reading: " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

inline double parse_double(const std::string& s) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc()) throw validation_error("csv: bad number: '" + s + "'");
    return v;
}

} // namespace fedshare::csv
