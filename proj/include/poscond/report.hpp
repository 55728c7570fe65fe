// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "poscond/analysis.hpp"
#include "poscond/error.hpp"

namespace poscond {

/// Shortest decimal that round-trips; "nan" for NaN.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// CSV table whose first line is a "# config_hash=..." comment.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    template <typename... Cells>
    void row(const Cells&... cells) {
        std::vector<std::string> r;
        (r.push_back(cell(cells)), ...);
        if (r.size() != header_.size()) fail(ErrorKind::ConfigError, "CSV row width differs from its header");
        rows_.push_back(std::move(r));
    }

    std::string str(const std::string& config_hash) const {
        std::ostringstream out;
        out << "# config_hash=" << config_hash << '\n';
        write_line(out, header_);
        for (const auto& r : rows_) write_line(out, r);
        return out.str();
    }

    const std::vector<std::vector<std::string>>& rows() const { return rows_; }

private:
    static std::string cell(double v) { return format_number(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(std::string_view s) { return std::string(s); }
    static std::string cell(const char* s) { return s; }
    template <typename T>
        requires std::is_integral_v<T>
    static std::string cell(T v) {
        return std::to_string(v);
    }

    static void write_line(std::ostream& out, const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            const auto& c = cells[i];
            if (c.find_first_of(",\"\n") != std::string::npos) {
                out << '"';
                for (char ch : c) out << (ch == '"' ? "\"\"" : std::string(1, ch));
                out << '"';
            } else {
                out << c;
            }
        }
        out << '\n';
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out << content;
    if (!out) fail(ErrorKind::IoError, "short write to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Config hash stamped on the first line of a CSV, or empty.
inline std::string csv_config_hash(const std::string& content) {
    static const std::string prefix = "# config_hash=";
    if (content.rfind(prefix, 0) != 0) return {};
    const auto eol = content.find('\n');
    return content.substr(prefix.size(), eol == std::string::npos ? std::string::npos : eol - prefix.size());
}

inline CsvTable profiles_csv(const PositionalProfile& prof) {
    CsvTable t({"layer", "position", "mean", "variance"});
    for (std::size_t l = 0; l < prof.L; ++l)
        for (std::size_t p = 0; p < prof.P; ++p) t.row(l + 1, p + 1, prof.mean[l][p], prof.variance[l][p]);
    return t;
}

inline CsvTable metrics_csv(const BiasMetrics& m) {
    CsvTable t({"layer", "prim_frac", "rec_frac"});
    for (std::size_t l = 0; l < m.prim_frac.size(); ++l) t.row(l + 1, m.prim_frac[l], m.rec_frac[l]);
    return t;
}

inline CsvTable consistency_csv(const ConsistencyResult& c) {
    CsvTable t({"layer", "mean_r", "n_pairs"});
    for (std::size_t l = 0; l < c.mean_r.size(); ++l) t.row(l + 1, c.mean_r[l], c.n_pairs[l]);
    return t;
}

inline CsvTable pos_importance_csv(const WordImportance& wi) {
    CsvTable t({"layer", "pos_tag", "pos_class", "mean", "count"});
    for (std::size_t l = 0; l < wi.L; ++l) {
        for (const auto& g : wi.by_tag) t.row(l + 1, g.pos_tag, to_string(g.pos_class), g.mean[l], g.count);
        for (const auto& g : wi.by_class) t.row(l + 1, g.pos_tag, to_string(g.pos_class), g.mean[l], g.count);
    }
    return t;
}

inline CsvTable dominance_by_position_csv(const DominanceTable& d) {
    CsvTable t({"position", "layer", "percent"});
    for (std::size_t p = 0; p < d.by_position.size(); ++p)
        for (std::size_t l = 0; l < d.L; ++l) t.row(p + 1, l + 1, d.by_position[p][l]);
    return t;
}

inline CsvTable dominance_by_pos_csv(const DominanceTable& d) {
    CsvTable t({"pos_tag", "layer", "percent"});
    for (const auto& [tag, pct] : d.by_pos)
        for (std::size_t l = 0; l < d.L; ++l) t.row(tag, l + 1, pct[l]);
    return t;
}

struct Series {
    std::string label;
    std::vector<double> y;
};

/// Minimal SVG line chart; x runs 1..n.
inline std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                                  const std::vector<Series>& series) {
    const double width = 640, height = 400, left = 60, right = 150, top = 40, bottom = 50;
    std::size_t n = 0;
    double lo = 0, hi = 0;
    bool first = true;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y) {
            if (!std::isfinite(v)) continue;
            lo = first ? v : std::min(lo, v);
            hi = first ? v : std::max(hi, v);
            first = false;
        }
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pw = width - left - right, ph = height - top - bottom;
    auto x = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
    auto y = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
                                   "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"};
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << left << "\" y=\"24\" font-size=\"15\">" << title << "</text>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < n; ++i) {
        out << "<text x=\"" << x(i) << "\" y=\"" << top + ph + 16 << "\" font-size=\"11\" text-anchor=\"middle\">" << i + 1
            << "</text>\n";
    }
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        out << "<text x=\"" << left - 6 << "\" y=\"" << y(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
            << format_number(std::round(v * 1000) / 1000) << "</text>\n";
    }
    out << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" font-size=\"12\" text-anchor=\"middle\">" << x_label
        << "</text>\n";
    out << "<text x=\"14\" y=\"" << top + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << top + ph / 2
        << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = colors[k % std::size(colors)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            if (std::isfinite(s.y[i])) out << x(i) << ',' << y(s.y[i]) << ' ';
        }
        out << "\"/>\n";
        out << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 14 * static_cast<double>(k) + 10
            << "\" font-size=\"11\" fill=\"" << color << "\">" << s.label << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace poscond
