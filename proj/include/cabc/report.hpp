#pragma once

// Result emission for training runs: CSV tables and hand-written SVG charts
// (laps, imitation loss, lap time, and an XY view of the last evaluation).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cabc/core.hpp"
#include "cabc/track.hpp"

namespace cabc {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw Error("csv: missing column '" + name + "'");
    }

    std::vector<double> numbers(const std::string& name) const {
        const std::size_t c = column(name);
        std::vector<double> out;
        out.reserve(rows.size());
        for (const auto& r : rows) {
            if (c >= r.size()) throw Error("csv: short row");
            try {
                out.push_back(std::stod(r[c]));
            } catch (const std::exception&) {
                throw Error("csv: column '" + name + "' has non-numeric value '" + r[c] + "'");
            }
        }
        return out;
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open '" + path + "'");
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw Error("'" + path + "' is empty");
    t.header = split_csv_line(line);
    while (std::getline(is, line))
        if (!line.empty()) t.rows.push_back(split_csv_line(line));
    return t;
}

// ---------------------------------------------------------------------------
// SVG line charts.

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct Series {
    std::string label;
    std::vector<double> x, y;
    std::string color = "#1f77b4";
    bool dashed = false;
    std::vector<double> band;  // optional +-band around y (same length)
};

struct Marker {
    double x, y;
    std::string label;
};

struct ChartSpec {
    std::string title, x_label, y_label;
    std::vector<Series> series;
    std::vector<Marker> crosses;
    std::optional<double> reference_y;  // dashed horizontal line
    std::string reference_label;
};

inline std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '&': o += "&amp;"; break;
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

inline std::string render_chart(const ChartSpec& c) {
    const double W = 640, H = 400, L = 70, R = 20, T = 40, B = 55;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto grow = [&](double x, double y) {
        if (!std::isfinite(x) || !std::isfinite(y)) return;
        x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    };
    for (const auto& s : c.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double b = i < s.band.size() ? s.band[i] : 0.0;
            grow(s.x[i], s.y[i] - b);
            grow(s.x[i], s.y[i] + b);
        }
    for (const auto& m : c.crosses) grow(m.x, m.y);
    if (c.reference_y && std::isfinite(x0)) grow(x0, *c.reference_y);
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad, y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(c.title)
       << "</text>\n";
    os << "<g stroke=\"#444\" fill=\"none\"><line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\""
       << H - B << "\"/><line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\"/></g>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
        os << "<text x=\"" << svg_num(px(xv)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << svg_num(xv)
           << "</text>\n";
        os << "<text x=\"" << L - 6 << "\" y=\"" << svg_num(py(yv) + 4) << "\" text-anchor=\"end\">" << svg_num(yv)
           << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(c.x_label)
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << (T + H - B) / 2 << ")\">" << xml_escape(c.y_label) << "</text>\n";

    if (c.reference_y) {
        os << "<line x1=\"" << L << "\" y1=\"" << svg_num(py(*c.reference_y)) << "\" x2=\"" << W - R << "\" y2=\""
           << svg_num(py(*c.reference_y)) << "\" stroke=\"#555\" stroke-dasharray=\"6 4\"/>\n";
        if (!c.reference_label.empty())
            os << "<text x=\"" << W - R - 4 << "\" y=\"" << svg_num(py(*c.reference_y) - 5) << "\" text-anchor=\"end\">"
               << xml_escape(c.reference_label) << "</text>\n";
    }
    double legend_y = T + 8;
    for (const auto& s : c.series) {
        if (!s.band.empty()) {
            os << "<polygon fill=\"" << s.color << "\" fill-opacity=\"0.15\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i) os << svg_num(px(s.x[i])) << ',' << svg_num(py(s.y[i] + s.band[i])) << ' ';
            for (std::size_t i = s.x.size(); i-- > 0;) os << svg_num(px(s.x[i])) << ',' << svg_num(py(s.y[i] - s.band[i])) << ' ';
            os << "\"/>\n";
        }
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.8\""
           << (s.dashed ? " stroke-dasharray=\"5 3\"" : "") << " points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << svg_num(px(s.x[i])) << ',' << svg_num(py(s.y[i]));
        os << "\"/>\n";
        if (s.x.size() == 1)
            os << "<circle cx=\"" << svg_num(px(s.x[0])) << "\" cy=\"" << svg_num(py(s.y[0])) << "\" r=\"3\" fill=\""
               << s.color << "\"/>\n";
        if (!s.label.empty()) {
            os << "<line x1=\"" << W - R - 120 << "\" y1=\"" << legend_y << "\" x2=\"" << W - R - 100 << "\" y2=\""
               << legend_y << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
            os << "<text x=\"" << W - R - 95 << "\" y=\"" << legend_y + 4 << "\">" << xml_escape(s.label) << "</text>\n";
            legend_y += 16;
        }
    }
    for (const auto& m : c.crosses) {
        const double cx = px(m.x), cy = py(m.y), d = 6;
        os << "<g stroke=\"#d62728\" stroke-width=\"2\"><line x1=\"" << svg_num(cx - d) << "\" y1=\"" << svg_num(cy - d)
           << "\" x2=\"" << svg_num(cx + d) << "\" y2=\"" << svg_num(cy + d) << "\"/><line x1=\"" << svg_num(cx - d)
           << "\" y1=\"" << svg_num(cy + d) << "\" x2=\"" << svg_num(cx + d) << "\" y2=\"" << svg_num(cy - d)
           << "\"/></g>\n";
        if (!m.label.empty())
            os << "<text x=\"" << svg_num(cx + 8) << "\" y=\"" << svg_num(cy - 8) << "\" fill=\"#d62728\">"
               << xml_escape(m.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

/// Top view of the track band with a driven path overlaid.
inline std::string render_track_xy(const Track& track, const std::vector<std::pair<double, double>>& path,
                                   const std::string& title) {
    std::vector<std::pair<double, double>> inner, outer, center;
    const int n = 400;
    for (int i = 0; i <= n; ++i) {
        const double s = track.lap_length() * i / n;
        const Pose2 a = track.frenet_to_cartesian(s, track.half_width(), 0.0);
        const Pose2 b = track.frenet_to_cartesian(s, -track.half_width(), 0.0);
        const Pose2 c = track.centerline_pose(s);
        inner.emplace_back(a.x, a.y);
        outer.emplace_back(b.x, b.y);
        center.emplace_back(c.x, c.y);
    }
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto* pts : std::initializer_list<const std::vector<std::pair<double, double>>*>{&inner, &outer, &path})
        for (const auto& [x, y] : *pts) x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    const double W = 640, M = 30;
    const double span = std::max({x1 - x0, y1 - y0, 1e-9});
    const double scale = (W - 2 * M) / span;
    const double H = (y1 - y0) * scale + 2 * M + 20;
    auto pt = [&](double x, double y) { return svg_num(M + (x - x0) * scale) + "," + svg_num(H - M - (y - y0) * scale); };
    auto poly = [&](const std::vector<std::pair<double, double>>& pts, const std::string& style) {
        std::string s = "<polyline fill=\"none\" " + style + " points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) s += (i ? " " : "") + pt(pts[i].first, pts[i].second);
        return s + "\"/>\n";
    };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << svg_num(H) << "\" viewBox=\"0 0 "
       << W << ' ' << svg_num(H) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
    os << poly(inner, "stroke=\"#333\" stroke-width=\"1.5\"");
    os << poly(outer, "stroke=\"#333\" stroke-width=\"1.5\"");
    os << poly(center, "stroke=\"#aaa\" stroke-dasharray=\"4 4\"");
    if (!path.empty()) {
        os << poly(path, "stroke=\"#d62728\" stroke-width=\"1.6\"");
        os << "<circle cx=\"" << svg_num(M + (path.front().first - x0) * scale) << "\" cy=\""
           << svg_num(H - M - (path.front().second - y0) * scale) << "\" r=\"4\" fill=\"#2ca02c\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

struct ScatterPoint {
    double x, y;
    std::string color;
};

/// Square plot of [-box, box]^2: an optional n x n probability heat map
/// (row-major, x outer) under colored points.
inline std::string render_scatter(const std::string& title, double box, const std::vector<ScatterPoint>& pts,
                                  const std::vector<double>& heat = {}, int heat_n = 0) {
    const double W = 520, M = 30, T = 30;
    const double scale = (W - 2 * M) / (2 * box);
    auto px = [&](double x) { return M + (x + box) * scale; };
    auto py = [&](double y) { return T + (box - y) * scale; };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << W + T - M
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
       << "</text>\n";
    if (heat_n > 0 && heat.size() == static_cast<std::size_t>(heat_n) * heat_n) {
        const double cell = 2 * box * scale / heat_n;
        for (int i = 0; i < heat_n; ++i)
            for (int j = 0; j < heat_n; ++j) {
                const double p = std::clamp(heat[static_cast<std::size_t>(i) * heat_n + j], 0.0, 1.0);
                const int g = static_cast<int>(std::lround(255 - 90 * p));
                char fill[16];
                std::snprintf(fill, sizeof(fill), "#%02x%02xff", g, g);
                os << "<rect x=\"" << svg_num(M + i * cell) << "\" y=\"" << svg_num(T + (heat_n - 1 - j) * cell)
                   << "\" width=\"" << svg_num(cell + 0.2) << "\" height=\"" << svg_num(cell + 0.2) << "\" fill=\""
                   << fill << "\"/>\n";
            }
    }
    os << "<rect x=\"" << M << "\" y=\"" << T << "\" width=\"" << W - 2 * M << "\" height=\"" << W - 2 * M
       << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (const auto& p : pts)
        os << "<circle cx=\"" << svg_num(px(p.x)) << "\" cy=\"" << svg_num(py(p.y)) << "\" r=\"1.6\" fill=\""
           << p.color << "\"/>\n";
    os << "</svg>\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Run directory reports.

inline const std::vector<std::string>& required_run_files() {
    static const std::vector<std::string> files{"config.txt", "reports.csv", "expert.csv", "eval_trajectory.csv",
                                                "track.txt"};
    return files;
}

inline void require_run_files(const std::string& dir) {
    std::vector<std::string> missing;
    for (const auto& f : required_run_files())
        if (!std::filesystem::exists(std::filesystem::path(dir) / f)) missing.push_back(f);
    if (missing.empty()) return;
    std::string msg = "run directory '" + dir + "' is missing:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(msg);
}

struct RunData {
    std::string dir;
    std::string method;
    std::vector<double> epoch, laps, loss, lap_mean, lap_std, es_count;
    double expert_mean = 0.0, expert_std = 0.0;
    std::vector<std::pair<double, double>> path;
    Track track;

    /// Epoch at which the second full-lap evaluation stopped training.
    std::optional<std::size_t> early_stop_index() const {
        for (std::size_t i = 0; i < es_count.size(); ++i)
            if (es_count[i] >= 2) return i;
        return std::nullopt;
    }
};

inline RunData load_run(const std::string& dir) {
    require_run_files(dir);
    const auto rep = read_csv(dir + "/reports.csv");
    const auto ex = read_csv(dir + "/expert.csv");
    const auto tr = read_csv(dir + "/eval_trajectory.csv");
    std::string method = "run";
    {
        std::ifstream is(dir + "/config.txt");
        std::string line;
        while (std::getline(is, line))
            if (line.rfind("method = ", 0) == 0) method = line.substr(9);
    }
    RunData r{dir,
              method,
              rep.numbers("epoch"),
              rep.numbers("eval_laps"),
              rep.numbers("imitation_loss"),
              rep.numbers("lap_time_mean"),
              rep.numbers("lap_time_std"),
              rep.numbers("early_stop_count"),
              0.0,
              0.0,
              {},
              Track(read_track_file(dir + "/track.txt"))};
    if (ex.rows.empty()) throw Error("expert.csv has no data row");
    r.expert_mean = ex.numbers("lap_time_mean").front();
    r.expert_std = ex.numbers("lap_time_std").front();
    const auto xs = tr.numbers("x"), ys = tr.numbers("y");
    for (std::size_t i = 0; i < xs.size(); ++i) r.path.emplace_back(xs[i], ys[i]);
    return r;
}

inline std::string method_label(const std::string& m) {
    if (m == "ca") return "constraint-aware";
    if (m == "bc") return "baseline BC";
    return m;
}

/// Writes laps, loss and lap-time CSV+SVG pairs plus trajectory.svg into out.
/// With a baseline run, its curves are overlaid on the first two charts.
inline std::vector<std::string> emit_reports(const std::string& run_dir, const std::optional<std::string>& baseline_dir,
                                             const std::string& out_dir) {
    const RunData run = load_run(run_dir);
    std::optional<RunData> base;
    if (baseline_dir) base = load_run(*baseline_dir);
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    auto write = [&](const std::string& name, const std::string& text) {
        const std::string path = out_dir + "/" + name;
        std::ofstream os(path, std::ios::binary);
        if (!os) throw Error("cannot write '" + path + "'");
        os << text;
        written.push_back(path);
    };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    auto table = [&](const std::string& col, const std::vector<double>& a, const std::vector<double>* b) {
        std::string s = "epoch," + col + (b ? "," + col + "_baseline" : "") + "\n";
        const std::size_t n = std::max(a.size(), b ? b->size() : 0);
        for (std::size_t i = 0; i < n; ++i) {
            s += std::to_string(i) + "," + (i < a.size() ? num(a[i]) : "");
            if (b) s += "," + (i < b->size() ? num((*b)[i]) : std::string());
            s += "\n";
        }
        return s;
    };

    const std::string blue = "#1f77b4", orange = "#ff7f0e";
    {
        ChartSpec c{"Laps without constraint violation", "epoch", "laps", {}, {}, {}, {}};
        c.series.push_back({method_label(run.method), run.epoch, run.laps, blue, false, {}});
        if (base) c.series.push_back({method_label(base->method), base->epoch, base->laps, orange, false, {}});
        write("laps.csv", table("laps", run.laps, base ? &base->laps : nullptr));
        write("laps.svg", render_chart(c));
    }
    {
        ChartSpec c{"Imitation loss", "epoch", "loss", {}, {}, {}, {}};
        c.series.push_back({method_label(run.method), run.epoch, run.loss, blue, false, {}});
        if (auto i = run.early_stop_index()) c.crosses.push_back({run.epoch[*i], run.loss[*i], "early stop"});
        if (base) {
            c.series.push_back({method_label(base->method), base->epoch, base->loss, orange, false, {}});
            if (auto i = base->early_stop_index()) c.crosses.push_back({base->epoch[*i], base->loss[*i], "early stop"});
        }
        write("loss.csv", table("imitation_loss", run.loss, base ? &base->loss : nullptr));
        write("loss.svg", render_chart(c));
    }
    {
        // Only evaluations that completed at least one lap have a lap time.
        Series s{method_label(run.method), {}, {}, blue, false, {}};
        std::string csv = "epoch,lap_time_mean,lap_time_std\n";
        for (std::size_t i = 0; i < run.epoch.size(); ++i) {
            if (run.laps[i] < 1) continue;
            s.x.push_back(run.epoch[i]);
            s.y.push_back(run.lap_mean[i]);
            s.band.push_back(run.lap_std[i]);
            csv += std::to_string(static_cast<long long>(run.epoch[i])) + "," + num(run.lap_mean[i]) + "," +
                   num(run.lap_std[i]) + "\n";
        }
        csv += "expert," + num(run.expert_mean) + "," + num(run.expert_std) + "\n";
        ChartSpec c{"Lap time (mean +- std)", "epoch", "lap time [s]", {}, {}, run.expert_mean, "expert"};
        c.series.push_back(std::move(s));
        write("lap_time.csv", csv);
        write("lap_time.svg", render_chart(c));
    }
    write("trajectory.svg", render_track_xy(run.track, run.path, "Last evaluation rollout on " + run.track.name()));
    return written;
}

}  // namespace cabc
