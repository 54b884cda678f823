#include "pseudoseg/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "pseudoseg/error.hpp"

namespace pseudoseg {

namespace fs = std::filesystem;

double median(std::vector<double> v)
{
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace {

double metric_of(const MetricsReport& r, const std::string& metric)
{
    if (metric == "dice") return r.dice;
    if (metric == "precision") return r.precision;
    if (metric == "recall") return r.recall;
    throw InvalidArgument("unknown metric '" + metric + "'");
}

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string series_label(Scheme s, double alpha)
{
    return s == Scheme::seg3d_pseudo ? to_string(s) + " (alpha=" + fmt("%g", alpha) + ")" : to_string(s);
}

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

} // namespace

std::vector<Series> summarize(const std::vector<MetricsReport>& reports, const std::string& metric)
{
    // Keyed so series come out in scheme order, then alpha.
    std::map<std::pair<int, double>, std::map<double, std::vector<double>>> groups;
    for (const auto& r : reports) {
        if (r.failed()) continue;
        const auto& c = r.condition;
        groups[{static_cast<int>(c.scheme), c.alpha}][c.labeled_fraction].push_back(metric_of(r, metric));
    }
    std::vector<Series> out;
    for (const auto& [key, by_fraction] : groups) {
        Series s{series_label(static_cast<Scheme>(key.first), key.second), static_cast<Scheme>(key.first), key.second, {}};
        for (const auto& [f, values] : by_fraction) s.points.push_back({f, median(values), values});
        out.push_back(std::move(s));
    }
    return out;
}

std::string render_svg(const std::vector<Series>& series, const std::string& metric, const std::string& note)
{
    constexpr double W = 640, H = 420, L = 70, R = 200, T = 40, B = 60;
    const double pw = W - L - R, ph = H - T - B;
    auto sx = [&](double f) { return L + f * pw; };
    auto sy = [&](double v) { return T + (1.0 - v) * ph; };

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' '
      << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    if (!note.empty()) o << "<desc>" << note << "</desc>\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << L + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">Test " << metric
      << " vs labeled fraction</text>\n";
    for (int i = 0; i <= 5; ++i) {
        const double v = i / 5.0;
        o << "<line x1=\"" << L << "\" x2=\"" << L + pw << "\" y1=\"" << sy(v) << "\" y2=\"" << sy(v)
          << "\" stroke=\"#ddd\"/>\n";
        o << "<text x=\"" << L - 8 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\">" << fmt("%.1f", v) << "</text>\n";
        o << "<line x1=\"" << sx(v) << "\" x2=\"" << sx(v) << "\" y1=\"" << T + ph << "\" y2=\"" << T + ph + 5
          << "\" stroke=\"black\"/>\n";
        o << "<text x=\"" << sx(v) << "\" y=\"" << T + ph + 20 << "\" text-anchor=\"middle\">" << fmt("%g", v * 100)
          << "%</text>\n";
    }
    o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">labeled voxel fraction</text>\n";
    o << "<text transform=\"translate(20," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << metric
      << "</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* color = kColors[i % std::size(kColors)];
        std::string pts;
        for (const auto& p : s.points) {
            for (double v : p.values)
                o << "<circle cx=\"" << sx(p.fraction) << "\" cy=\"" << sy(v) << "\" r=\"2.5\" fill=\"" << color
                  << "\" fill-opacity=\"0.35\"/>\n";
            pts += fmt("%.2f", sx(p.fraction)) + "," + fmt("%.2f", sy(p.median)) + " ";
        }
        o << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        for (const auto& p : s.points)
            o << "<circle cx=\"" << sx(p.fraction) << "\" cy=\"" << sy(p.median) << "\" r=\"4\" fill=\"" << color << "\"/>\n";
        const double ly = T + 10 + 20.0 * static_cast<double>(i);
        o << "<line x1=\"" << L + pw + 15 << "\" x2=\"" << L + pw + 40 << "\" y1=\"" << ly << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << L + pw + 46 << "\" y=\"" << ly + 4 << "\">" << s.label << "</text>\n";
    }
    o << "<text x=\"" << L + pw + 15 << "\" y=\"" << T + 20.0 * static_cast<double>(series.size()) + 16
      << "\" fill=\"#666\">line: median, dots: seeds</text>\n";
    o << "</svg>\n";
    return o.str();
}

std::vector<fs::path> write_plots(const std::vector<MetricsReport>& reports, const fs::path& dir, const std::string& note)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::vector<fs::path> out;
    for (const std::string metric : {"dice", "precision", "recall"}) {
        out.push_back(dir / (metric + ".svg"));
        std::ofstream f(out.back(), std::ios::binary);
        f << render_svg(summarize(reports, metric), metric, note);
        if (!f) throw IoError("failed writing " + out.back().string());
    }
    return out;
}

std::string summary_table(const std::vector<MetricsReport>& reports)
{
    std::ostringstream o;
    o << "| series | labeled fraction | n | median dice | median precision | median recall |\n";
    o << "|---|---|---|---|---|---|\n";
    const auto d = summarize(reports, "dice");
    const auto p = summarize(reports, "precision");
    const auto r = summarize(reports, "recall");
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t k = 0; k < d[i].points.size(); ++k)
            o << "| " << d[i].label << " | " << fmt("%.4g", d[i].points[k].fraction) << " | " << d[i].points[k].values.size()
              << " | " << fmt("%.4f", d[i].points[k].median) << " | " << fmt("%.4f", p[i].points[k].median) << " | "
              << fmt("%.4f", r[i].points[k].median) << " |\n";
    std::size_t failed = 0;
    for (const auto& rep : reports) failed += rep.failed();
    if (failed) o << "\n" << failed << " failed run(s) excluded.\n";
    return o.str();
}

} // namespace pseudoseg
