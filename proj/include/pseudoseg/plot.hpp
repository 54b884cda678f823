#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pseudoseg/metrics.hpp"

namespace pseudoseg {

/// Median of the non-failed values; NaN when there are none.
double median(std::vector<double> v);

/// Per-(scheme, alpha) median of a metric at each labeled fraction.
struct SeriesPoint {
    double fraction;
    double median;
    std::vector<double> values;
};

struct Series {
    std::string label;
    Scheme scheme;
    double alpha;
    std::vector<SeriesPoint> points; ///< sorted by fraction
};

/// metric: "dice" | "precision" | "recall"
std::vector<Series> summarize(const std::vector<MetricsReport>& reports, const std::string& metric);

/// Metric vs labeled fraction, one polyline of medians per series with the
/// per-seed values as dots.
std::string render_svg(const std::vector<Series>& series, const std::string& metric, const std::string& note = {});

/// Writes dice.svg, precision.svg and recall.svg into dir; returns the paths.
/// `note` (e.g. the config hash) is embedded as the SVG description.
std::vector<std::filesystem::path> write_plots(const std::vector<MetricsReport>& reports, const std::filesystem::path& dir,
                                               const std::string& note = {});

/// Markdown table of medians per series and fraction.
std::string summary_table(const std::vector<MetricsReport>& reports);

} // namespace pseudoseg
