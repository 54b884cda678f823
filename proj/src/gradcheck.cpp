#include "pseudoseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pseudoseg/rng.hpp"

namespace pseudoseg::nn {

namespace {

void check_finite(const Tensor<double>& t, const std::string& what)
{
    for (double v : t.data())
        if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite value in " + what);
}

double project(const Tensor<double>& y, const Tensor<double>& r)
{
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
}

} // namespace

GradCheckReport grad_check(const CheckedOp& op, const std::vector<Tensor<double>>& point, const GradCheckOptions& options)
{
    Rng rng(options.seed);
    const Tensor<double> y0 = op.forward(point);
    check_finite(y0, op.name + " output");
    Tensor<double> r(y0.dims());
    for (auto& v : r.data()) v = rng.uniform(-1.0, 1.0);

    const auto analytic = op.backward(point, r);
    require(analytic.size() == point.size(), "grad_check: backward must return one gradient per argument");

    struct Coord {
        std::size_t arg, index;
    };
    std::vector<Coord> coords;
    std::size_t total = 0;
    for (std::size_t a = 0; a < point.size(); ++a) {
        if (analytic[a].size() == 0) continue;
        require(analytic[a].dims() == point[a].dims(), "grad_check: gradient shape differs from argument " + std::to_string(a));
        check_finite(analytic[a], op.name + " gradient");
        total += point[a].size();
        for (std::size_t i = 0; i < point[a].size(); ++i) coords.push_back({a, i});
    }
    if (total > options.exhaustive_limit && coords.size() > options.sample_size) {
        rng.shuffle(coords.begin(), coords.end());
        coords.resize(options.sample_size);
        std::sort(coords.begin(), coords.end(), [](const Coord& l, const Coord& r) {
            return l.arg != r.arg ? l.arg < r.arg : l.index < r.index;
        });
    }

    GradCheckReport report{op.name, 0.0, options.tolerance, false, coords.size(), {}};
    std::vector<Tensor<double>> args = point;
    for (const auto& c : coords) {
        double& x = args[c.arg][c.index];
        const double saved = x;
        x = saved + options.h;
        const double up = project(op.forward(args), r);
        x = saved - options.h;
        const double down = project(op.forward(args), r);
        x = saved;
        const double numeric = (up - down) / (2 * options.h);
        if (!std::isfinite(numeric)) throw NumericalError("grad_check: non-finite finite difference in " + op.name);
        const double a = analytic[c.arg][c.index];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        if (rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst = "arg" + std::to_string(c.arg) + "[" + std::to_string(c.index) + "]";
        }
    }
    report.pass = report.max_rel_error < report.tolerance;
    return report;
}

} // namespace pseudoseg::nn
