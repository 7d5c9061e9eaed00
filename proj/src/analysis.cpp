#include "hat/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "hat/errors.hpp"

namespace hat {
namespace {

const std::vector<double>& axis_values(const GridAxes& axes, RuleAxis axis) {
  switch (axis) {
    case RuleAxis::kVi: return axes.v_i;
    case RuleAxis::kW: return axes.w;
    case RuleAxis::kVj: return axes.v_j;
  }
  return axes.v_i;
}

// Per-point coordinate along `axis` for the flattened grid order.
double coordinate(const RuleTable& t, RuleAxis axis, std::size_t flat) {
  const std::size_t nw = t.axes.w.size(), nj = t.axes.v_j.size();
  switch (axis) {
    case RuleAxis::kVi: return t.axes.v_i[flat / (nw * nj)];
    case RuleAxis::kW: return t.axes.w[(flat / nj) % nw];
    case RuleAxis::kVj: return t.axes.v_j[flat % nj];
  }
  return 0.0;
}

std::vector<double> trapezoid_weights(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n == 1) return {1.0};
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i == 0 ? x[0] : x[i - 1];
    const double right = i + 1 == n ? x[n - 1] : x[i + 1];
    w[i] = 0.5 * (right - left);
  }
  const double length = x.back() - x.front();
  for (auto& v : w) v /= length;
  return w;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<double> linspace(double lo, double hi, std::size_t points) {
  if (points == 0) fail(ErrorKind::kUsage, "linspace needs at least one point");
  if (points == 1) return {lo};
  std::vector<double> out(points);
  for (std::size_t i = 0; i < points; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  out.back() = hi;
  return out;
}

GridAxes GridAxes::defaults(std::size_t points) {
  return {linspace(0.0, 1.0, points), linspace(-3.0, 3.0, points), linspace(0.0, 1.0, points)};
}

void GridAxes::validate() const {
  for (const auto* axis : {&v_i, &w, &v_j}) {
    if (axis->empty()) fail(ErrorKind::kUsage, "grid axis is empty");
    for (std::size_t i = 0; i < axis->size(); ++i) {
      if (!std::isfinite((*axis)[i])) fail(ErrorKind::kUsage, "grid axis has a non-finite value");
      if (i > 0 && (*axis)[i] <= (*axis)[i - 1]) {
        fail(ErrorKind::kUsage, "grid axis values must be strictly increasing");
      }
    }
  }
}

std::string_view axis_name(RuleAxis axis) {
  switch (axis) {
    case RuleAxis::kVi: return "v_i";
    case RuleAxis::kW: return "w";
    case RuleAxis::kVj: return "v_j";
  }
  return "v_i";
}

RuleTable grid_eval(const RuleFn& rule, const GridAxes& axes) {
  axes.validate();
  RuleTable table{axes, std::vector<double>(axes.size()), std::nullopt, ""};
  for (std::size_t a = 0; a < axes.v_i.size(); ++a)
    for (std::size_t b = 0; b < axes.w.size(); ++b)
      for (std::size_t c = 0; c < axes.v_j.size(); ++c)
        table.values[table.index(a, b, c)] = rule(axes.v_i[a], axes.w[b], axes.v_j[c]);
  return table;
}

RuleTable grid_eval(const MetaLearner& meta, const GridAxes& axes) {
  return grid_eval(meta.as_function(), axes);
}

RuleFn mean_rule(std::span<const MetaLearner> metas) {
  if (metas.empty()) fail(ErrorKind::kUsage, "pointwise mean of an empty meta-learner list");
  std::vector<MetaLearner> copies(metas.begin(), metas.end());
  return [copies = std::move(copies)](double v_i, double w, double v_j) {
    double mean = 0.0;
    for (std::size_t k = 0; k < copies.size(); ++k) {
      mean += (copies[k](v_i, w, v_j) - mean) / static_cast<double>(k + 1);
    }
    return mean;
  };
}

RuleTable pointwise_mean(std::span<const MetaLearner> metas, const GridAxes& axes) {
  if (metas.empty()) fail(ErrorKind::kUsage, "pointwise mean of an empty meta-learner list");
  RuleTable table = grid_eval(metas[0], axes);
  // Running mean: exact when every member agrees.
  for (std::size_t m = 1; m < metas.size(); ++m) {
    const RuleTable next = grid_eval(metas[m], axes);
    const double count = static_cast<double>(m + 1);
    for (std::size_t i = 0; i < table.values.size(); ++i) {
      table.values[i] += (next.values[i] - table.values[i]) / count;
    }
  }
  table.provenance = "mean of " + std::to_string(metas.size()) + " meta-learners";
  return table;
}

LinearFit variance_explained(const RuleTable& table, RuleAxis axis) {
  const std::size_t n = table.values.size();
  if (n == 0) fail(ErrorKind::kUsage, "variance_explained on an empty table");
  double mx = 0.0, my = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    mx += coordinate(table, axis, p);
    my += table.values[p];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double dx = coordinate(table, axis, p) - mx;
    const double dy = table.values[p] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  LinearFit fit;
  if (syy == 0.0) {
    fit.zero_variance = true;
    fit.intercept = my;
    return fit;
  }
  if (sxx == 0.0) {
    fit.intercept = my;
    return fit;
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
  return fit;
}

JointFit joint_fit(const RuleTable& table) {
  const std::size_t n = table.values.size();
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t p = 0; p < n; ++p) {
    const auto r = static_cast<Eigen::Index>(p);
    design(r, 0) = 1.0;
    design(r, 1) = coordinate(table, RuleAxis::kVi, p);
    design(r, 2) = coordinate(table, RuleAxis::kW, p);
    design(r, 3) = coordinate(table, RuleAxis::kVj, p);
    y(r) = table.values[p];
  }
  JointFit fit;
  const double my = y.mean();
  const double syy = (y.array() - my).square().sum();
  if (syy == 0.0) {
    fit.zero_variance = true;
    fit.intercept = my;
    return fit;
  }
  const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(y);
  const double sse = (y - design * beta).squaredNorm();
  fit.intercept = beta(0);
  fit.coefficients = {beta(1), beta(2), beta(3)};
  fit.r2 = std::clamp(1.0 - sse / syy, 0.0, 1.0);
  return fit;
}

RuleDistance table_distance(const RuleTable& a, const RuleTable& b) {
  if (!(a.axes == b.axes)) fail(ErrorKind::kUsage, "rule tables are on different grids");
  const auto wi = trapezoid_weights(a.axes.v_i);
  const auto ww = trapezoid_weights(a.axes.w);
  const auto wj = trapezoid_weights(a.axes.v_j);
  RuleDistance d;
  for (std::size_t x = 0; x < wi.size(); ++x)
    for (std::size_t y = 0; y < ww.size(); ++y)
      for (std::size_t z = 0; z < wj.size(); ++z) {
        const double weight = wi[x] * ww[y] * wj[z];
        const double diff = a.at(x, y, z) - b.at(x, y, z);
        d.mean_abs += weight * std::abs(diff);
        d.signed_mean += weight * diff;
      }
  return d;
}

std::vector<RuleSample> sample_uniform(const GridAxes& axes, std::size_t n, std::uint64_t seed) {
  axes.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> vi(axes.v_i.front(), axes.v_i.back());
  std::uniform_real_distribution<double> w(axes.w.front(), axes.w.back());
  std::uniform_real_distribution<double> vj(axes.v_j.front(), axes.v_j.back());
  std::vector<RuleSample> out(n);
  for (auto& s : out) {
    s.v_i = vi(rng);
    s.w = w(rng);
    s.v_j = vj(rng);
  }
  return out;
}

PhaseScan phase_scan(std::span<const RuleTable> snapshots, double multiple) {
  if (snapshots.size() < 2) fail(ErrorKind::kUsage, "phase scan needs at least 2 snapshots");
  PhaseScan scan;
  for (const auto& s : snapshots) {
    if (!(s.axes == snapshots[0].axes)) fail(ErrorKind::kUsage, "snapshots are on different grids");
    scan.fits.push_back({variance_explained(s, RuleAxis::kVi), variance_explained(s, RuleAxis::kW),
                         variance_explained(s, RuleAxis::kVj)});
  }
  std::vector<double> distances;
  for (std::size_t k = 1; k < snapshots.size(); ++k) {
    PhaseInterval interval;
    interval.t_from = snapshots[k - 1].t.value_or(static_cast<double>(k - 1));
    interval.t_to = snapshots[k].t.value_or(static_cast<double>(k));
    interval.distance = table_distance(snapshots[k - 1], snapshots[k]);
    distances.push_back(interval.distance.mean_abs);
    scan.intervals.push_back(interval);
  }
  std::sort(distances.begin(), distances.end());
  const std::size_t m = distances.size();
  scan.median_distance = m % 2 ? distances[m / 2] : 0.5 * (distances[m / 2 - 1] + distances[m / 2]);
  scan.threshold = multiple * scan.median_distance;
  for (auto& interval : scan.intervals) {
    interval.flagged = interval.distance.mean_abs > scan.threshold;
  }
  return scan;
}

// ---- files ------------------------------------------------------------------

void write_rule_table_csv(const std::filesystem::path& path, const RuleTable& table) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "v_i,w,v_j,delta_w" << (table.t ? ",t" : "") << '\n';
  const std::string t_suffix = table.t ? "," + format_double(*table.t) : "";
  for (std::size_t a = 0; a < table.axes.v_i.size(); ++a)
    for (std::size_t b = 0; b < table.axes.w.size(); ++b)
      for (std::size_t c = 0; c < table.axes.v_j.size(); ++c) {
        out << format_double(table.axes.v_i[a]) << ',' << format_double(table.axes.w[b]) << ','
            << format_double(table.axes.v_j[c]) << ',' << format_double(table.at(a, b, c))
            << t_suffix << '\n';
      }
  if (!out) fail(ErrorKind::kIo, "failed writing " + path.string());
}

RuleTable read_rule_table_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open rule table " + path.string());
  std::string line;
  std::getline(in, line);
  const bool has_t = line == "v_i,w,v_j,delta_w,t";
  if (!has_t && line != "v_i,w,v_j,delta_w") {
    fail(ErrorKind::kFormat, path.string() + ": unexpected rule table header '" + line + "'");
  }
  std::vector<std::array<double, 5>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<double, 5> row{};
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',') && col < 5) {
      try {
        row[col++] = std::stod(cell);
      } catch (const std::exception&) {
        fail(ErrorKind::kFormat, path.string() + ": bad number '" + cell + "'");
      }
    }
    if (col != (has_t ? 5u : 4u)) fail(ErrorKind::kFormat, path.string() + ": wrong column count");
    rows.push_back(row);
  }
  std::set<double> vi, w, vj;
  for (const auto& r : rows) {
    vi.insert(r[0]);
    w.insert(r[1]);
    vj.insert(r[2]);
  }
  RuleTable table;
  table.axes = {{vi.begin(), vi.end()}, {w.begin(), w.end()}, {vj.begin(), vj.end()}};
  if (rows.size() != table.axes.size()) {
    fail(ErrorKind::kFormat, path.string() + ": rows do not form a complete grid");
  }
  table.values.assign(rows.size(), 0.0);
  for (std::size_t p = 0; p < rows.size(); ++p) {
    const auto& r = rows[p];
    const auto a = static_cast<std::size_t>(std::lower_bound(table.axes.v_i.begin(), table.axes.v_i.end(), r[0]) - table.axes.v_i.begin());
    const auto b = static_cast<std::size_t>(std::lower_bound(table.axes.w.begin(), table.axes.w.end(), r[1]) - table.axes.w.begin());
    const auto c = static_cast<std::size_t>(std::lower_bound(table.axes.v_j.begin(), table.axes.v_j.end(), r[2]) - table.axes.v_j.begin());
    if (table.index(a, b, c) != p) fail(ErrorKind::kFormat, path.string() + ": rows out of grid order");
    table.values[p] = r[3];
  }
  if (has_t && !rows.empty()) table.t = rows[0][4];
  table.provenance = path.filename().string();
  return table;
}

void write_summary_csv(const std::filesystem::path& path, const RuleTable& table) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "axis,r2,slope,intercept\n";
  for (RuleAxis axis : {RuleAxis::kVi, RuleAxis::kW, RuleAxis::kVj}) {
    const auto fit = variance_explained(table, axis);
    out << axis_name(axis) << ',' << format_double(fit.r2) << ',' << format_double(fit.slope) << ','
        << format_double(fit.intercept) << '\n';
  }
}

void write_scatter_svg(const std::filesystem::path& path, const RuleTable& table, RuleAxis axis) {
  constexpr double kWidth = 640, kHeight = 480, kMargin = 50;
  constexpr std::size_t kMaxPoints = 20000;
  const auto& xs = axis_values(table.axes, axis);
  const auto [lo_it, hi_it] = std::minmax_element(table.values.begin(), table.values.end());
  double y_lo = *lo_it, y_hi = *hi_it;
  if (y_hi == y_lo) {
    y_lo -= 1.0;
    y_hi += 1.0;
  }
  const double x_lo = xs.front(), x_hi = xs.size() > 1 ? xs.back() : xs.front() + 1.0;
  auto px = [&](double x) { return kMargin + (x - x_lo) / (x_hi - x_lo) * (kWidth - 2 * kMargin); };
  auto py = [&](double y) { return kHeight - kMargin - (y - y_lo) / (y_hi - y_lo) * (kHeight - 2 * kMargin); };

  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\"" << kWidth - kMargin
      << "\" y2=\"" << kHeight - kMargin << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\""
      << kHeight - kMargin << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
      << axis_name(axis) << " [" << x_lo << ", " << x_hi << "]</text>\n"
      << "<text x=\"12\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 12 " << kHeight / 2
      << ")\" text-anchor=\"middle\">delta_w [" << y_lo << ", " << y_hi << "]</text>\n";
  const std::size_t stride = std::max<std::size_t>(1, table.values.size() / kMaxPoints);
  for (std::size_t p = 0; p < table.values.size(); p += stride) {
    out << "<circle cx=\"" << px(coordinate(table, axis, p)) << "\" cy=\"" << py(table.values[p])
        << "\" r=\"1.2\" fill=\"steelblue\" fill-opacity=\"0.3\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace hat
