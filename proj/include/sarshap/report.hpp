#pragma once

// Report emission: report.json (full precision, schema 1), aggregate.csv,
// trajectory.csv and optional SVG line charts.
//
// CSV formatting: ratios and accuracies with 4 decimals, Shapley values and
// interactions with 6. Undefined values are left empty.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "sarshap/error.hpp"
#include "sarshap/imaging.hpp"
#include "sarshap/pipeline.hpp"

namespace sarshap {

inline constexpr int kReportSchema = 1;

namespace detail {

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

inline nlohmann::json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; }

inline nlohmann::json triple_json(const Triple& t) { return nlohmann::json::array({t[0], t[1], t[2]}); }

inline nlohmann::json scope_json(const ScopeAggregate& a) {
  nlohmann::json regions = nlohmann::json::object();
  for (int k = 0; k < 3; ++k)
    regions[kRegionNames[k]] = {{"shapley", stat_json(a.phi[k])},
                                {"ratio", stat_json(a.ratio[k])},
                                {"ratio_of_means", a.ratio_of_means[k]},
                                {"shapley_std_replicates", a.phi_std_replicates[k]},
                                {"ratio_std_replicates", a.ratio_std_replicates[k]}};
  nlohmann::json pairs = nlohmann::json::object();
  for (int k = 0; k < 3; ++k)
    pairs[kPairNames[k]] = {{"bsi", stat_json(a.bsi[k])}, {"bsi_std_replicates", a.bsi_std_replicates[k]}};
  return {{"scope", a.scope},         {"samples", a.samples}, {"failed", a.failed},
          {"ratio_undefined", a.ratio_undefined}, {"accuracy", a.accuracy}, {"regions", regions},
          {"pairs", pairs}};
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline nlohmann::json report_to_json(const AggregateReport& r) {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["evaluator"] = r.evaluator;
  j["baseline"] = r.baseline;
  j["replicates"] = r.replicates;
  j["seed"] = r.seed;
  j["failed"] = r.failed;
  j["max_efficiency_residual"] = r.max_efficiency_residual;
  j["scopes"] = nlohmann::json::array();
  for (const auto& s : r.scopes) j["scopes"].push_back(detail::scope_json(s));
  j["samples"] = nlohmann::json::array();
  for (const auto& s : r.samples) {
    nlohmann::json e = {{"id", s.id}, {"class", s.class_index}, {"ok", s.ok}};
    if (!s.ok) {
      e["error"] = s.error;
    } else {
      e["shapley"] = detail::triple_json(s.phi);
      e["ratio"] = s.ratio ? detail::triple_json(*s.ratio) : nlohmann::json(nullptr);
      e["bsi"] = detail::triple_json(s.bsi);
      e["shapley_std_replicates"] = detail::triple_json(s.phi_std_replicates);
      e["bsi_std_replicates"] = detail::triple_json(s.bsi_std_replicates);
      e["predicted"] = s.predicted;
      e["max_residual"] = s.max_residual;
    }
    j["samples"].push_back(std::move(e));
  }
  return j;
}

inline nlohmann::json trajectory_to_json(const TrajectoryReport& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : t.rows) {
    nlohmann::json e = {{"checkpoint", row.checkpoint}, {"ok", row.ok}};
    if (row.ok)
      e["overall"] = detail::scope_json(row.overall);
    else
      e["error"] = row.error;
    rows.push_back(std::move(e));
  }
  return {{"schema", kReportSchema}, {"rows", rows}};
}

inline std::string aggregate_csv(const AggregateReport& r) {
  std::ostringstream os;
  os << "scope,region/pair,mean,std,ratio_mean,ratio_std,accuracy\n";
  for (const auto& s : r.scopes) {
    const auto acc = detail::fixed(s.accuracy, 4);
    for (int k = 0; k < 3; ++k) {
      os << s.scope << ',' << kRegionNames[k] << ',' << detail::fixed(s.phi[k].mean, 6) << ','
         << detail::fixed(s.phi[k].std, 6) << ',';
      if (s.ratio[k].count > 0) os << detail::fixed(s.ratio[k].mean, 4) << ',' << detail::fixed(s.ratio[k].std, 4);
      else os << ',';
      os << ',' << acc << '\n';
    }
    for (int k = 0; k < 3; ++k)
      os << s.scope << ',' << kPairNames[k] << ',' << detail::fixed(s.bsi[k].mean, 6) << ','
         << detail::fixed(s.bsi[k].std, 6) << ",,," << acc << '\n';
  }
  return os.str();
}

inline std::string trajectory_csv(const TrajectoryReport& t) {
  std::ostringstream os;
  os << "checkpoint,ok,accuracy,shapley_clutter,shapley_target,shapley_shadow,ratio_clutter,ratio_target,"
        "ratio_shadow,bsi_clutter_target,bsi_target_shadow,bsi_shadow_clutter\n";
  for (const auto& row : t.rows) {
    os << row.checkpoint << ',' << (row.ok ? 1 : 0);
    if (!row.ok) {
      os << ",,,,,,,,,,\n";
      continue;
    }
    const auto& a = row.overall;
    os << ',' << detail::fixed(a.accuracy, 4);
    for (int k = 0; k < 3; ++k) os << ',' << detail::fixed(a.phi[k].mean, 6);
    for (int k = 0; k < 3; ++k) os << ',' << (a.ratio[k].count ? detail::fixed(a.ratio[k].mean, 4) : "");
    for (int k = 0; k < 3; ++k) os << ',' << detail::fixed(a.bsi[k].mean, 6);
    os << '\n';
  }
  return os.str();
}

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Minimal multi-series line chart.
inline std::string line_chart_svg(const std::string& title, const std::vector<Series>& series) {
  constexpr double W = 640, H = 400, L = 60, R = 150, T = 40, B = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << detail::xml_escape(title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = y0 + (y1 - y0) * t / 4.0;
    const double xv = x0 + (x1 - x0) * t / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fixed(yv, 3) << "</text>\n";
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fixed(xv, 0)
       << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto* color = kColors[k % 5];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[k].x.size(); ++i)
      if (std::isfinite(series[k].y[i])) os << px(series[k].x[i]) << ',' << py(series[k].y[i]) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 20 + 18 * k << "\" fill=\"" << color
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::xml_escape(series[k].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

struct EmitOptions {
  bool svg = true;
};

// Writes whichever reports are given. trajectory.csv is skipped when the
// trajectory is absent or has no rows.
inline std::vector<std::filesystem::path> emit_reports(const AggregateReport* report, const TrajectoryReport* trajectory,
                                                       const std::filesystem::path& outdir, EmitOptions options = {}) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError("cannot create output directory " + outdir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& text) {
    detail::write_text(outdir / name, text);
    written.push_back(outdir / name);
  };
  if (report) {
    put("report.json", report_to_json(*report).dump(2) + "\n");
    put("aggregate.csv", aggregate_csv(*report));
  }
  if (trajectory && !trajectory->rows.empty()) {
    put("trajectory.json", trajectory_to_json(*trajectory).dump(2) + "\n");
    put("trajectory.csv", trajectory_csv(*trajectory));
    if (options.svg) {
      auto collect = [&](auto&& pick) {
        std::vector<Series> out(3);
        for (int k = 0; k < 3; ++k) out[k].label = kRegionNames[k];
        for (const auto& row : trajectory->rows) {
          if (!row.ok) continue;
          for (int k = 0; k < 3; ++k) {
            out[k].x.push_back(row.checkpoint);
            out[k].y.push_back(pick(row.overall, k));
          }
        }
        return out;
      };
      put("trajectory_shapley.svg",
          line_chart_svg("Shapley value", collect([](const ScopeAggregate& a, int k) { return a.phi[k].mean; })));
      put("trajectory_ratio.svg", line_chart_svg("Shapley value ratio", collect([](const ScopeAggregate& a, int k) {
                                                   return a.ratio[k].count ? a.ratio[k].mean : NAN;
                                                 })));
      auto bsi = collect([](const ScopeAggregate& a, int k) { return a.bsi[k].mean; });
      for (int k = 0; k < 3; ++k) bsi[k].label = kPairNames[k];
      put("trajectory_bsi.svg", line_chart_svg("Bivariate Shapley interaction", bsi));
      Series acc{"accuracy", {}, {}};
      for (const auto& row : trajectory->rows)
        if (row.ok) acc.x.push_back(row.checkpoint), acc.y.push_back(row.overall.accuracy);
      put("trajectory_accuracy.svg", line_chart_svg("Accuracy", {acc}));
    }
  }
  return written;
}

inline std::string intervention_csv(const std::vector<InterventionRecord>& records) {
  std::ostringstream os;
  os.precision(10);
  os << "id,scr_db,scr_prime_db,alpha\n";
  for (const auto& r : records)
    os << r.id << ',' << detail::fixed(r.scr_db, 6) << ',' << detail::fixed(r.scr_prime_db, 6) << ','
       << detail::fixed(r.alpha, 8) << '\n';
  return os.str();
}

}  // namespace sarshap
