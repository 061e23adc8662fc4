#include "musel/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "musel/errors.hpp"

namespace musel {

namespace fs = std::filesystem;
using nlohmann::json;

RunLog parse_run_log(std::istream& is) {
  RunLog log;
  std::string line;
  bool have_header = false;
  std::size_t lineno = 0;
  try {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        have_header = true;
        log.task = task_from_string(j.at("task").get<std::string>());
        log.strategy = strategy_from_string(j.at("strategy").get<std::string>());
        log.seed = j.at("seed").get<std::uint64_t>();
        const json& cfg = j.at("config");
        log.world = cfg.at("world").get<WorldConfig>();
        log.lp_bins = cfg.at("lp").at("bins").get<int>();
      } else if (type == "iter") {
        const std::size_t iter = j.at("iter").get<std::size_t>();
        log.iterations = iter;
        for (const auto& s : j.at("selected")) {
          LoggedSelection sel;
          sel.iter = iter;
          sel.input.alpha = s.at("alpha").get<double>();
          sel.input.pos = {s.at("pos")[0].get<double>(), s.at("pos")[1].get<double>()};
          sel.effect.delta = {s.at("effect")[0].get<double>(), s.at("effect")[1].get<double>()};
          sel.breakdown = {s.at("sigma").get<double>(), s.at("min_dist").get<double>(),
                           s.at("lp").get<double>(), s.at("u_model").get<double>()};
          sel.score = s.at("score").get<double>();
          log.selections.push_back(sel);
        }
        for (const auto& u : j.at("lp_updates"))
          log.lp_updates.push_back({iter, u[0].get<std::size_t>(), u[1].get<double>()});
        if (j.contains("rmse")) log.rmse[iter] = j.at("rmse").get<double>();
      } else if (type == "end") {
        log.complete = true;
      } else if (type == "error") {
        log.error = j.at("message").get<std::string>();
      } else {
        throw ConfigError("unknown record type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError("run log line " + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw ConfigError("run log has no header");
  return log;
}

std::vector<RunLog> load_run_logs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<RunLog> logs;
  for (const auto& f : files) {
    std::ifstream is(f);
    logs.push_back(parse_run_log(is));
  }
  return logs;
}

std::vector<AggregateRow> aggregate_rmse(const std::vector<RunLog>& logs) {
  using Key = std::tuple<Task, Strategy>;
  std::map<Key, std::map<std::size_t, std::vector<std::pair<std::uint64_t, double>>>> values;
  std::map<Key, std::pair<std::size_t, std::size_t>> totals;  // (runs, failed)
  for (const auto& log : logs) {
    const Key key{log.task, log.strategy};
    auto& t = totals[key];
    ++t.first;
    if (!log.complete) ++t.second;
    for (const auto& [iter, v] : log.rmse) values[key][iter].emplace_back(log.seed, v);
  }
  std::vector<AggregateRow> rows;
  for (auto& [key, by_iter] : values) {
    const auto [runs, failed] = totals[key];
    for (auto& [iter, vals] : by_iter) {
      // Summation in seed order so the result does not depend on file order.
      std::sort(vals.begin(), vals.end());
      const double n = static_cast<double>(vals.size());
      double mean = 0.0;
      for (const auto& [_, v] : vals) mean += v;
      mean /= n;
      double ss = 0.0;
      for (const auto& [_, v] : vals) ss += (v - mean) * (v - mean);
      const double sem = vals.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
      std::string warning;
      if (failed > 0) warning = std::to_string(failed) + " of " + std::to_string(runs) + " runs failed";
      else if (vals.size() < runs) warning = "checkpoint missing in some runs";
      rows.push_back({std::get<0>(key), std::get<1>(key), iter, mean, sem, vals.size(), failed, warning});
    }
  }
  return rows;
}

void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "task,strategy,iter,mean_rmse,sem,n_runs,n_failed,warning\n";
  os << std::setprecision(17);
  for (const auto& r : rows)
    os << to_string(r.task) << ',' << to_string(r.strategy) << ',' << r.iter << ',' << r.mean << ','
       << r.sem << ',' << r.runs << ',' << r.failed << ',' << r.warning << '\n';
}

std::vector<double> Histogram2D::normalized() const {
  std::vector<double> out(counts.size(), 0.0);
  if (total == 0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i)
    out[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return out;
}

std::vector<double> Histogram2D::log_scaled() const {
  auto n = normalized();
  for (double& v : n) v = std::log10(1.0 + v);
  return n;
}

Histogram2D sampling_histogram(const std::vector<RunLog>& logs, int bins) {
  if (logs.empty()) throw ConfigError("sampling_histogram: no logs");
  if (bins < 1) throw ConfigError("sampling_histogram: bins must be positive");
  Histogram2D h;
  h.bins = bins;
  const WorldConfig& w = logs.front().world;
  h.x_min = -w.half_extent_x;
  h.x_max = w.half_extent_x;
  h.y_min = -w.half_extent_y;
  h.y_max = w.half_extent_y;
  h.counts.assign(static_cast<std::size_t>(bins * bins), 0);
  auto bin = [bins](double v, double lo, double hi) {
    const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    return std::clamp(b, 0, bins - 1);
  };
  for (const auto& log : logs) {
    for (const auto& s : log.selections) {
      const int ix = bin(s.input.pos.x, h.x_min, h.x_max);
      const int iy = bin(s.input.pos.y, h.y_min, h.y_max);
      ++h.counts[static_cast<std::size_t>(ix * bins + iy)];
      ++h.total;
    }
  }
  return h;
}

void write_histogram_csv(std::ostream& os, const Histogram2D& h) {
  os << "ix,iy,x_lo,x_hi,y_lo,y_hi,count,normalized,log10_1p_normalized\n";
  os << std::setprecision(17);
  const auto norm = h.normalized();
  const auto logs = h.log_scaled();
  const double wx = (h.x_max - h.x_min) / h.bins;
  const double wy = (h.y_max - h.y_min) / h.bins;
  for (int ix = 0; ix < h.bins; ++ix)
    for (int iy = 0; iy < h.bins; ++iy) {
      const auto i = static_cast<std::size_t>(ix * h.bins + iy);
      os << ix << ',' << iy << ',' << h.x_min + ix * wx << ',' << h.x_min + (ix + 1) * wx << ','
         << h.y_min + iy * wy << ',' << h.y_min + (iy + 1) * wy << ',' << h.counts[i] << ','
         << norm[i] << ',' << logs[i] << '\n';
    }
}

void write_histogram_svg(std::ostream& os, const Histogram2D& h, const std::vector<double>& x_edges,
                         const std::vector<double>& y_edges, const std::string& title) {
  const double size = 500.0;
  const double cell = size / h.bins;
  const auto vals = h.log_scaled();
  const double vmax = std::max(1e-300, *std::max_element(vals.begin(), vals.end()));
  auto sx = [&](double x) { return (x - h.x_min) / (h.x_max - h.x_min) * size; };
  auto sy = [&](double y) { return size - (y - h.y_min) / (h.y_max - h.y_min) * size; };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size + 30
     << "\">\n<text x=\"5\" y=\"20\" font-size=\"14\">" << title << "</text>\n<g transform=\"translate(0,30)\">\n";
  os << "<rect width=\"" << size << "\" height=\"" << size << "\" fill=\"#000\"/>\n";
  for (int ix = 0; ix < h.bins; ++ix)
    for (int iy = 0; iy < h.bins; ++iy) {
      const double v = vals[static_cast<std::size_t>(ix * h.bins + iy)] / vmax;
      if (v <= 0.0) continue;
      const int level = static_cast<int>(std::lround(255.0 * v));
      os << "<rect x=\"" << ix * cell << "\" y=\"" << size - (iy + 1) * cell << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"rgb(" << level << ',' << level / 2 << ','
         << 255 - level << ")\"/>\n";
    }
  for (double x : x_edges)
    os << "<line x1=\"" << sx(x) << "\" y1=\"0\" x2=\"" << sx(x) << "\" y2=\"" << size
       << "\" stroke=\"#fff\" stroke-width=\"1\"/>\n";
  for (double y : y_edges)
    os << "<line x1=\"0\" y1=\"" << sy(y) << "\" x2=\"" << size << "\" y2=\"" << sy(y)
       << "\" stroke=\"#fff\" stroke-width=\"1\"/>\n";
  os << "</g>\n</svg>\n";
}

double distance_to_walls(const WorldConfig& world, Vec2 pos) {
  // Wall surfaces sit one sphere radius beyond the center constraints.
  double best = std::numeric_limits<double>::infinity();
  for (const auto& w : center_constraints(world))
    best = std::min(best, world.sphere_radius - w.violation(pos));
  return best;
}

std::vector<BoundaryRow> boundary_counts(const std::vector<RunLog>& logs, double band_fraction,
                                         const std::vector<std::size_t>& checkpoints) {
  std::map<std::pair<Task, Strategy>, BoundaryRow> rows;
  for (const auto& log : logs) {
    auto& row = rows[{log.task, log.strategy}];
    row.task = log.task;
    row.strategy = log.strategy;
    ++row.runs;
    const double band = band_fraction * std::max(log.world.half_extent_x, log.world.half_extent_y);
    for (std::size_t cp : checkpoints) {
      long count = 0;
      for (const auto& s : log.selections)
        if (s.iter <= cp && distance_to_walls(log.world, s.input.pos) < band) ++count;
      row.mean_counts[cp] += static_cast<double>(count);
    }
  }
  std::vector<BoundaryRow> out;
  for (auto& [_, row] : rows) {
    for (auto& [cp, v] : row.mean_counts) v /= static_cast<double>(row.runs);
    out.push_back(row);
  }
  return out;
}

void write_boundary_csv(std::ostream& os, const std::vector<BoundaryRow>& rows,
                        const std::vector<std::size_t>& checkpoints) {
  os << "task,strategy,runs";
  for (std::size_t cp : checkpoints) os << ',' << cp;
  os << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    os << to_string(r.task) << ',' << to_string(r.strategy) << ',' << r.runs;
    for (std::size_t cp : checkpoints) os << ',' << r.mean_counts.at(cp);
    os << '\n';
  }
}

std::vector<LpTracePoint> lp_trace(const RunLog& log, const std::vector<std::size_t>& regions) {
  const auto n_regions = static_cast<std::size_t>(log.lp_bins * log.lp_bins * log.lp_bins);
  std::map<std::size_t, double> current;
  for (std::size_t r : regions) {
    if (r >= n_regions) throw std::out_of_range("unknown LP region id " + std::to_string(r));
    current[r] = 1.0;
  }
  std::vector<LpTracePoint> out;
  for (std::size_t r : regions) out.push_back({0, r, 1.0});
  std::size_t u = 0;
  for (std::size_t iter = 1; iter <= log.iterations; ++iter) {
    for (; u < log.lp_updates.size() && log.lp_updates[u].iter == iter; ++u)
      if (current.count(log.lp_updates[u].region)) current[log.lp_updates[u].region] = log.lp_updates[u].lp;
    for (std::size_t r : regions) out.push_back({iter, r, current[r]});
  }
  return out;
}

void write_lp_trace_csv(std::ostream& os, const std::vector<RunLog>& logs,
                        const std::vector<std::size_t>& regions) {
  os << "task,strategy,seed,iter,region,lp\n" << std::setprecision(17);
  for (const auto& log : logs)
    for (const auto& p : lp_trace(log, regions))
      os << to_string(log.task) << ',' << to_string(log.strategy) << ',' << log.seed << ',' << p.iter
         << ',' << p.region << ',' << p.lp << '\n';
}

void write_rmse_svg(std::ostream& os, const std::vector<AggregateRow>& rows, Task task) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  std::map<Strategy, std::vector<const AggregateRow*>> series;
  double x_max = 1.0;
  double y_max = 1e-9;
  for (const auto& r : rows) {
    if (r.task != task) continue;
    series[r.strategy].push_back(&r);
    x_max = std::max(x_max, static_cast<double>(r.iter));
    y_max = std::max(y_max, r.mean + r.sem);
  }
  const double w = 600.0, h = 400.0, pad = 50.0;
  auto sx = [&](double x) { return pad + x / x_max * (w - 2 * pad); };
  auto sy = [&](double y) { return h - pad - y / y_max * (h - 2 * pad); };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"#fff\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
     << "\" stroke=\"#000\"/>\n<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad
     << "\" y2=\"" << h - pad << "\" stroke=\"#000\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"" << h - 10 << "\" font-size=\"12\">iteration (max " << x_max
     << ")</text>\n<text x=\"5\" y=\"" << pad - 10 << "\" font-size=\"12\">RMSE (max " << y_max
     << ")</text>\n";
  std::size_t c = 0;
  for (const auto& [strategy, pts] : series) {
    const char* color = palette[c % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" points=\"";
    for (const auto* p : pts) os << sx(static_cast<double>(p->iter)) << ',' << sy(p->mean) << ' ';
    os << "\"/>\n";
    for (const auto* p : pts)
      os << "<line x1=\"" << sx(static_cast<double>(p->iter)) << "\" y1=\"" << sy(p->mean - p->sem)
         << "\" x2=\"" << sx(static_cast<double>(p->iter)) << "\" y2=\"" << sy(p->mean + p->sem)
         << "\" stroke=\"" << color << "\"/>\n";
    os << "<text x=\"" << w - pad - 100 << "\" y=\"" << pad + 15 * static_cast<double>(c) << "\" fill=\""
       << color << "\" font-size=\"12\">" << to_string(strategy) << "</text>\n";
    ++c;
  }
  os << "</svg>\n";
}

std::vector<fs::path> analyze_logs(const fs::path& log_dir, const fs::path& out_dir,
                                   const AnalyzeOptions& opts) {
  const auto logs = load_run_logs(log_dir);
  if (logs.empty()) throw ConfigError("no run logs found in " + log_dir.string());
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto open = [&](const std::string& name) {
    written.push_back(out_dir / name);
    return std::ofstream(written.back());
  };

  const auto agg = aggregate_rmse(logs);
  {
    auto os = open("aggregate.csv");
    write_aggregate_csv(os, agg);
  }

  std::map<std::pair<Task, Strategy>, std::vector<RunLog>> groups;
  for (const auto& log : logs) groups[{log.task, log.strategy}].push_back(log);
  std::set<Task> tasks;
  for (const auto& [key, group] : groups) {
    tasks.insert(key.first);
    const std::string stem = to_string(key.first) + "_" + to_string(key.second);
    const Histogram2D hist = sampling_histogram(group, opts.histogram_bins);
    {
      auto os = open("histogram_" + stem + ".csv");
      write_histogram_csv(os, hist);
    }
    if (opts.svg) {
      const LpGrid grid(group.front().world, LpConfig{group.front().lp_bins, 10, 1e-4});
      auto os = open("histogram_" + stem + ".svg");
      write_histogram_svg(os, hist, grid.edges(1), grid.edges(2), stem);
    }
  }

  std::vector<std::size_t> checkpoints;
  const std::size_t max_iter =
      std::max_element(logs.begin(), logs.end(), [](const RunLog& a, const RunLog& b) {
        return a.iterations < b.iterations;
      })->iterations;
  for (std::size_t cp : opts.checkpoints)
    if (cp <= max_iter) checkpoints.push_back(cp);
  if (checkpoints.empty()) checkpoints.push_back(max_iter);
  {
    auto os = open("boundary_counts.csv");
    write_boundary_csv(os, boundary_counts(logs, opts.band_fraction, checkpoints), checkpoints);
  }

  std::vector<std::size_t> regions = opts.lp_regions;
  if (regions.empty()) {
    const int bins = logs.front().lp_bins;
    for (int iy = 0; iy < bins; ++iy)
      regions.push_back(static_cast<std::size_t>(((bins / 2) * bins + bins / 2) * bins + iy));
  }
  {
    auto os = open("lp_trace.csv");
    write_lp_trace_csv(os, logs, regions);
  }

  if (opts.svg)
    for (Task t : tasks) {
      auto os = open("rmse_" + to_string(t) + ".svg");
      write_rmse_svg(os, agg, t);
    }
  return written;
}

}  // namespace musel
