#pragma once

// Post-hoc analysis over JSON-lines run logs: RMSE aggregates, sampling
// histograms, boundary counts and LP traces. Everything here is a pure
// function of the logs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "musel/al_loop.hpp"

namespace musel {

struct LoggedSelection {
  std::size_t iter = 0;
  InputPoint input;
  Effect effect;
  UncertaintyBreakdown breakdown;
  double score = 0.0;
};

struct LoggedLpUpdate {
  std::size_t iter = 0;
  std::size_t region = 0;
  double lp = 1.0;
};

struct RunLog {
  Task task = Task::OneSphere;
  Strategy strategy = Strategy::Musel;
  std::uint64_t seed = 0;
  WorldConfig world;
  int lp_bins = 7;
  std::size_t iterations = 0;
  bool complete = false;
  std::string error;
  std::vector<LoggedSelection> selections;
  std::vector<LoggedLpUpdate> lp_updates;
  std::map<std::size_t, double> rmse;
};

/// Throws ConfigError on malformed input.
RunLog parse_run_log(std::istream& is);
/// Every *.jsonl file in dir, sorted by file name.
std::vector<RunLog> load_run_logs(const std::filesystem::path& dir);

struct AggregateRow {
  Task task;
  Strategy strategy;
  std::size_t iter;
  double mean;
  double sem;  // sample std / sqrt(n); 0 for a single run
  std::size_t runs;
  std::size_t failed;
  std::string warning;
};

/// Mean and SEM of RMSE per (task, strategy, checkpoint) over runs that
/// recorded that checkpoint. Rows are sorted; independent of log order.
std::vector<AggregateRow> aggregate_rmse(const std::vector<RunLog>& logs);
void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows);

struct Histogram2D {
  int bins = 50;
  double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
  std::vector<long> counts;  // index ix * bins + iy
  long total = 0;

  long count(int ix, int iy) const { return counts[static_cast<std::size_t>(ix * bins + iy)]; }
  std::vector<double> normalized() const;
  /// log10(1 + normalized).
  std::vector<double> log_scaled() const;
};

/// Selected (pos_x, pos_y) pooled across logs over the table extent.
Histogram2D sampling_histogram(const std::vector<RunLog>& logs, int bins);
void write_histogram_csv(std::ostream& os, const Histogram2D& h);
/// Heatmap of log_scaled() with the LP region boundaries overlaid.
void write_histogram_svg(std::ostream& os, const Histogram2D& h, const std::vector<double>& x_edges,
                         const std::vector<double>& y_edges, const std::string& title);

/// Distance from a sphere center to the nearest wall line (edges or diagonal).
double distance_to_walls(const WorldConfig& world, Vec2 pos);

struct BoundaryRow {
  Task task;
  Strategy strategy;
  std::size_t runs = 0;
  std::map<std::size_t, double> mean_counts;  // checkpoint -> seed-mean count
};

/// Seed-mean cumulative count of selections within band_fraction x half-extent
/// of a wall, at each checkpoint iteration.
std::vector<BoundaryRow> boundary_counts(const std::vector<RunLog>& logs, double band_fraction,
                                         const std::vector<std::size_t>& checkpoints);
void write_boundary_csv(std::ostream& os, const std::vector<BoundaryRow>& rows,
                        const std::vector<std::size_t>& checkpoints);

struct LpTracePoint {
  std::size_t iter;
  std::size_t region;
  double lp;
};

/// LP of each requested region after every iteration (iteration 0 is the cold
/// start). Throws std::out_of_range for unknown region ids.
std::vector<LpTracePoint> lp_trace(const RunLog& log, const std::vector<std::size_t>& regions);
void write_lp_trace_csv(std::ostream& os, const std::vector<RunLog>& logs,
                        const std::vector<std::size_t>& regions);

/// Line chart of mean RMSE with SEM bars per strategy.
void write_rmse_svg(std::ostream& os, const std::vector<AggregateRow>& rows, Task task);

struct AnalyzeOptions {
  int histogram_bins = 50;
  double band_fraction = 0.1;
  std::vector<std::size_t> checkpoints{500, 1000, 1500, 2000, 2500, 3000};
  std::vector<std::size_t> lp_regions;  // empty: alpha bin 3, pos_x bin 3, every pos_y bin
  bool svg = false;
};

/// Reads every log under log_dir and writes aggregate, histogram, boundary and
/// LP-trace files into out_dir. Returns the files written.
std::vector<std::filesystem::path> analyze_logs(const std::filesystem::path& log_dir,
                                                const std::filesystem::path& out_dir,
                                                const AnalyzeOptions& opts);

}  // namespace musel
