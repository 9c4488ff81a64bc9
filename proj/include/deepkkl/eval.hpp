#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "deepkkl/data.hpp"
#include "deepkkl/predictor.hpp"
#include "deepkkl/train.hpp"

namespace dkkl {

// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
// handled exactly once and callers write results by index, so the outcome
// does not depend on the thread count.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

// 1/(N p) sum of squared differences; every row must have the same length
// as its counterpart.
double mse(const std::vector<std::vector<double>>& predictions, const std::vector<std::vector<double>>& truths);

// Forecasts of samples t .. t+p-1 from each record's clean prefix, in
// original output units.
std::vector<std::vector<double>> record_forecasts(const Model& model, const std::vector<Record>& records, int t,
                                                  int p, int threads = 1);

// Test protocol: filter t samples, forecast p, compare in original units.
double forecast_mse(const Model& model, const std::vector<Record>& records, int t, int p, int threads = 1);

struct TableEntry {
  std::string model;
  std::string system;
  double mse = 0.0;
};

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
};

// One entry per model on the dataset's test split.
std::vector<TableEntry> evaluate_table(const std::vector<NamedModel>& models, const Dataset& dataset, int t = 5,
                                       int p = 95, int threads = 1);

// Wide CSV: `model,<system>...`, blank where a pair was not evaluated.
std::string mse_table_csv(const std::vector<TableEntry>& entries);

// ---------------------------------------------------------------------------
// Error bounds. Times are in the model's time units (samples times dt).

double prop1_bound(double k, double lambda, double l1, double l2, double z0_norm, double t, double p);

struct Prop4Value {
  double value = 0.0;
  bool saturated = false;  // the growth term overflowed; value is +inf
};

Prop4Value prop4_bound(double k, double lambda, double l1, double l2, double z0_norm, double t, double p,
                       double delta, double l3);

struct BoundCell {
  int t = 0;  // filtered samples
  int p = 0;  // open-loop steps before the compared sample
  double bound_p1 = 0.0;
  double bound_p4 = 0.0;
  bool p4_saturated = false;
  double empirical = 0.0;
};

struct BoundReport {
  double k = 1.0;
  double lambda = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double z0_norm = 0.0;
  double delta = 0.0;
  double dt = 0.0;
  std::vector<BoundCell> cells;
  std::vector<std::string> violations;  // empty when every cell is dominated

  bool certified() const { return violations.empty(); }
};

std::string bound_report_csv(const BoundReport& report);

// Scalar plant x' = rate x, y = x, observed through a one-dimensional latent
// block with decay sigma. The output map is the exact linear map for the
// sampled system, so the latent trajectory started at z0 = x0 / gain
// reproduces y exactly and the only error is the unknown initial latent.
struct LtiCase {
  double rate = -1.0;
  double sigma = -2.0;
  double dt = 0.1;
  std::vector<double> initial_states = {1.5, -0.75, 2.0, 0.0};
  std::vector<int> t_grid = {0, 2, 4, 6, 8, 10, 12, 14, 16, 18};
  std::vector<int> p_grid = {0, 2, 4, 6, 8, 10, 12, 14, 16, 18};
};

// Exact linear output gain c with z_{k+1} = a_d z_k + b_d c z_k = exp(rate dt) z_k.
double lti_output_gain(const LtiCase& lti);
KklModel lti_model(const LtiCase& lti);

// Checks |yhat(t+p) - y(t+p)| <= prop1_bound for every grid cell and initial
// state. Cells report the largest initial state, the worst case for both the
// error and the bound.
BoundReport bound_certification(const LtiCase& lti);

// Diagnostic bounds for a trained KKL model on validation records. Neither
// z0_norm nor delta is observable, so the values are estimates only.
BoundReport learned_bound_report(const KklModel& model, const std::vector<Record>& records,
                                 const std::vector<int>& t_grid, const std::vector<int>& p_grid, int delta_t = 25);

// ---------------------------------------------------------------------------
// Noise sweep: retrain per (sigma, seed) on noisy training outputs and score
// the clean test split.

struct NoiseSweepConfig {
  SystemKind system = SystemKind::vanderpol;
  std::vector<double> sigmas = {0.0, 0.001, 0.005, 0.01, 0.05, 0.1};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  SplitCounts counts;
  int length = 100;
  TrainConfig train;  // seed is replaced per run
  int t = 5;
  int p = 95;
  int threads = 1;
};

struct NoiseRun {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double mse = 0.0;
  bool failed = false;
};

struct NoiseSummary {
  double sigma = 0.0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
  int runs = 0;
};

using NoiseRunCallback = std::function<void(const NoiseRun&)>;

std::vector<NoiseRun> noise_sweep(const NoiseSweepConfig& config, const NoiseRunCallback& on_run = {});
std::vector<NoiseSummary> summarize_noise(const std::vector<NoiseRun>& runs);
std::string noise_sweep_csv(const std::vector<NoiseRun>& runs);

// Linear-interpolated quantile of a non-empty sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

// ---------------------------------------------------------------------------
// Generalization heatmap over a lattice of initial conditions.

struct HeatmapConfig {
  int cells = 40;        // per axis
  double enlarge = 2.0;  // grid spans the training box scaled about its center
  int t = 5;
  int p = 95;
  int threads = 1;
};

struct HeatCell {
  double x1 = 0.0;
  double x2 = 0.0;
  double log_mse = 0.0;  // NaN when flagged
  bool in_domain = false;
  bool flagged = false;  // ground truth or forecast blew up
};

struct Heatmap {
  Vec box_lo, box_hi;  // training domain
  std::vector<HeatCell> cells;
  double median_in = 0.0;
  double median_out = 0.0;
  int flagged = 0;
};

inline constexpr double kLogMseFloor = 1e-12;

// log10 of the forecast MSE of one trajectory started at x0.
double trajectory_log_mse(const Model& model, const SystemSpec& spec, const Vec& x0, int t, int p);

Heatmap generalization_heatmap(const Model& model, const SystemSpec& spec, const HeatmapConfig& config);
std::string heatmap_csv(const Heatmap& heatmap);

}  // namespace dkkl
