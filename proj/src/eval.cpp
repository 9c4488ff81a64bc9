#include "deepkkl/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "deepkkl/errors.hpp"
#include "deepkkl/text_io.hpp"

namespace dkkl {

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  if (count <= 0) return;
  const int workers = std::clamp(threads, 1, count);
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  // Every index runs even when one fails; the lowest failing index wins so
  // the reported error is the one a serial run would raise first.
  std::atomic<int> next{0};
  std::mutex mutex;
  int failed_index = count;
  std::exception_ptr failure;
  auto work = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

double mse(const std::vector<std::vector<double>>& predictions, const std::vector<std::vector<double>>& truths) {
  if (predictions.size() != truths.size()) {
    throw std::invalid_argument("got " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(truths.size()) + " truths");
  }
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != truths[i].size()) {
      throw std::invalid_argument("prediction " + std::to_string(i) + " has " +
                                  std::to_string(predictions[i].size()) + " samples, truth has " +
                                  std::to_string(truths[i].size()));
    }
    for (std::size_t k = 0; k < predictions[i].size(); ++k) {
      const double e = predictions[i][k] - truths[i][k];
      sum += e * e;
    }
    terms += predictions[i].size();
  }
  return terms == 0 ? 0.0 : sum / static_cast<double>(terms);
}

std::vector<std::vector<double>> record_forecasts(const Model& model, const std::vector<Record>& records, int t,
                                                  int p, int threads) {
  if (t < 1) throw std::invalid_argument("forecasting needs at least one observed sample");
  for (const auto& r : records) {
    if (static_cast<int>(r.traj.outputs.size()) < t + p) {
      throw std::invalid_argument("trajectory " + std::to_string(r.id) + " is shorter than t + p");
    }
  }
  const int n = static_cast<int>(records.size());
  std::vector<std::vector<double>> out(n);
  const int chunks = std::clamp(threads, 1, std::max(n, 1));
  parallel_for(chunks, threads, [&](int c) {
    const int lo = n * c / chunks;
    const int hi = n * (c + 1) / chunks;
    std::vector<std::vector<double>> prefixes;
    for (int j = lo; j < hi; ++j) {
      const auto& y = records[j].traj.outputs;
      prefixes.emplace_back(y.begin(), y.begin() + t);
    }
    auto pred = forecast(model, prefixes, p);
    for (int j = lo; j < hi; ++j) out[j] = std::move(pred[j - lo]);
  });
  return out;
}

double forecast_mse(const Model& model, const std::vector<Record>& records, int t, int p, int threads) {
  if (records.empty()) throw std::invalid_argument("no records to evaluate");
  const auto pred = record_forecasts(model, records, t, p, threads);
  std::vector<std::vector<double>> truth;
  truth.reserve(records.size());
  for (const auto& r : records) truth.emplace_back(r.traj.outputs.begin() + t, r.traj.outputs.begin() + t + p);
  return mse(pred, truth);
}

std::vector<TableEntry> evaluate_table(const std::vector<NamedModel>& models, const Dataset& dataset, int t, int p,
                                       int threads) {
  std::vector<TableEntry> entries;
  for (const auto& named : models) {
    if (named.model == nullptr) throw std::invalid_argument("model '" + named.name + "' is missing");
    entries.push_back(TableEntry{named.name, std::string(dataset.system.name()),
                                 forecast_mse(*named.model, dataset.test, t, p, threads)});
  }
  return entries;
}

std::string mse_table_csv(const std::vector<TableEntry>& entries) {
  std::vector<std::string> models, systems;
  auto remember = [](std::vector<std::string>& list, const std::string& v) {
    if (std::find(list.begin(), list.end(), v) == list.end()) list.push_back(v);
  };
  for (const auto& e : entries) {
    remember(models, e.model);
    remember(systems, e.system);
  }
  std::ostringstream os;
  os << "model";
  for (const auto& s : systems) os << ',' << s;
  os << '\n';
  for (const auto& m : models) {
    os << m;
    for (const auto& s : systems) {
      os << ',';
      for (const auto& e : entries) {
        if (e.model == m && e.system == s) {
          os << format_double(e.mse);
          break;
        }
      }
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

double prop1_bound(double k, double lambda, double l1, double l2, double z0_norm, double t, double p) {
  if (z0_norm == 0.0) return 0.0;
  return k * l2 * std::exp(-lambda * t + l1 * p) * z0_norm;
}

Prop4Value prop4_bound(double k, double lambda, double l1, double l2, double z0_norm, double t, double p,
                       double delta, double l3) {
  const double base = prop1_bound(k, lambda, l1, l2, z0_norm, t, p);
  if (delta == 0.0) return {base, false};
  const double growth = std::expm1(l3 * p);
  if (!std::isfinite(growth)) return {std::numeric_limits<double>::infinity(), true};
  const double value = base + delta * (std::sqrt(growth) + 1.0);
  if (!std::isfinite(value)) return {std::numeric_limits<double>::infinity(), true};
  return {value, false};
}

std::string bound_report_csv(const BoundReport& report) {
  std::ostringstream os;
  os << "t,p,bound_p1,bound_p4,empirical\n";
  for (const auto& c : report.cells) {
    os << c.t << ',' << c.p << ',' << format_double(c.bound_p1) << ',' << format_double(c.bound_p4) << ','
       << format_double(c.empirical) << '\n';
  }
  return os.str();
}

namespace {

double growth_constant(double l2, double latent_dim, double lambda) {
  // |b|_P^2 with P = I and b = ones
  return l2 * l2 * latent_dim / (2.0 * lambda);
}

// Rounding slack for cells where the bound is attained with equality.
constexpr double kBoundRelTol = 1e-12;

}  // namespace

double lti_output_gain(const LtiCase& lti) {
  const double a_d = std::exp(lti.sigma * lti.dt);
  const double b_d = std::expm1(lti.sigma * lti.dt) / lti.sigma;
  return (std::exp(lti.rate * lti.dt) - a_d) / b_d;
}

KklModel lti_model(const LtiCase& lti) {
  if (!(lti.sigma < 0.0)) throw std::invalid_argument("latent decay must be negative");
  if (!(lti.dt > 0.0)) throw std::invalid_argument("sampling period must be positive");
  KklModel model;
  model.log_decay = Vec::Constant(1, std::log(-lti.sigma));
  model.frequency = Vec(0);
  model.head.layers.push_back(DenseLayer{Mat::Constant(1, 1, lti_output_gain(lti)), Vec::Zero(1)});
  model.scaler = Scaler{-1.0, 1.0};
  model.dt = lti.dt;
  return model;
}

BoundReport bound_certification(const LtiCase& lti) {
  if (lti.initial_states.empty()) throw std::invalid_argument("certification needs at least one initial state");
  const KklModel model = lti_model(lti);
  const double gain = lti_output_gain(lti);
  const auto cc = contraction_constants(model);
  const auto lip = lipschitz_report(model);

  BoundReport report;
  report.k = cc.k;
  report.lambda = cc.lambda;
  report.l1 = lip.l1;
  report.l2 = lip.l2;
  report.l3 = growth_constant(lip.l2, model.latent_dim(), cc.lambda);
  report.dt = lti.dt;
  // error and bound both scale with |x0|, so the largest initial state is the
  // worst case for every cell
  std::size_t worst = 0;
  for (std::size_t i = 1; i < lti.initial_states.size(); ++i) {
    if (std::abs(lti.initial_states[i]) > std::abs(lti.initial_states[worst])) worst = i;
  }
  report.z0_norm = std::abs(lti.initial_states[worst] / gain);

  const int t_max = *std::max_element(lti.t_grid.begin(), lti.t_grid.end());
  const int p_max = *std::max_element(lti.p_grid.begin(), lti.p_grid.end());
  const double phi = std::exp(lti.rate * lti.dt);

  // Sampled plant output and its reconstruction from the true latent.
  for (double x0 : lti.initial_states) {
    const double z0 = x0 / gain;
    double z = z0;
    for (int s = 0; s < t_max; ++s) {
      const double y = x0 * std::pow(phi, s);
      report.delta = std::max(report.delta, std::abs(mlp_apply(model.head, Vec(Vec::Constant(1, z))) - y));
      z = std::exp(lti.sigma * lti.dt) * z + std::expm1(lti.sigma * lti.dt) / lti.sigma * y;
    }
  }

  for (int t : lti.t_grid) {
    for (int p : lti.p_grid) {
      BoundCell cell;
      cell.t = t;
      cell.p = p;
      for (std::size_t i = 0; i < lti.initial_states.size(); ++i) {
        const double x0 = lti.initial_states[i];
        std::vector<double> y(t + p_max + 1);
        for (std::size_t s = 0; s < y.size(); ++s) y[s] = x0 * std::pow(phi, static_cast<double>(s));
        const auto zs = closed_loop_filter(model, std::vector<double>(y.begin(), y.begin() + t),
                                           Vec::Zero(model.latent_dim()));
        const auto roll = open_loop_rollout(model, zs.back(), p);
        const double err = std::abs(roll.outputs[p] - y[t + p]);
        const double z0_norm = std::abs(x0 / gain);
        const double b1 = prop1_bound(report.k, report.lambda, report.l1, report.l2, z0_norm, t * lti.dt, p * lti.dt);
        const auto b4 = prop4_bound(report.k, report.lambda, report.l1, report.l2, z0_norm, t * lti.dt,
                                    p * lti.dt, report.delta, report.l3);
        if (err > b1 * (1.0 + kBoundRelTol)) {
          report.violations.push_back("t=" + std::to_string(t) + " p=" + std::to_string(p) +
                                      " x0=" + format_double(x0) + ": error " + format_double(err) +
                                      " exceeds bound " + format_double(b1));
        }
        if (i == worst) {
          cell.bound_p1 = b1;
          cell.bound_p4 = b4.value;
          cell.p4_saturated = b4.saturated;
          cell.empirical = err;
        }
      }
      report.cells.push_back(cell);
    }
  }
  return report;
}

BoundReport learned_bound_report(const KklModel& model, const std::vector<Record>& records,
                                 const std::vector<int>& t_grid, const std::vector<int>& p_grid, int delta_t) {
  if (records.empty()) throw std::invalid_argument("no records for the bound report");
  if (t_grid.empty() || p_grid.empty()) throw std::invalid_argument("empty bound grid");
  if (*std::min_element(t_grid.begin(), t_grid.end()) < 0 || *std::min_element(p_grid.begin(), p_grid.end()) < 0) {
    throw std::invalid_argument("bound grid entries must be nonnegative");
  }
  const auto cc = contraction_constants(model);
  const auto lip = lipschitz_report(model);
  const double half_range = 0.5 * (model.scaler.y_max - model.scaler.y_min);
  const int t_max = *std::max_element(t_grid.begin(), t_grid.end());
  const int p_max = *std::max_element(p_grid.begin(), p_grid.end());
  const int needed = std::max(t_max + p_max + 1, delta_t);

  BoundReport report;
  report.k = cc.k;
  report.lambda = cc.lambda;
  report.l1 = lip.l1;
  report.l2 = lip.l2 * half_range;
  report.l3 = growth_constant(lip.l2, model.latent_dim(), cc.lambda);
  report.dt = model.dt;

  // z0_norm: largest filtered latent after delta_t samples. delta: largest
  // closed-loop reconstruction error over the second half of that window,
  // skipping the start-up transient from z = 0.
  const int burn_in = delta_t / 2;
  for (const auto& r : records) {
    const auto& y = r.traj.outputs;
    if (static_cast<int>(y.size()) < needed) {
      throw std::invalid_argument("trajectory " + std::to_string(r.id) + " is too short for the bound grid");
    }
    std::vector<double> scaled(delta_t);
    for (int s = 0; s < delta_t; ++s) scaled[s] = model.scaler.apply(y[s]);
    const auto zs = closed_loop_filter(model, scaled, Vec::Zero(model.latent_dim()));
    report.z0_norm = std::max(report.z0_norm, zs.back().norm());
    for (int s = burn_in; s < delta_t; ++s) {
      const double yhat = model.scaler.invert(mlp_apply(model.head, zs[s]));
      report.delta = std::max(report.delta, std::abs(yhat - y[s]));
    }
  }

  for (int t : t_grid) {
    for (int p : p_grid) {
      BoundCell cell;
      cell.t = t;
      cell.p = p;
      for (const auto& r : records) {
        const auto& y = r.traj.outputs;
        std::vector<double> scaled(t);
        for (int s = 0; s < t; ++s) scaled[s] = model.scaler.apply(y[s]);
        const auto zs = closed_loop_filter(model, scaled, Vec::Zero(model.latent_dim()));
        const auto roll = open_loop_rollout(model, zs.back(), p, true);
        cell.empirical = std::max(cell.empirical, std::abs(roll.outputs[p] - y[t + p]));
      }
      cell.bound_p1 =
          prop1_bound(report.k, report.lambda, report.l1, report.l2, report.z0_norm, t * model.dt, p * model.dt);
      const auto b4 = prop4_bound(report.k, report.lambda, report.l1, report.l2, report.z0_norm, t * model.dt,
                                  p * model.dt, report.delta, report.l3);
      cell.bound_p4 = b4.value;
      cell.p4_saturated = b4.saturated;
      report.cells.push_back(cell);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<NoiseRun> noise_sweep(const NoiseSweepConfig& config, const NoiseRunCallback& on_run) {
  if (config.sigmas.empty() || config.seeds.empty()) throw std::invalid_argument("noise sweep needs sigmas and seeds");
  for (double s : config.sigmas) {
    if (!(s >= 0.0)) throw std::invalid_argument("noise levels must be nonnegative");
  }
  const auto spec = SystemSpec::make(config.system);
  const int per_sigma = static_cast<int>(config.seeds.size());
  const int total = static_cast<int>(config.sigmas.size()) * per_sigma;
  std::vector<NoiseRun> runs(total);
  std::mutex report_mutex;
  parallel_for(total, config.threads, [&](int i) {
    NoiseRun run;
    run.sigma = config.sigmas[i / per_sigma];
    run.seed = config.seeds[i % per_sigma];
    Dataset ds = generate(spec, config.counts, config.length, run.seed);
    if (run.sigma > 0.0) ds = add_noise(std::move(ds), run.sigma, run.seed);
    TrainConfig tc = config.train;
    tc.seed = run.seed;
    tc.kind = ModelKind::kkl;
    const Model init = init_model(ModelKind::kkl, spec, ds.scaler, run.seed);
    const auto result = train(init, ds, tc);
    run.failed = result.failure.has_value() && result.history.best_epoch < 0;
    if (run.failed) {
      run.mse = std::numeric_limits<double>::quiet_NaN();
    } else {
      try {
        run.mse = forecast_mse(result.model, ds.test, config.t, config.p);
      } catch (const NumericError&) {
        run.failed = true;
        run.mse = std::numeric_limits<double>::quiet_NaN();
      }
    }
    runs[i] = run;
    if (on_run) {
      std::lock_guard lock(report_mutex);
      on_run(run);
    }
  });
  return runs;
}

std::vector<NoiseSummary> summarize_noise(const std::vector<NoiseRun>& runs) {
  std::vector<NoiseSummary> out;
  std::vector<double> sigmas;
  for (const auto& r : runs) {
    if (std::find(sigmas.begin(), sigmas.end(), r.sigma) == sigmas.end()) sigmas.push_back(r.sigma);
  }
  for (double s : sigmas) {
    std::vector<double> v;
    for (const auto& r : runs) {
      if (r.sigma == s && !r.failed) v.push_back(r.mse);
    }
    NoiseSummary sum;
    sum.sigma = s;
    sum.runs = static_cast<int>(v.size());
    if (v.empty()) {
      sum.min = sum.q1 = sum.median = sum.q3 = sum.max = std::numeric_limits<double>::quiet_NaN();
    } else {
      sum.min = quantile(v, 0.0);
      sum.q1 = quantile(v, 0.25);
      sum.median = quantile(v, 0.5);
      sum.q3 = quantile(v, 0.75);
      sum.max = quantile(v, 1.0);
    }
    out.push_back(sum);
  }
  return out;
}

std::string noise_sweep_csv(const std::vector<NoiseRun>& runs) {
  std::ostringstream os;
  os << "sigma,seed,mse\n";
  for (const auto& r : runs) os << format_double(r.sigma) << ',' << r.seed << ',' << format_double(r.mse) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------

double trajectory_log_mse(const Model& model, const SystemSpec& spec, const Vec& x0, int t, int p) {
  const auto traj = simulate(spec, x0, t + p);
  const std::vector<double> prefix(traj.outputs.begin(), traj.outputs.begin() + t);
  const auto pred = forecast(model, {prefix}, p);
  const std::vector<double> truth(traj.outputs.begin() + t, traj.outputs.end());
  const double e = mse(pred, {truth});
  if (!std::isfinite(e)) throw NumericError("forecast error is not finite");
  return std::log10(std::max(e, kLogMseFloor));
}

Heatmap generalization_heatmap(const Model& model, const SystemSpec& spec, const HeatmapConfig& config) {
  if (spec.n != 2) throw std::invalid_argument("heatmaps need a two-dimensional state");
  if (spec.init_domain.shape != InitDomain::Shape::box) throw std::invalid_argument("heatmaps need a box domain");
  if (config.cells < 1) throw std::invalid_argument("heatmap needs at least one cell per axis");
  if (!(config.enlarge > 0.0)) throw std::invalid_argument("enlargement factor must be positive");
  Heatmap map;
  map.box_lo = spec.init_domain.lo;
  map.box_hi = spec.init_domain.hi;
  const Vec center = 0.5 * (map.box_lo + map.box_hi);
  const Vec half = 0.5 * config.enlarge * (map.box_hi - map.box_lo);
  const Vec lo = center - half;
  const Vec width = 2.0 * half / static_cast<double>(config.cells);

  const int n = config.cells;
  map.cells.resize(static_cast<std::size_t>(n) * n);
  parallel_for(n * n, config.threads, [&](int idx) {
    // row-major with x2 varying fastest
    const int i = idx / n;
    const int j = idx % n;
    HeatCell cell;
    cell.x1 = lo[0] + (i + 0.5) * width[0];
    cell.x2 = lo[1] + (j + 0.5) * width[1];
    cell.in_domain = cell.x1 >= map.box_lo[0] && cell.x1 <= map.box_hi[0] && cell.x2 >= map.box_lo[1] &&
                     cell.x2 <= map.box_hi[1];
    try {
      cell.log_mse = trajectory_log_mse(model, spec, Vec{{cell.x1, cell.x2}}, config.t, config.p);
    } catch (const NumericError&) {
      cell.flagged = true;
      cell.log_mse = std::numeric_limits<double>::quiet_NaN();
    }
    map.cells[idx] = cell;
  });

  std::vector<double> inside, outside;
  for (const auto& c : map.cells) {
    if (c.flagged) {
      ++map.flagged;
      continue;
    }
    (c.in_domain ? inside : outside).push_back(c.log_mse);
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  map.median_in = inside.empty() ? nan : quantile(inside, 0.5);
  map.median_out = outside.empty() ? nan : quantile(outside, 0.5);
  return map;
}

std::string heatmap_csv(const Heatmap& heatmap) {
  std::ostringstream os;
  os << "x1,x2,log_mse,in_domain\n";
  for (const auto& c : heatmap.cells) {
    os << format_double(c.x1) << ',' << format_double(c.x2) << ',' << format_double(c.log_mse) << ','
       << (c.in_domain ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace dkkl
