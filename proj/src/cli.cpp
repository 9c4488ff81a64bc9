#include "deepkkl/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"

#include "deepkkl/data.hpp"
#include "deepkkl/errors.hpp"
#include "deepkkl/eval.hpp"
#include "deepkkl/kkl.hpp"
#include "deepkkl/model_io.hpp"
#include "deepkkl/text_io.hpp"
#include "deepkkl/train.hpp"

namespace fs = std::filesystem;

namespace dkkl {

namespace {

// Bad input from the user: reported with the subcommand's usage text.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  int threads = 1;
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 1;
};

struct DataOptions {
  std::string system = "vanderpol";
  int n_train = 1000;
  int n_val = 200;
  int n_test = 200;
  int length = 100;
  double noise = 0.0;
  bool no_states = false;
};

struct TrainOptions {
  std::string data;
  std::string model = "kkl";
  int epochs = 800;
  int batch_size = 64;
  double lr = 1e-4;
  int t_train = 25;
  int p_train = 25;
  std::string loss_window = "full";
  double grad_clip = 0.0;
  double noise = 0.0;
  int latent_dim = 0;
  std::vector<int> hidden = kDefaultHidden;
  double decay = ModelOptions{}.decay;
  double omega_min = ModelOptions{}.omega_min;
  double omega_max = ModelOptions{}.omega_max;
  bool timing = false;
};

struct PredictOptions {
  std::string model_file;
  std::string data;
  std::string split = "test";
  int traj_id = 0;
  int t = 5;
  int p = 95;
};

struct EvalOptions {
  std::vector<std::string> model_files;
  std::vector<std::string> data;
  int t = 5;
  int p = 95;
};

struct SweepOptions {
  std::string system = "vanderpol";
  std::vector<double> sigmas = NoiseSweepConfig{}.sigmas;
  std::vector<std::uint64_t> seeds = NoiseSweepConfig{}.seeds;
  int n_train = 1000;
  int n_val = 200;
  int n_test = 200;
  int epochs = 800;
  int t = 5;
  int p = 95;
};

struct HeatmapOptions {
  std::string model_file;
  std::string system;
  int cells = 40;
  double enlarge = 2.0;
  int t = 5;
  int p = 95;
};

struct BoundOptions {
  bool lti = false;
  std::string model_file;
  std::string data;
  std::vector<int> t_grid = {5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
  std::vector<int> p_grid = {0, 5, 10, 15, 20, 25, 30, 35, 40, 45};
};

struct OracleOptions {
  std::string system = "vanderpol";
  std::string model_file;
  int samples = 10;
  double domain_scale = 0.2;
  double tol = 1e-3;
};

SystemKind system_or_usage(const std::string& name) {
  const auto kind = parse_system(name);
  if (!kind) {
    throw UsageError("unknown system '" + name + "' (expected vanderpol, lorenz, lotka_volterra or mean_field)");
  }
  return *kind;
}

fs::path out_file(const Globals& g, const std::string& name) {
  fs::create_directories(g.out);
  return fs::path(g.out) / name;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what + " path");
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

// Config file entries fill options that were not given on the command line.
void apply_config(const std::string& path, CLI::App& app, CLI::App* sub) {
  const auto entries = read_key_values(path);
  for (const auto& [key, value] : entries) {
    CLI::Option* opt = sub ? sub->get_option_no_throw("--" + key) : nullptr;
    if (opt == nullptr) opt = app.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw UsageError("unknown config key '" + key + "' in " + path);
    }
    if (opt->count() > 0) continue;
    std::stringstream items(value);
    std::string item;
    if (opt->get_items_expected_max() > 1) {
      while (std::getline(items, item, ',')) opt->add_result(std::string(trim(item)));
    } else {
      opt->add_result(value);
    }
    opt->run_callback();
  }
}

void write_log(const fs::path& path, const TrainHistory& h, bool timing) {
  std::ostringstream os;
  os << "epoch,train_loss,val_mse,seconds\n";
  for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
    os << e << ',' << format_double(h.train_loss[e]) << ',' << format_double(h.val_mse[e]) << ','
       << format_double(timing ? h.seconds[e] : 0.0) << '\n';
  }
  write_text_file(path, os.str());
}

int cmd_gen_data(const Globals& g, const DataOptions& o, std::ostream& out) {
  const auto spec = SystemSpec::make(system_or_usage(o.system));
  if (o.n_train < 1 || o.n_val < 1 || o.n_test < 1) throw UsageError("split counts must be positive");
  if (o.length < 2) throw UsageError("trajectory length must be at least 2");
  if (!(o.noise >= 0.0)) throw UsageError("noise level must be nonnegative");
  Dataset ds = generate(spec, {o.n_train, o.n_val, o.n_test}, o.length, g.seed);
  if (o.noise > 0.0) ds = add_noise(std::move(ds), o.noise, g.seed);
  const auto path = out_file(g, o.system + ".csv");
  write_dataset(ds, path, !o.no_states);
  out << "wrote " << path.string() << " (" << o.n_train + o.n_val + o.n_test << " trajectories)\n";
  return kExitOk;
}

int cmd_train(const Globals& g, const TrainOptions& o, std::ostream& out) {
  require_file(o.data, "dataset");
  const auto kind = parse_model_kind(o.model);
  if (!kind) throw UsageError("unknown model kind '" + o.model + "' (expected kkl, rnn or gru)");
  const auto window = parse_loss_window(o.loss_window);
  if (!window) throw UsageError("unknown loss window '" + o.loss_window + "' (expected full or open_only)");
  Dataset ds = read_dataset(o.data);
  if (o.noise > 0.0) ds = add_noise(std::move(ds), o.noise, g.seed);

  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.lr = o.lr;
  cfg.t_train = o.t_train;
  cfg.p_train = o.p_train;
  cfg.seed = g.seed;
  cfg.kind = *kind;
  cfg.loss_window = *window;
  cfg.grad_clip = o.grad_clip;
  try {
    cfg.validate(ds.length);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  ModelOptions mo;
  mo.latent_dim = o.latent_dim;
  mo.hidden = o.hidden;
  mo.decay = o.decay;
  mo.omega_min = o.omega_min;
  mo.omega_max = o.omega_max;
  const Model init = init_model(*kind, ds.system, ds.scaler, g.seed, mo);

  const auto result = train(init, ds, cfg, [&](int epoch, double loss, double val) {
    if (epoch % 50 == 0 || epoch + 1 == cfg.epochs) {
      out << "epoch " << epoch << " train_loss " << format_double(loss) << " val_mse " << format_double(val)
          << '\n';
    }
  });
  const std::string stem = o.model + "_" + std::string(ds.system.name());
  write_log(out_file(g, stem + "_log.csv"), result.history, o.timing);
  if (result.history.best_epoch >= 0) {
    const auto path = out_file(g, stem + ".json");
    save_model(path, ModelFile{result.model, std::string(ds.system.name()), result.optimizer});
    out << "wrote " << path.string() << " (best epoch " << result.history.best_epoch << ")\n";
  }
  if (result.failure) throw NumericError("training aborted: " + *result.failure);
  return kExitOk;
}

// The model must have been trained on the dataset's system.
void check_compatible(const ModelFile& mf, const Dataset& ds) {
  const std::string sys(ds.system.name());
  if (!mf.system.empty() && mf.system != sys) {
    throw UsageError("model was trained on " + mf.system + " (latent dimension " +
                     std::to_string(latent_dim(mf.model)) + ") but the dataset is " + sys +
                     " (state dimension " + std::to_string(ds.system.n) + ")");
  }
}

int cmd_predict(const Globals& g, const PredictOptions& o, std::ostream& out) {
  require_file(o.model_file, "model file");
  require_file(o.data, "dataset");
  const ModelFile mf = load_model(o.model_file);
  const Dataset ds = read_dataset(o.data);
  check_compatible(mf, ds);
  Split split;
  if (o.split == "train") {
    split = Split::train;
  } else if (o.split == "val") {
    split = Split::val;
  } else if (o.split == "test") {
    split = Split::test;
  } else {
    throw UsageError("unknown split '" + o.split + "'");
  }
  const auto& records = ds.split(split);
  if (o.traj_id < 0 || o.traj_id >= static_cast<int>(records.size())) {
    throw UsageError("trajectory id " + std::to_string(o.traj_id) + " is outside the " + o.split + " split");
  }
  if (o.t < 1 || o.p < 0 || o.t + o.p > ds.length) {
    throw UsageError("need 1 <= t and t + p <= " + std::to_string(ds.length));
  }
  const auto& y = records[o.traj_id].traj.outputs;
  const auto& times = records[o.traj_id].traj.times;
  const std::vector<double> prefix(y.begin(), y.begin() + o.t);
  const auto pred = forecast(mf.model, {prefix}, o.p).front();
  std::ostringstream os;
  os << "step,t,y_pred,y_true\n";
  for (int k = 0; k < o.p; ++k) {
    os << o.t + k << ',' << format_double(times[o.t + k]) << ',' << format_double(pred[k]) << ','
       << format_double(y[o.t + k]) << '\n';
  }
  const auto path = out_file(g, "forecast.csv");
  write_text_file(path, os.str());
  out << "wrote " << path.string() << " (" << o.p << " samples)\n";
  return kExitOk;
}

int cmd_eval(const Globals& g, const EvalOptions& o, std::ostream& out) {
  if (o.model_files.empty()) throw UsageError("eval needs at least one --model-file");
  if (o.data.empty()) throw UsageError("eval needs at least one --data");
  std::vector<ModelFile> models;
  for (const auto& f : o.model_files) {
    require_file(f, "model file");
    models.push_back(load_model(f));
  }
  std::vector<TableEntry> entries;
  for (const auto& d : o.data) {
    require_file(d, "dataset");
    const Dataset ds = read_dataset(d);
    if (o.t < 1 || o.p < 1 || o.t + o.p > ds.length) {
      throw UsageError("need 1 <= t, 1 <= p and t + p <= " + std::to_string(ds.length));
    }
    for (const auto& mf : models) {
      if (!mf.system.empty() && mf.system != ds.system.name()) continue;
      const auto e = evaluate_table({{std::string(model_kind_name(model_kind(mf.model))), &mf.model}}, ds, o.t,
                                    o.p, g.threads);
      entries.insert(entries.end(), e.begin(), e.end());
    }
  }
  if (entries.empty()) throw UsageError("no model matches any dataset system");
  const auto path = out_file(g, "mse_table.csv");
  write_text_file(path, mse_table_csv(entries));
  for (const auto& e : entries) out << e.model << ' ' << e.system << ' ' << format_double(e.mse) << '\n';
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_noise_sweep(const Globals& g, const SweepOptions& o, const TrainOptions& t, std::ostream& out) {
  NoiseSweepConfig cfg;
  cfg.system = system_or_usage(o.system);
  cfg.sigmas = o.sigmas;
  cfg.seeds = o.seeds;
  cfg.counts = {o.n_train, o.n_val, o.n_test};
  cfg.train.epochs = o.epochs;
  cfg.train.batch_size = t.batch_size;
  cfg.train.lr = t.lr;
  cfg.train.t_train = t.t_train;
  cfg.train.p_train = t.p_train;
  cfg.t = o.t;
  cfg.p = o.p;
  cfg.threads = g.threads;
  if (cfg.sigmas.empty() || cfg.seeds.empty()) throw UsageError("noise sweep needs sigmas and seeds");
  const auto runs = noise_sweep(cfg, [&](const NoiseRun& r) {
    out << "sigma " << format_double(r.sigma) << " seed " << r.seed << " mse " << format_double(r.mse) << '\n';
  });
  const auto path = out_file(g, "noise_sweep.csv");
  write_text_file(path, noise_sweep_csv(runs));
  std::ostringstream os;
  os << "sigma,runs,min,q1,median,q3,max\n";
  for (const auto& s : summarize_noise(runs)) {
    os << format_double(s.sigma) << ',' << s.runs << ',' << format_double(s.min) << ',' << format_double(s.q1)
       << ',' << format_double(s.median) << ',' << format_double(s.q3) << ',' << format_double(s.max) << '\n';
  }
  write_text_file(out_file(g, "noise_summary.csv"), os.str());
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_heatmap(const Globals& g, const HeatmapOptions& o, std::ostream& out) {
  require_file(o.model_file, "model file");
  const ModelFile mf = load_model(o.model_file);
  const std::string system = o.system.empty() ? mf.system : o.system;
  if (system.empty()) throw UsageError("model file names no system; pass --system");
  const auto spec = SystemSpec::make(system_or_usage(system));
  if (spec.n != 2) throw UsageError("heatmaps need a two-dimensional system, " + system + " has n = " +
                                    std::to_string(spec.n));
  if (o.cells < 1 || !(o.enlarge > 0.0) || o.t < 1 || o.p < 1) throw UsageError("invalid heatmap settings");
  HeatmapConfig cfg;
  cfg.cells = o.cells;
  cfg.enlarge = o.enlarge;
  cfg.t = o.t;
  cfg.p = o.p;
  cfg.threads = g.threads;
  const auto map = generalization_heatmap(mf.model, spec, cfg);
  const auto path = out_file(g, "heatmap.csv");
  write_text_file(path, heatmap_csv(map));
  out << "median log10 mse inside " << format_double(map.median_in) << " outside " << format_double(map.median_out)
      << " flagged " << map.flagged << '\n';
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_bound_report(const Globals& g, const BoundOptions& o, std::ostream& out) {
  BoundReport report;
  if (o.lti) {
    report = bound_certification(LtiCase{});
  } else {
    require_file(o.model_file, "model file");
    require_file(o.data, "dataset");
    const ModelFile mf = load_model(o.model_file);
    const auto* kkl = std::get_if<KklModel>(&mf.model);
    if (kkl == nullptr) throw UsageError("bound reports need a kkl model");
    const Dataset ds = read_dataset(o.data);
    check_compatible(mf, ds);
    report = learned_bound_report(*kkl, ds.val, o.t_grid, o.p_grid);
  }
  const auto path = out_file(g, "bound_report.csv");
  write_text_file(path, bound_report_csv(report));
  out << "k " << format_double(report.k) << " lambda " << format_double(report.lambda) << " L1 "
      << format_double(report.l1) << " L2 " << format_double(report.l2) << " L3 " << format_double(report.l3)
      << " z0_norm " << format_double(report.z0_norm) << " delta " << format_double(report.delta) << '\n';
  out << "wrote " << path.string() << '\n';
  if (!o.lti) return kExitOk;
  for (const auto& v : report.violations) out << "violation: " << v << '\n';
  out << (report.certified() ? "certified: every cell dominated\n" : "certification failed\n");
  return report.certified() ? kExitOk : kExitCheckFailed;
}

int cmd_t_oracle_check(const Globals& g, const OracleOptions& o, std::ostream& out) {
  const SystemKind kind = system_or_usage(o.system);
  const auto spec = SystemSpec::make(kind);
  if (o.samples < 1 || !(o.domain_scale > 0.0) || !(o.tol > 0.0)) throw UsageError("invalid oracle settings");
  KklModel model;
  if (!o.model_file.empty()) {
    require_file(o.model_file, "model file");
    const ModelFile mf = load_model(o.model_file);
    const auto* k = std::get_if<KklModel>(&mf.model);
    if (k == nullptr) throw UsageError("t-oracle-check needs a kkl model");
    model = *k;
  } else {
    model = std::get<KklModel>(init_model(ModelKind::kkl, spec, Scaler{}, g.seed));
  }
  const Dynamics dyn = dynamics(kind);
  struct Level {
    double quad_step, fd_step;
  };
  const std::vector<Level> levels = {{0.04, 4e-3}, {0.02, 2e-3}, {0.01, 1e-3}};
  TMapSettings settings;
  settings.t_max = default_t_max(model);

  // samples from the initial-condition region shrunk about its center
  SystemSpec shrunk = spec;
  if (spec.init_domain.shape == InitDomain::Shape::box) {
    const Vec c = 0.5 * (spec.init_domain.lo + spec.init_domain.hi);
    shrunk.init_domain.lo = c + o.domain_scale * (spec.init_domain.lo - c);
    shrunk.init_domain.hi = c + o.domain_scale * (spec.init_domain.hi - c);
  } else {
    shrunk.init_domain.r_max *= o.domain_scale;
  }

  std::ostringstream os;
  os << "sample";
  for (int i = 0; i < spec.n; ++i) os << ",x" << i + 1;
  for (std::size_t l = 0; l < levels.size(); ++l) os << ",residual_" << l;
  os << '\n';
  bool ok = true;
  Rng rng(derive_seed(g.seed, "oracle"));
  std::vector<Vec> states;
  for (int s = 0; s < o.samples; ++s) {
    const Vec x = sample_initial(shrunk, rng);
    states.push_back(x);
    os << s;
    for (int i = 0; i < spec.n; ++i) os << ',' << format_double(x[i]);
    double previous = std::numeric_limits<double>::infinity();
    for (const auto& lv : levels) {
      settings.quad_step = lv.quad_step;
      const double r = pde_residual(dyn, model, x, lv.fd_step, settings);
      os << ',' << format_double(r);
      if (!(r <= previous)) ok = false;
      previous = r;
    }
    if (!(previous < o.tol)) ok = false;
    os << '\n';
  }
  const auto path = out_file(g, "t_oracle_check.csv");
  write_text_file(path, os.str());
  out << "wrote " << path.string() << '\n';

  settings.quad_step = levels.back().quad_step;
  std::ostringstream ps;
  ps << "i,j,t_distance,h_distance\n";
  for (const auto& pr : injectivity_scatter(dyn, model, states, settings)) {
    ps << pr.i << ',' << pr.j << ',' << format_double(pr.t_distance) << ',' << format_double(pr.h_distance) << '\n';
  }
  const auto pair_path = out_file(g, "t_injectivity.csv");
  write_text_file(pair_path, ps.str());
  out << "wrote " << pair_path.string() << '\n';
  out << (ok ? "residuals decrease and end below tolerance\n" : "residual check failed\n");
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep KKL output predictors: data generation, training and evaluation", "deepkkl"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--threads", g.threads, "Worker threads (1 = serial reference mode)")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "File of key = value defaults; command-line flags take precedence");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--seed", g.seed, "Root seed for every random choice");

  DataOptions data;
  auto* gen = app.add_subcommand("gen-data", "Simulate a benchmark system and write a dataset");
  gen->add_option("--system", data.system, "vanderpol, lorenz, lotka_volterra or mean_field");
  gen->add_option("--n-train", data.n_train, "Training trajectories");
  gen->add_option("--n-val", data.n_val, "Validation trajectories");
  gen->add_option("--n-test", data.n_test, "Test trajectories");
  gen->add_option("--length", data.length, "Samples per trajectory");
  gen->add_option("--noise", data.noise, "Std of Gaussian noise on scaled training outputs");
  gen->add_flag("--no-states", data.no_states, "Omit state columns");

  TrainOptions topt;
  auto* tr = app.add_subcommand("train", "Train a kkl, rnn or gru predictor");
  tr->add_option("--data", topt.data, "Dataset CSV");
  tr->add_option("--model", topt.model, "kkl, rnn or gru");
  tr->add_option("--epochs", topt.epochs);
  tr->add_option("--batch-size", topt.batch_size);
  tr->add_option("--lr", topt.lr);
  tr->add_option("--t-train", topt.t_train, "Closed-loop samples per training window");
  tr->add_option("--p-train", topt.p_train, "Open-loop samples per training window");
  tr->add_option("--loss-window", topt.loss_window, "full or open_only");
  tr->add_option("--grad-clip", topt.grad_clip, "Global gradient norm limit, 0 disables");
  tr->add_option("--noise", topt.noise, "Extra training noise std (scaled units)");
  tr->add_option("--latent-dim", topt.latent_dim, "0 selects 2n + 2");
  tr->add_option("--hidden", topt.hidden, "Hidden layer widths")->delimiter(',');
  tr->add_option("--decay", topt.decay, "Initial latent decay rate");
  tr->add_option("--omega-min", topt.omega_min, "Lowest initial latent frequency");
  tr->add_option("--omega-max", topt.omega_max, "Highest initial latent frequency");
  tr->add_flag("--timing", topt.timing, "Record wall time per epoch in the log");

  PredictOptions popt;
  auto* pr = app.add_subcommand("predict", "Forecast one trajectory");
  pr->add_option("--model-file", popt.model_file);
  pr->add_option("--data", popt.data);
  pr->add_option("--split", popt.split, "train, val or test");
  pr->add_option("--traj-id", popt.traj_id);
  pr->add_option("--t", popt.t, "Observed samples");
  pr->add_option("--p", popt.p, "Forecast samples");

  EvalOptions eopt;
  auto* ev = app.add_subcommand("eval", "Test-set MSE table");
  ev->add_option("--model-file", eopt.model_files)->delimiter(',');
  ev->add_option("--data", eopt.data)->delimiter(',');
  ev->add_option("--t", eopt.t);
  ev->add_option("--p", eopt.p);

  SweepOptions sopt;
  TrainOptions sweep_train;
  auto* ns = app.add_subcommand("noise-sweep", "Retrain under training noise and score the test split");
  ns->add_option("--system", sopt.system);
  ns->add_option("--sigmas", sopt.sigmas)->delimiter(',');
  ns->add_option("--seeds", sopt.seeds)->delimiter(',');
  ns->add_option("--n-train", sopt.n_train);
  ns->add_option("--n-val", sopt.n_val);
  ns->add_option("--n-test", sopt.n_test);
  ns->add_option("--epochs", sopt.epochs);
  ns->add_option("--batch-size", sweep_train.batch_size);
  ns->add_option("--lr", sweep_train.lr);
  ns->add_option("--t-train", sweep_train.t_train);
  ns->add_option("--p-train", sweep_train.p_train);
  ns->add_option("--t", sopt.t);
  ns->add_option("--p", sopt.p);

  HeatmapOptions hopt;
  auto* hm = app.add_subcommand("heatmap", "Per-initial-condition log MSE over an enlarged grid");
  hm->add_option("--model-file", hopt.model_file);
  hm->add_option("--system", hopt.system, "Defaults to the model's system");
  hm->add_option("--cells", hopt.cells, "Cells per axis");
  hm->add_option("--enlarge", hopt.enlarge, "Grid extent relative to the training box");
  hm->add_option("--t", hopt.t);
  hm->add_option("--p", hopt.p);

  BoundOptions bopt;
  auto* br = app.add_subcommand("bound-report", "Error bounds against measured errors");
  br->add_flag("--lti", bopt.lti, "Certify on the exact scalar linear construction");
  br->add_option("--model-file", bopt.model_file);
  br->add_option("--data", bopt.data);
  br->add_option("--t-grid", bopt.t_grid)->delimiter(',');
  br->add_option("--p-grid", bopt.p_grid)->delimiter(',');

  OracleOptions oopt;
  auto* to = app.add_subcommand("t-oracle-check", "PDE residual of the embedding under refinement");
  to->add_option("--system", oopt.system);
  to->add_option("--model-file", oopt.model_file, "KKL model providing A; a fresh one when omitted");
  to->add_option("--samples", oopt.samples);
  to->add_option("--domain-scale", oopt.domain_scale, "Shrink factor of the sampling region");
  to->add_option("--tol", oopt.tol, "Residual tolerance at the finest level");

  CLI::App* active = nullptr;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    for (auto* sub : app.get_subcommands()) active = sub;
    if (!g.config.empty()) {
      require_file(g.config, "config file");
      apply_config(g.config, app, active);
    }
    if (active == gen) return cmd_gen_data(g, data, out);
    if (active == tr) return cmd_train(g, topt, out);
    if (active == pr) return cmd_predict(g, popt, out);
    if (active == ev) return cmd_eval(g, eopt, out);
    if (active == ns) return cmd_noise_sweep(g, sopt, sweep_train, out);
    if (active == hm) return cmd_heatmap(g, hopt, out);
    if (active == br) return cmd_bound_report(g, bopt, out);
    if (active == to) return cmd_t_oracle_check(g, oopt, out);
    return kExitUsage;
  } catch (const CLI::CallForHelp&) {
    out << (active ? active->help() : app.help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    for (auto* sub : app.get_subcommands()) active = sub;
    err << "error: " << e.what() << '\n' << (active ? active->help() : app.help());
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n' << (active ? active->help() : app.help());
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DegenerateScaleError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    // schema, parse, I/O and argument errors
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace dkkl
