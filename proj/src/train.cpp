#include "deepkkl/train.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "deepkkl/errors.hpp"

namespace dkkl {

std::string_view loss_window_name(LossWindow window) {
  return window == LossWindow::full ? "full" : "open_only";
}

std::optional<LossWindow> parse_loss_window(std::string_view name) {
  if (name == "full") return LossWindow::full;
  if (name == "open_only") return LossWindow::open_only;
  return std::nullopt;
}

void TrainConfig::validate(int trajectory_length) const {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("epochs and batch size must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (t_train < 1 || p_train < 1) throw std::invalid_argument("t_train and p_train must be positive");
  if (t_train + p_train > trajectory_length) {
    throw std::invalid_argument("t_train + p_train = " + std::to_string(t_train + p_train) +
                                " exceeds the trajectory length " + std::to_string(trajectory_length));
  }
  if (grad_clip < 0.0) throw std::invalid_argument("gradient clip must be nonnegative");
}

namespace {

// Each cell provides forward(z, u) with a per-step cache and
// backward(cache, dz_next) -> (dz, du), accumulating its parameter gradients.

struct KklCell {
  const KklModel& model;
  KklModel& grad;
  DiscretePair pair;
  Mat grad_a;  // d loss / d A_d
  Vec grad_b;  // d loss / d b_d

  struct Cache {
    Mat z, u;
  };

  KklCell(const KklModel& m, KklModel& g) : model(m), grad(g), pair(discretize(m)) {
    grad_a = Mat::Zero(m.latent_dim(), m.latent_dim());
    grad_b = Vec::Zero(m.latent_dim());
  }

  Mat forward(const Mat& z, const Mat& u, Cache& c) const {
    c.z = z;
    c.u = u;
    Mat next = pair.a_d * z;
    next.noalias() += pair.b_d * u;
    return next;
  }

  void backward(const Cache& c, const Mat& upstream, Mat& dz, Mat& du) {
    grad_a.noalias() += upstream * c.z.transpose();
    grad_b.noalias() += upstream * c.u.transpose();
    dz = pair.a_d.transpose() * upstream;
    du = pair.b_d.transpose() * upstream;
  }

  // Chain the (A_d, b_d) gradients to the block parameters.
  void finish() {
    const auto deriv = discretize_derivatives(model);
    const Vec sigma = model.decay_rates();
    const int nc = model.complex_blocks();
    for (int i = 0; i < static_cast<int>(sigma.size()); ++i) {
      const bool complex = i < nc;
      const int offset = complex ? 2 * i : 2 * nc + (i - nc);
      const int size = complex ? 2 : 1;
      const Mat ga = grad_a.block(offset, offset, size, size);
      const Vec gb = grad_b.segment(offset, size);
      const double d_sigma = (ga.array() * deriv.da_dsigma[i].array()).sum() + gb.dot(deriv.db_dsigma[i]);
      // sigma = -exp(p) so d sigma / d p = sigma
      grad.log_decay[i] += d_sigma * sigma[i];
      if (complex) {
        grad.frequency[i] += (ga.array() * deriv.da_domega[i].array()).sum() + gb.dot(deriv.db_domega[i]);
      }
    }
  }
};

struct RnnCell {
  const RnnParams& params;
  RnnParams& grad;
  using Cache = RnnCache;

  Mat forward(const Mat& z, const Mat& u, Cache& c) const { return rnn_step(params, z, u, &c); }
  void backward(const Cache& c, const Mat& upstream, Mat& dz, Mat& du) {
    rnn_backward(params, c, upstream, grad, dz, du);
  }
  void finish() {}
};

struct GruCell {
  const GruParams& params;
  GruParams& grad;
  using Cache = GruCache;

  Mat forward(const Mat& z, const Mat& u, Cache& c) const { return gru_step(params, z, u, &c); }
  void backward(const Cache& c, const Mat& upstream, Mat& dz, Mat& du) {
    gru_backward(params, c, upstream, grad, dz, du);
  }
  void finish() {}
};

template <typename Cell>
double bptt(Cell& cell, const MlpParams& head, MlpParams& head_grad, int m, const Mat& y, int t, int p,
            LossWindow window) {
  const int horizon = t + p;
  const Eigen::Index batch = y.cols();
  const double scale = 1.0 / static_cast<double>(batch);
  const int window_start = window == LossWindow::full ? 0 : t;

  std::vector<MlpCache> head_caches(horizon);
  std::vector<typename Cell::Cache> cell_caches(horizon > 0 ? horizon - 1 : 0);
  std::vector<Mat> loss_grads(horizon);

  double loss = 0.0;
  Mat z = Mat::Zero(m, batch);
  for (int s = 0; s < horizon; ++s) {
    head_caches[s] = mlp_forward(head, z);
    const Mat& y_hat = head_caches[s].output;
    if (s >= window_start) {
      const Mat err = y_hat - y.row(s);
      loss += err.squaredNorm();
      loss_grads[s] = 2.0 * scale * err;
    }
    if (s + 1 < horizon) {
      if (s < t) {
        z = cell.forward(z, y.row(s), cell_caches[s]);
      } else {
        z = cell.forward(z, y_hat, cell_caches[s]);
      }
    }
  }
  loss *= scale;
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");

  Mat dz_next = Mat::Zero(m, batch);
  Mat dz_cell, du;
  for (int s = horizon - 1; s >= 0; --s) {
    Mat upstream = Mat::Zero(1, batch);
    if (s + 1 < horizon) {
      cell.backward(cell_caches[s], dz_next, dz_cell, du);
      // the input is the model's own output in the open-loop phase
      if (s >= t) upstream += du;
    } else {
      dz_cell = Mat::Zero(m, batch);
    }
    if (s >= window_start) upstream += loss_grads[s];
    dz_next = dz_cell + mlp_backward(head, head_caches[s], upstream, head_grad);
  }
  cell.finish();
  return loss;
}

}  // namespace

LossResult batch_loss(const Model& model, const Mat& sequences, int t, int p, LossWindow window) {
  if (t < 0 || p < 0) throw std::invalid_argument("t and p must be nonnegative");
  if (sequences.rows() < t + p) {
    throw std::invalid_argument("sequences have " + std::to_string(sequences.rows()) + " samples, need t + p = " +
                                std::to_string(t + p));
  }
  LossResult result;
  if (const auto* kkl = std::get_if<KklModel>(&model)) {
    KklModel grad = KklModel::zeros_like(*kkl);
    KklCell cell(*kkl, grad);
    result.loss = bptt(cell, kkl->head, grad.head, kkl->latent_dim(), sequences, t, p, window);
    result.grad = std::move(grad);
  } else {
    const auto& rec = std::get<RecurrentModel>(model);
    RecurrentModel grad = RecurrentModel::zeros_like(rec);
    if (rec.kind == ModelKind::gru) {
      GruCell cell{rec.gru, grad.gru};
      result.loss = bptt(cell, rec.head, grad.head, rec.latent_dim(), sequences, t, p, window);
    } else {
      RnnCell cell{rec.rnn, grad.rnn};
      result.loss = bptt(cell, rec.head, grad.head, rec.latent_dim(), sequences, t, p, window);
    }
    result.grad = std::move(grad);
  }
  return result;
}

LossResult trajectory_loss(const Model& model, const std::vector<double>& y_scaled, int t, int p,
                           LossWindow window) {
  const Mat column = Eigen::Map<const Vec>(y_scaled.data(), static_cast<Eigen::Index>(y_scaled.size()));
  return batch_loss(model, column, t, p, window);
}

double validation_mse(const Model& model, const std::vector<Record>& records, int t, int p) {
  if (records.empty()) throw std::invalid_argument("no records to evaluate");
  const Scaler& scaler = model_scaler(model);
  Mat prefix(t, static_cast<Eigen::Index>(records.size()));
  for (std::size_t j = 0; j < records.size(); ++j) {
    const auto& out = records[j].traj.outputs;
    if (static_cast<int>(out.size()) < t + p) throw std::invalid_argument("trajectory shorter than t + p");
    for (int k = 0; k < t; ++k) prefix(k, j) = scaler.apply(out[k]);
  }
  const Mat pred = forecast_scaled(model, prefix, p);
  double sum = 0.0;
  for (std::size_t j = 0; j < records.size(); ++j) {
    for (int k = 0; k < p; ++k) {
      const double e = scaler.invert(pred(k, j)) - records[j].traj.outputs[t + k];
      sum += e * e;
    }
  }
  return sum / (static_cast<double>(records.size()) * p);
}

namespace {

void check_hurwitz(const Model& model) {
  if (const auto* kkl = std::get_if<KklModel>(&model)) {
    const Vec sigma = kkl->decay_rates();
    if (!sigma.allFinite() || (sigma.array() >= 0.0).any()) {
      throw NumericError("latent matrix lost the Hurwitz property");
    }
  }
}

void clip_global_norm(ParamViews& grads, double limit) {
  double sq = 0.0;
  for (const auto& g : grads) sq += Eigen::Map<const Vec>(g.data, g.size).squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm <= limit || norm == 0.0) return;
  const double factor = limit / norm;
  for (auto& g : grads) Eigen::Map<Vec>(g.data, g.size) *= factor;
}

}  // namespace

TrainResult train(Model model, const Dataset& dataset, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate(dataset.length);
  if (dataset.train.empty() || dataset.val.empty()) throw std::invalid_argument("dataset needs train and val splits");
  std::visit([](const auto& m) { m.validate(); }, model);
  if (model_kind(model) != config.kind) throw std::invalid_argument("model kind does not match the configuration");

  const int horizon = config.t_train + config.p_train;
  const auto n_train = dataset.train.size();
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  TrainResult result{model, {}, std::nullopt, {}};
  ParamViews params = param_views(model);
  AdamState adam;
  adam.config.lr = config.lr;
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(n_train);
  double best_val = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n_train; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    int batches = 0;
    try {
      for (std::size_t first = 0; first < n_train; first += batch_size) {
        const std::size_t count = std::min(batch_size, n_train - first);
        Mat y(horizon, static_cast<Eigen::Index>(count));
        for (std::size_t j = 0; j < count; ++j) {
          const auto& rec = dataset.train[order[first + j]];
          for (int s = 0; s < horizon; ++s) y(s, j) = rec.measured[s];
        }
        LossResult lr;
        try {
          lr = batch_loss(model, y, config.t_train, config.p_train, config.loss_window);
        } catch (const NumericError& e) {
          // name the first trajectory of the batch with a non-finite loss
          for (std::size_t j = 0; j < count; ++j) {
            const Mat col = y.col(j);
            double single = 0.0;
            try {
              single = batch_loss(model, col, config.t_train, config.p_train, config.loss_window).loss;
            } catch (const NumericError&) {
              single = NAN;
            }
            if (!std::isfinite(single)) {
              const int id = dataset.train[order[first + j]].id;
              throw NumericError("non-finite loss on training trajectory " + std::to_string(id), id);
            }
          }
          throw;
        }
        ParamViews grads = param_views(lr.grad);
        if (config.grad_clip > 0.0) clip_global_norm(grads, config.grad_clip);
        adam_step(params, grads, adam);
        check_hurwitz(model);
        ++result.history.optimizer_steps;
        loss_sum += lr.loss;
        ++batches;
      }
    } catch (const NumericError& e) {
      result.failure = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
      break;
    }

    double val = NAN;
    try {
      val = validation_mse(model, dataset.val, config.t_train, config.p_train);
    } catch (const NumericError& e) {
      result.failure = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double train_loss = loss_sum / batches;
    result.history.train_loss.push_back(train_loss);
    result.history.val_mse.push_back(val);
    result.history.seconds.push_back(seconds);
    if (std::isfinite(val) && val < best_val) {
      best_val = val;
      result.history.best_epoch = epoch;
      result.model = model;
      result.optimizer = adam;
    }
    if (on_epoch) on_epoch(epoch, train_loss, val);
    if (result.failure) break;
  }
  return result;
}

Model init_model(ModelKind kind, const SystemSpec& spec, const Scaler& scaler, std::uint64_t seed,
                 const ModelOptions& options) {
  const int m = options.latent_dim > 0 ? options.latent_dim : default_latent_dim(spec.n);
  Rng rng(derive_seed(seed, "init"));
  if (kind != ModelKind::kkl) return init_recurrent(kind, m, spec.dt, options.hidden, scaler, rng);
  KklInit init;
  init.latent_dim = m;
  init.dt = spec.dt;
  init.hidden = options.hidden;
  init.decay = options.decay;
  init.omega_min = options.omega_min;
  init.omega_max = options.omega_max;
  return init_kkl(init, scaler, rng);
}

TrainResult train_baseline(ModelKind kind, const Dataset& dataset, const TrainConfig& config, int latent_dim,
                           const std::vector<int>& hidden, const EpochCallback& on_epoch) {
  if (kind == ModelKind::kkl) throw std::invalid_argument("train_baseline expects rnn or gru");
  Rng rng(derive_seed(config.seed, "init"));
  Model model = init_recurrent(kind, latent_dim, dataset.system.dt, hidden, dataset.scaler, rng);
  TrainConfig cfg = config;
  cfg.kind = kind;
  return train(std::move(model), dataset, cfg, on_epoch);
}

}  // namespace dkkl
