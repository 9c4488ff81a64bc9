#include "deepkkl/kkl.hpp"

#include <cmath>
#include <stdexcept>

#include "deepkkl/errors.hpp"

namespace dkkl {

namespace {

const Eigen::Matrix2d kJ = (Eigen::Matrix2d() << 0.0, 1.0, -1.0, 0.0).finished();

Eigen::Matrix2d rotation_decay(double sigma, double omega, double t) {
  const double e = std::exp(sigma * t);
  const double c = std::cos(omega * t);
  const double s = std::sin(omega * t);
  return (Eigen::Matrix2d() << e * c, e * s, -e * s, e * c).finished();
}

void require_finite(const Vec& z, const char* what, long index) {
  if (!z.allFinite()) throw NumericError(std::string(what) + " produced a non-finite latent", index);
}

}  // namespace

void KklModel::validate() const {
  if (log_decay.size() == 0) throw std::invalid_argument("KKL model has no latent blocks");
  if (frequency.size() > log_decay.size()) throw std::invalid_argument("more frequencies than blocks");
  if (!(dt > 0.0)) throw std::invalid_argument("sampling period must be positive");
  if (head.input_dim() != latent_dim()) {
    throw std::invalid_argument("output map expects input dimension " + std::to_string(head.input_dim()) +
                                " but the latent dimension is " + std::to_string(latent_dim()));
  }
}

void KklModel::append_views(ParamViews& out) {
  out.push_back(ParamView{"log_decay", log_decay.data(), log_decay.size(), log_decay.size(), 1});
  out.push_back(ParamView{"frequency", frequency.data(), frequency.size(), frequency.size(), 1});
  head.append_views(out, "head.");
}

KklModel KklModel::zeros_like(const KklModel& other) {
  KklModel g;
  g.log_decay = Vec::Zero(other.log_decay.size());
  g.frequency = Vec::Zero(other.frequency.size());
  g.head = MlpParams::zeros_like(other.head);
  g.scaler = other.scaler;
  g.dt = other.dt;
  return g;
}

int default_latent_dim(int state_dim, LatentRule rule) {
  return rule == LatentRule::two_n_plus_two ? 2 * state_dim + 2 : 2 * state_dim + 1;
}

KklModel init_kkl(const KklInit& init, const Scaler& scaler, Rng& rng) {
  if (init.latent_dim < 1) throw std::invalid_argument("latent dimension must be positive");
  if (!(init.decay > 0.0)) throw std::invalid_argument("initial decay must be positive");
  const int complex = init.latent_dim / 2;
  const int real = init.latent_dim % 2;
  KklModel model;
  model.dt = init.dt;
  model.scaler = scaler;
  model.log_decay = Vec::Constant(complex + real, std::log(init.decay));
  model.frequency.resize(complex);
  for (int i = 0; i < complex; ++i) {
    const double frac = complex > 1 ? static_cast<double>(i) / (complex - 1) : 0.0;
    model.frequency[i] = init.omega_min * std::pow(init.omega_max / init.omega_min, frac);
  }
  model.head = MlpParams::init(init.latent_dim, init.hidden, 1, rng);
  return model;
}

Mat build_A(const KklModel& model) {
  const int m = model.latent_dim();
  const int nc = model.complex_blocks();
  const Vec sigma = model.decay_rates();
  Mat a = Mat::Zero(m, m);
  for (int i = 0; i < nc; ++i) {
    a.block<2, 2>(2 * i, 2 * i) << sigma[i], model.frequency[i], -model.frequency[i], sigma[i];
  }
  for (int j = 0; j < model.real_blocks(); ++j) a(2 * nc + j, 2 * nc + j) = sigma[nc + j];
  return a;
}

Mat matrix_exp(const KklModel& model, double t) {
  const int m = model.latent_dim();
  const int nc = model.complex_blocks();
  const Vec sigma = model.decay_rates();
  Mat e = Mat::Zero(m, m);
  for (int i = 0; i < nc; ++i) e.block<2, 2>(2 * i, 2 * i) = rotation_decay(sigma[i], model.frequency[i], t);
  for (int j = 0; j < model.real_blocks(); ++j) e(2 * nc + j, 2 * nc + j) = std::exp(sigma[nc + j] * t);
  return e;
}

DiscretePair discretize(const KklModel& model) {
  if (!(model.dt > 0.0)) throw std::invalid_argument("sampling period must be positive");
  const int nc = model.complex_blocks();
  const Vec sigma = model.decay_rates();
  DiscretePair d{matrix_exp(model, model.dt), Vec::Zero(model.latent_dim())};
  for (int i = 0; i < nc; ++i) {
    const double s = sigma[i];
    const double w = model.frequency[i];
    // (sI + wJ)^{-1} = (sI - wJ) / (s^2 + w^2)
    const Eigen::Matrix2d inv = (s * Eigen::Matrix2d::Identity() - w * kJ) / (s * s + w * w);
    const Eigen::Matrix2d ad = d.a_d.block<2, 2>(2 * i, 2 * i);
    d.b_d.segment<2>(2 * i) = inv * (ad - Eigen::Matrix2d::Identity()) * Eigen::Vector2d::Ones();
  }
  for (int j = 0; j < model.real_blocks(); ++j) {
    const double s = sigma[nc + j];
    d.b_d[2 * nc + j] = std::expm1(s * model.dt) / s;
  }
  return d;
}

DiscreteDerivatives discretize_derivatives(const KklModel& model) {
  const int nc = model.complex_blocks();
  const double dt = model.dt;
  const Vec sigma = model.decay_rates();
  DiscreteDerivatives out;
  const Eigen::Matrix2d eye = Eigen::Matrix2d::Identity();
  const Eigen::Vector2d ones = Eigen::Vector2d::Ones();
  for (int i = 0; i < nc; ++i) {
    const double s = sigma[i];
    const double w = model.frequency[i];
    const Eigen::Matrix2d inv = (s * eye - w * kJ) / (s * s + w * w);
    const Eigen::Matrix2d ad = rotation_decay(s, w, dt);
    const Eigen::Vector2d e_b = (ad - eye) * ones;
    const Eigen::Matrix2d dad_ds = dt * ad;
    const Eigen::Matrix2d dad_dw = dt * kJ * ad;
    // d(A^{-1}) = -A^{-1} dA A^{-1}, with dA/dsigma = I and dA/domega = J
    out.da_dsigma.push_back(dad_ds);
    out.da_domega.push_back(dad_dw);
    out.db_dsigma.push_back(-inv * inv * e_b + inv * dad_ds * ones);
    out.db_domega.push_back(-inv * kJ * inv * e_b + inv * dad_dw * ones);
  }
  for (int j = 0; j < model.real_blocks(); ++j) {
    const double s = sigma[nc + j];
    const double e = std::exp(s * dt);
    out.da_dsigma.push_back(Mat::Constant(1, 1, dt * e));
    out.da_domega.push_back(Mat());
    out.db_dsigma.push_back(Vec::Constant(1, (dt * e * s - std::expm1(s * dt)) / (s * s)));
    out.db_domega.push_back(Vec());
  }
  return out;
}

std::vector<Vec> closed_loop_filter(const KklModel& model, const std::vector<double>& y_scaled, const Vec& z0) {
  if (z0.size() != model.latent_dim()) {
    throw std::invalid_argument("initial latent has dimension " + std::to_string(z0.size()) + ", expected " +
                                std::to_string(model.latent_dim()));
  }
  const auto d = discretize(model);
  std::vector<Vec> zs;
  zs.reserve(y_scaled.size() + 1);
  zs.push_back(z0);
  for (std::size_t k = 0; k < y_scaled.size(); ++k) {
    Vec next = d.a_d * zs.back() + d.b_d * y_scaled[k];
    require_finite(next, "closed-loop filter", static_cast<long>(k));
    zs.push_back(std::move(next));
  }
  return zs;
}

Rollout open_loop_rollout(const KklModel& model, const Vec& z_t, int p, bool unscale) {
  if (p < 0) throw std::invalid_argument("prediction horizon must be nonnegative");
  if (z_t.size() != model.latent_dim()) throw std::invalid_argument("latent state has the wrong dimension");
  const auto d = discretize(model);
  Rollout r;
  r.latents.reserve(p + 1);
  r.outputs.reserve(p + 1);
  Vec z = z_t;
  for (int k = 0; k <= p; ++k) {
    const double y = mlp_apply(model.head, z);
    r.latents.push_back(z);
    r.outputs.push_back(y);
    if (k == p) break;
    z = d.a_d * z + d.b_d * y;
    require_finite(z, "open-loop rollout", k);
  }
  if (unscale) {
    for (double& y : r.outputs) y = model.scaler.invert(y);
  }
  return r;
}

std::vector<double> predict(const KklModel& model, const std::vector<double>& y_prefix, int p) {
  if (y_prefix.empty()) throw std::invalid_argument("prediction needs at least one observed sample");
  if (p < 0) throw std::invalid_argument("prediction horizon must be nonnegative");
  if (p == 0) return {};
  std::vector<double> scaled(y_prefix.size());
  for (std::size_t k = 0; k < y_prefix.size(); ++k) scaled[k] = model.scaler.apply(y_prefix[k]);
  const auto zs = closed_loop_filter(model, scaled, Vec::Zero(model.latent_dim()));
  auto r = open_loop_rollout(model, zs.back(), p - 1, true);
  return std::move(r.outputs);
}

// ---------------------------------------------------------------------------

double default_t_max(const KklModel& model, double tail) {
  const double lambda = contraction_constants(model).lambda;
  return std::log(1.0 / tail) / lambda;
}

double t_map_tail_bound(const KklModel& model, double t_max, double h_sup) {
  const double lambda = contraction_constants(model).lambda;
  return h_sup * model.input_vector().norm() * std::exp(-lambda * t_max) / lambda;
}

Vec t_map_oracle(const Dynamics& dyn, const KklModel& model, const Vec& x, const TMapSettings& settings) {
  if (!(settings.quad_step > 0.0) || !(settings.t_max > 0.0)) {
    throw std::invalid_argument("quadrature step and horizon must be positive");
  }
  if (x.size() != dyn.n) throw std::invalid_argument("state has the wrong dimension");
  const long steps = std::lround(std::ceil(settings.t_max / settings.quad_step - 1e-9));
  const double h = settings.t_max / static_cast<double>(steps);
  const Vec b = model.input_vector();

  Vec sum = 0.5 * b * dyn.observe(x);
  Vec state = x;
  for (long j = 1; j <= steps; ++j) {
    try {
      state = rk4_step(dyn.field, state, -h);
    } catch (const NumericError&) {
      state = Vec::Constant(x.size(), INFINITY);
    }
    if (!state.allFinite() || state.cwiseAbs().maxCoeff() > kBlowUpLimit) {
      throw NumericError("backward flow blew up; usable horizon is about " +
                             std::to_string((j - 1) * h) + " time units",
                         j);
    }
    // exp(-A s) at s = -j h
    const Mat weight = matrix_exp(model, static_cast<double>(j) * h);
    const double w = (j == steps) ? 0.5 : 1.0;
    sum += w * (weight * b) * dyn.observe(state);
  }
  return h * sum;
}

std::vector<InjectivityPair> injectivity_scatter(const Dynamics& dyn, const KklModel& model,
                                                 const std::vector<Vec>& states, const TMapSettings& settings) {
  std::vector<Vec> images;
  images.reserve(states.size());
  for (const auto& x : states) images.push_back(t_map_oracle(dyn, model, x, settings));
  std::vector<InjectivityPair> pairs;
  const int n = static_cast<int>(states.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      pairs.push_back({i, j, (images[i] - images[j]).norm(),
                       std::abs(dyn.observe(states[i]) - dyn.observe(states[j]))});
    }
  }
  return pairs;
}

double pde_residual(const Dynamics& dyn, const KklModel& model, const Vec& x, double fd_step,
                    const TMapSettings& settings) {
  if (!(fd_step > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  const Vec forward = rk4_step(dyn.field, x, fd_step);
  const Vec backward = rk4_step(dyn.field, x, -fd_step);
  const Vec t_here = t_map_oracle(dyn, model, x, settings);
  const Vec lie = (t_map_oracle(dyn, model, forward, settings) - t_map_oracle(dyn, model, backward, settings)) /
                  (2.0 * fd_step);
  const Vec rhs = build_A(model) * t_here + model.input_vector() * dyn.observe(x);
  return (lie - rhs).norm();
}

ContractionConstants contraction_constants(const KklModel& model) {
  // A is normal, so |exp(At)| = max_i exp(sigma_i t)
  return ContractionConstants{1.0, model.log_decay.array().exp().minCoeff()};
}

LipschitzReport lipschitz_report(const KklModel& model, int power_iters) {
  LipschitzReport r;
  const Vec sigma = model.decay_rates();
  const int nc = model.complex_blocks();
  for (int i = 0; i < sigma.size(); ++i) {
    const double w = i < nc ? model.frequency[i] : 0.0;
    r.norm_a = std::max(r.norm_a, std::hypot(sigma[i], w));
  }
  r.norm_b = model.input_vector().norm();
  r.l2 = lipschitz_upper_bound(model.head, power_iters);
  r.l1 = r.norm_a + r.norm_b * r.l2;
  return r;
}

}  // namespace dkkl
