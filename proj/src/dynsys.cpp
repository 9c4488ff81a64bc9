#include "deepkkl/dynsys.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "deepkkl/errors.hpp"

namespace dkkl {

namespace {

int arity(SystemKind kind) {
  switch (kind) {
    case SystemKind::vanderpol:
    case SystemKind::lotka_volterra:
      return 2;
    case SystemKind::lorenz:
    case SystemKind::mean_field:
      return 3;
  }
  return 0;
}

void check_dim(SystemKind kind, const Vec& x) {
  if (x.size() != arity(kind)) {
    throw std::invalid_argument(std::string(system_name(kind)) + " expects a state of dimension " +
                                std::to_string(arity(kind)) + ", got " + std::to_string(x.size()));
  }
}

bool blown_up(const Vec& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || std::abs(x[i]) > kBlowUpLimit) return true;
  }
  return false;
}

}  // namespace

std::string_view system_name(SystemKind kind) {
  switch (kind) {
    case SystemKind::vanderpol: return "vanderpol";
    case SystemKind::lorenz: return "lorenz";
    case SystemKind::lotka_volterra: return "lotka_volterra";
    case SystemKind::mean_field: return "mean_field";
  }
  return "unknown";
}

std::optional<SystemKind> parse_system(std::string_view name) {
  for (auto kind : {SystemKind::vanderpol, SystemKind::lorenz, SystemKind::lotka_volterra,
                    SystemKind::mean_field}) {
    if (system_name(kind) == name) return kind;
  }
  return std::nullopt;
}

SystemSpec SystemSpec::make(SystemKind kind) {
  SystemSpec spec;
  spec.kind = kind;
  spec.n = arity(kind);
  spec.oversample = 10;
  auto& dom = spec.init_domain;
  switch (kind) {
    case SystemKind::vanderpol:
      spec.dt = 0.25;
      dom.lo = Vec::Constant(2, -5.0);
      dom.hi = Vec::Constant(2, 5.0);
      break;
    case SystemKind::lorenz:
      spec.dt = 0.02;
      dom.lo = Vec{{-20.0, -1.0, -1.0}};
      dom.hi = Vec{{20.0, 1.0, 1.0}};
      break;
    case SystemKind::lotka_volterra:
      spec.dt = 0.25;
      dom.lo = Vec::Zero(2);
      dom.hi = Vec::Constant(2, 2.0);
      break;
    case SystemKind::mean_field:
      spec.dt = 0.05;
      dom.shape = InitDomain::Shape::polar;
      dom.r_max = 1.1;
      break;
  }
  return spec;
}

void SystemSpec::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("sampling period must be positive");
  if (oversample < 1) throw std::invalid_argument("oversample must be >= 1");
  if (n != arity(kind)) throw std::invalid_argument("state dimension does not match the vector field");
}

Vec vector_field(SystemKind kind, const Vec& x) {
  check_dim(kind, x);
  Vec dx(x.size());
  switch (kind) {
    case SystemKind::vanderpol:
      dx[0] = x[1];
      dx[1] = (1.0 - x[0] * x[0]) * x[1] - x[0];
      break;
    case SystemKind::lorenz:
      dx[0] = 10.0 * (x[1] - x[0]);
      dx[1] = 24.0 * x[0] - x[1] - x[0] * x[2];
      dx[2] = x[0] * x[1] - 8.0 / 3.0 * x[2];
      break;
    case SystemKind::lotka_volterra:
      dx[0] = x[0] * (2.0 / 3.0 - 0.75 * x[1]);
      dx[1] = x[1] * (x[0] - 1.0);
      break;
    case SystemKind::mean_field:
      dx[0] = 0.1 * x[0] - x[1] - 0.1 * x[0] * x[2];
      dx[1] = x[0] + 0.1 * x[1] - 0.1 * x[1] * x[2];
      dx[2] = -10.0 * (x[2] - x[0] * x[0] - x[1] * x[1]);
      break;
  }
  return dx;
}

double observe(SystemKind kind, const Vec& x) {
  check_dim(kind, x);
  return x[0];
}

Dynamics dynamics(SystemKind kind) {
  return Dynamics{arity(kind), [kind](const Vec& x) { return vector_field(kind, x); },
                  [kind](const Vec& x) { return observe(kind, x); }};
}

Dynamics linear_test_system(double rate) {
  return Dynamics{1, [rate](const Vec& x) -> Vec { return rate * x; },
                  [](const Vec& x) { return x[0]; }};
}

Vec rk4_step(const VectorField& field, const Vec& x, double h) {
  if (h == 0.0 || !std::isfinite(h)) throw std::invalid_argument("rk4 step size must be finite and nonzero");
  const Vec k1 = field(x);
  const Vec k2 = field(x + 0.5 * h * k1);
  const Vec k3 = field(x + 0.5 * h * k2);
  const Vec k4 = field(x + h * k3);
  Vec next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) throw NumericError("rk4 step produced a non-finite state");
  return next;
}

Trajectory simulate(const Dynamics& dyn, double dt, int oversample, const Vec& x0, int samples) {
  if (!(dt > 0.0)) throw std::invalid_argument("sampling period must be positive");
  if (oversample < 1) throw std::invalid_argument("oversample must be >= 1");
  if (samples < 1) throw std::invalid_argument("a trajectory needs at least one sample");
  if (x0.size() != dyn.n) throw std::invalid_argument("initial condition has the wrong dimension");

  Trajectory traj;
  traj.x0 = x0;
  traj.times.reserve(samples);
  traj.states.reserve(samples);
  traj.outputs.reserve(samples);

  const double h = dt / oversample;
  Vec x = x0;
  for (int k = 0; k < samples; ++k) {
    if (k > 0) {
      for (int s = 0; s < oversample; ++s) {
        const long step = static_cast<long>(k - 1) * oversample + s;
        try {
          x = rk4_step(dyn.field, x, h);
        } catch (const NumericError&) {
          throw NumericError("integration blew up at substep " + std::to_string(step), step);
        }
        if (blown_up(x)) {
          throw NumericError("integration blew up at substep " + std::to_string(step), step);
        }
      }
    }
    traj.times.push_back(k * dt);
    traj.states.push_back(x);
    traj.outputs.push_back(dyn.observe(x));
  }
  return traj;
}

Trajectory simulate(const SystemSpec& spec, const Vec& x0, int samples) {
  spec.validate();
  check_dim(spec.kind, x0);
  return simulate(dynamics(spec.kind), spec.dt, spec.oversample, x0, samples);
}

Vec sample_initial(const SystemSpec& spec, Rng& rng) {
  const auto& dom = spec.init_domain;
  if (dom.shape == InitDomain::Shape::polar) {
    const double r = rng.uniform(0.0, dom.r_max);
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    Vec x(3);
    x[0] = r * std::cos(theta);
    x[1] = r * std::sin(theta);
    x[2] = x[0] * x[0] + x[1] * x[1];
    return x;
  }
  Vec x(dom.lo.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform(dom.lo[i], dom.hi[i]);
  return x;
}

Vec sample_initial(const SystemSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return sample_initial(spec, rng);
}

}  // namespace dkkl
