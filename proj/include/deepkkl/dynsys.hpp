#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deepkkl/rng.hpp"

namespace dkkl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class SystemKind { vanderpol, lorenz, lotka_volterra, mean_field };

std::string_view system_name(SystemKind kind);
std::optional<SystemKind> parse_system(std::string_view name);

// Region initial conditions are drawn from. Boxes are sampled uniformly per
// axis. The polar shape (mean-field) draws r in [0, r_max], theta in [0, 2pi)
// and sets x = (r cos theta, r sin theta, r^2).
struct InitDomain {
  enum class Shape { box, polar };
  Shape shape = Shape::box;
  Vec lo;
  Vec hi;
  double r_max = 0.0;
};

struct SystemSpec {
  SystemKind kind = SystemKind::vanderpol;
  int n = 2;
  double dt = 0.25;
  int oversample = 10;
  InitDomain init_domain;

  // Benchmark defaults: dimension, sampling period and initial-condition region.
  static SystemSpec make(SystemKind kind);

  std::string_view name() const { return system_name(kind); }
  void validate() const;
};

struct Trajectory {
  Vec x0;
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<double> outputs;

  std::size_t size() const { return outputs.size(); }
};

using VectorField = std::function<Vec(const Vec&)>;
using Observation = std::function<double(const Vec&)>;

// A vector field paired with its output map; the benchmark systems and the
// linear test fields share this shape.
struct Dynamics {
  int n = 0;
  VectorField field;
  Observation observe;
};

Vec vector_field(SystemKind kind, const Vec& x);
double observe(SystemKind kind, const Vec& x);

Dynamics dynamics(SystemKind kind);
// x' = rate * x, y = x, in dimension 1
Dynamics linear_test_system(double rate);

// Any |x_i| beyond this aborts a simulation.
inline constexpr double kBlowUpLimit = 1e6;

// Classical four-stage update. A negative h integrates backward in time.
Vec rk4_step(const VectorField& field, const Vec& x, double h);

// Integrates with step dt / oversample and records every oversample-th
// state, `samples` records in total (x0 included).
Trajectory simulate(const SystemSpec& spec, const Vec& x0, int samples);
Trajectory simulate(const Dynamics& dyn, double dt, int oversample, const Vec& x0, int samples);

Vec sample_initial(const SystemSpec& spec, std::uint64_t seed);
Vec sample_initial(const SystemSpec& spec, Rng& rng);

}  // namespace dkkl
