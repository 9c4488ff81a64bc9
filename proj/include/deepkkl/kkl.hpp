#pragma once

#include <Eigen/Dense>

#include <vector>

#include "deepkkl/data.hpp"
#include "deepkkl/dynsys.hpp"
#include "deepkkl/nets.hpp"

namespace dkkl {

// Latent dynamics z' = A z + b y with A block diagonal. Each complex block is
//   [[sigma, omega], [-omega, sigma]],  sigma = -exp(log_decay)
// so A is Hurwitz for every finite parameter value. Real 1x1 blocks (sigma
// only) follow the complex ones; they exist for odd latent dimensions and the
// scalar test constructions. b is fixed to all ones.
struct KklModel {
  Vec log_decay;  // one entry per block, complex blocks first
  Vec frequency;  // one entry per complex block
  MlpParams head;
  Scaler scaler;
  double dt = 0.25;

  int complex_blocks() const { return static_cast<int>(frequency.size()); }
  int real_blocks() const { return static_cast<int>(log_decay.size() - frequency.size()); }
  int latent_dim() const { return 2 * complex_blocks() + real_blocks(); }
  Vec decay_rates() const { return -log_decay.array().exp().matrix(); }
  Vec input_vector() const { return Vec::Ones(latent_dim()); }

  void validate() const;
  void append_views(ParamViews& out);
  static KklModel zeros_like(const KklModel& other);
};

enum class LatentRule { two_n_plus_two, two_n_plus_one };
int default_latent_dim(int state_dim, LatentRule rule = LatentRule::two_n_plus_two);

struct KklInit {
  int latent_dim = 6;
  double dt = 0.25;
  std::vector<int> hidden = kDefaultHidden;
  double decay = 1.0;      // initial -sigma for every block
  double omega_min = 0.5;  // log-spaced frequency grid, distinct values
  double omega_max = 4.0;
};

KklModel init_kkl(const KklInit& init, const Scaler& scaler, Rng& rng);

struct DiscretePair {
  Mat a_d;
  Vec b_d;
};

Mat build_A(const KklModel& model);
Mat matrix_exp(const KklModel& model, double t);

// Zero-order hold: A_d = exp(A dt), b_d = A^{-1} (A_d - I) b.
DiscretePair discretize(const KklModel& model);

// Derivatives of each block of (A_d, b_d) with respect to (sigma, omega).
// Blocks are 2x2 / 2-vectors for complex blocks and 1x1 / 1-vectors for real
// blocks; the omega entries of real blocks are empty.
struct DiscreteDerivatives {
  std::vector<Mat> da_dsigma, da_domega;
  std::vector<Vec> db_dsigma, db_domega;
};
DiscreteDerivatives discretize_derivatives(const KklModel& model);

// z_{k+1} = A_d z_k + b_d y_k over the whole (scaled) sequence; returns
// z_0 .. z_t.
std::vector<Vec> closed_loop_filter(const KklModel& model, const std::vector<double>& y_scaled,
                                    const Vec& z0);

struct Rollout {
  std::vector<Vec> latents;     // z_t .. z_{t+p}
  std::vector<double> outputs;  // h(z_t) .. h(z_{t+p}), scaled unless unscaled on request
};

// Autonomous z_{k+1} = A_d z_k + b_d h(z_k), p steps.
Rollout open_loop_rollout(const KklModel& model, const Vec& z_t, int p, bool unscale = false);

// Scale the prefix, filter from z = 0, roll out, unscale. Returns p values:
// the forecast of samples t .. t+p-1.
std::vector<double> predict(const KklModel& model, const std::vector<double>& y_prefix, int p);

// ---------------------------------------------------------------------------
// Verification of the embedding T(x) = int_{-inf}^0 exp(-A s) b h(X(x, s)) ds.

struct TMapSettings {
  double t_max = 20.0;
  double quad_step = 0.01;
};

// Horizon at which exp(sigma_max * t_max) drops below `tail`.
double default_t_max(const KklModel& model, double tail = 1e-8);

// Bound on the part of the integral beyond t_max, given sup |h| on the tail.
double t_map_tail_bound(const KklModel& model, double t_max, double h_sup);

// Trapezoid rule on the backward RK4 flow sampled every quad_step over
// [-t_max, 0]. Throws NumericError naming the usable horizon on blow-up.
Vec t_map_oracle(const Dynamics& dyn, const KklModel& model, const Vec& x, const TMapSettings& settings);

// | dT/dt along the flow - (A T(x) + b h(x)) |, the derivative taken by a
// central difference over a flow of +-fd_step.
double pde_residual(const Dynamics& dyn, const KklModel& model, const Vec& x, double fd_step,
                    const TMapSettings& settings);

// T-distance against observation distance over every pair of states. A pair
// with a small T-distance and a large h-distance points at a readout that T
// cannot support. Reported only, never asserted.
struct InjectivityPair {
  int i = 0, j = 0;
  double t_distance = 0.0;
  double h_distance = 0.0;
};
std::vector<InjectivityPair> injectivity_scatter(const Dynamics& dyn, const KklModel& model,
                                                 const std::vector<Vec>& states, const TMapSettings& settings);

struct ContractionConstants {
  double k = 1.0;
  double lambda = 0.0;
};
// |exp(At)| <= k exp(-lambda t); exact for the normal block form.
ContractionConstants contraction_constants(const KklModel& model);

struct LipschitzReport {
  double norm_a = 0.0;  // |A|_2
  double norm_b = 0.0;  // |b|_2
  double l2 = 0.0;      // bound on |dh/dz|
  double l1 = 0.0;      // |A| + |b| L2
};
LipschitzReport lipschitz_report(const KklModel& model, int power_iters = 200);

}  // namespace dkkl
