#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepkkl/rng.hpp"

namespace dkkl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Flat window onto one parameter block. Optimizers and serializers walk
// models through these views; gradient containers expose identical views.
struct ParamView {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
  Eigen::Index rows = 0;  // data is column-major rows x cols; vectors have cols == 1
  Eigen::Index cols = 1;
};

using ParamViews = std::vector<ParamView>;

// ---------------------------------------------------------------------------
// MLP output map: input -> hidden... -> 1, ReLU between hidden layers and a
// linear output layer. Batched calls take inputs as (dim x batch) matrices.

struct DenseLayer {
  Mat weight;  // out x in
  Vec bias;    // out
};

inline const std::vector<int> kDefaultHidden = {128, 128, 128};

struct MlpParams {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows()); }
  std::vector<int> hidden_widths() const;

  // Weights uniform in +-sqrt(1 / fan_in), biases zero.
  static MlpParams init(int input_dim, const std::vector<int>& hidden, int output_dim, Rng& rng);
  static MlpParams zeros_like(const MlpParams& other);

  void append_views(ParamViews& out, const std::string& prefix);
};

struct MlpCache {
  const MlpParams* owner = nullptr;
  std::vector<Mat> inputs;  // input of each layer; inputs[0] is the network input
  std::vector<Mat> pre;     // pre-activation of each layer
  Mat output;               // 1 x batch
};

MlpCache mlp_forward(const MlpParams& params, const Mat& inputs);
Mat mlp_apply(const MlpParams& params, const Mat& inputs);
double mlp_apply(const MlpParams& params, const Vec& z);

// Reverse pass for upstream * output. Parameter gradients are accumulated
// into `grads`; the gradient with respect to the inputs is returned.
// Throws InvalidState when the cache does not belong to `params`.
Mat mlp_backward(const MlpParams& params, const MlpCache& cache, const Mat& upstream, MlpParams& grads);

// ---------------------------------------------------------------------------
// Recurrent baseline cells, z_{t+1} = F(z_t, y_t).

struct RnnParams {
  Mat w_state;  // W1, m x m
  Mat w_input;  // W2, m x 1
  Vec bias;     // b

  int latent_dim() const { return static_cast<int>(w_state.rows()); }
  static RnnParams init(int m, Rng& rng);
  static RnnParams zeros(int m);
  void append_views(ParamViews& out, const std::string& prefix);
};

struct GruParams {
  Mat w_r_input, w_r_state;  // W_r1 (m x 1), W_r2 (m x m)
  Vec b_r;
  Mat w_x_input, w_x_state;  // W_x1, W_x2
  Vec b_x;
  Mat w_n_input, w_n_state;  // W_n1, W_n2
  Vec b_n_input, b_n_state;  // b_n1 (outside the reset gate), b_n2 (inside)

  int latent_dim() const { return static_cast<int>(w_r_state.rows()); }
  static GruParams init(int m, Rng& rng);
  static GruParams zeros(int m);
  void append_views(ParamViews& out, const std::string& prefix);
};

struct RnnCache {
  Mat z, u, out;
};

struct GruCache {
  Mat z, u, r, x, n, a;  // a = W_n2 z + b_n2
};

Mat rnn_step(const RnnParams& p, const Mat& z, const Mat& u, RnnCache* cache = nullptr);
Vec rnn_step(const RnnParams& p, const Vec& z, double y);
// Accumulates parameter gradients, returns (dz, du) through `dz`/`du`.
void rnn_backward(const RnnParams& p, const RnnCache& cache, const Mat& upstream, RnnParams& grads,
                  Mat& dz, Mat& du);

Mat gru_step(const GruParams& p, const Mat& z, const Mat& u, GruCache* cache = nullptr);
Vec gru_step(const GruParams& p, const Vec& z, double y);
void gru_backward(const GruParams& p, const GruCache& cache, const Mat& upstream, GruParams& grads,
                  Mat& dz, Mat& du);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Vec> first;
  std::vector<Vec> second;
  long step = 0;
};

// Bias-corrected Adam update in place. Throws NumericError naming the block
// on a non-finite gradient and std::invalid_argument on shape mismatch.
void adam_step(std::span<const ParamView> params, std::span<const ParamView> grads, AdamState& state);

// Largest singular value by power iteration on W^T W.
double spectral_norm(const Mat& matrix, int iters = 100);

// Product of the layer spectral norms: a Lipschitz bound for ReLU networks.
double lipschitz_upper_bound(const MlpParams& params, int iters = 200);

}  // namespace dkkl
