#include "deepkkl/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "deepkkl/errors.hpp"

namespace dkkl {

namespace {

void add_view(ParamViews& out, std::string name, Mat& m) {
  out.push_back(ParamView{std::move(name), m.data(), m.size(), m.rows(), m.cols()});
}

void add_view(ParamViews& out, std::string name, Vec& v) {
  out.push_back(ParamView{std::move(name), v.data(), v.size(), v.size(), 1});
}

Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Mat m(rows, cols);
  // column-major fill order is part of the reproducibility contract
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-bound, bound);
  }
  return m;
}

Vec uniform_vector(Eigen::Index n, double bound, Rng& rng) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-bound, bound);
  return v;
}

Mat sigmoid(const Mat& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

void check_cell_inputs(Eigen::Index m, const Mat& z, const Mat& u) {
  if (z.rows() != m) {
    throw std::invalid_argument("latent has " + std::to_string(z.rows()) + " rows, cell expects " +
                                std::to_string(m));
  }
  if (u.rows() != 1 || u.cols() != z.cols()) {
    throw std::invalid_argument("cell input must be a 1 x batch row matching the latent batch");
  }
}

}  // namespace

std::vector<int> MlpParams::hidden_widths() const {
  std::vector<int> widths;
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) widths.push_back(static_cast<int>(layers[l].weight.rows()));
  return widths;
}

MlpParams MlpParams::init(int input_dim, const std::vector<int>& hidden, int output_dim, Rng& rng) {
  if (input_dim <= 0 || output_dim <= 0) throw std::invalid_argument("MLP dimensions must be positive");
  MlpParams p;
  int fan_in = input_dim;
  auto push = [&](int out) {
    if (out <= 0) throw std::invalid_argument("MLP layer widths must be positive");
    const double bound = std::sqrt(1.0 / fan_in);
    p.layers.push_back(DenseLayer{uniform_matrix(out, fan_in, bound, rng), Vec::Zero(out)});
    fan_in = out;
  };
  for (int h : hidden) push(h);
  push(output_dim);
  return p;
}

MlpParams MlpParams::zeros_like(const MlpParams& other) {
  MlpParams p;
  for (const auto& layer : other.layers) {
    p.layers.push_back(DenseLayer{Mat::Zero(layer.weight.rows(), layer.weight.cols()),
                                  Vec::Zero(layer.bias.size())});
  }
  return p;
}

void MlpParams::append_views(ParamViews& out, const std::string& prefix) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + std::to_string(l);
    add_view(out, base + ".weight", layers[l].weight);
    add_view(out, base + ".bias", layers[l].bias);
  }
}

MlpCache mlp_forward(const MlpParams& params, const Mat& inputs) {
  if (params.layers.empty()) throw std::invalid_argument("MLP has no layers");
  if (inputs.rows() != params.input_dim()) {
    throw std::invalid_argument("MLP expects input dimension " + std::to_string(params.input_dim()) +
                                ", got " + std::to_string(inputs.rows()));
  }
  MlpCache cache;
  cache.owner = &params;
  const std::size_t depth = params.layers.size();
  cache.inputs.resize(depth);
  cache.pre.resize(depth);
  cache.inputs[0] = inputs;
  for (std::size_t l = 0; l < depth; ++l) {
    const auto& layer = params.layers[l];
    Mat& pre = cache.pre[l];
    pre.noalias() = layer.weight * cache.inputs[l];
    pre.colwise() += layer.bias;
    if (l + 1 < depth) {
      cache.inputs[l + 1] = pre.cwiseMax(0.0);
    }
  }
  cache.output = cache.pre.back();
  return cache;
}

Mat mlp_apply(const MlpParams& params, const Mat& inputs) {
  if (params.layers.empty()) throw std::invalid_argument("MLP has no layers");
  if (inputs.rows() != params.input_dim()) {
    throw std::invalid_argument("MLP expects input dimension " + std::to_string(params.input_dim()) +
                                ", got " + std::to_string(inputs.rows()));
  }
  Mat act = inputs;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    Mat pre = layer.weight * act;
    pre.colwise() += layer.bias;
    act = (l + 1 < params.layers.size()) ? Mat(pre.cwiseMax(0.0)) : pre;
  }
  return act;
}

double mlp_apply(const MlpParams& params, const Vec& z) {
  return mlp_apply(params, Mat(z))(0, 0);
}

Mat mlp_backward(const MlpParams& params, const MlpCache& cache, const Mat& upstream, MlpParams& grads) {
  const std::size_t depth = params.layers.size();
  if (cache.owner != &params || cache.pre.size() != depth || cache.inputs.size() != depth) {
    throw InvalidState("MLP cache was not produced by a forward pass of these parameters");
  }
  for (std::size_t l = 0; l < depth; ++l) {
    if (cache.pre[l].rows() != params.layers[l].weight.rows() ||
        cache.inputs[l].rows() != params.layers[l].weight.cols()) {
      throw InvalidState("MLP cache shapes no longer match the parameters");
    }
  }
  if (grads.layers.size() != depth) grads = MlpParams::zeros_like(params);
  if (upstream.rows() != params.output_dim() || upstream.cols() != cache.output.cols()) {
    throw std::invalid_argument("upstream gradient shape does not match the MLP output");
  }

  Mat g = upstream;
  for (std::size_t l = depth; l-- > 0;) {
    auto& gl = grads.layers[l];
    gl.weight.noalias() += g * cache.inputs[l].transpose();
    gl.bias += g.rowwise().sum();
    Mat gin = params.layers[l].weight.transpose() * g;
    if (l == 0) return gin;
    // ReLU derivative, taken as 0 at 0
    g = (cache.pre[l - 1].array() > 0.0).select(gin, 0.0);
  }
  return g;
}

// ---------------------------------------------------------------------------

RnnParams RnnParams::init(int m, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(m));
  RnnParams p;
  p.w_state = uniform_matrix(m, m, bound, rng);
  p.w_input = uniform_matrix(m, 1, bound, rng);
  p.bias = uniform_vector(m, bound, rng);
  return p;
}

RnnParams RnnParams::zeros(int m) {
  return RnnParams{Mat::Zero(m, m), Mat::Zero(m, 1), Vec::Zero(m)};
}

void RnnParams::append_views(ParamViews& out, const std::string& prefix) {
  add_view(out, prefix + "w_state", w_state);
  add_view(out, prefix + "w_input", w_input);
  add_view(out, prefix + "bias", bias);
}

GruParams GruParams::init(int m, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(m));
  GruParams p;
  p.w_r_input = uniform_matrix(m, 1, bound, rng);
  p.w_r_state = uniform_matrix(m, m, bound, rng);
  p.b_r = uniform_vector(m, bound, rng);
  p.w_x_input = uniform_matrix(m, 1, bound, rng);
  p.w_x_state = uniform_matrix(m, m, bound, rng);
  p.b_x = uniform_vector(m, bound, rng);
  p.w_n_input = uniform_matrix(m, 1, bound, rng);
  p.w_n_state = uniform_matrix(m, m, bound, rng);
  p.b_n_input = uniform_vector(m, bound, rng);
  p.b_n_state = uniform_vector(m, bound, rng);
  return p;
}

GruParams GruParams::zeros(int m) {
  GruParams p;
  p.w_r_input = p.w_x_input = p.w_n_input = Mat::Zero(m, 1);
  p.w_r_state = p.w_x_state = p.w_n_state = Mat::Zero(m, m);
  p.b_r = p.b_x = p.b_n_input = p.b_n_state = Vec::Zero(m);
  return p;
}

void GruParams::append_views(ParamViews& out, const std::string& prefix) {
  add_view(out, prefix + "w_r_input", w_r_input);
  add_view(out, prefix + "w_r_state", w_r_state);
  add_view(out, prefix + "b_r", b_r);
  add_view(out, prefix + "w_x_input", w_x_input);
  add_view(out, prefix + "w_x_state", w_x_state);
  add_view(out, prefix + "b_x", b_x);
  add_view(out, prefix + "w_n_input", w_n_input);
  add_view(out, prefix + "w_n_state", w_n_state);
  add_view(out, prefix + "b_n_input", b_n_input);
  add_view(out, prefix + "b_n_state", b_n_state);
}

Mat rnn_step(const RnnParams& p, const Mat& z, const Mat& u, RnnCache* cache) {
  check_cell_inputs(p.latent_dim(), z, u);
  Mat pre = p.w_state * z + p.w_input * u;
  pre.colwise() += p.bias;
  Mat out = pre.array().tanh().matrix();
  if (cache) *cache = RnnCache{z, u, out};
  return out;
}

Vec rnn_step(const RnnParams& p, const Vec& z, double y) {
  return rnn_step(p, Mat(z), Mat::Constant(1, 1, y)).col(0);
}

void rnn_backward(const RnnParams& p, const RnnCache& c, const Mat& upstream, RnnParams& g, Mat& dz,
                  Mat& du) {
  const Mat gpre = (upstream.array() * (1.0 - c.out.array().square())).matrix();
  g.w_state.noalias() += gpre * c.z.transpose();
  g.w_input.noalias() += gpre * c.u.transpose();
  g.bias += gpre.rowwise().sum();
  dz = p.w_state.transpose() * gpre;
  du = p.w_input.transpose() * gpre;
}

Mat gru_step(const GruParams& p, const Mat& z, const Mat& u, GruCache* cache) {
  check_cell_inputs(p.latent_dim(), z, u);
  Mat r_pre = p.w_r_input * u + p.w_r_state * z;
  r_pre.colwise() += p.b_r;
  Mat x_pre = p.w_x_input * u + p.w_x_state * z;
  x_pre.colwise() += p.b_x;
  const Mat r = sigmoid(r_pre);
  const Mat x = sigmoid(x_pre);
  Mat a = p.w_n_state * z;
  a.colwise() += p.b_n_state;
  Mat n_pre = p.w_n_input * u + (r.array() * a.array()).matrix();
  n_pre.colwise() += p.b_n_input;
  const Mat n = n_pre.array().tanh().matrix();
  Mat out = ((1.0 - x.array()) * n.array() + x.array() * z.array()).matrix();
  if (cache) *cache = GruCache{z, u, r, x, n, a};
  return out;
}

Vec gru_step(const GruParams& p, const Vec& z, double y) {
  return gru_step(p, Mat(z), Mat::Constant(1, 1, y)).col(0);
}

void gru_backward(const GruParams& p, const GruCache& c, const Mat& upstream, GruParams& g, Mat& dz,
                  Mat& du) {
  const auto up = upstream.array();
  const Mat gn_pre = (up * (1.0 - c.x.array()) * (1.0 - c.n.array().square())).matrix();
  const Mat gx_pre = (up * (c.z.array() - c.n.array()) * c.x.array() * (1.0 - c.x.array())).matrix();
  const Mat ga = (gn_pre.array() * c.r.array()).matrix();
  const Mat gr_pre = (gn_pre.array() * c.a.array() * c.r.array() * (1.0 - c.r.array())).matrix();

  g.w_n_input.noalias() += gn_pre * c.u.transpose();
  g.b_n_input += gn_pre.rowwise().sum();
  g.w_n_state.noalias() += ga * c.z.transpose();
  g.b_n_state += ga.rowwise().sum();
  g.w_x_input.noalias() += gx_pre * c.u.transpose();
  g.w_x_state.noalias() += gx_pre * c.z.transpose();
  g.b_x += gx_pre.rowwise().sum();
  g.w_r_input.noalias() += gr_pre * c.u.transpose();
  g.w_r_state.noalias() += gr_pre * c.z.transpose();
  g.b_r += gr_pre.rowwise().sum();

  dz = (up * c.x.array()).matrix();
  dz.noalias() += p.w_n_state.transpose() * ga;
  dz.noalias() += p.w_x_state.transpose() * gx_pre;
  dz.noalias() += p.w_r_state.transpose() * gr_pre;
  du = p.w_n_input.transpose() * gn_pre;
  du.noalias() += p.w_x_input.transpose() * gx_pre;
  du.noalias() += p.w_r_input.transpose() * gr_pre;
}

// ---------------------------------------------------------------------------

void adam_step(std::span<const ParamView> params, std::span<const ParamView> grads, AdamState& state) {
  if (params.size() != grads.size()) throw std::invalid_argument("parameter and gradient lists differ in length");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size) {
      throw std::invalid_argument("gradient block '" + grads[i].name + "' has the wrong size");
    }
    for (Eigen::Index k = 0; k < grads[i].size; ++k) {
      if (!std::isfinite(grads[i].data[k])) {
        throw NumericError("non-finite gradient in parameter block '" + params[i].name + "'",
                           static_cast<long>(i));
      }
    }
  }
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.push_back(Vec::Zero(p.size));
      state.second.push_back(Vec::Zero(p.size));
    }
  } else if (state.first.size() != params.size()) {
    throw std::invalid_argument("optimizer state does not match the parameter list");
  }

  const auto& cfg = state.config;
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first[i].size() != params[i].size) {
      throw std::invalid_argument("optimizer moment for '" + params[i].name + "' has the wrong size");
    }
    Eigen::Map<Vec> theta(params[i].data, params[i].size);
    Eigen::Map<const Vec> g(grads[i].data, grads[i].size);
    Vec& m = state.first[i];
    Vec& v = state.second[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    theta.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

double spectral_norm(const Mat& matrix, int iters) {
  if (iters < 1) throw std::invalid_argument("power iteration needs at least one iteration");
  if (matrix.size() == 0) return 0.0;
  Rng rng(0x5eed);
  Vec v(matrix.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 0.5 + rng.uniform();
  v.normalize();
  double estimate = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vec w = matrix.transpose() * (matrix * v);
    const double norm = w.norm();
    if (norm == 0.0) return (matrix * v).norm();
    v = w / norm;
    estimate = (matrix * v).norm();
  }
  return estimate;
}

double lipschitz_upper_bound(const MlpParams& params, int iters) {
  double product = 1.0;
  for (const auto& layer : params.layers) product *= spectral_norm(layer.weight, iters);
  return product;
}

}  // namespace dkkl
