#include "deepkkl/predictor.hpp"

#include <stdexcept>

#include "deepkkl/errors.hpp"

namespace dkkl {

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kkl: return "kkl";
    case ModelKind::rnn: return "rnn";
    case ModelKind::gru: return "gru";
  }
  return "";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) {
  for (auto kind : {ModelKind::kkl, ModelKind::rnn, ModelKind::gru}) {
    if (model_kind_name(kind) == name) return kind;
  }
  return std::nullopt;
}

int RecurrentModel::latent_dim() const {
  return kind == ModelKind::gru ? gru.latent_dim() : rnn.latent_dim();
}

void RecurrentModel::validate() const {
  if (kind == ModelKind::kkl) throw std::invalid_argument("recurrent model cannot have kind kkl");
  if (!(dt > 0.0)) throw std::invalid_argument("sampling period must be positive");
  if (head.input_dim() != latent_dim()) {
    throw std::invalid_argument("output map expects input dimension " + std::to_string(head.input_dim()) +
                                " but the latent dimension is " + std::to_string(latent_dim()));
  }
}

void RecurrentModel::append_views(ParamViews& out) {
  if (kind == ModelKind::gru) {
    gru.append_views(out, "gru.");
  } else {
    rnn.append_views(out, "rnn.");
  }
  head.append_views(out, "head.");
}

RecurrentModel RecurrentModel::zeros_like(const RecurrentModel& other) {
  RecurrentModel g;
  g.kind = other.kind;
  const int m = other.latent_dim();
  if (other.kind == ModelKind::gru) {
    g.gru = GruParams::zeros(m);
  } else {
    g.rnn = RnnParams::zeros(m);
  }
  g.head = MlpParams::zeros_like(other.head);
  g.scaler = other.scaler;
  g.dt = other.dt;
  return g;
}

RecurrentModel init_recurrent(ModelKind kind, int latent_dim, double dt, const std::vector<int>& hidden,
                              const Scaler& scaler, Rng& rng) {
  if (kind == ModelKind::kkl) throw std::invalid_argument("init_recurrent needs rnn or gru");
  RecurrentModel model;
  model.kind = kind;
  model.dt = dt;
  model.scaler = scaler;
  if (kind == ModelKind::gru) {
    model.gru = GruParams::init(latent_dim, rng);
  } else {
    model.rnn = RnnParams::init(latent_dim, rng);
  }
  model.head = MlpParams::init(latent_dim, hidden, 1, rng);
  return model;
}

ModelKind model_kind(const Model& model) {
  if (const auto* r = std::get_if<RecurrentModel>(&model)) return r->kind;
  return ModelKind::kkl;
}

int latent_dim(const Model& model) {
  return std::visit([](const auto& m) { return m.latent_dim(); }, model);
}

const Scaler& model_scaler(const Model& model) {
  return std::visit([](const auto& m) -> const Scaler& { return m.scaler; }, model);
}

double model_dt(const Model& model) {
  return std::visit([](const auto& m) { return m.dt; }, model);
}

ParamViews param_views(Model& model) {
  ParamViews views;
  std::visit([&](auto& m) { m.append_views(views); }, model);
  return views;
}

namespace {

struct Stepper {
  const Model& model;
  DiscretePair pair;

  explicit Stepper(const Model& m) : model(m) {
    if (const auto* k = std::get_if<KklModel>(&m)) pair = discretize(*k);
  }

  Mat operator()(const Mat& z, const Mat& u) const {
    if (const auto* r = std::get_if<RecurrentModel>(&model)) {
      return r->kind == ModelKind::gru ? gru_step(r->gru, z, u) : rnn_step(r->rnn, z, u);
    }
    Mat next = pair.a_d * z;
    next.noalias() += pair.b_d * u;
    return next;
  }
};

const MlpParams& head_of(const Model& model) {
  return std::visit([](const auto& m) -> const MlpParams& { return m.head; }, model);
}

}  // namespace

Mat latent_step(const Model& model, const Mat& z, const Mat& u) { return Stepper(model)(z, u); }

Mat forecast_scaled(const Model& model, const Mat& prefix, int p) {
  if (p < 0) throw std::invalid_argument("prediction horizon must be nonnegative");
  if (prefix.rows() < 1) throw std::invalid_argument("prediction needs at least one observed sample");
  const Stepper step(model);
  const MlpParams& head = head_of(model);
  const Eigen::Index batch = prefix.cols();
  Mat z = Mat::Zero(latent_dim(model), batch);
  for (Eigen::Index k = 0; k < prefix.rows(); ++k) z = step(z, prefix.row(k));
  Mat out(p, batch);
  for (int j = 0; j < p; ++j) {
    const Mat y = mlp_apply(head, z);
    out.row(j) = y;
    if (j + 1 < p) z = step(z, y);
  }
  if (!out.allFinite()) throw NumericError("forecast produced non-finite values");
  return out;
}

std::vector<std::vector<double>> forecast(const Model& model, const std::vector<std::vector<double>>& prefixes,
                                          int p) {
  if (prefixes.empty()) return {};
  const std::size_t t = prefixes.front().size();
  const Scaler& scaler = model_scaler(model);
  Mat prefix(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(prefixes.size()));
  for (std::size_t j = 0; j < prefixes.size(); ++j) {
    if (prefixes[j].size() != t) throw std::invalid_argument("all prefixes must have the same length");
    for (std::size_t k = 0; k < t; ++k) prefix(k, j) = scaler.apply(prefixes[j][k]);
  }
  const Mat out = forecast_scaled(model, prefix, p);
  std::vector<std::vector<double>> result(prefixes.size(), std::vector<double>(p));
  for (std::size_t j = 0; j < prefixes.size(); ++j) {
    for (int k = 0; k < p; ++k) result[j][k] = scaler.invert(out(k, j));
  }
  return result;
}

}  // namespace dkkl
