#pragma once

#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "deepkkl/kkl.hpp"
#include "deepkkl/nets.hpp"

namespace dkkl {

enum class ModelKind { kkl, rnn, gru };

std::string_view model_kind_name(ModelKind kind);
std::optional<ModelKind> parse_model_kind(std::string_view name);

// RNN or GRU latent recursion with the same MLP output map as the KKL model.
// In the open-loop phase the model's own output h(z) is fed back as input.
struct RecurrentModel {
  ModelKind kind = ModelKind::rnn;
  RnnParams rnn;  // used when kind == rnn
  GruParams gru;  // used when kind == gru
  MlpParams head;
  Scaler scaler;
  double dt = 0.25;

  int latent_dim() const;
  void validate() const;
  void append_views(ParamViews& out);
  static RecurrentModel zeros_like(const RecurrentModel& other);
};

RecurrentModel init_recurrent(ModelKind kind, int latent_dim, double dt, const std::vector<int>& hidden,
                              const Scaler& scaler, Rng& rng);

using Model = std::variant<KklModel, RecurrentModel>;

ModelKind model_kind(const Model& model);
int latent_dim(const Model& model);
const Scaler& model_scaler(const Model& model);
double model_dt(const Model& model);
ParamViews param_views(Model& model);

// Latent transition used by both phases: z' = F(z, u) for a batch of columns.
Mat latent_step(const Model& model, const Mat& z, const Mat& u);

// Batched pipeline in scaled units. `prefix` is (t x batch); returns the p
// forecast samples (p x batch) for indices t .. t+p-1.
Mat forecast_scaled(const Model& model, const Mat& prefix, int p);

// Same pipeline on raw (unscaled) prefixes of per-trajectory sequences.
std::vector<std::vector<double>> forecast(const Model& model, const std::vector<std::vector<double>>& prefixes,
                                          int p);

}  // namespace dkkl
