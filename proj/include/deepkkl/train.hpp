#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepkkl/data.hpp"
#include "deepkkl/predictor.hpp"

namespace dkkl {

// Which samples enter the squared-error sum: every sample s in [0, t+p)
// (closed-loop reconstruction plus forecast) or only the forecast [t, t+p).
enum class LossWindow { full, open_only };

std::string_view loss_window_name(LossWindow window);
std::optional<LossWindow> parse_loss_window(std::string_view name);

struct TrainConfig {
  int epochs = 800;
  int batch_size = 64;
  double lr = 1e-4;
  int t_train = 25;
  int p_train = 25;
  std::uint64_t seed = 0;
  ModelKind kind = ModelKind::kkl;
  LossWindow loss_window = LossWindow::full;
  double grad_clip = 0.0;  // global-norm clip, 0 disables

  void validate(int trajectory_length) const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_mse;
  std::vector<double> seconds;
  int best_epoch = -1;
  long optimizer_steps = 0;
};

struct LossResult {
  double loss = 0.0;
  Model grad;  // same shape as the model, holding d loss / d parameter
};

// Batch of scaled sequences as columns (length x batch). The loss is the mean
// over columns of the per-sequence squared-error sum; gradients come from
// reverse accumulation through the closed-loop phase (s < t, measured input)
// and the open-loop phase (s >= t, the model's own output fed back).
LossResult batch_loss(const Model& model, const Mat& sequences, int t, int p, LossWindow window);

LossResult trajectory_loss(const Model& model, const std::vector<double>& y_scaled, int t, int p,
                           LossWindow window);

// MSE in original output units between the (t, p) forecast and the clean
// trajectory outputs, averaged over records and horizon samples.
double validation_mse(const Model& model, const std::vector<Record>& records, int t, int p);

struct TrainResult {
  Model model;  // best-validation checkpoint
  TrainHistory history;
  std::optional<std::string> failure;  // set when training aborted on a numeric error
  AdamState optimizer;                 // optimizer state at the checkpoint epoch
};

using EpochCallback = std::function<void(int epoch, double train_loss, double val_mse)>;

TrainResult train(Model model, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Architecture choices shared by the CLI and the experiment drivers. A zero
// latent dimension selects the system default (2n + 2).
struct ModelOptions {
  int latent_dim = 0;
  std::vector<int> hidden = kDefaultHidden;
  double decay = 2.0;
  double omega_min = 0.5;
  double omega_max = 8.0;
};

// Seeded initial parameters for any model kind; randomness is drawn from
// derive_seed(seed, "init").
Model init_model(ModelKind kind, const SystemSpec& spec, const Scaler& scaler, std::uint64_t seed,
                 const ModelOptions& options = {});

// Initializes an RNN or GRU baseline with the given latent size and output
// map widths, then runs the same protocol as the KKL model.
TrainResult train_baseline(ModelKind kind, const Dataset& dataset, const TrainConfig& config, int latent_dim,
                           const std::vector<int>& hidden = kDefaultHidden, const EpochCallback& on_epoch = {});

}  // namespace dkkl
