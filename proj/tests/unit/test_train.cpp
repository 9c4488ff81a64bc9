#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "deepkkl/errors.hpp"
#include "deepkkl/train.hpp"

using namespace dkkl;
using testing::random_matrix;

namespace {

Model small_model(ModelKind kind, std::uint64_t seed) {
  const auto spec = SystemSpec::make(SystemKind::vanderpol);
  ModelOptions options;
  options.latent_dim = kind == ModelKind::kkl ? 5 : 4;
  options.hidden = {8, 8};
  return init_model(kind, spec, Scaler{-2.0, 2.0}, seed, options);
}

// Per-sequence squared-error sum written out step by step.
double reference_loss(const Model& model, const std::vector<double>& y, int t, int p, LossWindow window) {
  const int m = latent_dim(model);
  auto head = [&](const Vec& z) {
    return std::visit([&](const auto& mm) { return mlp_apply(mm.head, z); }, model);
  };
  Vec z = Vec::Zero(m);
  double sum = 0.0;
  for (int s = 0; s < t + p; ++s) {
    const double yhat = head(z);
    if (window == LossWindow::full || s >= t) sum += (yhat - y[s]) * (yhat - y[s]);
    const double input = s < t ? y[s] : yhat;
    z = latent_step(model, z, Mat::Constant(1, 1, input)).col(0);
  }
  return sum;
}

double worst_bptt_error(ModelKind kind, LossWindow window, std::uint64_t seed) {
  Model model = small_model(kind, seed);
  Rng rng(seed + 100);
  // zero biases put every hidden unit on the ReLU kink at z = 0
  std::visit(
      [&](auto& m) {
        for (auto& layer : m.head.layers) layer.bias = testing::random_vector(static_cast<int>(layer.bias.size()), rng, 0.3);
      },
      model);
  const int t = 4, p = 5;
  const Mat seq = random_matrix(t + p, 3, rng);
  LossResult lr = batch_loss(model, seq, t, p, window);
  ParamViews pv = param_views(model);
  ParamViews gv = param_views(lr.grad);
  return testing::worst_fd_error(pv, gv, [&] { return batch_loss(model, seq, t, p, window).loss; });
}

Dataset tiny_dataset() { return generate(SystemSpec::make(SystemKind::vanderpol), {24, 6, 6}, 30, 4); }

TrainConfig tiny_config(ModelKind kind) {
  TrainConfig c;
  c.kind = kind;
  c.epochs = 3;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.t_train = 10;
  c.p_train = 10;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("loss matches a step-by-step reference") {
  Rng rng(1);
  for (auto kind : {ModelKind::kkl, ModelKind::rnn, ModelKind::gru}) {
    const Model model = small_model(kind, 2);
    const Mat seq = random_matrix(12, 4, rng);
    for (auto window : {LossWindow::full, LossWindow::open_only}) {
      double ref = 0.0;
      for (int j = 0; j < 4; ++j) {
        std::vector<double> y(seq.col(j).data(), seq.col(j).data() + 12);
        const double single = reference_loss(model, y, 5, 7, window);
        CHECK(trajectory_loss(model, y, 5, 7, window).loss == doctest::Approx(single).epsilon(1e-12));
        ref += single / 4.0;
      }
      CHECK(batch_loss(model, seq, 5, 7, window).loss == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("backpropagation through time matches finite differences") {
  for (auto window : {LossWindow::full, LossWindow::open_only}) {
    CHECK(worst_bptt_error(ModelKind::kkl, window, 3) < 1e-4);
    CHECK(worst_bptt_error(ModelKind::rnn, window, 4) < 1e-4);
    CHECK(worst_bptt_error(ModelKind::gru, window, 5) < 1e-4);
  }
}

TEST_CASE("gradient containers mirror the parameters") {
  Model model = small_model(ModelKind::kkl, 6);
  LossResult lr = trajectory_loss(model, std::vector<double>(9, 0.2), 4, 5, LossWindow::full);
  const auto pv = param_views(model);
  const auto gv = param_views(lr.grad);
  REQUIRE(pv.size() == gv.size());
  for (std::size_t i = 0; i < pv.size(); ++i) {
    CHECK(pv[i].name == gv[i].name);
    CHECK(pv[i].size == gv[i].size);
  }
}

TEST_CASE("configuration checks") {
  TrainConfig c = tiny_config(ModelKind::kkl);
  CHECK_NOTHROW(c.validate(20));
  CHECK_THROWS_AS(c.validate(19), std::invalid_argument);
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(100), std::invalid_argument);
  c = tiny_config(ModelKind::kkl);
  c.grad_clip = -1.0;
  CHECK_THROWS_AS(c.validate(100), std::invalid_argument);
  CHECK(parse_loss_window(loss_window_name(LossWindow::open_only)) == LossWindow::open_only);
  CHECK_FALSE(parse_loss_window("half").has_value());

  const auto ds = tiny_dataset();
  CHECK_THROWS_AS(train(small_model(ModelKind::rnn, 1), ds, tiny_config(ModelKind::kkl)), std::invalid_argument);
}

TEST_CASE("training is reproducible and keeps the best checkpoint") {
  const auto ds = tiny_dataset();
  for (auto kind : {ModelKind::kkl, ModelKind::gru}) {
    const auto a = train(small_model(kind, 7), ds, tiny_config(kind));
    const auto b = train(small_model(kind, 7), ds, tiny_config(kind));
    CHECK_FALSE(a.failure.has_value());
    CHECK(a.history.train_loss == b.history.train_loss);
    CHECK(a.history.val_mse == b.history.val_mse);
    CHECK(a.history.optimizer_steps == 9);
    Model ma = a.model, mb = b.model;
    const auto va = param_views(ma);
    const auto vb = param_views(mb);
    for (std::size_t i = 0; i < va.size(); ++i) {
      for (Eigen::Index k = 0; k < va[i].size; ++k) CHECK(va[i].data[k] == vb[i].data[k]);
    }
    const int best = a.history.best_epoch;
    REQUIRE(best >= 0);
    for (double v : a.history.val_mse) CHECK(a.history.val_mse[best] <= v);
    CHECK(validation_mse(a.model, ds.val, 10, 10) == doctest::Approx(a.history.val_mse[best]).epsilon(1e-12));
    CHECK(a.optimizer.step == 3L * (best + 1));
  }
}

TEST_CASE("training lowers the loss") {
  const auto ds = tiny_dataset();
  auto c = tiny_config(ModelKind::kkl);
  c.epochs = 15;
  const auto r = train(small_model(ModelKind::kkl, 8), ds, c);
  CHECK(r.history.train_loss.back() < r.history.train_loss.front());
}

TEST_CASE("different seeds give different runs") {
  const auto ds = tiny_dataset();
  auto c = tiny_config(ModelKind::kkl);
  const auto a = train(small_model(ModelKind::kkl, 7), ds, c);
  c.seed = 6;
  const auto b = train(small_model(ModelKind::kkl, 7), ds, c);
  CHECK(a.history.train_loss != b.history.train_loss);
}

TEST_CASE("a non-finite loss stops training and names the trajectory") {
  const auto ds = tiny_dataset();
  Model model = small_model(ModelKind::kkl, 9);
  auto& kkl = std::get<KklModel>(model);
  kkl.head.layers.back().bias[0] = 1e200;
  const auto r = train(model, ds, tiny_config(ModelKind::kkl));
  REQUIRE(r.failure.has_value());
  CHECK(r.failure->find("epoch 0") != std::string::npos);
  CHECK(r.failure->find("training trajectory") != std::string::npos);
  CHECK(r.history.optimizer_steps == 0);
}

}  // TEST_SUITE
