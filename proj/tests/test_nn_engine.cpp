#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <random>

#include "onrx/nn/adam.hpp"
#include "onrx/nn/gru.hpp"
#include "onrx/nn/layers.hpp"
#include "onrx/nn/losses.hpp"

using namespace onrx;

namespace {

using Mat = RMat<double>;

Mat random_mat(int64_t r, int64_t c, uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  Mat m(r, c);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) {
      const double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
      m(i, j) = (2.0 * u - 1.0) * scale;
    }
  return m;
}

constexpr double kFdStep = 1e-4;
constexpr double kFdTol = 1e-4;

double rel_err(double analytic, double numeric) {
  const double denom = std::max(1e-6, std::abs(analytic) + std::abs(numeric));
  return std::abs(analytic - numeric) / denom;
}

// Central finite differences over every parameter coordinate. `analytic`
// holds a snapshot of the grad tensors taken after one backward pass; `loss`
// re-runs the forward pass at the current parameter values.
double max_param_fd_err(const std::vector<ParamRef<double>>& params,
                        const std::vector<std::vector<double>>& analytic,
                        const std::function<double()>& loss) {
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& w = params[pi].value->data;
    for (size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      w[j] = orig + kFdStep;
      const double lp = loss();
      w[j] = orig - kFdStep;
      const double lm = loss();
      w[j] = orig;
      worst = std::max(worst, rel_err(analytic[pi][j], (lp - lm) / (2.0 * kFdStep)));
    }
  }
  return worst;
}

double max_input_fd_err(Mat& x, const Mat& dx_analytic, const std::function<double()>& loss) {
  double worst = 0.0;
  for (int64_t i = 0; i < x.rows(); ++i)
    for (int64_t j = 0; j < x.cols(); ++j) {
      const double orig = x(i, j);
      x(i, j) = orig + kFdStep;
      const double lp = loss();
      x(i, j) = orig - kFdStep;
      const double lm = loss();
      x(i, j) = orig;
      worst = std::max(worst, rel_err(dx_analytic(i, j), (lp - lm) / (2.0 * kFdStep)));
    }
  return worst;
}

std::vector<std::vector<double>> snapshot_grads(const std::vector<ParamRef<double>>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.grad->data.begin(), p.grad->data.end());
  return out;
}

}  // namespace

TEST_CASE("linear layer gradients match central finite differences") {
  std::mt19937_64 rng(101);
  LinearLayer<double> lin(3, 2);
  lin.init(rng);
  Mat x = random_mat(4, 3, 7);
  const Mat target = random_mat(4, 2, 8);

  auto loss = [&]() { return mse_loss<double>(lin.forward(x, false, nullptr), target); };

  std::vector<ParamRef<double>> params;
  lin.collect_params(params);
  for (auto& p : params) p.grad->fill(0.0);
  const Mat y = lin.forward(x, false, nullptr);
  const Mat dx = lin.backward(mse_grad<double>(y, target));
  const auto analytic = snapshot_grads(params);

  REQUIRE(max_param_fd_err(params, analytic, loss) < kFdTol);
  REQUIRE(max_input_fd_err(x, dx, loss) < kFdTol);
}

TEST_CASE("relu and sigmoid gradients match finite differences through an mlp") {
  std::mt19937_64 rng(202);
  Mlp<double> mlp;
  mlp.layers().push_back(std::make_unique<LinearLayer<double>>(4, 6));
  mlp.layers().push_back(std::make_unique<ReluLayer<double>>());
  mlp.layers().push_back(std::make_unique<LinearLayer<double>>(6, 3));
  mlp.layers().push_back(std::make_unique<SigmoidLayer<double>>());
  for (auto& l : mlp.layers())
    if (auto* lin = dynamic_cast<LinearLayer<double>*>(l.get())) lin->init(rng);
  REQUIRE(mlp.param_count() == (4 * 6 + 6) + (6 * 3 + 3));

  Mat x = random_mat(5, 4, 9);
  const Mat target = random_mat(5, 3, 10, 0.4);
  auto loss = [&]() { return mse_loss<double>(mlp.forward(x), target); };

  auto params = mlp.params();
  mlp.zero_grad();
  const Mat y = mlp.forward(x);
  const Mat dx = mlp.backward(mse_grad<double>(y, target));
  const auto analytic = snapshot_grads(params);

  REQUIRE(max_param_fd_err(params, analytic, loss) < kFdTol);
  REQUIRE(max_input_fd_err(x, dx, loss) < kFdTol);
}

TEST_CASE("dropout gradients pass finite differences in eval mode") {
  std::mt19937_64 rng(303);
  Mlp<double> mlp;
  mlp.layers().push_back(std::make_unique<LinearLayer<double>>(4, 8));
  mlp.layers().push_back(std::make_unique<ReluLayer<double>>());
  mlp.layers().push_back(std::make_unique<DropoutLayer<double>>(0.15f));
  mlp.layers().push_back(std::make_unique<LinearLayer<double>>(8, 2));
  for (auto& l : mlp.layers())
    if (auto* lin = dynamic_cast<LinearLayer<double>*>(l.get())) lin->init(rng);

  Mat x = random_mat(3, 4, 11);
  const Mat target = random_mat(3, 2, 12);
  auto loss = [&]() { return mse_loss<double>(mlp.forward(x, false, nullptr), target); };

  auto params = mlp.params();
  mlp.zero_grad();
  const Mat y = mlp.forward(x, false, nullptr);
  const Mat dx = mlp.backward(mse_grad<double>(y, target));
  const auto analytic = snapshot_grads(params);

  REQUIRE(max_param_fd_err(params, analytic, loss) < kFdTol);
  REQUIRE(max_input_fd_err(x, dx, loss) < kFdTol);
}

TEST_CASE("dropout semantics: eval identity, train-mode inverted scaling") {
  DropoutLayer<double> drop(0.3f);
  const Mat x = random_mat(20, 30, 13);

  SECTION("eval mode is the identity and passes gradients through") {
    const Mat y = drop.forward(x, false, nullptr);
    REQUIRE((y - x).cwiseAbs().maxCoeff() == 0.0);
    const Mat dy = random_mat(20, 30, 14);
    REQUIRE((drop.backward(dy) - dy).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("train mode zeroes or rescales every element") {
    std::mt19937_64 rng(15);
    const Mat y = drop.forward(x, true, &rng);
    int64_t zeros = 0;
    for (int64_t i = 0; i < y.rows(); ++i)
      for (int64_t j = 0; j < y.cols(); ++j) {
        if (y(i, j) == 0.0) {
          ++zeros;
        } else {
          // the layer stores p as float, so the keep scale is 1/double(0.7f)
          REQUIRE(y(i, j) == Catch::Approx(x(i, j) / double(1.0f - 0.3f)).epsilon(1e-12));
        }
      }
    const double frac = double(zeros) / double(y.size());
    REQUIRE(frac > 0.22);
    REQUIRE(frac < 0.38);
  }

  SECTION("train mode without an RNG is rejected") {
    REQUIRE_THROWS_AS(drop.forward(x, true, nullptr), std::invalid_argument);
  }

  SECTION("p = 0 train mode equals eval mode") {
    DropoutLayer<double> nodrop(0.0f);
    std::mt19937_64 rng(16);
    const Mat y = nodrop.forward(x, true, &rng);
    REQUIRE((y - x).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("three-layer bidirectional gru gradients match central finite differences") {
  const int64_t T = 7, B = 2, in = 3, h = 4;
  BiGru<double> gru(in, h, 3, true);
  REQUIRE(gru.param_count() == 888);
  std::mt19937_64 rng(404);
  gru.init(rng);

  Mat x = random_mat(T * B, in, 17);
  const Mat target = random_mat(T * B, 2 * h, 18, 0.5);
  auto loss = [&]() { return mse_loss<double>(gru.infer(x, T, B), target); };

  auto params = gru.params();
  REQUIRE(params.size() == 3 * 2 * 4);
  gru.zero_grad();
  const Mat y = gru.forward(x, T, B);
  const Mat dx = gru.backward(mse_grad<double>(y, target));
  const auto analytic = snapshot_grads(params);

  REQUIRE(max_param_fd_err(params, analytic, loss) < kFdTol);
  REQUIRE(max_input_fd_err(x, dx, loss) < kFdTol);
}

TEST_CASE("unidirectional gru gradients match central finite differences") {
  const int64_t T = 5, B = 2, in = 2, h = 3;
  BiGru<double> gru(in, h, 1, false);
  REQUIRE(gru.param_count() == 3 * (in * h + h * h + 2 * h));
  std::mt19937_64 rng(505);
  gru.init(rng);

  Mat x = random_mat(T * B, in, 19);
  const Mat target = random_mat(T * B, h, 20, 0.5);
  auto loss = [&]() { return mse_loss<double>(gru.infer(x, T, B), target); };

  auto params = gru.params();
  gru.zero_grad();
  const Mat y = gru.forward(x, T, B);
  const Mat dx = gru.backward(mse_grad<double>(y, target));
  const auto analytic = snapshot_grads(params);

  REQUIRE(max_param_fd_err(params, analytic, loss) < kFdTol);
  REQUIRE(max_input_fd_err(x, dx, loss) < kFdTol);
}

TEST_CASE("gru inference path reproduces the training forward pass") {
  BiGru<double> gru(5, 6, 2, true);
  std::mt19937_64 rng(606);
  gru.init(rng);
  const Mat x = random_mat(9 * 3, 5, 21);
  const Mat a = gru.forward(x, 9, 3);
  const Mat b = gru.infer(x, 9, 3);
  REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("zero-weight gru produces all-zero hidden states") {
  BiGru<double> gru(4, 5, 2, true);
  const Mat x = random_mat(6 * 2, 4, 22);
  const Mat y = gru.infer(x, 6, 2);
  REQUIRE(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gru rejects mis-shaped sequences") {
  BiGru<double> gru(3, 4, 1, true);
  const Mat x = random_mat(10, 3, 23);
  REQUIRE_THROWS_AS(gru.forward(x, 4, 2), std::invalid_argument);
  REQUIRE_THROWS_AS(gru.infer(x, 5, 3), std::invalid_argument);
}

TEST_CASE("adam drives a quadratic bowl to its minimum") {
  Tensor<double> w({10});
  Tensor<double> g({10});
  std::mt19937_64 rng(707);
  init_uniform_fanin(w, 1, rng);
  Tensor<double> a({10});
  init_uniform_fanin(a, 1, rng);

  Adam<double> opt({ParamRef<double>{&w, &g, nullptr, "w"}}, 0.05);
  double err = 0.0;
  for (int step = 0; step < 5000; ++step) {
    err = 0.0;
    for (int j = 0; j < 10; ++j) {
      g.data[j] = 2.0 * (w.data[j] - a.data[j]);
      err = std::max(err, std::abs(w.data[j] - a.data[j]));
    }
    if (err < 1e-6) break;
    opt.step();
  }
  REQUIRE(err < 1e-6);
}

TEST_CASE("adam with zero gradients from a fresh state leaves weights unchanged") {
  Tensor<double> w({4, 3});
  Tensor<double> g({4, 3});
  std::mt19937_64 rng(808);
  init_uniform_fanin(w, 3, rng);
  const std::vector<double> before(w.data.begin(), w.data.end());
  Adam<double> opt({ParamRef<double>{&w, &g, nullptr, "w"}}, 0.1);
  for (int i = 0; i < 10; ++i) opt.step();
  REQUIRE(std::equal(w.data.begin(), w.data.end(), before.begin(), before.end()));
}

TEST_CASE("adam keeps masked weights exactly zero during finetuning") {
  LinearLayer<double> lin(6, 6);
  std::mt19937_64 rng(909);
  lin.init(rng);
  auto& mask = lin.mask();
  mask.assign(lin.weight().data.size(), 1);
  for (size_t j = 0; j < mask.size(); j += 2) {
    mask[j] = 0;
    lin.weight().data[j] = 0.0;
  }

  std::vector<ParamRef<double>> params;
  lin.collect_params(params);
  Adam<double> opt(params, 1e-2);
  const Mat target = Mat::Zero(8, 6);
  for (int step = 0; step < 100; ++step) {
    for (auto& p : params) p.grad->fill(0.0);
    Mat x = random_mat(8, 6, 1000 + step);
    const Mat y = lin.forward(x, false, nullptr);
    lin.backward(mse_grad<double>(y, target));
    opt.step();
  }
  bool any_live_moved = false;
  for (size_t j = 0; j < mask.size(); ++j) {
    if (mask[j] == 0) {
      REQUIRE(lin.weight().data[j] == 0.0);
    } else if (lin.weight().data[j] != 0.0) {
      any_live_moved = true;
    }
  }
  REQUIRE(any_live_moved);
}

TEST_CASE("loss primitives: fixed points and finite-difference gradients") {
  SECTION("mse of identical matrices is zero") {
    const Mat x = random_mat(7, 5, 24);
    REQUIRE(mse_loss<double>(x, x) == 0.0);
  }

  SECTION("bce of a flat 0.5 prediction is ln 2 for any target") {
    const Mat p = Mat::Constant(6, 4, 0.5);
    Mat t = random_mat(6, 4, 25);
    t = (t.array() > 0.0).cast<double>().matrix();
    REQUIRE(bce_loss<double>(p, t) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SECTION("mse gradient matches finite differences") {
    Mat p = random_mat(4, 3, 26);
    const Mat t = random_mat(4, 3, 27);
    const Mat g = mse_grad<double>(p, t);
    auto loss = [&]() { return mse_loss<double>(p, t); };
    REQUIRE(max_input_fd_err(p, g, loss) < kFdTol);
  }

  SECTION("bce gradient matches finite differences away from the clamp") {
    Mat p = (random_mat(4, 3, 28).array() * 0.4 + 0.5).matrix();  // in (0.1, 0.9)
    Mat t = random_mat(4, 3, 29);
    t = (t.array() > 0.0).cast<double>().matrix();
    const Mat g = bce_grad<double>(p, t);
    auto loss = [&]() { return bce_loss<double>(p, t); };
    REQUIRE(max_input_fd_err(p, g, loss) < kFdTol);
  }

  SECTION("weighted bce ignores zero-weight positions") {
    Mat p = (random_mat(3, 3, 30).array() * 0.4 + 0.5).matrix();
    Mat t = random_mat(3, 3, 31);
    t = (t.array() > 0.0).cast<double>().matrix();
    Mat w = Mat::Ones(3, 3);
    w(1, 1) = 0.0;
    const double base = bce_loss_weighted<double>(p, t, w);
    p(1, 1) = 0.123;
    REQUIRE(bce_loss_weighted<double>(p, t, w) == Catch::Approx(base).epsilon(1e-12));
    const Mat g = bce_grad_weighted<double>(p, t, w);
    REQUIRE(g(1, 1) == 0.0);
    auto loss = [&]() { return bce_loss_weighted<double>(p, t, w); };
    REQUIRE(max_input_fd_err(p, g, loss) < kFdTol);
  }

  SECTION("shape mismatches are rejected") {
    const Mat a = Mat::Zero(2, 3);
    const Mat b = Mat::Zero(3, 2);
    REQUIRE_THROWS_AS(mse_loss<double>(a, b), std::invalid_argument);
    REQUIRE_THROWS_AS(bce_loss<double>(a, b), std::invalid_argument);
  }
}
