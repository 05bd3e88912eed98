// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#pragma once

// HyperNet: maps the condition (L, SNR) to the 4T step sizes and thresholds of
// LISTA-CE, with the two-phase protocol (average model, then hypernetwork on
// frozen transforms).

#include "classical.hpp"
#include "engine.hpp"
#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace lce {

// Min-max scaling ranges of the condition inputs (the training ranges).
struct ConditionBounds {
  double L_min = 2.0;
  double L_max = 4.0;
  double snr_min = 5.0;
  double snr_max = 15.0;
};

struct ConditionVector {
  double L = 0.0;
  double snr_db = 0.0;
  Eigen::Vector2d normalized = Eigen::Vector2d::Zero();  // [0,1]^2 over the bounds
  ConditionBounds bounds;
};

inline double unit_scale(double x, double lo, double hi) { return hi > lo ? (x - lo) / (hi - lo) : 0.0; }

inline ConditionVector make_condition(double L, double snr_db, const ConditionBounds& b) {
  return {L, snr_db, Eigen::Vector2d(unit_scale(L, b.L_min, b.L_max), unit_scale(snr_db, b.snr_min, b.snr_max)), b};
}

struct HyperParams {
  Mat W1;  // d x 2
  Mat W2;  // d x d
  Mat W3;  // 4T x d
  Mat b1;  // d x 1, first-layer bias
  ConditionBounds bounds;

  int hidden() const { return static_cast<int>(W1.rows()); }
  int layers() const { return static_cast<int>(W3.rows() / 4); }
};

template <typename Params, typename Fn>
  requires std::is_same_v<std::remove_const_t<Params>, HyperParams>
void for_each_tensor(Params& hp, Fn&& fn) {
  fn(std::string("hyper.W1"), hp.W1);
  fn(std::string("hyper.b1"), hp.b1);
  fn(std::string("hyper.W2"), hp.W2);
  fn(std::string("hyper.W3"), hp.W3);
}

inline std::int64_t hyper_param_count(const HyperParams& hp) { return hp.W1.size() + hp.b1.size() + hp.W2.size() + hp.W3.size();
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

inline bool is_threshold_row(Eigen::Index r) { return r % 4 == kTheta || r % 4 == kThetaBeam; }

// Activations of a batched hypernetwork evaluation (one column per condition).
struct HyperActivations {
  Mat input;    // 2 x B, normalized conditions
  Mat a1, a2;   // d x B pre-activations
  Mat raw;      // 4T x B
  Mat scalars;  // 4T x B after the threshold positivity map
};

inline HyperActivations hyper_forward_batch(const std::vector<ConditionVector>& conds, const HyperParams& hp) {
  HyperActivations act;
  act.input.resize(2, static_cast<Eigen::Index>(conds.size()));
  for (std::size_t b = 0; b < conds.size(); ++b) act.input.col(b) = conds[b].normalized;
  act.a1 = hp.W1 * act.input;
  act.a1.colwise() += hp.b1.col(0);
  act.a2 = hp.W2 * relu(act.a1);
  act.raw = hp.W3 * relu(act.a2);
  act.scalars = act.raw;
  for (Eigen::Index r = 0; r < act.raw.rows(); ++r)
    if (is_threshold_row(r)) act.scalars.row(r) = act.raw.row(r).unaryExpr([](double v) { return softplus(v); });
  return act;
}

/// g(s) = W3 relu(W2 relu(W1 s + b1)) in layer order (rho, rho', theta, theta') per layer;
/// thresholds pass through softplus.
inline Vec hyper_forward(const ConditionVector& s, const HyperParams& hp) {
  return hyper_forward_batch({s}, hp).scalars.col(0);
}

/// Gradients of W1, b1, W2, W3 given dL/dscalars (4T x B).
inline HyperParams hyper_backward(const HyperActivations& act, const HyperParams& hp, const Mat& g_scalars) {
  Mat g_raw = g_scalars;
  for (Eigen::Index r = 0; r < g_raw.rows(); ++r)
    if (is_threshold_row(r))
      g_raw.row(r) = g_raw.row(r).cwiseProduct(act.raw.row(r).unaryExpr([](double v) { return sigmoid(v); }));
  HyperParams g = hp;
  g.W3 = g_raw * relu(act.a2).transpose();
  const Mat g_a2 = (hp.W3.transpose() * g_raw).cwiseProduct(detail::relu_mask(act.a2));
  g.W2 = g_a2 * relu(act.a1).transpose();
  const Mat g_a1 = (hp.W2.transpose() * g_a2).cwiseProduct(detail::relu_mask(act.a1));
  g.W1 = g_a1 * act.input.transpose();
  g.b1 = g_a1.rowwise().sum();
  return g;
}

/// Grid of training conditions used to fit the initial output layer.
inline std::vector<ConditionVector> condition_grid(const std::vector<int>& L_set, const ConditionBounds& b,
                                                   int snr_points = 11) {
  std::vector<ConditionVector> grid;
  for (int L : L_set)
    for (int i = 0; i < snr_points; ++i) {
      const double snr = snr_points == 1 ? b.snr_min : b.snr_min + (b.snr_max - b.snr_min) * i / (snr_points - 1);
      grid.push_back(make_condition(L, snr, b));
    }
  return grid;
}

/// W1, W2 ~ N(0, 2/fan_in), b1 ~ N(0, 1); W3 is the minimum-norm least-squares fit that makes
/// the network emit `aver`'s scalars at every grid condition.
inline HyperParams init_hyper(Rng& rng, const ListaParams& aver, int d, const ConditionBounds& bounds,
                              const std::vector<ConditionVector>& grid) {
  if (d < 1) throw std::invalid_argument("init_hyper: hidden width must be >= 1");
  if (grid.empty()) throw std::invalid_argument("init_hyper: empty condition grid");
  const int T = aver.layers();
  HyperParams hp;
  hp.bounds = bounds;
  hp.W1.resize(d, 2);
  hp.W2.resize(d, d);
  for (Mat* w : {&hp.W1, &hp.W2}) {
    std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(w->cols())));
    for (Eigen::Index j = 0; j < w->cols(); ++j)
      for (Eigen::Index i = 0; i < w->rows(); ++i) (*w)(i, j) = g(rng);
  }
  hp.b1.resize(d, 1);
  std::normal_distribution<double> gb(0.0, 1.0);
  for (Eigen::Index i = 0; i < d; ++i) hp.b1(i, 0) = gb(rng);
  hp.W3 = Mat::Zero(4 * T, d);
  Vec target(4 * T);
  for (int t = 0; t < T; ++t) {
    const LayerScalars s = aver.layer(t);
    target(4 * t + kRho) = s.rho;
    target(4 * t + kRhoBeam) = s.rho_p;
    target(4 * t + kTheta) = softplus_inverse(std::max(s.theta, 1e-6));
    target(4 * t + kThetaBeam) = softplus_inverse(std::max(s.theta_p, 1e-6));
  }
  const HyperActivations act = hyper_forward_batch(grid, hp);
  const Mat features = relu(act.a2);  // d x G
  const Mat targets = target.replicate(1, static_cast<Eigen::Index>(grid.size()));
  hp.W3 = features.transpose().completeOrthogonalDecomposition().solve(targets.transpose()).transpose();
  return hp;
}

// LISTA-CEHyper: frozen transforms of the average model plus the hypernetwork.
struct HyperModel {
  ListaParams base;
  HyperParams hyper;
};

inline std::vector<ConditionVector> sample_conditions(const Dataset& ds, std::span<const std::size_t> idx,
                                                      const ConditionBounds& b, std::optional<double> snr_override = {}) {
  std::vector<ConditionVector> c;
  for (std::size_t i : idx) c.push_back(make_condition(ds.samples[i].L, snr_override.value_or(ds.samples[i].snr_db), b));
  return c;
}

inline EvalResult evaluate_hyper(const HyperModel& model, const Dataset& ds, const SystemConfig& sys,
                                 const NetConfig& net, std::uint64_t seed, bool per_layer = false,
                                 std::optional<double> snr_override = {}) {
  if (model.hyper.layers() != net.T) throw std::invalid_argument("evaluate_hyper: HyperNet output does not match T");
  const ScalarProvider provider = [&](const Dataset& d, std::span<const std::size_t> idx) {
    return hyper_forward_batch(sample_conditions(d, idx, model.hyper.bounds, snr_override), model.hyper).scalars;
  };
  return evaluate_with(provider, model.base.transforms, ds, sys, net, seed, per_layer, snr_override);
}

/// LISTA-CEAver: plain training on a dataset whose samples mix conditions.
inline TrainResult train_aver(const Dataset& mixed, const Dataset& val, const SystemConfig& sys, const NetConfig& net,
                              const TrainConfig& tc, const std::function<void(const TrainLogRow&)>& on_epoch = {}) {
  return train(mixed, val, sys, net, tc, {}, on_epoch);
}

struct HyperConfig {
  int d = 128;
  std::vector<int> L_set{2, 3, 4};
  ConditionBounds bounds;
  int grid_snr_points = 11;
};

inline ConditionBounds bounds_of(const std::vector<int>& L_set, double snr_min, double snr_max) {
  const auto [lo, hi] = std::minmax_element(L_set.begin(), L_set.end());
  return {static_cast<double>(*lo), static_cast<double>(*hi), snr_min, snr_max};
}

struct HyperTrainResult {
  HyperModel model;  // best validation model
  HyperParams initial;
  std::vector<TrainLogRow> log;
  double best_val_nmse_db = 0.0;
  int best_epoch = 0;
};

/// Freezes `aver`'s transforms and trains only the hypernetwork.
inline HyperTrainResult train_hyper(const ListaParams& aver, const Dataset& train_ds, const Dataset& val_ds,
                                    const SystemConfig& sys, const NetConfig& net, const TrainConfig& tc,
                                    const HyperConfig& hc, const std::function<void(const TrainLogRow&)>& on_epoch = {}) {
  tc.validate();
  check_shapes(aver, net);
  if (train_ds.samples.empty() || val_ds.samples.empty()) throw std::invalid_argument("train_hyper: empty dataset");
  Rng rng(derive_seed(tc.seed, 0x4e7, 0));
  HyperTrainResult res;
  res.initial = init_hyper(rng, aver, hc.d, hc.bounds, condition_grid(hc.L_set, hc.bounds, hc.grid_snr_points));
  HyperParams hp = res.initial;
  AdamState adam;
  const std::uint64_t vseed = validation_seed(tc.seed);
  auto step = [&](HyperParams& h, const BatchProblem& prob, const Mat& H, std::span<const std::size_t> idx) {
    const HyperActivations act = hyper_forward_batch(sample_conditions(train_ds, idx, h.bounds), h);
    ForwardTape tape;
    const Mat H_hat = forward_batch(prob, act.scalars, aver.transforms, net, &tape);
    const LossValue lv = loss(H_hat, H, prob.B, tc.loss);
    const BatchGradients bg = backward_batch(prob, act.scalars, aver.transforms, net, tape, lv.grad);
    HyperParams g = hyper_backward(act, h, bg.scalars);
    if (tc.grad_clip) {
      const double n = gradient_norm(g);
      if (n > *tc.grad_clip) scale_gradients(g, *tc.grad_clip / n);
    }
    adam_step(h, g, adam, tc.lr);
    return lv.value;
  };
  auto validate = [&](const HyperParams& h) { return evaluate_hyper({aver, h}, val_ds, sys, net, vseed).nmse_db; };
  HyperParams best;
  res.log = run_epochs(hp, best, res.best_val_nmse_db, res.best_epoch, train_ds, sys, tc, step, validate, on_epoch);
  res.model = {aver, best};
  return res;
}

enum class ConditionSource { metadata, omp };

/// Condition of an observation. SNR is the harness's known value; L comes from
/// the generation metadata, or in `omp` mode from the number of OMP atoms whose
/// residual-energy drop exceeds `drop_fraction`, taken as a median over
/// subcarriers and divided by `atoms_per_path`.
inline ConditionVector estimate_condition(const Observation& obs, const ConditionBounds& b,
                                          ConditionSource src = ConditionSource::metadata, double drop_fraction = 0.05,
                                          int atoms_per_path = 1) {
  if (src == ConditionSource::metadata) return make_condition(obs.L, obs.snr_db, b);
  const Mat& W = obs.W.W;
  const auto M = obs.Y.cols() / 2;
  const CMat D = W.cast<cplx>();
  std::vector<int> counts;
  for (Eigen::Index m = 0; m < M; ++m) {
    CVec y(W.rows());
    y.real() = obs.Y.col(m);
    y.imag() = obs.Y.col(M + m);
    const double e0 = y.squaredNorm();
    if (e0 == 0.0) {
      counts.push_back(0);
      continue;
    }
    const OmpTrace tr = omp_solve(D, y, static_cast<int>(W.rows() / 2));
    int c = 0;
    double prev = e0;
    for (double r : tr.residual_norms) {
      if ((prev - r * r) / e0 > drop_fraction) ++c;
      prev = r * r;
    }
    counts.push_back(c);
  }
  std::nth_element(counts.begin(), counts.begin() + counts.size() / 2, counts.end());
  const int L = std::max(1, counts[counts.size() / 2] / std::max(1, atoms_per_path));
  return make_condition(L, obs.snr_db, b);
}

}  // namespace lce
