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

// Training of LISTA-CE: loss, gradients through the unrolled graph, Adam, and
// the epoch loop with per-batch selection-network regeneration.

#include "dataset.hpp"
#include "engine.hpp"
#include "lista.hpp"
#include "measurement.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lce {

enum class LossKind { nmse_mean, mse };

struct LossValue {
  double value = 0.0;
  Mat grad;  // dL/dH_hat, same layout as the input
};

/// Batch loss over B samples laid out side by side (N x 2M B).
inline LossValue loss(const Mat& H_hat, const Mat& H, int B, LossKind kind) {
  if (H_hat.rows() != H.rows() || H_hat.cols() != H.cols() || B < 1 || H.cols() % B != 0)
    throw std::invalid_argument("loss: shape mismatch");
  const Eigen::Index w = H.cols() / B;
  LossValue out{0.0, Mat(H.rows(), H.cols())};
  for (int b = 0; b < B; ++b) {
    const auto hb = H.middleCols(b * w, w);
    const Mat diff = H_hat.middleCols(b * w, w) - hb;
    double den = static_cast<double>(hb.size());
    if (kind == LossKind::nmse_mean) {
      den = hb.squaredNorm();
      if (!(den > 0.0)) throw std::domain_error("loss: zero-norm target under nmse_mean");
    }
    out.value += diff.squaredNorm() / den;
    out.grad.middleCols(b * w, w) = (2.0 / (den * B)) * diff;
  }
  out.value /= B;
  return out;
}

/// Learnable-shaped gradient container.
using GradientSet = ListaParams;

struct BackwardResult {
  double loss = 0.0;
  GradientSet grads;
};

/// Loss of the batch and its exact gradient w.r.t. every learnable in `params`.
inline BackwardResult backward(const BatchProblem& prob, const Mat& H, const ListaParams& params,
                               const NetConfig& cfg, LossKind kind = LossKind::nmse_mean) {
  ForwardTape tape;
  const Mat S = broadcast_scalars(params.scalars, prob.B);
  const Mat H_hat = forward_batch(prob, S, params.transforms, cfg, &tape);
  const LossValue lv = loss(H_hat, H, prob.B, kind);
  BatchGradients bg = backward_batch(prob, S, params.transforms, cfg, tape, lv.grad);
  BackwardResult out;
  out.loss = lv.value;
  out.grads.scalars = Mat::Zero(cfg.T, 4);
  for (int t = 0; t < cfg.T; ++t)
    for (int k = 0; k < 4; ++k) out.grads.scalars(t, k) = bg.scalars.row(4 * t + k).sum();
  out.grads.transforms = std::move(bg.transforms);
  return out;
}

// Adam moments for a fixed list of tensors.
struct AdamState {
  std::vector<Mat> m, v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over tensors visited by for_each_tensor.
template <typename Params>
void adam_step(Params& params, const Params& grads, AdamState& st, double lr) {
  std::vector<Mat*> p;
  std::vector<const Mat*> g;
  for_each_tensor(params, [&](const std::string&, Mat& m) { p.push_back(&m); });
  for_each_tensor(grads, [&](const std::string&, const Mat& m) { g.push_back(&m); });
  if (p.size() != g.size()) throw std::invalid_argument("adam_step: gradient set does not match parameters");
  if (st.m.empty()) {
    for (const Mat* x : p) {
      st.m.push_back(Mat::Zero(x->rows(), x->cols()));
      st.v.push_back(Mat::Zero(x->rows(), x->cols()));
    }
  }
  if (st.m.size() != p.size()) throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (g[i]->rows() != p[i]->rows() || g[i]->cols() != p[i]->cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * *g[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g[i]->cwiseAbs2();
    p[i]->array() -= lr * (st.m[i].array() / c1) / ((st.v[i].array() / c2).sqrt() + st.eps);
  }
}

/// Global l2 norm of a gradient set.
template <typename Params>
double gradient_norm(const Params& g) {
  double s = 0.0;
  for_each_tensor(g, [&](const std::string&, const Mat& m) { s += m.squaredNorm(); });
  return std::sqrt(s);
}

template <typename Params>
void scale_gradients(Params& g, double factor) {
  for_each_tensor(g, [&](const std::string&, Mat& m) { m *= factor; });
}

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 64;
  int max_epochs = 200;
  int early_stop_patience = 20;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::nmse_mean;
  std::optional<double> grad_clip;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 0) throw std::invalid_argument("TrainConfig: max_epochs must be >= 0");
  }
};

struct TrainLogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_nmse_db = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ListaParams params;  // best validation model
  std::vector<TrainLogRow> log;
  double best_val_nmse_db = 0.0;
  int best_epoch = 0;
};

/// Builds a training batch: a fresh selection network shared by the batch and
/// fresh noise per sample at each sample's SNR, drawn from `rng` in index order.
inline BatchProblem make_training_batch(const Dataset& ds, std::span<const std::size_t> idx, const SystemConfig& sys,
                                        Rng& rng, Mat* H_out) {
  const int B = static_cast<int>(idx.size());
  const SelectionMatrix W = gen_selection(rng, sys);
  BatchProblem prob{SelectionSet({W.W}), Mat(sys.measurements(), 2 * sys.M * B), B};
  if (H_out) H_out->resize(sys.N, 2 * sys.M * B);
  for (int b = 0; b < B; ++b) {
    const Sample& s = ds.samples[idx[b]];
    const auto cols = Eigen::seqN(b * 2 * sys.M, 2 * sys.M);
    prob.Y(Eigen::all, cols) = W.W * s.H + combined_noise(W, sys.M, snr_to_sigma(s.snr_db).sigma2, rng);
    if (H_out) (*H_out)(Eigen::all, cols) = s.H;
  }
  return prob;
}

/// The observation every estimator sees for sample `index` under run seed `seed`.
inline Observation make_eval_observation(const Sample& s, const SystemConfig& sys, std::uint64_t seed, std::size_t index,
                                         std::optional<double> snr_override = {}) {
  Rng rng(derive_seed(seed, 0x0b5e, index));
  const SelectionMatrix W = gen_selection(rng, sys);
  return observe(RealChannelMatrix{s.H}, W, snr_to_sigma(snr_override.value_or(s.snr_db)), rng, s.L);
}

struct EvalResult {
  double nmse = 0.0;
  double nmse_db = 0.0;
  std::vector<double> per_layer_db;
  long samples = 0;
};

/// Produces the 4T x B scalars for a chunk of samples (given their dataset indices).
using ScalarProvider = std::function<Mat(const Dataset&, std::span<const std::size_t>)>;

/// Mean NMSE of the batched network over `ds`, one seeded selection matrix per sample.
inline EvalResult evaluate_with(const ScalarProvider& scalars, const std::vector<TransformParams>& transforms,
                                const Dataset& ds, const SystemConfig& sys, const NetConfig& net, std::uint64_t seed,
                                bool per_layer, std::optional<double> snr_override = {}, int chunk = 64) {
  if (ds.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  NmseAccumulator total;
  std::vector<NmseAccumulator> layers(per_layer ? net.T : 0);
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t stop = std::min(ds.size(), start + static_cast<std::size_t>(chunk));
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const int B = static_cast<int>(idx.size());
    std::vector<Mat> Ws;
    BatchProblem prob;
    prob.B = B;
    prob.Y.resize(sys.measurements(), 2 * sys.M * B);
    for (int b = 0; b < B; ++b) {
      Observation o = make_eval_observation(ds.samples[idx[b]], sys, seed, idx[b], snr_override);
      prob.Y.middleCols(b * 2 * sys.M, 2 * sys.M) = o.Y;
      Ws.push_back(std::move(o.W.W));
    }
    prob.W = SelectionSet(std::move(Ws));
    std::vector<Mat> outs;
    const Mat H_hat = forward_batch(prob, scalars(ds, idx), transforms, net, nullptr, per_layer ? &outs : nullptr);
    for (int b = 0; b < B; ++b) {
      const Mat& H = ds.samples[idx[b]].H;
      const auto cols = Eigen::seqN(b * 2 * sys.M, 2 * sys.M);
      total.add(H_hat(Eigen::all, cols), H);
      for (std::size_t t = 0; t < layers.size(); ++t) layers[t].add(outs[t](Eigen::all, cols), H);
    }
  }
  EvalResult r;
  r.nmse = total.mean();
  r.nmse_db = total.mean_db();
  r.samples = total.count();
  for (const auto& l : layers) r.per_layer_db.push_back(l.mean_db());
  return r;
}

inline EvalResult evaluate(const ListaParams& params, const Dataset& ds, const SystemConfig& sys, const NetConfig& net,
                           std::uint64_t seed, bool per_layer = false, std::optional<double> snr_override = {}) {
  check_shapes(params, net);
  const ScalarProvider provider = [&](const Dataset&, std::span<const std::size_t> idx) {
    return broadcast_scalars(params.scalars, static_cast<int>(idx.size()));
  };
  return evaluate_with(provider, params.transforms, ds, sys, net, seed, per_layer, snr_override);
}

/// Seed of the fixed validation observations used during training.
inline std::uint64_t validation_seed(std::uint64_t train_seed) { return derive_seed(train_seed, 0x7a1d, 0); }

/// Clamps thresholds to the soft denoiser's domain theta >= 0.
inline void project_thresholds(ListaParams& p) {
  p.scalars.col(kTheta) = p.scalars.col(kTheta).cwiseMax(0.0);
  p.scalars.col(kThetaBeam) = p.scalars.col(kThetaBeam).cwiseMax(0.0);
}

// Epoch loop shared by LISTA-CE and HyperNet training. `step(model, prob, H, idx)`
// runs one batch (forward, backward, update) and returns its loss; `validate`
// returns validation NMSE in dB. Keeps the best-validation model in `best`.
template <typename Model, typename Step, typename Validate>
std::vector<TrainLogRow> run_epochs(Model& model, Model& best, double& best_db, int& best_epoch, const Dataset& train_ds,
                                    const SystemConfig& sys, const TrainConfig& tc, Step&& step, Validate&& validate,
                                    const std::function<void(const TrainLogRow&)>& on_epoch) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  std::vector<TrainLogRow> log;
  best_db = validate(model);
  best = model;
  best_epoch = 0;
  log.push_back({0, std::numeric_limits<double>::quiet_NaN(), best_db, 0.0});
  if (on_epoch) on_epoch(log.back());
  int since_best = 0;
  std::vector<std::size_t> order(train_ds.size());
  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(tc.seed, 0x5eed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += tc.batch_size, ++batch) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::span<const std::size_t> idx(order.data() + start, stop - start);
      Mat H;
      const BatchProblem prob = make_training_batch(train_ds, idx, sys, rng, &H);
      double l = 0.0;
      try {
        l = step(model, prob, H, idx);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch) + ": " + e.what());
      }
      if (!std::isfinite(l))
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batch) + ": non-finite loss");
      loss_sum += l * static_cast<double>(idx.size());
      seen += idx.size();
    }
    const double val_db = validate(model);
    log.push_back({epoch, loss_sum / static_cast<double>(seen), val_db,
                   std::chrono::duration<double>(clock::now() - t0).count()});
    if (on_epoch) on_epoch(log.back());
    if (val_db < best_db) {
      best_db = val_db;
      best = model;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= tc.early_stop_patience) {
      break;
    }
  }
  return log;
}

/// Trains LISTA-CE from `init` (or a seeded initialization) and returns the
/// best-validation parameters.
inline TrainResult train(const Dataset& train_ds, const Dataset& val_ds, const SystemConfig& sys, const NetConfig& net,
                         const TrainConfig& tc, std::optional<ListaParams> init = {},
                         const std::function<void(const TrainLogRow&)>& on_epoch = {},
                         std::optional<InitOptions> init_opt = {}) {
  tc.validate();
  net.validate();
  if (train_ds.samples.empty() || val_ds.samples.empty()) throw std::invalid_argument("train: empty dataset");
  if (train_ds.header.N != net.N || train_ds.header.M != net.M)
    throw std::invalid_argument("train: dataset dimensions do not match NetConfig");
  ListaParams params;
  if (init) {
    params = *init;
  } else {
    Rng rng(derive_seed(tc.seed, 0x1417, 0));
    params = init_params(rng, net, init_opt.value_or(training_init(sys)));
  }
  check_shapes(params, net);
  AdamState adam;
  const std::uint64_t vseed = validation_seed(tc.seed);
  TrainResult res;
  auto step = [&](ListaParams& p, const BatchProblem& prob, const Mat& H, std::span<const std::size_t>) {
    BackwardResult br = backward(prob, H, p, net, tc.loss);
    if (tc.grad_clip) {
      const double n = gradient_norm(br.grads);
      if (n > *tc.grad_clip) scale_gradients(br.grads, *tc.grad_clip / n);
    }
    adam_step(p, br.grads, adam, tc.lr);
    project_thresholds(p);
    return br.loss;
  };
  auto validate = [&](const ListaParams& p) { return evaluate(p, val_ds, sys, net, vseed).nmse_db; };
  res.log = run_epochs(params, res.params, res.best_val_nmse_db, res.best_epoch, train_ds, sys, tc, step, validate,
                       on_epoch);
  return res;
}

}  // namespace lce
