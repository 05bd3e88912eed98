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

// LISTA-CE: T unrolled layers, each a frequency-domain gradient step and learned
// denoiser followed by a beam-domain gradient step and learned denoiser.
//
// The single-sample operations in this header are the reference formulation;
// engine.hpp evaluates the same network on batches with a tape for backprop.

#include "classical.hpp"
#include "measurement.hpp"
#include "system.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lce {

enum class AnchorMode { as_written, primed };

struct NetConfig {
  int T = 7;
  int w1 = 128;
  int w2 = 256;
  bool share_transforms = true;
  AnchorMode anchor = AnchorMode::as_written;
  int N = 32;
  int M = 32;

  int transform_sets() const { return share_transforms ? 1 : T; }

  void validate() const {
    if (T < 1) throw std::invalid_argument("NetConfig: T must be >= 1");
    if (w1 < 1 || w2 < 1) throw std::invalid_argument("NetConfig: transform widths must be >= 1");
    if (N < 1 || M < 1) throw std::invalid_argument("NetConfig: N and M must be >= 1");
  }
};

// Column order of ListaParams::scalars and of the per-layer block of a 4T vector.
enum ScalarSlot : int { kRho = 0, kRhoBeam = 1, kTheta = 2, kThetaBeam = 3 };

struct LayerScalars {
  double rho = 0.5;
  double rho_p = 0.5;
  double theta = 0.01;
  double theta_p = 0.01;
};

// Forward map B relu(A x) and its mirror A_inv relu(B_inv z).
struct TransformBranch {
  Mat A;      // w1 x in
  Mat B;      // w2 x w1
  Mat B_inv;  // w1 x w2
  Mat A_inv;  // in x w1

  static TransformBranch zeros(int in, int w1, int w2) {
    return {Mat::Zero(w1, in), Mat::Zero(w2, w1), Mat::Zero(w1, w2), Mat::Zero(in, w1)};
  }
};

struct TransformParams {
  TransformBranch freq;  // in = 2M
  TransformBranch beam;  // in = 2N
};

struct ListaParams {
  Mat scalars;  // T x 4, columns indexed by ScalarSlot
  std::vector<TransformParams> transforms;

  int layers() const { return static_cast<int>(scalars.rows()); }

  LayerScalars layer(int t) const {
    return {scalars(t, kRho), scalars(t, kRhoBeam), scalars(t, kTheta), scalars(t, kThetaBeam)};
  }

  void set_layer(int t, const LayerScalars& s) {
    scalars(t, kRho) = s.rho;
    scalars(t, kRhoBeam) = s.rho_p;
    scalars(t, kTheta) = s.theta;
    scalars(t, kThetaBeam) = s.theta_p;
  }

  /// Transform set used by 0-based layer t.
  const TransformParams& transform(int t) const {
    return transforms.size() == 1 ? transforms.front() : transforms.at(t);
  }

  static ListaParams zeros(const NetConfig& cfg) {
    cfg.validate();
    ListaParams p;
    p.scalars = Mat::Zero(cfg.T, 4);
    p.transforms.assign(cfg.transform_sets(), TransformParams{TransformBranch::zeros(2 * cfg.M, cfg.w1, cfg.w2),
                                                              TransformBranch::zeros(2 * cfg.N, cfg.w1, cfg.w2)});
    return p;
  }
};

/// Visits every learnable tensor with its canonical name.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::string("scalars"), p.scalars);
  const bool shared = p.transforms.size() == 1;
  for (std::size_t s = 0; s < p.transforms.size(); ++s) {
    const std::string prefix = shared ? std::string() : "layer" + std::to_string(s + 1) + ".";
    auto& tp = p.transforms[s];
    fn(prefix + "freq.A", tp.freq.A);
    fn(prefix + "freq.B", tp.freq.B);
    fn(prefix + "freq.B_inv", tp.freq.B_inv);
    fn(prefix + "freq.A_inv", tp.freq.A_inv);
    fn(prefix + "beam.A", tp.beam.A);
    fn(prefix + "beam.B", tp.beam.B);
    fn(prefix + "beam.B_inv", tp.beam.B_inv);
    fn(prefix + "beam.A_inv", tp.beam.A_inv);
  }
}

/// Throws unless every tensor has the shape implied by cfg.
inline void check_shapes(const ListaParams& p, const NetConfig& cfg) {
  const ListaParams ref = ListaParams::zeros(cfg);
  if (p.transforms.size() != ref.transforms.size())
    throw std::invalid_argument("ListaParams: transform sharing does not match NetConfig");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  for_each_tensor(ref, [&](const std::string&, const Mat& m) { shapes.emplace_back(m.rows(), m.cols()); });
  std::size_t i = 0;
  for_each_tensor(p, [&](const std::string& name, const Mat& m) {
    if (m.rows() != shapes[i].first || m.cols() != shapes[i].second)
      throw std::invalid_argument("ListaParams: tensor '" + name + "' has the wrong shape");
    ++i;
  });
}

/// Number of learnable scalars, counted by walking the parameter containers.
inline std::int64_t param_count(const NetConfig& cfg) {
  const ListaParams p = ListaParams::zeros(cfg);
  std::int64_t n = 0;
  for_each_tensor(p, [&](const std::string&, const Mat& m) { n += m.size(); });
  return n;
}

struct InitOptions {
  double rho = 0.5;
  double theta = 0.01;
  // Start the inverse transforms' output layer (A_inv) at zero so every
  // denoiser branch is initially the identity through its residual path.
  bool zero_inverse_output = false;
};

/// Largest-eigenvalue estimate of W^T W for i.i.d. +-1/sqrt(P) entries (P x N),
/// from the Marchenko-Pastur edge (sqrt(N) + sqrt(P))^2 / P.
inline double selection_gram_edge(int N, int P) {
  const double s = std::sqrt(static_cast<double>(N)) + std::sqrt(static_cast<double>(P));
  return s * s / P;
}

/// Initialization used by the training drivers: step size at the inverse of the
/// Gram spectrum edge and silent denoiser branches.
inline InitOptions training_init(const SystemConfig& sys) {
  return {1.0 / selection_gram_edge(sys.N, sys.measurements()), 0.01, true};
}

/// Weights ~ N(0, 2 / fan_in); step sizes and thresholds set from `opt`.
inline ListaParams init_params(Rng& rng, const NetConfig& cfg, const InitOptions& opt = {}) {
  ListaParams p = ListaParams::zeros(cfg);
  for (int t = 0; t < cfg.T; ++t) p.set_layer(t, {opt.rho, opt.rho, opt.theta, opt.theta});
  for (auto& tp : p.transforms) {
    for (Mat* w : {&tp.freq.A, &tp.freq.B, &tp.freq.B_inv, &tp.freq.A_inv, &tp.beam.A, &tp.beam.B,
                   &tp.beam.B_inv, &tp.beam.A_inv}) {
      std::normal_distribution<double> g(0.0, std::sqrt(2.0 / static_cast<double>(w->cols())));
      for (Eigen::Index j = 0; j < w->cols(); ++j)
        for (Eigen::Index i = 0; i < w->rows(); ++i) (*w)(i, j) = g(rng);
    }
    if (opt.zero_inverse_output) {
      tp.freq.A_inv.setZero();
      tp.beam.A_inv.setZero();
    }
  }
  return p;
}

inline Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

/// R = anchor - rho W^T (W H'_{t-1} - Y).
inline Mat grad_step_freq(const Mat& H_prev, const Mat& H_prev_primed, const Mat& Y, const Mat& W, double rho,
                          AnchorMode mode = AnchorMode::as_written) {
  const Mat& anchor = mode == AnchorMode::as_written ? H_prev : H_prev_primed;
  return anchor - rho * (W.transpose() * (W * H_prev_primed - Y));
}

/// R' = H - rho' W^T (W H - Y).
inline Mat grad_step_beam(const Mat& H_t, const Mat& Y, const Mat& W, double rho_p) {
  return H_t - rho_p * (W.transpose() * (W * H_t - Y));
}

/// B relu(A R^T): N x 2M -> w2 x N.
inline Mat sparse_transform_freq(const Mat& R, const TransformBranch& f) {
  return f.B * relu(f.A * R.transpose());
}

/// (A_inv relu(B_inv Z))^T: w2 x N -> N x 2M.
inline Mat inverse_transform_freq(const Mat& Z, const TransformBranch& f) {
  return (f.A_inv * relu(f.B_inv * Z)).transpose();
}

inline Mat denoise_freq(const Mat& R, const TransformBranch& f, double theta) {
  return R + inverse_transform_freq(soft_threshold(sparse_transform_freq(R, f), theta), f);
}

/// [R(:, 1:M)^T | R(:, M+1:2M)^T]: N x 2M -> M x 2N.
inline Mat trans(const Mat& R) {
  if (R.cols() % 2 != 0) throw std::invalid_argument("trans: expects an even number of columns");
  const auto M = R.cols() / 2;
  const auto N = R.rows();
  Mat out(M, 2 * N);
  out.leftCols(N) = R.leftCols(M).transpose();
  out.rightCols(N) = R.rightCols(M).transpose();
  return out;
}

/// Inverse of trans: M x 2N -> N x 2M.
inline Mat trans_inv(const Mat& X) {
  if (X.cols() % 2 != 0) throw std::invalid_argument("trans_inv: expects an even number of columns");
  const auto N = X.cols() / 2;
  const auto M = X.rows();
  Mat out(N, 2 * M);
  out.leftCols(M) = X.leftCols(N).transpose();
  out.rightCols(M) = X.rightCols(N).transpose();
  return out;
}

/// B' relu(A' X^T): M x 2N -> w2 x M.
inline Mat sparse_transform_beam(const Mat& X, const TransformBranch& f) {
  return f.B * relu(f.A * X.transpose());
}

/// (A'_inv relu(B'_inv Z))^T: w2 x M -> M x 2N.
inline Mat inverse_transform_beam(const Mat& Z, const TransformBranch& f) {
  return (f.A_inv * relu(f.B_inv * Z)).transpose();
}

inline Mat denoise_beam(const Mat& Rp, const TransformBranch& f, double theta_p) {
  return Rp + trans_inv(inverse_transform_beam(soft_threshold(sparse_transform_beam(trans(Rp), f), theta_p), f));
}

struct ForwardResult {
  Mat H;                       // final estimate, N x 2M
  std::vector<Mat> per_layer;  // H'^(1..T) when requested
};

/// Single-sample forward pass from H^(0) = H'^(0) = 0.
inline ForwardResult forward(const Observation& obs, const ListaParams& params, const NetConfig& cfg,
                             bool emit_per_layer = false) {
  cfg.validate();
  check_shapes(params, cfg);
  const Mat& W = obs.W.W;
  if (W.cols() != cfg.N || obs.Y.cols() != 2 * cfg.M || obs.Y.rows() != W.rows())
    throw std::invalid_argument("forward: observation does not match NetConfig");
  Mat H = Mat::Zero(cfg.N, 2 * cfg.M);
  Mat Hp = H;
  ForwardResult out;
  for (int t = 0; t < cfg.T; ++t) {
    const LayerScalars s = params.layer(t);
    const TransformParams& tp = params.transform(t);
    const Mat R = grad_step_freq(H, Hp, obs.Y, W, s.rho, cfg.anchor);
    H = denoise_freq(R, tp.freq, s.theta);
    const Mat Rp = grad_step_beam(H, obs.Y, W, s.rho_p);
    Hp = denoise_beam(Rp, tp.beam, s.theta_p);
    if (emit_per_layer) out.per_layer.push_back(Hp);
  }
  out.H = std::move(Hp);
  return out;
}

}  // namespace lce
