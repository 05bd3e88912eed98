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

// Batched LISTA-CE evaluation with a recorded tape, and the reverse pass over it.
//
// A batch of B samples is laid out side by side: channel-shaped quantities are
// N x (2M B) with sample b in columns [2M b, 2M (b+1)). Per-sample scalars are a
// 4T x B matrix whose rows follow the layer-major order (rho, rho', theta, theta').

#include "lista.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace lce {

// Selection matrices of a batch: one shared by every sample, or one per sample.
class SelectionSet {
 public:
  SelectionSet() = default;
  explicit SelectionSet(std::vector<Mat> W) : W_(std::move(W)) {
    if (W_.empty()) throw std::invalid_argument("SelectionSet: empty");
    for (const Mat& w : W_) WtW_.push_back(w.transpose() * w);
  }

  bool shared() const { return W_.size() == 1; }
  std::size_t size() const { return W_.size(); }
  const Mat& W(int b) const { return shared() ? W_.front() : W_.at(b); }
  const Mat& WtW(int b) const { return shared() ? WtW_.front() : WtW_.at(b); }

  /// Blockwise W_b^T W_b X_b over blocks of `width` columns.
  Mat normal(const Mat& X, Eigen::Index width) const {
    if (shared()) return WtW_.front() * X;
    Mat out(X.rows(), X.cols());
    for (std::size_t b = 0; b < W_.size(); ++b)
      out.middleCols(b * width, width).noalias() = WtW_[b] * X.middleCols(b * width, width);
    return out;
  }

  /// Blockwise W_b^T Y_b.
  Mat adjoint(const Mat& Y, Eigen::Index width) const {
    const Eigen::Index B = Y.cols() / width;
    Mat out(W(0).cols(), Y.cols());
    for (Eigen::Index b = 0; b < B; ++b)
      out.middleCols(b * width, width).noalias() = W(static_cast<int>(b)).transpose() * Y.middleCols(b * width, width);
    return out;
  }

 private:
  std::vector<Mat> W_;
  std::vector<Mat> WtW_;
};

// Layout permutations between the N x 2M B channel layout and the branch inputs.
namespace layout {

/// Block b -> R_b^T: result is 2M x (N B).
inline Mat stack_freq(const Mat& R, Eigen::Index N, Eigen::Index M, Eigen::Index B) {
  Mat X(2 * M, N * B);
  for (Eigen::Index b = 0; b < B; ++b) X.middleCols(b * N, N) = R.middleCols(b * 2 * M, 2 * M).transpose();
  return X;
}

inline Mat unstack_freq(const Mat& X, Eigen::Index N, Eigen::Index M, Eigen::Index B) {
  Mat R(N, 2 * M * B);
  for (Eigen::Index b = 0; b < B; ++b) R.middleCols(b * 2 * M, 2 * M) = X.middleCols(b * N, N).transpose();
  return R;
}

/// Block b -> [Re_b; Im_b] (= trans(R_b)^T): result is 2N x (M B).
inline Mat stack_beam(const Mat& R, Eigen::Index N, Eigen::Index M, Eigen::Index B) {
  Mat X(2 * N, M * B);
  for (Eigen::Index b = 0; b < B; ++b) {
    X.block(0, b * M, N, M) = R.middleCols(b * 2 * M, M);
    X.block(N, b * M, N, M) = R.middleCols(b * 2 * M + M, M);
  }
  return X;
}

inline Mat unstack_beam(const Mat& X, Eigen::Index N, Eigen::Index M, Eigen::Index B) {
  Mat R(N, 2 * M * B);
  for (Eigen::Index b = 0; b < B; ++b) {
    R.middleCols(b * 2 * M, M) = X.block(0, b * M, N, M);
    R.middleCols(b * 2 * M + M, M) = X.block(N, b * M, N, M);
  }
  return R;
}

}  // namespace layout

struct BranchTape {
  Mat X, U, Z, P;
};

struct LayerTape {
  Mat G;       // W^T (W H'^(t-1) - Y)
  Mat G_beam;  // W^T (W H^(t) - Y)
  BranchTape freq, beam;
};

struct ForwardTape {
  std::vector<LayerTape> layers;
};

// One batch of observations.
struct BatchProblem {
  SelectionSet W;
  Mat Y;  // Q N_RF x 2M B
  int B = 1;
};

namespace detail {

inline void soft_blocks(Mat& Z, const Eigen::Ref<const Vec>& theta, Eigen::Index width) {
  for (Eigen::Index b = 0; b < theta.size(); ++b) {
    const double th = theta(b);
    Z.middleCols(b * width, width) =
        Z.middleCols(b * width, width).unaryExpr([th](double v) { return soft_threshold(v, th); });
  }
}

inline Mat branch_forward(const TransformBranch& f, Mat X, const Eigen::Ref<const Vec>& theta, Eigen::Index width,
                          BranchTape* tape) {
  Mat U = f.A * X;
  Mat Z = f.B * relu(U);
  Mat S = Z;
  soft_blocks(S, theta, width);
  Mat P = f.B_inv * S;
  Mat O = f.A_inv * relu(P);
  if (tape) *tape = BranchTape{std::move(X), std::move(U), std::move(Z), std::move(P)};
  return O;
}

}  // namespace detail

/// Expands T x 4 layer scalars into the 4T x B per-sample layout.
inline Mat broadcast_scalars(const Mat& layer_scalars, int B) {
  const auto T = layer_scalars.rows();
  Mat S(4 * T, B);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int k = 0; k < 4; ++k) S.row(4 * t + k).setConstant(layer_scalars(t, k));
  return S;
}

/// Batched forward. `scalars` is 4T x B. Fills `tape` and `per_layer` when given.
/// Throws if any layer produces non-finite values.
inline Mat forward_batch(const BatchProblem& prob, const Mat& scalars, const std::vector<TransformParams>& transforms,
                         const NetConfig& cfg, ForwardTape* tape = nullptr, std::vector<Mat>* per_layer = nullptr) {
  const Eigen::Index N = cfg.N, M = cfg.M, B = prob.B;
  if (prob.Y.cols() != 2 * M * B || scalars.rows() != 4 * cfg.T || scalars.cols() != B)
    throw std::invalid_argument("forward_batch: batch shapes do not match NetConfig");
  if (!prob.W.shared() && static_cast<Eigen::Index>(prob.W.size()) != B)
    throw std::invalid_argument("forward_batch: need one selection matrix or one per sample");
  auto transform = [&](int t) -> const TransformParams& {
    return transforms.size() == 1 ? transforms.front() : transforms.at(t);
  };
  const Mat WtY = prob.W.adjoint(prob.Y, 2 * M);
  Mat H = Mat::Zero(N, 2 * M * B);
  Mat Hp = H;
  if (tape) tape->layers.assign(cfg.T, LayerTape{});
  if (per_layer) per_layer->clear();

  for (int t = 0; t < cfg.T; ++t) {
    LayerTape* lt = tape ? &tape->layers[t] : nullptr;
    const TransformParams& tp = transform(t);

    Mat G = prob.W.normal(Hp, 2 * M) - WtY;
    Mat R = cfg.anchor == AnchorMode::as_written ? H : Hp;
    for (Eigen::Index b = 0; b < B; ++b) R.middleCols(b * 2 * M, 2 * M) -= scalars(4 * t + kRho, b) * G.middleCols(b * 2 * M, 2 * M);

    const Mat Of = detail::branch_forward(tp.freq, layout::stack_freq(R, N, M, B), scalars.row(4 * t + kTheta).transpose(),
                                          N, lt ? &lt->freq : nullptr);
    H = R + layout::unstack_freq(Of, N, M, B);

    Mat G2 = prob.W.normal(H, 2 * M) - WtY;
    Mat Rp = H;
    for (Eigen::Index b = 0; b < B; ++b) Rp.middleCols(b * 2 * M, 2 * M) -= scalars(4 * t + kRhoBeam, b) * G2.middleCols(b * 2 * M, 2 * M);

    const Mat Ob = detail::branch_forward(tp.beam, layout::stack_beam(Rp, N, M, B),
                                          scalars.row(4 * t + kThetaBeam).transpose(), M, lt ? &lt->beam : nullptr);
    Hp = Rp + layout::unstack_beam(Ob, N, M, B);

    if (!H.allFinite() || !Hp.allFinite())
      throw std::runtime_error("forward: non-finite activations in layer " + std::to_string(t + 1));
    if (lt) {
      lt->G = std::move(G);
      lt->G_beam = std::move(G2);
    }
    if (per_layer) per_layer->push_back(Hp);
  }
  return Hp;
}

/// Batched forward with LISTA's layer-shared scalars.
inline Mat forward_batch(const BatchProblem& prob, const ListaParams& params, const NetConfig& cfg,
                         ForwardTape* tape = nullptr, std::vector<Mat>* per_layer = nullptr) {
  return forward_batch(prob, broadcast_scalars(params.scalars, prob.B), params.transforms, cfg, tape, per_layer);
}

// Gradients of a batched forward pass.
struct BatchGradients {
  Mat scalars;  // 4T x B, gradient w.r.t. each sample's scalars
  std::vector<TransformParams> transforms;
};

namespace detail {

inline Mat relu_mask(const Mat& x) { return (x.array() > 0.0).cast<double>().matrix(); }

/// Reverse pass through one branch; accumulates weight gradients into `g`,
/// threshold gradients into `g_theta`, returns the gradient w.r.t. the branch input.
inline Mat branch_backward(const TransformBranch& f, const BranchTape& tp, const Mat& gO,
                           const Eigen::Ref<const Vec>& theta, Eigen::Index width, TransformBranch& g,
                           Eigen::Ref<Vec> g_theta) {
  const Eigen::Index B = theta.size();
  const Mat Qr = relu(tp.P);
  g.A_inv.noalias() += gO * Qr.transpose();
  const Mat gP = (f.A_inv.transpose() * gO).cwiseProduct(relu_mask(tp.P));

  Mat S = tp.Z;
  soft_blocks(S, theta, width);
  g.B_inv.noalias() += gP * S.transpose();
  const Mat gS = f.B_inv.transpose() * gP;

  Mat gZ(gS.rows(), gS.cols());
  for (Eigen::Index b = 0; b < B; ++b) {
    const double th = theta(b);
    double acc = 0.0;
    for (Eigen::Index j = b * width; j < (b + 1) * width; ++j) {
      for (Eigen::Index i = 0; i < gS.rows(); ++i) {
        const double z = tp.Z(i, j);
        if (std::abs(z) > th) {
          gZ(i, j) = gS(i, j);
          acc -= (z > 0.0 ? gS(i, j) : -gS(i, j));
        } else {
          gZ(i, j) = 0.0;
        }
      }
    }
    g_theta(b) += acc;
  }

  g.B.noalias() += gZ * relu(tp.U).transpose();
  const Mat gU = (f.B.transpose() * gZ).cwiseProduct(relu_mask(tp.U));
  g.A.noalias() += gU * tp.X.transpose();
  return f.A.transpose() * gU;
}

}  // namespace detail

/// Reverse pass over a recorded tape given dL/dH'^(T) (N x 2M B).
inline BatchGradients backward_batch(const BatchProblem& prob, const Mat& scalars,
                                     const std::vector<TransformParams>& transforms, const NetConfig& cfg,
                                     const ForwardTape& tape, const Mat& grad_out) {
  const Eigen::Index N = cfg.N, M = cfg.M, B = prob.B;
  if (static_cast<int>(tape.layers.size()) != cfg.T) throw std::invalid_argument("backward: tape does not match NetConfig");
  BatchGradients g;
  g.scalars = Mat::Zero(4 * cfg.T, B);
  for (const auto& tp : transforms)
    g.transforms.push_back({TransformBranch::zeros(static_cast<int>(tp.freq.A.cols()), cfg.w1, cfg.w2),
                            TransformBranch::zeros(static_cast<int>(tp.beam.A.cols()), cfg.w1, cfg.w2)});
  auto index = [&](int t) -> std::size_t { return transforms.size() == 1 ? 0 : static_cast<std::size_t>(t); };

  Mat gHp = grad_out;                   // dL/dH'^(t)
  Mat gH = Mat::Zero(N, 2 * M * B);     // dL/dH^(t) arriving through the next layer's anchor
  for (int t = cfg.T - 1; t >= 0; --t) {
    const LayerTape& lt = tape.layers[t];
    const TransformParams& tp = transforms[index(t)];
    TransformParams& gt = g.transforms[index(t)];

    // H' = R' + unstack(O_beam)
    Vec gtheta_b = Vec::Zero(B);
    Mat gRp = gHp + layout::unstack_beam(
                        detail::branch_backward(tp.beam, lt.beam, layout::stack_beam(gHp, N, M, B),
                                                scalars.row(4 * t + kThetaBeam).transpose(), M, gt.beam, gtheta_b),
                        N, M, B);
    g.scalars.row(4 * t + kThetaBeam) += gtheta_b.transpose();

    // R' = H - rho' G_beam
    const Mat WtW_gRp = prob.W.normal(gRp, 2 * M);
    Mat gHt = gRp + gH;
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto cols = Eigen::seqN(b * 2 * M, 2 * M);
      g.scalars(4 * t + kRhoBeam, b) -= gRp(Eigen::all, cols).cwiseProduct(lt.G_beam(Eigen::all, cols)).sum();
      gHt(Eigen::all, cols) -= scalars(4 * t + kRhoBeam, b) * WtW_gRp(Eigen::all, cols);
    }

    // H = R + unstack(O_freq)
    Vec gtheta_f = Vec::Zero(B);
    Mat gR = gHt + layout::unstack_freq(
                       detail::branch_backward(tp.freq, lt.freq, layout::stack_freq(gHt, N, M, B),
                                               scalars.row(4 * t + kTheta).transpose(), N, gt.freq, gtheta_f),
                       N, M, B);
    g.scalars.row(4 * t + kTheta) += gtheta_f.transpose();

    // R = anchor - rho G, G = W^T (W H'^(t-1) - Y)
    const Mat WtW_gR = prob.W.normal(gR, 2 * M);
    Mat gPrev = Mat::Zero(N, 2 * M * B);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto cols = Eigen::seqN(b * 2 * M, 2 * M);
      g.scalars(4 * t + kRho, b) -= gR(Eigen::all, cols).cwiseProduct(lt.G(Eigen::all, cols)).sum();
      gPrev(Eigen::all, cols) = -scalars(4 * t + kRho, b) * WtW_gR(Eigen::all, cols);
    }
    if (cfg.anchor == AnchorMode::as_written) {
      gH = gR;
    } else {
      gPrev += gR;
      gH.setZero();
    }
    gHp = std::move(gPrev);
  }
  return g;
}

}  // namespace lce
