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

// Baseline estimators: ISTA with a fixed sparsifying transform, and OMP.

#include "measurement.hpp"
#include "system.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

namespace lce {

inline double soft_threshold(double x, double theta) {
  const double mag = std::abs(x) - theta;
  if (mag <= 0.0) return 0.0;
  return x > 0.0 ? mag : -mag;
}

template <typename Derived>
Mat soft_threshold(const Eigen::MatrixBase<Derived>& x, double theta) {
  if (theta < 0.0) throw std::invalid_argument("soft_threshold: theta must be >= 0");
  return x.unaryExpr([theta](double v) { return soft_threshold(v, theta); });
}

enum class SparseBasis { identity, frequency_dft };

struct IstaConfig {
  double rho = 0.1;
  double lambda = 1e-3;
  int iters = 200;
  SparseBasis transform = SparseBasis::frequency_dft;

  void validate() const {
    if (!(rho > 0.0) || !(lambda >= 0.0) || iters < 1)
      throw std::invalid_argument("IstaConfig: need rho > 0, lambda >= 0, iters >= 1");
  }
};

/// Unitary DFT across the M frequency bins (frequency -> delay).
inline CMat delay_dft(int M) {
  CMat D(M, M);
  const double s = 1.0 / std::sqrt(static_cast<double>(M));
  for (int m = 0; m < M; ++m)
    for (int k = 0; k < M; ++k) D(m, k) = s * std::polar(1.0, -2.0 * kPi * m * k / M);
  return D;
}

// Orthonormal map on N x 2M real stackings, built from a unitary M x M matrix
// acting on the complex rows.
class FrequencyTransform {
 public:
  FrequencyTransform(SparseBasis basis, int M) : basis_(basis), M_(M) {
    if (basis_ == SparseBasis::frequency_dft) D_ = delay_dft(M);
  }

  Mat forward(const Mat& H) const { return apply(H, false); }
  Mat inverse(const Mat& H) const { return apply(H, true); }

 private:
  Mat apply(const Mat& H, bool adjoint) const {
    if (basis_ == SparseBasis::identity) return H;
    CMat c(H.rows(), M_);
    c.real() = H.leftCols(M_);
    c.imag() = H.rightCols(M_);
    const CMat t = adjoint ? CMat(c * D_.adjoint()) : CMat(c * D_);
    Mat out(H.rows(), 2 * M_);
    out.leftCols(M_) = t.real();
    out.rightCols(M_) = t.imag();
    return out;
  }

  SparseBasis basis_;
  int M_;
  CMat D_;
};

/// 0.5 ||W H - Y||^2 + lambda ||Psi H||_1, l1 taken over the real stacking.
inline double ista_objective(const Mat& H, const Observation& obs, const IstaConfig& cfg) {
  const FrequencyTransform psi(cfg.transform, static_cast<int>(H.cols() / 2));
  return 0.5 * (obs.W.W * H - obs.Y).squaredNorm() + cfg.lambda * psi.forward(H).lpNorm<1>();
}

/// ISTA from H = 0. `on_iter(t, H)` is called after every iteration when given.
template <typename Callback>
Mat ista_estimate(const Observation& obs, const IstaConfig& cfg, Callback&& on_iter) {
  cfg.validate();
  const Mat& W = obs.W.W;
  const int M = static_cast<int>(obs.Y.cols() / 2);
  const FrequencyTransform psi(cfg.transform, M);
  const Mat WtW = W.transpose() * W;
  const Mat WtY = W.transpose() * obs.Y;
  Mat H = Mat::Zero(W.cols(), obs.Y.cols());
  for (int t = 1; t <= cfg.iters; ++t) {
    const Mat R = H - cfg.rho * (WtW * H - WtY);
    H = psi.inverse(soft_threshold(psi.forward(R), cfg.rho * cfg.lambda));
    on_iter(t, H);
    if (!H.allFinite()) break;
  }
  return H;
}

inline Mat ista_estimate(const Observation& obs, const IstaConfig& cfg) {
  return ista_estimate(obs, cfg, [](int, const Mat&) {});
}

/// Step-size grid 0.1, 0.2, ..., 1.0.
inline std::vector<double> default_rho_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(0.1 * i);
  return g;
}

/// Log-spaced lambda grid from 1e-4 to 1e-1, `per_decade` points per decade.
inline std::vector<double> default_lambda_grid(int per_decade = 2) {
  std::vector<double> g;
  for (int i = 0; i <= 3 * per_decade; ++i) g.push_back(std::pow(10.0, -4.0 + static_cast<double>(i) / per_decade));
  return g;
}

/// Tuned scalars of ISTA: the step size and the regularization weight.
inline constexpr int ista_param_count() { return 2; }

struct IstaTuning {
  IstaConfig best;
  double nmse = std::numeric_limits<double>::infinity();
};

/// Grid search over (rho, lambda) minimizing mean NMSE on labelled observations.
/// Divergent settings score +inf.
inline IstaTuning tune_ista(const std::vector<Observation>& obs, const std::vector<Mat>& truth,
                            IstaConfig base, const std::vector<double>& rhos = default_rho_grid(),
                            const std::vector<double>& lambdas = default_lambda_grid()) {
  if (obs.empty() || obs.size() != truth.size())
    throw std::invalid_argument("tune_ista: need matching, nonempty observation and truth sets");
  IstaTuning out;
  out.best = base;
  for (double rho : rhos) {
    for (double lambda : lambdas) {
      IstaConfig cfg = base;
      cfg.rho = rho;
      cfg.lambda = lambda;
      double sum = 0.0;
      for (std::size_t i = 0; i < obs.size(); ++i) {
        const Mat H = ista_estimate(obs[i], cfg);
        const double r = H.allFinite() ? nmse(H, truth[i]) : std::numeric_limits<double>::infinity();
        sum += r;
        if (!std::isfinite(sum)) break;
      }
      const double mean = sum / static_cast<double>(obs.size());
      if (mean < out.nmse) {
        out.nmse = mean;
        out.best = cfg;
      }
    }
  }
  return out;
}

struct OmpConfig {
  int K = 12;
  std::optional<double> residual_tol;
};

struct OmpTrace {
  CVec x;
  std::vector<int> support;
  std::vector<double> residual_norms;  // after each selected atom
};

/// Greedy recovery of y ~ D x with at most K atoms and a least-squares refit on
/// the support after every selection (minimum-norm when the support is rank deficient).
inline OmpTrace omp_solve(const CMat& D, const CVec& y, int K, std::optional<double> residual_tol = {}) {
  if (K < 0 || K > D.rows()) throw std::invalid_argument("omp_solve: need 0 <= K <= rows of the dictionary");
  OmpTrace tr;
  tr.x = CVec::Zero(D.cols());
  const Vec col_norm = D.colwise().norm().transpose();
  CVec r = y;
  const double floor = 1e-13 * std::max(1.0, y.norm());
  const double tol = residual_tol.value_or(0.0);
  std::vector<char> used(D.cols(), 0);
  CVec coef;
  while (static_cast<int>(tr.support.size()) < K) {
    const double rn = r.norm();
    if (rn <= floor || rn <= tol) break;
    const CVec corr = D.adjoint() * r;
    int best = -1;
    double best_val = -1.0;
    for (Eigen::Index j = 0; j < D.cols(); ++j) {
      if (used[j] || col_norm(j) == 0.0) continue;
      const double v = std::abs(corr(j)) / col_norm(j);
      if (v > best_val) {
        best_val = v;
        best = static_cast<int>(j);
      }
    }
    if (best < 0) break;
    used[best] = 1;
    tr.support.push_back(best);
    CMat sub(D.rows(), static_cast<Eigen::Index>(tr.support.size()));
    for (std::size_t k = 0; k < tr.support.size(); ++k) sub.col(k) = D.col(tr.support[k]);
    coef = sub.completeOrthogonalDecomposition().solve(y);
    r = y - sub * coef;
    tr.residual_norms.push_back(r.norm());
  }
  for (std::size_t k = 0; k < tr.support.size(); ++k) tr.x(tr.support[k]) = coef(k);
  return tr;
}

/// Per-subcarrier OMP over the real-stacked observation; returns N x 2M.
inline Mat omp_estimate(const Observation& obs, const OmpConfig& cfg) {
  const Mat& W = obs.W.W;
  if (cfg.K < 0 || cfg.K > W.rows()) throw std::invalid_argument("omp_estimate: need 0 <= K <= Q N_RF");
  const auto M = obs.Y.cols() / 2;
  const CMat D = W.cast<cplx>();
  Mat H = Mat::Zero(W.cols(), 2 * M);
  for (Eigen::Index m = 0; m < M; ++m) {
    CVec y(W.rows());
    y.real() = obs.Y.col(m);
    y.imag() = obs.Y.col(M + m);
    const OmpTrace tr = omp_solve(D, y, cfg.K, cfg.residual_tol);
    H.col(m) = tr.x.real();
    H.col(M + m) = tr.x.imag();
  }
  return H;
}

}  // namespace lce
