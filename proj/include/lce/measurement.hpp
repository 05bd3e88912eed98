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

// Pilot observations through the one-bit selection network, and NMSE.

#include "channel.hpp"
#include "system.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace lce {

// Stacked combiner [W_1; ...; W_Q], entries +-1/sqrt(Q N_RF).
struct SelectionMatrix {
  Mat W;
  int Q = 1;
  int n_rf = 1;

  auto block(int q) const { return W.middleRows(static_cast<Eigen::Index>(q) * n_rf, n_rf); }
};

struct NoiseSpec {
  double sigma2 = 1.0;  // per-antenna complex noise power
  double snr_db = 0.0;
};

struct Observation {
  Mat Y;  // Q N_RF x 2M
  SelectionMatrix W;
  double snr_db = 0.0;
  int L = 0;
};

inline SelectionMatrix gen_selection(Rng& rng, const SystemConfig& cfg) {
  const int rows = cfg.measurements();
  const double v = 1.0 / std::sqrt(static_cast<double>(rows));
  std::bernoulli_distribution coin(0.5);
  SelectionMatrix s{Mat(rows, cfg.N), cfg.Q, cfg.n_rf};
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cfg.N; ++j) s.W(i, j) = coin(rng) ? v : -v;
  return s;
}

/// Per-antenna pre-combining SNR in dB -> complex noise variance.
inline NoiseSpec snr_to_sigma(double snr_db) {
  if (!std::isfinite(snr_db)) throw std::invalid_argument("snr_to_sigma: SNR must be finite");
  return {std::pow(10.0, -snr_db / 10.0), snr_db};
}

/// Equivalent noise W_q n_{m,q} in real stacking: Q N_RF x 2M.
inline Mat combined_noise(const SelectionMatrix& W, int M, double sigma2, Rng& rng) {
  const auto N = W.W.cols();
  Mat out = Mat::Zero(W.W.rows(), 2 * M);
  if (sigma2 == 0.0) return out;
  std::vector<Mat> raw(W.Q, Mat(N, 2 * M));
  for (int m = 0; m < M; ++m) {
    for (int q = 0; q < W.Q; ++q) {
      for (Eigen::Index n = 0; n < N; ++n) {
        const cplx z = complex_normal(rng, sigma2);
        raw[q](n, m) = z.real();
        raw[q](n, M + m) = z.imag();
      }
    }
  }
  for (int q = 0; q < W.Q; ++q)
    out.middleRows(static_cast<Eigen::Index>(q) * W.n_rf, W.n_rf).noalias() = W.block(q) * raw[q];
  return out;
}

/// Observation of a real-stacked beamspace channel H (N x 2M).
inline Observation observe(const RealChannelMatrix& H, const SelectionMatrix& W, const NoiseSpec& noise,
                           Rng& rng, int L = 0) {
  if (W.W.cols() != H.H.rows() || H.H.cols() % 2 != 0)
    throw std::invalid_argument("observe: selection matrix and channel dimensions differ");
  if (W.W.rows() != static_cast<Eigen::Index>(W.Q) * W.n_rf)
    throw std::invalid_argument("observe: selection matrix rows must equal Q * N_RF");
  const int M = static_cast<int>(H.H.cols() / 2);
  Observation o{W.W * H.H, W, noise.snr_db, L};
  if (noise.sigma2 != 0.0) o.Y += combined_noise(W, M, noise.sigma2, rng);
  return o;
}

inline Observation observe(const ComplexChannel& Hc, const SelectionMatrix& W, const NoiseSpec& noise,
                           Rng& rng, int L = 0) {
  return observe(to_real_matrix(Hc), W, noise, rng, L);
}

/// ||H_hat - H||^2 / ||H||^2 for one sample.
inline double nmse(const Mat& H_hat, const Mat& H) {
  if (H_hat.rows() != H.rows() || H_hat.cols() != H.cols())
    throw std::invalid_argument("nmse: shape mismatch");
  const double den = H.squaredNorm();
  if (!(den > 0.0)) throw std::domain_error("nmse: reference channel has zero norm");
  return (H_hat - H).squaredNorm() / den;
}

inline double nmse(const RealChannelMatrix& H_hat, const RealChannelMatrix& H) { return nmse(H_hat.H, H.H); }

/// dB value of a (mean) NMSE; exact recovery maps to -infinity.
inline double to_db(double ratio) {
  if (ratio == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(ratio);
}

// Running mean of per-sample NMSE ratios.
class NmseAccumulator {
 public:
  void add(double ratio) {
    sum_ += ratio;
    ++count_;
  }
  void add(const Mat& H_hat, const Mat& H) { add(nmse(H_hat, H)); }
  long count() const { return count_; }
  double mean() const { return count_ ? sum_ / count_ : std::numeric_limits<double>::quiet_NaN(); }
  double mean_db() const { return to_db(mean()); }

 private:
  double sum_ = 0.0;
  long count_ = 0;
};

}  // namespace lce
