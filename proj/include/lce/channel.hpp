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

// Wideband beamspace channel simulation with beam squint.

#include "system.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace lce {

enum class Domain { spatial, beamspace };

// One channel realization: L paths with complex gains, delays (s) and directions (rad).
struct PathSet {
  std::vector<cplx> alpha;
  std::vector<double> tau;
  std::vector<double> theta;

  int L() const { return static_cast<int>(alpha.size()); }
};

// N x M complex channel, one column per subcarrier.
struct ComplexChannel {
  CMat entries;
  Domain domain = Domain::spatial;
};

// Unitary N x N DFT matrix modelling the lens.
struct LensTransform {
  CMat F;
};

// Real stacking [Re | Im] of a beamspace channel, N x 2M.
struct RealChannelMatrix {
  Mat H;
};

/// Frequency of the 1-based subcarrier m.
inline double subcarrier_freq(int m, const SystemConfig& cfg) {
  if (m < 1 || m > cfg.M)
    throw std::out_of_range("subcarrier index " + std::to_string(m) + " outside [1, " +
                            std::to_string(cfg.M) + "]");
  return cfg.fc + (cfg.fb / cfg.M) * (m - 1 - (cfg.M - 1) / 2.0);
}

/// Spatial direction of a path with physical angle theta at subcarrier m.
inline double spatial_direction(double theta, int m, const SystemConfig& cfg) {
  if (!(std::abs(theta) <= kPi / 2))
    throw std::invalid_argument("spatial_direction: |theta| must not exceed pi/2");
  return subcarrier_freq(m, cfg) / cfg.c * cfg.d * std::sin(theta);
}

/// Centered antenna index p for the 1-based element n of an N-element array.
inline double antenna_index(int n, int N) { return -(N - 1) / 2.0 + (n - 1); }

/// ULA response e^{-j 2 pi phi p} over the centered antenna indices.
inline CVec array_response(double phi, int N) {
  if (N < 1) throw std::invalid_argument("array_response: N must be >= 1");
  CVec a(N);
  for (int n = 1; n <= N; ++n)
    a(n - 1) = std::polar(1.0, -2.0 * kPi * phi * antenna_index(n, N));
  return a;
}

/// Beam direction of the 1-based grid point n.
inline double beam_grid_direction(int n, int N) { return (n - (N + 1) / 2.0) / N; }

inline PathSet sample_paths(Rng& rng, int L, double tau_max) {
  if (L < 1) throw std::invalid_argument("sample_paths: L must be >= 1");
  if (!(tau_max > 0.0)) throw std::invalid_argument("sample_paths: tau_max must be > 0");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PathSet p;
  p.theta.resize(L);
  p.tau.resize(L);
  p.alpha.resize(L);
  // pi/2 - pi*u with u in [0,1) lands in (-pi/2, pi/2].
  for (auto& th : p.theta) th = kPi / 2 - kPi * unit(rng);
  for (auto& t : p.tau) t = tau_max * unit(rng);
  for (auto& a : p.alpha) a = complex_normal(rng, 1.0);
  return p;
}

inline ComplexChannel spatial_channel(const PathSet& paths, const SystemConfig& cfg) {
  const int L = paths.L();
  if (L < 1 || static_cast<int>(paths.tau.size()) != L || static_cast<int>(paths.theta.size()) != L)
    throw std::invalid_argument("spatial_channel: inconsistent PathSet");
  const double scale = std::sqrt(1.0 / L);
  ComplexChannel h{CMat::Zero(cfg.N, cfg.M), Domain::spatial};
  for (int m = 1; m <= cfg.M; ++m) {
    const double fm = subcarrier_freq(m, cfg);
    for (int l = 0; l < L; ++l) {
      const cplx gain = scale * paths.alpha[l] * std::polar(1.0, -2.0 * kPi * paths.tau[l] * fm);
      h.entries.col(m - 1) += gain * array_response(spatial_direction(paths.theta[l], m, cfg), cfg.N);
    }
  }
  return h;
}

inline LensTransform lens_transform(int N) {
  if (N < 1) throw std::invalid_argument("lens_transform: N must be >= 1");
  LensTransform t{CMat(N, N)};
  const double s = 1.0 / std::sqrt(static_cast<double>(N));
  for (int n = 1; n <= N; ++n) t.F.col(n - 1) = s * array_response(beam_grid_direction(n, N), N);
  return t;
}

inline ComplexChannel beamspace_channel(const ComplexChannel& spatial, const LensTransform& lens) {
  if (spatial.domain != Domain::spatial)
    throw std::invalid_argument("beamspace_channel: input must be a spatial channel");
  if (lens.F.rows() != spatial.entries.rows())
    throw std::invalid_argument("beamspace_channel: lens size does not match antenna count");
  return {lens.F.adjoint() * spatial.entries, Domain::beamspace};
}

/// Dirichlet kernel sin(N pi x) / sin(pi x), with its limit at integer x.
inline double dirichlet(double x, int N) {
  const double den = std::sin(kPi * x);
  if (std::abs(den) < 1e-12) {
    const long k = std::lround(x);
    return ((k * static_cast<long>(N - 1)) % 2 == 0) ? N : -N;
  }
  return std::sin(N * kPi * x) / den;
}

/// Closed form of F^H a(phi) for the unitary lens.
inline CVec beam_component(double phi, int N) {
  if (N < 1) throw std::invalid_argument("beam_component: N must be >= 1");
  CVec c(N);
  const double s = 1.0 / std::sqrt(static_cast<double>(N));
  for (int n = 1; n <= N; ++n) c(n - 1) = s * dirichlet(phi - beam_grid_direction(n, N), N);
  return c;
}

inline RealChannelMatrix to_real_matrix(const ComplexChannel& ch) {
  if (ch.domain != Domain::beamspace)
    throw std::invalid_argument("to_real_matrix: expects a beamspace channel");
  const auto M = ch.entries.cols();
  RealChannelMatrix r{Mat(ch.entries.rows(), 2 * M)};
  r.H.leftCols(M) = ch.entries.real();
  r.H.rightCols(M) = ch.entries.imag();
  return r;
}

inline ComplexChannel from_real_matrix(const RealChannelMatrix& r) {
  if (r.H.cols() % 2 != 0) throw std::invalid_argument("from_real_matrix: odd column count");
  const auto M = r.H.cols() / 2;
  ComplexChannel ch{CMat(r.H.rows(), M), Domain::beamspace};
  ch.entries.real() = r.H.leftCols(M);
  ch.entries.imag() = r.H.rightCols(M);
  return ch;
}

/// Beamspace real channel of one path realization.
inline RealChannelMatrix beamspace_real(const PathSet& paths, const SystemConfig& cfg,
                                        const LensTransform& lens) {
  return to_real_matrix(beamspace_channel(spatial_channel(paths, cfg), lens));
}

}  // namespace lce
