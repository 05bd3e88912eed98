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

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

namespace lce {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299792458.0;

/// Seeded generator used everywhere randomness is consumed.
using Rng = std::mt19937_64;

/// splitmix64 finalizer; decorrelates derived seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for the `index`-th item of an independent `stream` under `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  return mix64(mix64(base ^ mix64(stream)) + index);
}

/// Draw from the circularly-symmetric complex Gaussian with E|z|^2 = variance.
inline cplx complex_normal(Rng& rng, double variance = 1.0) {
  std::normal_distribution<double> g(0.0, std::sqrt(variance / 2.0));
  const double re = g(rng);
  const double im = g(rng);
  return {re, im};
}

// Physical and dimensional constants of one lens-array MIMO-OFDM link.
struct SystemConfig {
  int N = 32;      // antennas
  int n_rf = 8;    // RF chains
  int M = 32;      // subcarriers
  int Q = 2;       // pilot instants
  double fc = 28e9;
  double fb = 4e9;
  double c = kSpeedOfLight;
  double d = 0.5 * kSpeedOfLight / 28e9;

  SystemConfig() = default;

  /// Builds a config with half-wavelength spacing unless `spacing` is given.
  SystemConfig(int antennas, int rf_chains, int subcarriers, int instants, double carrier_hz,
               double bandwidth_hz, std::optional<double> spacing = std::nullopt)
      : N(antennas), n_rf(rf_chains), M(subcarriers), Q(instants), fc(carrier_hz),
        fb(bandwidth_hz), d(spacing.value_or(0.5 * kSpeedOfLight / carrier_hz)) {
    validate();
  }

  int measurements() const { return Q * n_rf; }

  void validate() const {
    if (N < 1 || n_rf < 1 || M < 1 || Q < 1)
      throw std::invalid_argument("SystemConfig: all dimensions must be >= 1");
    if (n_rf > N)
      throw std::invalid_argument("SystemConfig: N_RF must not exceed N");
    if (!(fc > 0.0) || !(fb >= 0.0) || !(fb < 2.0 * fc))
      throw std::invalid_argument("SystemConfig: require fc > 0 and 0 <= fb < 2 fc");
    if (!(d > 0.0))
      throw std::invalid_argument("SystemConfig: antenna spacing must be positive");
  }
};

}  // namespace lce
