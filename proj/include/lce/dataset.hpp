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

// Labelled channel datasets: generation and the in-memory record layout.

#include "channel.hpp"
#include "parallel.hpp"
#include "system.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lce {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct DatasetHeader {
  std::uint32_t version = 1;
  Dtype dtype = Dtype::f64;
  int N = 32;
  int M = 32;
  int Q = 2;
  int n_rf = 8;
  std::uint64_t count = 0;
  std::uint64_t base_seed = 0;
  double tau_max = 20e-9;
  bool L_per_sample = false;
  bool snr_per_sample = false;
};

struct Sample {
  int L = 0;
  double snr_db = 0.0;
  PathSet paths;
  Mat H;  // N x 2M beamspace real stacking
};

struct Dataset {
  DatasetHeader header;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }

  /// System dimensions of the records; carrier and bandwidth take their defaults.
  SystemConfig system() const {
    SystemConfig s;
    s.N = header.N;
    s.M = header.M;
    s.Q = header.Q;
    s.n_rf = header.n_rf;
    s.validate();
    return s;
  }
};

struct GenSpec {
  int count = 1;
  std::vector<int> L_set{3};  // one entry: fixed L
  std::optional<double> snr_db = 10.0;  // fixed SNR, or
  std::pair<double, double> snr_range{5.0, 15.0};  // uniform range when snr_db is empty
  double tau_max = 20e-9;
  std::uint64_t seed = 1;
  Dtype dtype = Dtype::f64;
};

inline double quantize(double v, Dtype dt) { return dt == Dtype::f32 ? static_cast<double>(static_cast<float>(v)) : v; }

/// Sample i is drawn from its own generator seeded with seed + i.
inline Sample generate_sample(const SystemConfig& sys, const LensTransform& lens, const GenSpec& spec, std::uint64_t i) {
  Rng rng(spec.seed + i);
  Sample s;
  if (spec.L_set.size() == 1) {
    s.L = spec.L_set.front();
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, spec.L_set.size() - 1);
    s.L = spec.L_set[pick(rng)];
  }
  if (spec.snr_db) {
    s.snr_db = *spec.snr_db;
  } else {
    std::uniform_real_distribution<double> u(spec.snr_range.first, spec.snr_range.second);
    s.snr_db = u(rng);
  }
  s.paths = sample_paths(rng, s.L, spec.tau_max);
  if (spec.dtype == Dtype::f32) {
    for (auto& a : s.paths.alpha) a = {quantize(a.real(), spec.dtype), quantize(a.imag(), spec.dtype)};
    for (auto& t : s.paths.tau) t = quantize(t, spec.dtype);
    for (auto& th : s.paths.theta) th = quantize(th, spec.dtype);
  }
  s.H = beamspace_real(s.paths, sys, lens).H;
  if (spec.dtype == Dtype::f32) s.H = s.H.unaryExpr([](double v) { return quantize(v, Dtype::f32); });
  return s;
}

inline Dataset generate_dataset(const SystemConfig& sys, const GenSpec& spec) {
  sys.validate();
  if (spec.count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  if (spec.L_set.empty()) throw std::invalid_argument("generate_dataset: empty L set");
  for (int L : spec.L_set)
    if (L < 1) throw std::invalid_argument("generate_dataset: L must be >= 1");
  if (!spec.snr_db && !(spec.snr_range.first <= spec.snr_range.second))
    throw std::invalid_argument("generate_dataset: invalid SNR range");
  Dataset ds;
  ds.header.dtype = spec.dtype;
  ds.header.N = sys.N;
  ds.header.M = sys.M;
  ds.header.Q = sys.Q;
  ds.header.n_rf = sys.n_rf;
  ds.header.count = static_cast<std::uint64_t>(spec.count);
  ds.header.base_seed = spec.seed;
  ds.header.tau_max = spec.tau_max;
  ds.header.L_per_sample = spec.L_set.size() > 1;
  ds.header.snr_per_sample = !spec.snr_db.has_value();
  ds.samples.resize(spec.count);
  const LensTransform lens = lens_transform(sys.N);
  parallel_for(ds.samples.size(), [&](std::size_t i) { ds.samples[i] = generate_sample(sys, lens, spec, i); });
  return ds;
}

}  // namespace lce
