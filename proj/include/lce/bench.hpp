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

// Evaluation drivers shared by the command-line tool and the experiment checks.

#include "classical.hpp"
#include "hyper.hpp"
#include "parallel.hpp"
#include "train.hpp"

#include <functional>
#include <map>
#include <vector>

namespace lce {

using Estimator = std::function<Mat(const Observation&)>;

/// Mean NMSE of a per-observation estimator over `ds`; observations as in make_eval_observation.
inline EvalResult evaluate_estimator(const Estimator& est, const Dataset& ds, const SystemConfig& sys,
                                     std::uint64_t seed, std::optional<double> snr_override = {}) {
  if (ds.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  std::vector<double> ratios(ds.size());
  parallel_for(ds.size(), [&](std::size_t i) {
    const Observation obs = make_eval_observation(ds.samples[i], sys, seed, i, snr_override);
    ratios[i] = nmse(est(obs), ds.samples[i].H);
  });
  NmseAccumulator acc;
  for (double r : ratios) acc.add(r);
  return {acc.mean(), acc.mean_db(), {}, acc.count()};
}

inline Estimator ista_estimator(const IstaConfig& cfg) {
  return [cfg](const Observation& o) { return ista_estimate(o, cfg); };
}

inline Estimator omp_estimator(const OmpConfig& cfg) {
  return [cfg](const Observation& o) { return omp_estimate(o, cfg); };
}

inline Estimator zero_estimator() {
  return [](const Observation& o) { return Mat::Zero(o.W.W.cols(), o.Y.cols()).eval(); };
}

/// Grid-searches ISTA's (rho, lambda) on the first `count` samples of `val`.
inline IstaTuning tune_ista_on(const Dataset& val, const SystemConfig& sys, std::uint64_t seed, std::size_t count,
                               const IstaConfig& base = {}) {
  count = std::min(count, val.size());
  if (count == 0) throw std::invalid_argument("tune_ista_on: empty tuning set");
  std::vector<Observation> obs(count);
  std::vector<Mat> truth(count);
  for (std::size_t i = 0; i < count; ++i) {
    obs[i] = make_eval_observation(val.samples[i], sys, seed, i);
    truth[i] = val.samples[i].H;
  }
  const std::vector<double> rhos = default_rho_grid(), lambdas = default_lambda_grid();
  std::vector<double> scores(rhos.size() * lambdas.size());
  parallel_for(scores.size(), [&](std::size_t k) {
    scores[k] = tune_ista(obs, truth, base, {rhos[k / lambdas.size()]}, {lambdas[k % lambdas.size()]}).nmse;
  });
  IstaTuning best;
  best.best = base;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (scores[k] < best.nmse) {
      best.nmse = scores[k];
      best.best.rho = rhos[k / lambdas.size()];
      best.best.lambda = lambdas[k % lambdas.size()];
    }
  return best;
}

/// Samples of `ds` at the given indices, header updated.
inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.header = ds.header;
  for (std::size_t i : idx) out.samples.push_back(ds.samples.at(i));
  out.header.count = out.samples.size();
  return out;
}

/// Sample indices grouped by path count, in increasing L.
inline std::map<int, std::vector<std::size_t>> group_by_L(const Dataset& ds) {
  std::map<int, std::vector<std::size_t>> g;
  for (std::size_t i = 0; i < ds.size(); ++i) g[ds.samples[i].L].push_back(i);
  return g;
}

}  // namespace lce
