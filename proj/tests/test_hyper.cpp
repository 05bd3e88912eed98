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

#include <catch2/catch_amalgamated.hpp>

#include "lce/hyper.hpp"

#include <cmath>

using namespace lce;
using Catch::Approx;

namespace {

Mat gaussian(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat m(r, c);
  for (auto& v : m.reshaped()) v = g(rng);
  return m;
}

const SystemConfig kSmall(8, 2, 8, 2, 28e9, 4e9);

NetConfig small_net(int T = 2) {
  NetConfig c;
  c.T = T;
  c.w1 = 8;
  c.w2 = 12;
  c.N = 8;
  c.M = 8;
  return c;
}

HyperParams random_hyper(Rng& rng, int d, int T, double scale = 0.5) {
  HyperParams hp;
  hp.W1 = gaussian(rng, d, 2, scale);
  hp.b1 = gaussian(rng, d, 1, scale);
  hp.W2 = gaussian(rng, d, d, scale);
  hp.W3 = gaussian(rng, 4 * T, d, scale);
  return hp;
}

// Dense-loop evaluation of the hypernetwork on one condition.
Vec oracle_hyper(const ConditionVector& s, const HyperParams& hp) {
  const double in[2] = {s.normalized(0), s.normalized(1)};
  const Eigen::Index d = hp.W1.rows();
  std::vector<double> h1(d), h2(d);
  for (Eigen::Index i = 0; i < d; ++i) h1[i] = std::max(0.0, hp.W1(i, 0) * in[0] + hp.W1(i, 1) * in[1] + hp.b1(i, 0));
  for (Eigen::Index i = 0; i < d; ++i) {
    double a = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) a += hp.W2(i, k) * h1[k];
    h2[i] = std::max(0.0, a);
  }
  Vec out(hp.W3.rows());
  for (Eigen::Index r = 0; r < hp.W3.rows(); ++r) {
    double a = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) a += hp.W3(r, k) * h2[k];
    out(r) = (r % 4 >= 2) ? std::log(1.0 + std::exp(a)) : a;
  }
  return out;
}

Dataset mixed_dataset(int count, std::uint64_t seed) {
  GenSpec g;
  g.count = count;
  g.seed = seed;
  g.L_set = {2, 3, 4};
  g.snr_db.reset();
  g.snr_range = {5.0, 15.0};
  return generate_dataset(kSmall, g);
}

}  // namespace

TEST_CASE("condition normalization") {
  const ConditionBounds b;
  const ConditionVector lo = make_condition(2, 5.0, b);
  CHECK(lo.normalized(0) == 0.0);
  CHECK(lo.normalized(1) == 0.0);
  const ConditionVector hi = make_condition(4, 15.0, b);
  CHECK(hi.normalized(0) == 1.0);
  CHECK(hi.normalized(1) == 1.0);
  const ConditionVector mid = make_condition(3, 7.5, b);
  CHECK(mid.normalized(0) == Approx(0.5));
  CHECK(mid.normalized(1) == Approx(0.25));
  CHECK(make_condition(5, 20.0, b).normalized(0) == Approx(1.5));
  const ConditionBounds fixed = bounds_of({3}, 10.0, 10.0);
  CHECK(make_condition(3, 10.0, fixed).normalized.isZero(0.0));
  CHECK(bounds_of({4, 2, 3}, 5, 15).L_min == 2.0);
  CHECK(bounds_of({4, 2, 3}, 5, 15).L_max == 4.0);
}

TEST_CASE("softplus helpers") {
  CHECK(softplus(0.0) == Approx(std::log(2.0)));
  CHECK(softplus(50.0) == Approx(50.0));
  CHECK(softplus(-50.0) > 0.0);
  for (double y : {1e-6, 0.01, 0.5, 3.0, 40.0}) CHECK(softplus(softplus_inverse(y)) == Approx(y).epsilon(1e-10));
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("hypernetwork forward") {
  HyperParams zero;
  zero.W1 = Mat::Zero(16, 2);
  zero.b1 = Mat::Zero(16, 1);
  zero.W2 = Mat::Zero(16, 16);
  zero.W3 = Mat::Zero(4 * 7, 16);
  const Vec z = hyper_forward(make_condition(3, 10, ConditionBounds{}), zero);
  REQUIRE(z.size() == 28);
  for (Eigen::Index r = 0; r < 28; ++r) CHECK(z(r) == (r % 4 >= 2 ? Approx(std::log(2.0)) : Approx(0.0)));

  Rng rng(1);
  for (int d : {1, 5, 64}) CHECK(hyper_forward(make_condition(2, 7, ConditionBounds{}), random_hyper(rng, d, 3)).size() == 12);

  std::uniform_real_distribution<double> uL(1, 5), uS(0, 20);
  for (int i = 0; i < 50; ++i) {
    const HyperParams hp = random_hyper(rng, 24, 4);
    const ConditionVector s = make_condition(uL(rng), uS(rng), ConditionBounds{});
    CHECK((hyper_forward(s, hp) - oracle_hyper(s, hp)).cwiseAbs().maxCoeff() < 1e-12);
  }
  const HyperParams hp = random_hyper(rng, 8, 2);
  CHECK(hyper_param_count(hp) == 8 * 2 + 8 + 64 + 8 * 8);
}

TEST_CASE("emitted thresholds are positive and feed the layers in order") {
  Rng rng(20);
  const HyperParams hp = random_hyper(rng, 16, 3, 3.0);
  std::uniform_real_distribution<double> uL(0, 8), uS(-10, 40);
  for (int i = 0; i < 200; ++i) {
    const Vec out = hyper_forward(make_condition(uL(rng), uS(rng), ConditionBounds{}), hp);
    for (Eigen::Index r = 0; r < out.size(); ++r)
      if (is_threshold_row(r)) CHECK(out(r) > 0.0);
  }

  const NetConfig cfg = small_net(3);
  NetConfig per_layer = cfg;
  per_layer.share_transforms = false;
  ListaParams p = init_params(rng, per_layer, {0.3, 0.05, false});
  const ConditionVector c = make_condition(3, 9.0, ConditionBounds{});
  const HyperParams small = random_hyper(rng, 16, 3, 0.2);
  const Vec s = hyper_forward(c, small);
  for (int t = 0; t < 3; ++t) p.set_layer(t, {s(4 * t), s(4 * t + 1), s(4 * t + 2), s(4 * t + 3)});
  BatchProblem prob;
  prob.B = 1;
  const SelectionMatrix W = gen_selection(rng, kSmall);
  prob.W = SelectionSet({W.W});
  prob.Y = W.W * gaussian(rng, 8, 16);
  const Mat via_hyper = forward_batch(prob, hyper_forward_batch({c}, small).scalars, p.transforms, per_layer);
  CHECK(via_hyper == forward_batch(prob, p, per_layer));
}

TEST_CASE("hypernetwork gradients match finite differences through the frozen network") {
  const NetConfig cfg = small_net(2);
  Rng rng(2);
  const ListaParams base = init_params(rng, cfg, {0.3, 0.05, false});
  HyperParams hp = init_hyper(rng, base, 10, ConditionBounds{}, condition_grid({2, 3, 4}, ConditionBounds{}, 3));
  hp.W3 += gaussian(rng, hp.W3.rows(), hp.W3.cols(), 0.01);

  const int B = 3;
  BatchProblem prob;
  prob.B = B;
  const Mat H = gaussian(rng, 8, 16 * B);
  prob.Y.resize(4, 16 * B);
  std::vector<Mat> Ws;
  for (int b = 0; b < B; ++b) {
    const SelectionMatrix W = gen_selection(rng, kSmall);
    prob.Y.middleCols(16 * b, 16) = W.W * H.middleCols(16 * b, 16) + combined_noise(W, 8, 0.05, rng);
    Ws.push_back(W.W);
  }
  prob.W = SelectionSet(Ws);
  const std::vector<ConditionVector> conds{make_condition(2, 6.0, hp.bounds), make_condition(3, 11.0, hp.bounds),
                                           make_condition(4, 14.0, hp.bounds)};
  auto objective = [&](const HyperParams& h) {
    const HyperActivations act = hyper_forward_batch(conds, h);
    return loss(forward_batch(prob, act.scalars, base.transforms, cfg), H, B, LossKind::nmse_mean).value;
  };
  const HyperActivations act = hyper_forward_batch(conds, hp);
  ForwardTape tape;
  const Mat H_hat = forward_batch(prob, act.scalars, base.transforms, cfg, &tape);
  const LossValue lv = loss(H_hat, H, B, LossKind::nmse_mean);
  const HyperParams g = hyper_backward(act, hp, backward_batch(prob, act.scalars, base.transforms, cfg, tape, lv.grad).scalars);

  std::vector<Mat*> p{&hp.W1, &hp.b1, &hp.W2, &hp.W3};
  std::vector<const Mat*> gp{&g.W1, &g.b1, &g.W2, &g.W3};
  std::uniform_int_distribution<int> pick_t(0, 3);
  const double h = 1e-6;
  const double f0 = objective(hp);
  double max_rel = 0.0;
  int checked = 0;
  for (int probe = 0; probe < 200; ++probe) {
    const int t = pick_t(rng);
    std::uniform_int_distribution<Eigen::Index> pick_i(0, p[t]->size() - 1);
    const Eigen::Index i = pick_i(rng);
    double& x = p[t]->data()[i];
    const double x0 = x;
    x = x0 + h;
    const double fp = objective(hp);
    x = x0 - h;
    const double fm = objective(hp);
    x = x0;
    const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
    if (std::abs(fwd - bwd) > 1e-3 * std::max({std::abs(fwd), std::abs(bwd), 1e-3})) continue;
    const double fd = (fp - fm) / (2 * h);
    const double an = gp[t]->data()[i];
    max_rel = std::max(max_rel, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    ++checked;
  }
  CHECK(checked >= 180);
  CHECK(max_rel < 1e-4);
}

TEST_CASE("initialization reproduces the average model's scalars") {
  const NetConfig cfg = small_net(3);
  Rng rng(3);
  ListaParams aver = init_params(rng, cfg);
  for (int t = 0; t < 3; ++t) aver.set_layer(t, {0.1 + 0.1 * t, 0.2, 0.01 * (t + 1), 0.03});
  const ConditionBounds b;
  const auto grid = condition_grid({2, 3, 4}, b, 11);
  CHECK(grid.size() == 33);
  const HyperParams hp = init_hyper(rng, aver, 64, b, grid);
  double worst = 0.0;
  for (const auto& s : grid) {
    const Vec out = hyper_forward(s, hp);
    for (int t = 0; t < 3; ++t)
      for (int k = 0; k < 4; ++k) worst = std::max(worst, std::abs(out(4 * t + k) - aver.scalars(t, k)));
  }
  CHECK(worst < 1e-8);
  CHECK_THROWS(init_hyper(rng, aver, 0, b, grid));
  CHECK_THROWS(init_hyper(rng, aver, 4, b, {}));
}

TEST_CASE("hyper training with no epochs leaves the initialization in place") {
  const NetConfig cfg = small_net(2);
  const Dataset train_ds = mixed_dataset(16, 10);
  const Dataset val_ds = mixed_dataset(8, 11);
  Rng rng(4);
  const ListaParams aver = init_params(rng, cfg, training_init(kSmall));
  TrainConfig tc;
  tc.max_epochs = 0;
  tc.lr = 1e-5;
  HyperConfig hc;
  hc.d = 16;
  const HyperTrainResult r = train_hyper(aver, train_ds, val_ds, kSmall, cfg, tc, hc);
  CHECK(r.model.hyper.W1 == r.initial.W1);
  CHECK(r.model.hyper.b1 == r.initial.b1);
  CHECK(r.model.hyper.W2 == r.initial.W2);
  CHECK(r.model.hyper.W3 == r.initial.W3);
  REQUIRE(r.log.size() == 1);

  // Same NMSE as running the network with the scalars the initialization emits.
  const ScalarProvider emitted = [&](const Dataset& d, std::span<const std::size_t> idx) {
    Mat S(4 * cfg.T, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t b = 0; b < idx.size(); ++b)
      S.col(b) = hyper_forward(make_condition(d.samples[idx[b]].L, d.samples[idx[b]].snr_db, hc.bounds), r.initial);
    return S;
  };
  const EvalResult direct = evaluate_with(emitted, aver.transforms, val_ds, kSmall, cfg, 77, false);
  CHECK(evaluate_hyper(r.model, val_ds, kSmall, cfg, 77).nmse_db == Approx(direct.nmse_db).epsilon(1e-12));
  CHECK(r.best_val_nmse_db == Approx(evaluate_hyper(r.model, val_ds, kSmall, cfg, validation_seed(tc.seed)).nmse_db));
}

TEST_CASE("hyper training only moves the hypernetwork and is deterministic") {
  const NetConfig cfg = small_net(2);
  const Dataset train_ds = mixed_dataset(32, 12);
  const Dataset val_ds = mixed_dataset(8, 13);
  Rng rng(5);
  const ListaParams aver = init_params(rng, cfg, training_init(kSmall));
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  HyperConfig hc;
  hc.d = 16;
  const HyperTrainResult a = train_hyper(aver, train_ds, val_ds, kSmall, cfg, tc, hc);
  const HyperTrainResult b = train_hyper(aver, train_ds, val_ds, kSmall, cfg, tc, hc);
  CHECK(a.log.size() == 4);
  CHECK(a.model.hyper.W3 == b.model.hyper.W3);
  CHECK(a.model.base.transforms[0].freq.A == aver.transforms[0].freq.A);
  CHECK(a.model.base.scalars == aver.scalars);
  double best = a.log.front().val_nmse_db;
  for (const auto& row : a.log) best = std::min(best, row.val_nmse_db);
  CHECK(a.best_val_nmse_db == best);
}

TEST_CASE("average model over a single condition is plain training") {
  const NetConfig cfg = small_net(1);
  GenSpec g;
  g.count = 16;
  g.seed = 14;
  g.L_set = {3};
  g.snr_db = 10.0;
  const Dataset ds = generate_dataset(kSmall, g);
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.batch_size = 8;
  tc.lr = 1e-3;
  const TrainResult a = train_aver(ds, ds, kSmall, cfg, tc);
  const TrainResult b = train(ds, ds, kSmall, cfg, tc);
  CHECK(a.params.scalars == b.params.scalars);
  CHECK(a.params.transforms[0].beam.B == b.params.transforms[0].beam.B);
}

TEST_CASE("condition estimation") {
  const ConditionBounds b;
  Rng rng(6);
  const SystemConfig sys;
  const LensTransform lens = lens_transform(sys.N);
  const PathSet one = sample_paths(rng, 1, 20e-9);
  const Observation obs = observe(beamspace_real(one, sys, lens), gen_selection(rng, sys), NoiseSpec{0.0, 12.0}, rng, 1);
  const ConditionVector meta = estimate_condition(obs, b);
  CHECK(meta.L == 1);
  CHECK(meta.snr_db == 12.0);
  const ConditionVector est = estimate_condition(obs, b, ConditionSource::omp);
  CHECK(est.L >= 1);
  CHECK(est.snr_db == 12.0);
  Observation zero = obs;
  zero.Y.setZero();
  CHECK(estimate_condition(zero, b, ConditionSource::omp).L == 1);
}
