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

#include "lce/engine.hpp"
#include "lce/lista.hpp"

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

double max_abs(const Mat& a) { return a.cwiseAbs().maxCoeff(); }

NetConfig small_net(int T = 2, bool share = true, AnchorMode anchor = AnchorMode::as_written) {
  NetConfig c;
  c.T = T;
  c.w1 = 8;
  c.w2 = 12;
  c.N = 8;
  c.M = 8;
  c.share_transforms = share;
  c.anchor = anchor;
  return c;
}

// Elementwise oracles written with explicit loops.
Mat loop_relu(const Mat& x) {
  Mat y = x;
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = y.data()[i] > 0.0 ? y.data()[i] : 0.0;
  return y;
}

Mat loop_soft(const Mat& x, double th) {
  Mat y = x;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    y.data()[i] = v > th ? v - th : (v < -th ? v + th : 0.0);
  }
  return y;
}

Mat loop_product(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

Mat loop_transpose(const Mat& a) {
  Mat t(a.cols(), a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Mat oracle_forward_branch(const TransformBranch& f, const Mat& X) {
  return loop_product(f.B, loop_relu(loop_product(f.A, X)));
}

Mat oracle_inverse_branch(const TransformBranch& f, const Mat& Z) {
  return loop_product(f.A_inv, loop_relu(loop_product(f.B_inv, Z)));
}

Mat oracle_trans(const Mat& R) {
  const Eigen::Index N = R.rows(), M = R.cols() / 2;
  Mat X(M, 2 * N);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < N; ++n) {
      X(m, n) = R(n, m);
      X(m, N + n) = R(n, M + m);
    }
  return X;
}

Mat oracle_trans_inv(const Mat& X) {
  const Eigen::Index M = X.rows(), N = X.cols() / 2;
  Mat R(N, 2 * M);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < N; ++n) {
      R(n, m) = X(m, n);
      R(n, M + m) = X(m, N + n);
    }
  return R;
}

Mat oracle_denoise_freq(const Mat& R, const TransformBranch& f, double th) {
  const Mat Z = loop_soft(oracle_forward_branch(f, loop_transpose(R)), th);
  return R + loop_transpose(oracle_inverse_branch(f, Z));
}

Mat oracle_denoise_beam(const Mat& Rp, const TransformBranch& f, double th) {
  const Mat Z = loop_soft(oracle_forward_branch(f, loop_transpose(oracle_trans(Rp))), th);
  return Rp + oracle_trans_inv(loop_transpose(oracle_inverse_branch(f, Z)));
}

Mat oracle_gradient(const Mat& anchor, const Mat& arg, const Mat& Y, const Mat& W, double rho) {
  return anchor - rho * loop_product(loop_transpose(W), loop_product(W, arg) - Y);
}

Mat oracle_forward(const Observation& obs, const ListaParams& p, const NetConfig& cfg, std::vector<Mat>* per_layer) {
  Mat H = Mat::Zero(cfg.N, 2 * cfg.M), Hp = H;
  for (int t = 0; t < cfg.T; ++t) {
    const LayerScalars s = p.layer(t);
    const TransformParams& tp = p.transform(t);
    const Mat R = oracle_gradient(cfg.anchor == AnchorMode::as_written ? H : Hp, Hp, obs.Y, obs.W.W, s.rho);
    H = oracle_denoise_freq(R, tp.freq, s.theta);
    Hp = oracle_denoise_beam(oracle_gradient(H, H, obs.Y, obs.W.W, s.rho_p), tp.beam, s.theta_p);
    if (per_layer) per_layer->push_back(Hp);
  }
  return Hp;
}

Observation random_observation(Rng& rng, const SystemConfig& s, double sigma2 = 0.1) {
  const Mat H = gaussian(rng, s.N, 2 * s.M);
  return observe(RealChannelMatrix{H}, gen_selection(rng, s), NoiseSpec{sigma2, 10.0}, rng);
}

}  // namespace

TEST_CASE("parameter count walks the containers") {
  const NetConfig paper;
  CHECK(param_count(paper) == 163868);
  CHECK(std::abs(param_count(paper) - 1.65e5) / 1.65e5 < 0.02);
  NetConfig per_layer = paper;
  per_layer.share_transforms = false;
  CHECK(param_count(per_layer) == 7 * 163840 + 28);
  NetConfig tiny;
  tiny.T = 1;
  tiny.w1 = tiny.w2 = 1;
  tiny.N = tiny.M = 1;
  // A 1x2, B 1x1, B_inv 1x1, A_inv 2x1 per branch, two branches, four scalars.
  CHECK(param_count(tiny) == 2 * (2 + 1 + 1 + 2) + 4);
  tiny.T = 0;
  CHECK_THROWS_AS(param_count(tiny), std::invalid_argument);
}

TEST_CASE("initialization") {
  const NetConfig cfg;
  Rng a(3), b(3);
  const ListaParams p = init_params(a, cfg);
  const ListaParams q = init_params(b, cfg);
  bool same = true;
  std::vector<Mat> qs;
  for_each_tensor(q, [&](const std::string&, const Mat& m) { qs.push_back(m); });
  std::size_t i = 0;
  for_each_tensor(p, [&](const std::string&, const Mat& m) { same = same && m == qs[i++]; });
  CHECK(same);
  CHECK(p.transforms.size() == 1);
  CHECK(p.transforms[0].freq.A.size() == 8192);
  const double var = p.transforms[0].freq.A.squaredNorm() / 8192.0 - std::pow(p.transforms[0].freq.A.mean(), 2);
  CHECK(var == Approx(2.0 / 64.0).epsilon(0.1));
  for (int t = 0; t < cfg.T; ++t) {
    CHECK(p.layer(t).rho == 0.5);
    CHECK(p.layer(t).rho_p == 0.5);
    CHECK(p.layer(t).theta == 0.01);
    CHECK(p.layer(t).theta_p == 0.01);
  }
  const SystemConfig sys;
  Rng c(3);
  const ListaParams z = init_params(c, cfg, training_init(sys));
  CHECK(z.transforms[0].freq.A_inv.isZero(0.0));
  CHECK(z.transforms[0].beam.A_inv.isZero(0.0));
  CHECK(z.layer(0).rho == Approx(16.0 / std::pow(std::sqrt(32.0) + 4.0, 2)));
  CHECK_NOTHROW(check_shapes(p, cfg));
  ListaParams bad = p;
  bad.transforms[0].beam.B.resize(3, 3);
  CHECK_THROWS_AS(check_shapes(bad, cfg), std::invalid_argument);
}

TEST_CASE("gradient steps") {
  const SystemConfig s(8, 2, 8, 2, 28e9, 4e9);
  Rng rng(4);
  const Mat H = gaussian(rng, 8, 16);
  const Mat W = gen_selection(rng, s).W;
  const Mat Y = W * H;
  CHECK(max_abs(grad_step_freq(H, H, Y, W, 0.3) - H) < 1e-13);
  CHECK(max_abs(grad_step_beam(H, Y, W, 0.3) - H) < 1e-13);
  const Mat Z = Mat::Zero(8, 16);
  const Mat Yn = Y + gaussian(rng, 4, 16, 0.1);
  CHECK(max_abs(grad_step_freq(Z, Z, Yn, W, 0.3) - 0.3 * W.transpose() * Yn) < 1e-13);
  CHECK(grad_step_freq(Z, Z, Yn, W, 0.3, AnchorMode::primed) == grad_step_freq(Z, Z, Yn, W, 0.3));
  CHECK(max_abs(grad_step_beam(Z, Yn, W, 0.4) - 0.4 * W.transpose() * Yn) < 1e-13);

  const Mat Ha = gaussian(rng, 8, 16), Hb = gaussian(rng, 8, 16);
  CHECK(max_abs(grad_step_freq(Ha, Hb, Yn, W, 0.7) - oracle_gradient(Ha, Hb, Yn, W, 0.7)) < 1e-12);
  CHECK(max_abs(grad_step_freq(Ha, Hb, Yn, W, 0.7, AnchorMode::primed) - oracle_gradient(Hb, Hb, Yn, W, 0.7)) < 1e-12);
  CHECK(max_abs(grad_step_beam(Ha, Yn, W, 0.2) - oracle_gradient(Ha, Ha, Yn, W, 0.2)) < 1e-12);
}

TEST_CASE("frequency transforms") {
  const NetConfig cfg = small_net();
  Rng rng(5);
  const ListaParams p = init_params(rng, cfg);
  const TransformBranch& f = p.transforms[0].freq;
  const Mat R = gaussian(rng, 8, 16);
  CHECK(sparse_transform_freq(Mat::Zero(8, 16), f).isZero(0.0));
  CHECK(inverse_transform_freq(Mat::Zero(12, 8), f).isZero(0.0));
  CHECK(sparse_transform_freq(R, f).rows() == 12);
  CHECK(sparse_transform_freq(R, f).cols() == 8);
  CHECK(max_abs(sparse_transform_freq(R, f) - oracle_forward_branch(f, loop_transpose(R))) < 1e-12);
  const Mat Z = gaussian(rng, 12, 8);
  CHECK(max_abs(inverse_transform_freq(Z, f) - loop_transpose(oracle_inverse_branch(f, Z))) < 1e-12);
  CHECK(max_abs(denoise_freq(R, f, 0.05) - oracle_denoise_freq(R, f, 0.05)) < 1e-12);
  CHECK(denoise_freq(R, f, 1e12) == R);

  // Identity-extension weights: with R >= 0 the forward map embeds R^T, the inverse recovers it.
  NetConfig wide = cfg;
  wide.w1 = 16;
  wide.w2 = 16;
  TransformBranch e = TransformBranch::zeros(16, 16, 16);
  e.A = Mat::Identity(16, 16);
  e.B = Mat::Identity(16, 16);
  e.B_inv = Mat::Identity(16, 16);
  e.A_inv = Mat::Identity(16, 16);
  const Mat Rp = R.cwiseAbs();
  CHECK(max_abs(sparse_transform_freq(Rp, e) - Rp.transpose()) == 0.0);
  CHECK(max_abs(inverse_transform_freq(Rp.transpose(), e) - Rp) == 0.0);
  CHECK(max_abs(denoise_freq(Rp, e, 0.0) - 2.0 * Rp) < 1e-15);
}

TEST_CASE("block transpose") {
  Mat R(2, 4);
  R << 1, 2, 3, 4, 5, 6, 7, 8;
  Mat expected(2, 4);
  expected << 1, 5, 3, 7, 2, 6, 4, 8;
  CHECK(trans(R) == expected);
  Rng rng(6);
  const Mat X = gaussian(rng, 5, 14);
  CHECK(trans_inv(trans(X)) == X);
  CHECK(trans(X) == oracle_trans(X));
  CHECK(trans(X).rows() == 7);
  CHECK(trans(X).cols() == 10);
  CHECK(trans(X).norm() == X.norm());
  CHECK_THROWS(trans(Mat::Zero(2, 3)));
}

TEST_CASE("beam transforms") {
  const NetConfig cfg = small_net();
  Rng rng(7);
  const ListaParams p = init_params(rng, cfg);
  const TransformBranch& f = p.transforms[0].beam;
  const Mat Rp = gaussian(rng, 8, 16);
  CHECK(denoise_beam(Mat::Zero(8, 16), f, 0.01).isZero(0.0));
  CHECK(denoise_beam(Rp, f, 1e12) == Rp);
  const Mat X = trans(Rp);
  CHECK(max_abs(sparse_transform_beam(X, f) - oracle_forward_branch(f, loop_transpose(X))) < 1e-12);
  const Mat Z = gaussian(rng, 12, 8);
  CHECK(max_abs(inverse_transform_beam(Z, f) - loop_transpose(oracle_inverse_branch(f, Z))) < 1e-12);
  CHECK(max_abs(denoise_beam(Rp, f, 0.05) - oracle_denoise_beam(Rp, f, 0.05)) < 1e-12);
}

TEST_CASE("forward agrees with the composed oracle") {
  const SystemConfig s(8, 2, 8, 2, 28e9, 4e9);
  Rng rng(8);
  for (AnchorMode mode : {AnchorMode::as_written, AnchorMode::primed}) {
    for (bool share : {true, false}) {
      const NetConfig cfg = small_net(3, share, mode);
      ListaParams p = init_params(rng, cfg, {0.3, 0.05, false});
      const Observation obs = random_observation(rng, s);
      std::vector<Mat> oracle_layers;
      const Mat expected = oracle_forward(obs, p, cfg, &oracle_layers);
      const ForwardResult r = forward(obs, p, cfg, true);
      CHECK(max_abs(r.H - expected) < 1e-10);
      REQUIRE(r.per_layer.size() == 3);
      for (int t = 0; t < 3; ++t) {
        CHECK(r.per_layer[t].rows() == 8);
        CHECK(r.per_layer[t].cols() == 16);
        CHECK(max_abs(r.per_layer[t] - oracle_layers[t]) < 1e-10);
      }
      CHECK(r.per_layer.back() == r.H);
    }
  }
}

TEST_CASE("forward with saturated thresholds is a pair of Landweber steps") {
  const SystemConfig s(8, 2, 8, 2, 28e9, 4e9);
  const NetConfig cfg = small_net(1);
  Rng rng(9);
  ListaParams p = init_params(rng, cfg);
  p.set_layer(0, {0.3, 0.2, 1e12, 1e12});
  const Observation obs = random_observation(rng, s);
  const Mat& W = obs.W.W;
  const Mat H1 = 0.3 * W.transpose() * obs.Y;
  const Mat H2 = H1 - 0.2 * W.transpose() * (W * H1 - obs.Y);
  CHECK(max_abs(forward(obs, p, cfg).H - H2) < 1e-12);
}

TEST_CASE("silent branches reduce forward to plain gradient descent") {
  const SystemConfig s(8, 2, 8, 2, 28e9, 4e9);
  const NetConfig cfg = small_net(4, true, AnchorMode::primed);
  Rng rng(10);
  ListaParams p = init_params(rng, cfg, {0.25, 0.0, true});
  const Mat H = gaussian(rng, 8, 16);
  const Observation obs = observe(RealChannelMatrix{H}, gen_selection(rng, s), NoiseSpec{0.0, 0.0}, rng);
  Mat G = Mat::Zero(8, 16);
  for (int k = 0; k < 2 * cfg.T; ++k) G = G - 0.25 * obs.W.W.transpose() * (obs.W.W * G - obs.Y);
  CHECK(max_abs(forward(obs, p, cfg).H - G) < 1e-12);
}

TEST_CASE("forward rejects mismatched inputs") {
  const SystemConfig s(8, 2, 4, 2, 28e9, 4e9);
  const NetConfig cfg = small_net(1);
  Rng rng(11);
  const ListaParams p = init_params(rng, cfg);
  CHECK_THROWS_AS(forward(random_observation(rng, s), p, cfg), std::invalid_argument);
  NetConfig zero = cfg;
  zero.T = 0;
  CHECK_THROWS_AS(forward(random_observation(rng, SystemConfig(8, 2, 8, 2, 28e9, 4e9)), p, zero), std::invalid_argument);
}

TEST_CASE("batched forward matches the single-sample path") {
  const SystemConfig s(8, 2, 8, 2, 28e9, 4e9);
  Rng rng(12);
  for (bool per_sample_w : {false, true}) {
    const NetConfig cfg = small_net(3, false, AnchorMode::as_written);
    const ListaParams p = init_params(rng, cfg, {0.3, 0.05, false});
    const int B = 4;
    std::vector<Observation> obs;
    std::vector<Mat> Ws;
    const SelectionMatrix shared = gen_selection(rng, s);
    BatchProblem prob;
    prob.B = B;
    prob.Y.resize(4, 16 * B);
    for (int b = 0; b < B; ++b) {
      const SelectionMatrix W = per_sample_w ? gen_selection(rng, s) : shared;
      obs.push_back(observe(RealChannelMatrix{gaussian(rng, 8, 16)}, W, NoiseSpec{0.05, 13.0}, rng));
      prob.Y.middleCols(16 * b, 16) = obs.back().Y;
      Ws.push_back(W.W);
    }
    prob.W = per_sample_w ? SelectionSet(Ws) : SelectionSet({shared.W});
    std::vector<Mat> layers;
    const Mat out = forward_batch(prob, p, cfg, nullptr, &layers);
    REQUIRE(layers.size() == 3);
    for (int b = 0; b < B; ++b) {
      const ForwardResult r = forward(obs[b], p, cfg, true);
      CHECK(max_abs(out.middleCols(16 * b, 16) - r.H) < 1e-12);
      CHECK(max_abs(layers[1].middleCols(16 * b, 16) - r.per_layer[1]) < 1e-12);
    }
  }
}

TEST_CASE("layout permutations round-trip") {
  Rng rng(13);
  const Mat R = gaussian(rng, 5, 2 * 3 * 4);
  CHECK(layout::unstack_freq(layout::stack_freq(R, 5, 3, 4), 5, 3, 4) == R);
  CHECK(layout::unstack_beam(layout::stack_beam(R, 5, 3, 4), 5, 3, 4) == R);
  CHECK(layout::stack_beam(R, 5, 3, 4).middleCols(3, 3) == trans(R.middleCols(6, 6)).transpose());
}
