#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "vlhsa/assignment.hpp"

using namespace vlhsa;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor randn(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal() * scale;
  return t;
}

GridGeometry grid(int rows, int cols) {
  GridGeometry g;
  g.rows = rows;
  g.cols = cols;
  g.piece_px = 4;
  return g;
}

}  // namespace

TEST_CASE("predict_scores") {
  nn::ParamStore ps;
  Rng rng(1);
  HeadParams head = init_head_params(ps, 16, 16, 9, rng);

  SUBCASE("shape is N x N") {
    Tape tp;
    Var o = predict_scores(tp, head, tp.constant(randn({9, 16}, 2)));
    CHECK(tp.val(o).shape == std::vector<int64_t>{9, 9});
  }

  SUBCASE("zero output layer gives all-zero logits") {
    head.W2.value->fill(0.0);
    head.b2.value->fill(0.0);
    Tape tp;
    Var o = predict_scores(tp, head, tp.constant(randn({9, 16}, 3)));
    for (double v : tp.val(o).data) CHECK(v == 0.0);
  }

  SUBCASE("row i depends only on feature row i") {
    Tensor f = randn({9, 16}, 4);
    Tape tp1;
    const Tensor o1 = tp1.val(predict_scores(tp1, head, tp1.constant(f)));
    Tensor f2 = f;
    for (int64_t c = 0; c < 16; ++c) f2.at(5, c) += 2.5;  // perturb a different row
    Tape tp2;
    const Tensor o2 = tp2.val(predict_scores(tp2, head, tp2.constant(f2)));
    for (int64_t c = 0; c < 9; ++c) {
      CHECK(o1.at(3, c) == o2.at(3, c));
      CHECK(o1.at(5, c) != o2.at(5, c));
    }
  }
}

TEST_CASE("hungarian") {
  SUBCASE("zero diagonal wins") {
    Tensor cost = Tensor::full({4, 4}, 1.0);
    for (int i = 0; i < 4; ++i) cost.at(i, i) = 0.0;
    CHECK(hungarian(cost) == Permutation::identity(4));
  }

  SUBCASE("|i-j| cost has the zero-diagonal optimum") {
    Tensor cost({4, 4});
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j) cost.at(i, j) = std::abs(static_cast<double>(i - j));
    const Permutation p = hungarian(cost);
    CHECK(p == Permutation::identity(4));
    CHECK(assignment_cost(cost, p) == 0.0);
  }

  SUBCASE("200 random 6x6 matrices match exhaustive search") {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
      Tensor cost({6, 6});
      for (double& v : cost.data) v = rng.uniform();
      const Permutation p = hungarian(cost);
      const double brute = oracle::brute_force_assignment(cost.data, 6);
      CHECK(assignment_cost(cost, p) == doctest::Approx(brute).epsilon(1e-12));
    }
  }

  SUBCASE("ties break to the lexicographically smallest mapping") {
    CHECK(hungarian(Tensor::zeros({3, 3})) == Permutation::identity(3));
    // two optimal solutions: (0,1) and (1,0); lexicographic picks (0,1)
    Tensor cost = Tensor::from({2, 2}, {1.0, 1.0, 2.0, 2.0});
    CHECK(hungarian(cost) == Permutation::identity(2));
  }

  SUBCASE("non-finite and non-square inputs are rejected") {
    Tensor bad({2, 3});
    CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
    Tensor nan = Tensor::zeros({2, 2});
    nan.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(hungarian(nan), std::invalid_argument);
  }
}

TEST_CASE("decode") {
  SUBCASE("a dominant diagonal decodes to the identity") {
    Tensor o = Tensor::full({5, 5}, 0.1);
    for (int i = 0; i < 5; ++i) o.at(i, i) = 10.0;
    CHECK(decode(o) == Permutation::identity(5));
  }

  SUBCASE("agrees with row-wise argmax when that is already a bijection") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      const Permutation target = Permutation::random(6, rng);
      Tensor o({6, 6});
      for (double& v : o.data) v = rng.normal() * 0.1;
      for (int i = 0; i < 6; ++i) o.at(i, target[i]) += 8.0;
      CHECK(decode(o) == target);
    }
  }

  SUBCASE("adding a constant to every logit leaves the decode unchanged") {
    Rng rng(6);
    Tensor o({7, 7});
    for (double& v : o.data) v = rng.normal();
    Tensor shifted = o;
    for (double& v : shifted.data) v += 13.7;
    CHECK(decode(o) == decode(shifted));
  }

  SUBCASE("always returns a bijection") {
    Rng rng(7);
    for (int n : {4, 9, 25}) {
      for (int trial = 0; trial < 340; ++trial) {
        Tensor o({n, n});
        for (double& v : o.data) v = rng.normal() * 2.0;
        CHECK_NOTHROW(decode(o));  // Permutation construction enforces bijectivity
      }
    }
  }
}

TEST_CASE("assign_loss") {
  SUBCASE("uniform logits give exactly ln N for zero smoothing") {
    for (int n : {3, 9, 25}) {
      Tape tp;
      Var loss = assign_loss(tp, tp.constant(Tensor::zeros({n, n})),
                             Permutation::identity(n), 0.0);
      CHECK(tp.scalar(loss) == doctest::Approx(std::log(n)).epsilon(1e-12));
    }
  }

  SUBCASE("confident correct logits drive the loss to zero") {
    Tape tp;
    const int n = 6;
    Rng rng(8);
    const Permutation truth = Permutation::random(n, rng);
    double prev = 1e9;
    for (double mag : {5.0, 15.0, 40.0}) {
      Tensor o = Tensor::zeros({n, n});
      for (int i = 0; i < n; ++i) o.at(i, truth[i]) = mag;
      const double l = tp.scalar(assign_loss(tp, tp.constant(o), truth, 0.0));
      CHECK(l < prev);
      prev = l;
    }
    CHECK(prev < 1e-10);
  }

  SUBCASE("smoothed loss matches the direct formula") {
    const int n = 9;
    const double s = 0.08;
    Rng rng(9);
    const Permutation truth = Permutation::random(n, rng);
    Tensor o({n, n});
    for (double& v : o.data) v = rng.normal();
    for (int i = 0; i < n; ++i) o.at(i, truth[i]) += 6.0;

    Tape tp;
    const double got = tp.scalar(assign_loss(tp, tp.constant(o), truth, s));

    double expect = 0;
    for (int i = 0; i < n; ++i) {
      double mx = o.at(i, 0);
      for (int j = 1; j < n; ++j) mx = std::max(mx, o.at(i, j));
      double z = 0;
      for (int j = 0; j < n; ++j) z += std::exp(o.at(i, j) - mx);
      const double lse = mx + std::log(z);
      for (int j = 0; j < n; ++j) {
        const double t = j == truth[i] ? 1.0 - s : s / (n - 1);
        expect -= t * (o.at(i, j) - lse);
      }
    }
    expect /= n;
    CHECK(got == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("smoothing outside [0, 0.5) is rejected") {
    Tape tp;
    CHECK_THROWS_AS(
        assign_loss(tp, tp.constant(Tensor::zeros({4, 4})), Permutation::identity(4), 0.5),
        std::invalid_argument);
  }
}

TEST_CASE("pairwise_loss") {
  const GridGeometry g = grid(3, 3);
  Rng trng(10);
  const Permutation truth = Permutation::random(9, trng);

  SUBCASE("an uninformative head scores ln 2") {
    nn::ParamStore ps;
    Rng rng(11);
    PairwiseParams p = init_pairwise_params(ps, 8, rng);
    p.Wh.value->fill(0.0);
    p.Wv.value->fill(0.0);
    Tape tp;
    Rng nrng(12);
    Var loss = pairwise_loss(tp, p, tp.constant(randn({9, 8}, 13)), truth, g, nrng);
    CHECK(tp.scalar(loss) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("a perfect separator drives the loss toward zero") {
    // one-hot piece features with d_v = N; the bilinear form IS the pair table
    nn::ParamStore ps;
    Rng rng(14);
    PairwiseParams p = init_pairwise_params(ps, 9, rng);
    Tensor eye = Tensor::zeros({9, 9});
    for (int i = 0; i < 9; ++i) eye.at(i, i) = 1.0;
    p.Wh.value->fill(-30.0);
    p.Wv.value->fill(-30.0);
    const Permutation tinv = truth.inverse();
    for (int cell = 0; cell < 9; ++cell) {
      const int r = cell / 3, c = cell % 3;
      if (c < 2) p.Wh.value->at(tinv[cell], tinv[cell + 1]) = 30.0;
      if (r < 2) p.Wv.value->at(tinv[cell], tinv[cell + 3]) = 30.0;
    }
    Tape tp;
    Rng nrng(15);
    Var loss = pairwise_loss(tp, p, tp.constant(eye), truth, g, nrng);
    CHECK(tp.scalar(loss) < 1e-9);
  }

  SUBCASE("fixed seed gives a reproducible value") {
    nn::ParamStore ps;
    Rng rng(16);
    PairwiseParams p = init_pairwise_params(ps, 8, rng);
    const Tensor f = randn({9, 8}, 17);
    Tape tp1, tp2;
    Rng n1(18), n2(18);
    const double a = tp1.scalar(pairwise_loss(tp1, p, tp1.constant(f), truth, g, n1));
    const double b = tp2.scalar(pairwise_loss(tp2, p, tp2.constant(f), truth, g, n2));
    CHECK(a == b);
  }
}

TEST_CASE("total_loss") {
  Tape tp;
  const auto c = [&](double v) { return tp.constant(Tensor::full({1, 1}, v)); };

  SUBCASE("zero weights reduce to the assignment term") {
    Var t = total_loss(tp, c(1.25), c(9.0), c(8.0), c(7.0), c(6.0), 0.0, 0.0);
    CHECK(tp.scalar(t) == doctest::Approx(1.25));
  }

  SUBCASE("zero alignment losses leave assign plus weighted pairwise") {
    Var t = total_loss(tp, c(1.0), c(0.0), c(0.0), c(0.0), c(2.0), 0.3, 0.05);
    CHECK(tp.scalar(t) == doctest::Approx(1.0 + 0.05 * 2.0));
  }

  SUBCASE("breakdown identity holds for random parts") {
    Rng rng(19);
    for (int trial = 0; trial < 100; ++trial) {
      const double a = rng.normal(), tk = rng.normal(), rg = rng.normal(), gl = rng.normal(),
                   pw = rng.normal(), l = rng.uniform(), lp = rng.uniform();
      const LossBreakdown b = make_breakdown(a, tk, rg, gl, pw, l, lp);
      CHECK(std::abs(b.total - (b.assign + b.lambda * (b.token + b.region + b.global) +
                                b.lambda_p * b.pairwise)) < 1e-9);
      Var t = total_loss(tp, c(a), c(tk), c(rg), c(gl), c(pw), l, lp);
      CHECK(tp.scalar(t) == doctest::Approx(b.total).epsilon(1e-12));
    }
  }
}
