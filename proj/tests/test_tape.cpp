#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "vlhsa/rng.hpp"
#include "vlhsa/tape.hpp"

using namespace vlhsa;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal() * scale;
  return t;
}

// Central-difference gradient check; the builder consumes the leaf Var and is
// re-run on a fresh tape for every probe.
void check_grad_var(const std::function<Var(Tape&, Var)>& build, const Tensor& x0,
                    double step = 1e-5, double tol = 5e-7) {
  Tensor analytic = Tensor::zeros(x0.shape);
  {
    Tape tp;
    Var leaf = tp.param(x0, &analytic);
    Var out = build(tp, leaf);
    REQUIRE(tp.val(out).numel() == 1);
    tp.backward(out);
  }
  const auto eval = [&](const Tensor& x) {
    Tape tp;
    Var leaf = tp.param(x, nullptr);
    return tp.scalar(build(tp, leaf));
  };
  for (size_t k = 0; k < x0.data.size(); ++k) {
    Tensor xp = x0, xm = x0;
    xp.data[k] += step;
    xm.data[k] -= step;
    const double fd = (eval(xp) - eval(xm)) / (2 * step);
    const double a = analytic.data[k];
    const double denom = std::max({std::abs(fd), std::abs(a), 1e-4});
    CAPTURE(k);
    CAPTURE(fd);
    CAPTURE(a);
    CHECK(std::abs(fd - a) / denom < tol * 1e4);
  }
}

}  // namespace

TEST_CASE("matmul matches a naive triple loop") {
  Rng rng(11);
  Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 4}, rng);
  Tape tp;
  Var out = tp.matmul(tp.constant(a), tp.constant(b));
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      double s = 0;
      for (int64_t k = 0; k < 5; ++k) s += a.at(i, k) * b.at(k, j);
      CHECK(tp.val(out).at(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(12);
  Tape tp;
  Var s = tp.softmax_rows(tp.constant(random_tensor({6, 9}, rng, 3.0)));
  for (int64_t i = 0; i < 6; ++i) {
    double sum = 0;
    for (int64_t j = 0; j < 9; ++j) {
      const double v = tp.val(s).at(i, j);
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gradients of every primitive match central differences") {
  Rng rng(42);

  SUBCASE("matmul lhs") {
    Tensor b = random_tensor({4, 3}, rng);
    check_grad_var(
        [&](Tape& tp, Var x) {
          return tp.sum_all(tp.gelu(tp.matmul(x, tp.constant(b))));
        },
        random_tensor({2, 4}, rng));
  }
  SUBCASE("matmul rhs") {
    Tensor a = random_tensor({3, 4}, rng);
    check_grad_var(
        [&](Tape& tp, Var x) {
          return tp.sum_all(tp.sigmoid(tp.matmul(tp.constant(a), x)));
        },
        random_tensor({4, 2}, rng));
  }
  SUBCASE("matmul_nt") {
    Tensor b = random_tensor({5, 4}, rng);
    check_grad_var(
        [&](Tape& tp, Var x) {
          return tp.sum_all(tp.mul(tp.matmul_nt(x, tp.constant(b)),
                                   tp.matmul_nt(x, tp.constant(b))));
        },
        random_tensor({3, 4}, rng));
  }
  SUBCASE("add sub mul scale") {
    Tensor other = random_tensor({3, 3}, rng);
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var o = tp.constant(other);
          return tp.sum_all(tp.mul(tp.scale(tp.add(x, o), 1.7), tp.sub(x, o)));
        },
        random_tensor({3, 3}, rng));
  }
  SUBCASE("rowvec and colvec broadcasts") {
    Tensor b = random_tensor({1, 4}, rng);
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var y = tp.add_rowvec(x, tp.constant(b));
          Var g = tp.mul_rowvec(y, tp.constant(b));
          Var mu = tp.mean_over_cols(g);
          Var c = tp.sub_colvec(g, mu);
          Var v = tp.div_colvec(c, tp.sqrt_plus(tp.mean_over_cols(tp.mul(c, c)), 0.3));
          return tp.sum_all(tp.mul(v, v));
        },
        random_tensor({3, 4}, rng));
  }
  SUBCASE("rowvec gradient flows into the vector too") {
    Tensor x = random_tensor({3, 4}, rng);
    check_grad_var(
        [&](Tape& tp, Var b) {
          return tp.sum_all(tp.gelu(tp.add_rowvec(tp.constant(x), b)));
        },
        random_tensor({1, 4}, rng));
  }
  SUBCASE("colvec gradient flows into the column") {
    Tensor x = random_tensor({3, 4}, rng);
    for (double& v : x.data) v = std::abs(v) + 0.5;
    check_grad_var(
        [&](Tape& tp, Var c) {
          Var cc = tp.sqrt_plus(tp.mul(c, c), 0.2);
          return tp.sum_all(tp.div_colvec(tp.constant(x), cc));
        },
        random_tensor({3, 1}, rng));
  }
  SUBCASE("sigmoid gelu softplus log sqrt") {
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var a = tp.softplus(tp.gelu(x));
          Var b = tp.log_plus(a, 0.01);
          return tp.sum_all(tp.mul(tp.sigmoid(b), tp.sqrt_plus(a, 0.1)));
        },
        random_tensor({4, 3}, rng));
  }
  SUBCASE("softmax and log_softmax") {
    Tensor w = random_tensor({4, 6}, rng);
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var s = tp.softmax_rows(x);
          Var ls = tp.log_softmax_rows(tp.scale(x, 1.3));
          return tp.sum_all(tp.add(tp.mul(s, tp.constant(w)), tp.mul(ls, tp.constant(w))));
        },
        random_tensor({4, 6}, rng));
  }
  SUBCASE("row_max routes to the argmax") {
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var p = tp.row_max(x);
          return tp.sum_all(tp.mul(p, tp.log_plus(p, 1e-8)));
        },
        random_tensor({5, 4}, rng));
  }
  SUBCASE("means and sums") {
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var a = tp.mean_over_rows(x);
          Var b = tp.mean_over_cols(x);
          return tp.add(tp.sum_all(tp.mul(a, a)), tp.sum_all(tp.mul(b, b)));
        },
        random_tensor({4, 5}, rng));
  }
  SUBCASE("cumavg is causal") {
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var c = tp.cumavg_rows(x);
          return tp.sum_all(tp.mul(c, c));
        },
        random_tensor({6, 3}, rng));
  }
  SUBCASE("concat and slices") {
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var a = tp.slice_cols(x, 0, 2);
          Var b = tp.slice_cols(x, 2, 5);
          Var c = tp.concat_cols({b, a});
          Var d = tp.slice_rows(c, 1, 3);
          return tp.sum_all(tp.mul(d, d));
        },
        random_tensor({4, 5}, rng));
  }
  SUBCASE("gather rows accumulates duplicates") {
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var g = tp.gather_rows(x, {0, 2, 2, 1});
          return tp.sum_all(tp.mul(g, g));
        },
        random_tensor({3, 4}, rng));
  }
  SUBCASE("gather elems") {
    check_grad_var(
        [&](Tape& tp, Var x) {
          Var g = tp.gather_elems(x, {{0, 1}, {2, 2}, {0, 1}});
          return tp.sum_all(tp.softplus(g));
        },
        random_tensor({3, 3}, rng));
  }
  SUBCASE("normalize_rows") {
    Tensor w = random_tensor({3, 5}, rng);
    check_grad_var(
        [&](Tape& tp, Var x) {
          return tp.sum_all(tp.mul(tp.normalize_rows(x, 1e-8), tp.constant(w)));
        },
        random_tensor({3, 5}, rng));
  }
}

TEST_CASE("cumavg values are prefix means") {
  Tape tp;
  Tensor x = Tensor::from({3, 1}, {3.0, 6.0, 9.0});
  Var c = tp.cumavg_rows(tp.constant(x));
  CHECK(tp.val(c).at(0, 0) == doctest::Approx(3.0));
  CHECK(tp.val(c).at(1, 0) == doctest::Approx(4.5));
  CHECK(tp.val(c).at(2, 0) == doctest::Approx(6.0));
}

TEST_CASE("param gradients accumulate into sinks") {
  Tensor w = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor sink = Tensor::zeros({2, 2});
  Tape tp;
  Var p = tp.param(w, &sink);
  tp.backward(tp.sum_all(tp.mul(p, p)));
  for (size_t k = 0; k < 4; ++k) CHECK(sink.data[k] == doctest::Approx(2.0 * w.data[k]));
}

TEST_CASE("shape violations throw") {
  Tape tp;
  Var a = tp.constant(Tensor::zeros({2, 3}));
  Var b = tp.constant(Tensor::zeros({2, 2}));
  CHECK_THROWS_AS(tp.matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tp.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(tp.slice_cols(a, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(tp.backward(a), std::invalid_argument);
}
