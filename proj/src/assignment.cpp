#include "vlhsa/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace vlhsa {

using nn::Tape;
using nn::Tensor;
using nn::Var;

HeadParams init_head_params(nn::ParamStore& ps, int d_v, int hidden, int n_positions, Rng& rng) {
  HeadParams p;
  ps.add("head.W1", {d_v, hidden}, d_v, rng);
  p.W1 = ps.ref("head.W1");
  ps.add("head.b1", {1, hidden}, d_v, rng);
  p.b1 = ps.ref("head.b1");
  ps.add("head.W2", {hidden, n_positions}, hidden, rng);
  p.W2 = ps.ref("head.W2");
  ps.add("head.b2", {1, n_positions}, hidden, rng);
  p.b2 = ps.ref("head.b2");
  return p;
}

PairwiseParams init_pairwise_params(nn::ParamStore& ps, int d_v, Rng& rng) {
  PairwiseParams p;
  ps.add("pair.Wh", {d_v, d_v}, d_v, rng);
  p.Wh = ps.ref("pair.Wh");
  ps.add_zeros("pair.bh", {1, 1});
  p.bh = ps.ref("pair.bh");
  ps.add("pair.Wv", {d_v, d_v}, d_v, rng);
  p.Wv = ps.ref("pair.Wv");
  ps.add_zeros("pair.bv", {1, 1});
  p.bv = ps.ref("pair.bv");
  return p;
}

nn::Var predict_scores(Tape& tp, const HeadParams& p, Var v_fused) {
  Var hidden = tp.gelu(tp.add_rowvec(tp.matmul(v_fused, pvar(tp, p.W1)), pvar(tp, p.b1)));
  return tp.add_rowvec(tp.matmul(hidden, pvar(tp, p.W2)), pvar(tp, p.b2));
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Shortest-augmenting-path assignment (Jonker-Volgenant style) with dual
/// potentials; 1-based internally. On return u[i]+v[j] <= cost[i-1][j-1] with
/// equality on matched edges.
void solve_lap(const Tensor& cost, std::vector<int>& row_to_col, std::vector<double>& u,
               std::vector<double>& v) {
  const int n = static_cast<int>(cost.rows());
  u.assign(static_cast<size_t>(n) + 1, 0.0);
  v.assign(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = p[static_cast<size_t>(j0)];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = cost.at(i0 - 1, j - 1) - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  row_to_col.assign(static_cast<size_t>(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[static_cast<size_t>(j)] > 0) row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)]) - 1] = j - 1;
}

bool try_kuhn(int row, const std::vector<std::vector<int>>& adj, const std::vector<char>& col_avail,
              std::vector<char>& visited, std::vector<int>& col_to_row) {
  for (int j : adj[static_cast<size_t>(row)]) {
    if (!col_avail[static_cast<size_t>(j)] || visited[static_cast<size_t>(j)]) continue;
    visited[static_cast<size_t>(j)] = 1;
    if (col_to_row[static_cast<size_t>(j)] < 0 ||
        try_kuhn(col_to_row[static_cast<size_t>(j)], adj, col_avail, visited, col_to_row)) {
      col_to_row[static_cast<size_t>(j)] = row;
      return true;
    }
  }
  return false;
}

bool rows_matchable(const std::vector<std::vector<int>>& adj, int n, int first_row,
                    const std::vector<char>& col_avail) {
  std::vector<int> col_to_row(static_cast<size_t>(n), -1);
  for (int r = first_row; r < n; ++r) {
    std::vector<char> visited(static_cast<size_t>(n), 0);
    if (!try_kuhn(r, adj, col_avail, visited, col_to_row)) return false;
  }
  return true;
}

}  // namespace

double assignment_cost(const Tensor& cost, const Permutation& p) {
  double s = 0;
  for (int i = 0; i < p.size(); ++i) s += cost.at(i, p[i]);
  return s;
}

Permutation hungarian(const Tensor& cost) {
  if (cost.shape.size() != 2 || cost.rows() != cost.cols())
    throw std::invalid_argument("hungarian: cost must be a square matrix, got " +
                                cost.shape_str());
  if (!cost.all_finite()) throw std::invalid_argument("hungarian: non-finite cost entries");
  const int n = static_cast<int>(cost.rows());
  if (n == 1) return Permutation({0});

  std::vector<int> jv;
  std::vector<double> u, v;
  solve_lap(cost, jv, u, v);

  double max_abs = 1.0;
  for (double c : cost.data) max_abs = std::max(max_abs, std::abs(c));
  const double tol = 1e-9 * max_abs;

  // tight-edge graph: every optimal assignment lives on reduced cost ~ 0
  std::vector<std::vector<int>> adj(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (cost.at(i, j) - u[static_cast<size_t>(i) + 1] - v[static_cast<size_t>(j) + 1] <= tol)
        adj[static_cast<size_t>(i)].push_back(j);

  // lexicographically smallest perfect matching on the tight graph
  std::vector<int> mapping(static_cast<size_t>(n), -1);
  std::vector<char> col_avail(static_cast<size_t>(n), 1);
  for (int i = 0; i < n; ++i) {
    bool fixed = false;
    for (int j : adj[static_cast<size_t>(i)]) {
      if (!col_avail[static_cast<size_t>(j)]) continue;
      col_avail[static_cast<size_t>(j)] = 0;
      if (i == n - 1 || rows_matchable(adj, n, i + 1, col_avail)) {
        mapping[static_cast<size_t>(i)] = j;
        fixed = true;
        break;
      }
      col_avail[static_cast<size_t>(j)] = 1;
    }
    if (!fixed) {
      // numeric edge case: fall back to the solver's own column
      mapping[static_cast<size_t>(i)] = jv[static_cast<size_t>(i)];
      col_avail[static_cast<size_t>(jv[static_cast<size_t>(i)])] = 0;
    }
  }
  return Permutation(std::move(mapping));
}

Permutation decode(const Tensor& scores) {
  if (scores.shape.size() != 2 || scores.rows() != scores.cols())
    throw std::invalid_argument("decode: score matrix must be square");
  if (!scores.all_finite()) throw std::invalid_argument("decode: non-finite scores");
  Tensor neg = scores;
  for (double& x : neg.data) x = -x;
  return hungarian(neg);
}

nn::Var assign_loss(Tape& tp, Var scores, const Permutation& truth, double label_smoothing) {
  const Tensor& o = tp.val(scores);
  if (o.rows() != o.cols()) throw std::invalid_argument("assign_loss: scores must be square");
  const int64_t n = o.rows();
  if (truth.size() != n) throw std::invalid_argument("assign_loss: truth size mismatch");
  if (label_smoothing < 0 || label_smoothing >= 0.5)
    throw std::invalid_argument("assign_loss: smoothing must be in [0, 0.5)");

  Tensor target({n, n});
  const double off = n > 1 ? label_smoothing / static_cast<double>(n - 1) : 0.0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      target.at(i, j) = j == truth[static_cast<int>(i)] ? 1.0 - label_smoothing : off;

  Var weighted = tp.mul(tp.log_softmax_rows(scores), tp.constant(std::move(target)));
  return tp.scale(tp.sum_all(weighted), -1.0 / static_cast<double>(n));
}

nn::Var pairwise_loss(Tape& tp, const PairwiseParams& p, Var v_fused, const Permutation& truth,
                      const GridGeometry& geometry, Rng& rng) {
  const int n = geometry.n_pieces();
  if (truth.size() != n) throw std::invalid_argument("pairwise_loss: truth size mismatch");
  if (tp.val(v_fused).rows() != n)
    throw std::invalid_argument("pairwise_loss: features do not match geometry");
  const Permutation tinv = truth.inverse();
  const int cols = geometry.cols;

  const auto adjacent = [&](int pa, int pb, bool horizontal) {
    const int ca = truth[pa], cb = truth[pb];
    if (horizontal) return cb == ca + 1 && ca / cols == cb / cols;
    return cb == ca + cols;
  };

  const auto build_axis = [&](bool horizontal) {
    std::vector<std::pair<int64_t, int64_t>> pairs;
    std::vector<double> labels;
    for (int cell = 0; cell < n; ++cell) {
      const int r = cell / cols, c = cell % cols;
      if (horizontal && c == cols - 1) continue;
      if (!horizontal && r == geometry.rows - 1) continue;
      pairs.emplace_back(tinv[cell], tinv[cell + (horizontal ? 1 : cols)]);
      labels.push_back(1.0);
    }
    const size_t n_pos = pairs.size();
    size_t added = 0;
    while (added < n_pos) {
      const int a = static_cast<int>(rng.uniform_int(0, n - 1));
      const int b = static_cast<int>(rng.uniform_int(0, n - 1));
      if (a == b || adjacent(a, b, horizontal)) continue;
      pairs.emplace_back(a, b);
      labels.push_back(0.0);
      ++added;
    }
    return std::make_pair(std::move(pairs), std::move(labels));
  };

  auto [pairs_h, labels_h] = build_axis(true);
  auto [pairs_v, labels_v] = build_axis(false);
  const double total_pairs = static_cast<double>(pairs_h.size() + pairs_v.size());

  const auto axis_sum = [&](const nn::ParamRef& W, const nn::ParamRef& b,
                            std::vector<std::pair<int64_t, int64_t>> pairs,
                            const std::vector<double>& labels) {
    Var bilinear = tp.matmul_nt(tp.matmul(v_fused, pvar(tp, W)), v_fused);
    Var logits = tp.add_rowvec(tp.gather_elems(bilinear, std::move(pairs)), pvar(tp, b));
    Tensor y({static_cast<int64_t>(labels.size()), 1});
    y.data = labels;
    // per-pair BCE with logits: softplus(x) - x*y
    return tp.sum_all(tp.sub(tp.softplus(logits), tp.mul(logits, tp.constant(std::move(y)))));
  };

  Var s = tp.add(axis_sum(p.Wh, p.bh, std::move(pairs_h), labels_h),
                 axis_sum(p.Wv, p.bv, std::move(pairs_v), labels_v));
  return tp.scale(s, 1.0 / total_pairs);
}

LossBreakdown make_breakdown(double assign, double token, double region, double global,
                             double pairwise, double lambda, double lambda_p) {
  LossBreakdown b;
  b.assign = assign;
  b.token = token;
  b.region = region;
  b.global = global;
  b.pairwise = pairwise;
  b.lambda = lambda;
  b.lambda_p = lambda_p;
  b.total = assign + lambda * (token + region + global) + lambda_p * pairwise;
  return b;
}

nn::Var total_loss(Tape& tp, Var assign, Var token, Var region, Var global, Var pairwise,
                   double lambda, double lambda_p) {
  Var aligned = tp.scale(tp.add(tp.add(token, region), global), lambda);
  return tp.add(tp.add(assign, aligned), tp.scale(pairwise, lambda_p));
}

}  // namespace vlhsa
