#pragma once

#include "vlhsa/core.hpp"
#include "vlhsa/params.hpp"
#include "vlhsa/tape.hpp"

namespace vlhsa {

struct HeadParams {
  nn::ParamRef W1, b1, W2, b2;  // d_v -> hidden -> N
};

struct PairwiseParams {
  nn::ParamRef Wh, bh;  // horizontal-adjacency bilinear form, [d_v, d_v] and [1,1]
  nn::ParamRef Wv, bv;  // vertical
};

HeadParams init_head_params(nn::ParamStore& ps, int d_v, int hidden, int n_positions, Rng& rng);
PairwiseParams init_pairwise_params(nn::ParamStore& ps, int d_v, Rng& rng);

/// Shared per-piece MLP; row i of the output depends only on feature row i.
nn::Var predict_scores(nn::Tape& tp, const HeadParams& p, nn::Var v_fused);

/// Exact minimum-cost assignment, O(N^3) shortest augmenting paths. Among
/// cost-optimal assignments returns the lexicographically smallest mapping.
Permutation hungarian(const nn::Tensor& cost);

/// Total cost of a mapping under a cost matrix.
double assignment_cost(const nn::Tensor& cost, const Permutation& p);

/// hungarian(-scores): maximize total logit mass, bijective by construction.
Permutation decode(const nn::Tensor& scores);

/// Mean label-smoothed cross-entropy between score rows and the true cells.
nn::Var assign_loss(nn::Tape& tp, nn::Var scores, const Permutation& truth,
                    double label_smoothing);

/// Binary cross-entropy of two bilinear adjacency heads over all ground-truth
/// adjacent ordered pairs plus an equal number of sampled non-adjacent pairs.
nn::Var pairwise_loss(nn::Tape& tp, const PairwiseParams& p, nn::Var v_fused,
                      const Permutation& truth, const GridGeometry& geometry, Rng& rng);

struct LossBreakdown {
  double total = 0, assign = 0, token = 0, region = 0, global = 0, pairwise = 0;
  double lambda = 0, lambda_p = 0;
};

LossBreakdown make_breakdown(double assign, double token, double region, double global,
                             double pairwise, double lambda, double lambda_p);

/// total = assign + lambda*(token+region+global) + lambda_p*pairwise on-tape.
nn::Var total_loss(nn::Tape& tp, nn::Var assign, nn::Var token, nn::Var region, nn::Var global,
                   nn::Var pairwise, double lambda, double lambda_p);

}  // namespace vlhsa
