#include "vlhsa/align.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vlhsa/errors.hpp"

namespace vlhsa {

using nn::Tape;
using nn::Tensor;
using nn::Var;

void AlignConfig::validate(int d_v) const {
  if (n_heads < 1 || d_v % n_heads != 0)
    throw std::invalid_argument("align config: d_v must be divisible by n_heads");
  if (region_window < 1 || phrase_window < 1)
    throw std::invalid_argument("align config: windows must be >= 1");
  if (encoder_layers < 0) throw std::invalid_argument("align config: negative encoder depth");
  if (eps <= 0) throw std::invalid_argument("align config: eps must be positive");
  if (!enable_token && !enable_region && !enable_global)
    throw std::invalid_argument("align config: at least one alignment level must be enabled");
}

namespace {

AttnParams init_attn(nn::ParamStore& ps, const std::string& prefix, int64_t d_q, int64_t d_kv,
                     int64_t d_v, Rng& rng) {
  const auto mk = [&](const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
    ps.add(prefix + name, std::move(shape), fan_in, rng);
    return ps.ref(prefix + name);
  };
  AttnParams p;
  p.Wq = mk("Wq", {d_q, d_v}, d_q);
  p.bq = mk("bq", {1, d_v}, d_q);
  p.Wk = mk("Wk", {d_kv, d_v}, d_kv);
  p.bk = mk("bk", {1, d_v}, d_kv);
  p.Wv = mk("Wv", {d_kv, d_v}, d_kv);
  p.bv = mk("bv", {1, d_v}, d_kv);
  p.Wo = mk("Wo", {d_v, d_v}, d_v);
  p.bo = mk("bo", {1, d_v}, d_v);
  return p;
}

Var layer_norm(Tape& tp, Var x, const nn::ParamRef& gain, const nn::ParamRef& bias) {
  Var mu = tp.mean_over_cols(x);
  Var xc = tp.sub_colvec(x, mu);
  Var var = tp.mean_over_cols(tp.mul(xc, xc));
  Var xn = tp.div_colvec(xc, tp.sqrt_plus(var, 1e-5));
  return tp.add_rowvec(tp.mul_rowvec(xn, pvar(tp, gain)), pvar(tp, bias));
}

Var ones_const(Tape& tp, int64_t r, int64_t c) { return tp.constant(Tensor::full({r, c}, 1.0)); }

/// [n,d] broadcast of a [1,1] scalar var.
Var broadcast_scalar(Tape& tp, Var s, int64_t n, int64_t d) {
  return tp.matmul(tp.matmul(ones_const(tp, n, 1), s), ones_const(tp, 1, d));
}

}  // namespace

AlignParams init_align_params(nn::ParamStore& ps, const AlignConfig& cfg, int d_v, int d_t,
                              Rng& rng) {
  cfg.validate(d_v);
  AlignParams p;
  p.token = init_attn(ps, "align.token.", d_v, d_t, d_v, rng);
  p.region = init_attn(ps, "align.region.", d_v, d_t, d_v, rng);
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const std::string pre = "align.global.l" + std::to_string(l) + ".";
    GlobalLayerParams gl;
    ps.add_full(pre + "ln1_g", {1, d_v}, 1.0);
    gl.ln1_g = ps.ref(pre + "ln1_g");
    ps.add_zeros(pre + "ln1_b", {1, d_v});
    gl.ln1_b = ps.ref(pre + "ln1_b");
    gl.attn = init_attn(ps, pre + "attn.", d_v, d_v, d_v, rng);
    ps.add_full(pre + "ln2_g", {1, d_v}, 1.0);
    gl.ln2_g = ps.ref(pre + "ln2_g");
    ps.add_zeros(pre + "ln2_b", {1, d_v});
    gl.ln2_b = ps.ref(pre + "ln2_b");
    ps.add(pre + "ff.W1", {d_v, d_v}, d_v, rng);
    gl.ff_W1 = ps.ref(pre + "ff.W1");
    ps.add(pre + "ff.b1", {1, d_v}, d_v, rng);
    gl.ff_b1 = ps.ref(pre + "ff.b1");
    ps.add(pre + "ff.W2", {d_v, d_v}, d_v, rng);
    gl.ff_W2 = ps.ref(pre + "ff.W2");
    ps.add(pre + "ff.b2", {1, d_v}, d_v, rng);
    gl.ff_b2 = ps.ref(pre + "ff.b2");
    p.global_layers.push_back(gl);
  }
  ps.add("align.global.cproj.W", {d_t, d_v}, d_t, rng);
  p.cproj_W = ps.ref("align.global.cproj.W");
  ps.add("align.global.cproj.b", {1, d_v}, d_t, rng);
  p.cproj_b = ps.ref("align.global.cproj.b");
  ps.add("align.global.gate.W", {2 * static_cast<int64_t>(d_v), d_v}, 2 * d_v, rng);
  p.gate_W = ps.ref("align.global.gate.W");
  ps.add("align.global.gate.b", {1, d_v}, 2 * d_v, rng);
  p.gate_b = ps.ref("align.global.gate.b");
  ps.add_zeros("align.theta", {1, 3});
  p.theta = ps.ref("align.theta");
  return p;
}

MultiheadOut multihead_cross(Tape& tp, const AttnParams& p, int n_heads, Var queries,
                             Var keys_values, int d_v) {
  if (d_v % n_heads != 0)
    throw std::invalid_argument("multihead_cross: d_v not divisible by n_heads");
  const int64_t nk = tp.val(keys_values).rows();
  if (nk < 1) throw std::invalid_argument("multihead_cross: no keys");
  const int64_t dh = d_v / n_heads;

  Var Q = tp.add_rowvec(tp.matmul(queries, pvar(tp, p.Wq)), pvar(tp, p.bq));
  Var K = tp.add_rowvec(tp.matmul(keys_values, pvar(tp, p.Wk)), pvar(tp, p.bk));
  Var V = tp.add_rowvec(tp.matmul(keys_values, pvar(tp, p.Wv)), pvar(tp, p.bv));

  std::vector<Var> heads;
  Var attn_sum;
  const double temp = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < n_heads; ++h) {
    Var Qh = tp.slice_cols(Q, h * dh, (h + 1) * dh);
    Var Kh = tp.slice_cols(K, h * dh, (h + 1) * dh);
    Var Vh = tp.slice_cols(V, h * dh, (h + 1) * dh);
    Var A = tp.softmax_rows(tp.scale(tp.matmul_nt(Qh, Kh), temp));
    heads.push_back(tp.matmul(A, Vh));
    attn_sum = h == 0 ? A : tp.add(attn_sum, A);
  }
  Var concat = tp.concat_cols(heads);
  Var out = tp.add_rowvec(tp.matmul(concat, pvar(tp, p.Wo)), pvar(tp, p.bo));
  return MultiheadOut{out, tp.scale(attn_sum, 1.0 / n_heads)};
}

TokenAlignOut token_align(Tape& tp, const AttnParams& p, const AlignConfig& cfg, Var v_combined,
                          Var c_tokens) {
  if (tp.val(c_tokens).rows() < 1) throw std::invalid_argument("token_align: L must be >= 1");
  if (!tp.val(v_combined).all_finite() || !tp.val(c_tokens).all_finite())
    throw NumericError("token_align: non-finite features");
  const int d_v = static_cast<int>(tp.val(v_combined).cols());
  MultiheadOut mh = multihead_cross(tp, p, cfg.n_heads, v_combined, c_tokens, d_v);

  const int64_t n = tp.val(v_combined).rows();
  Var peak = tp.row_max(mh.attn);
  Var loss = tp.scale(tp.sum_all(tp.mul(peak, tp.log_plus(peak, cfg.eps))),
                      -cfg.alpha_token / static_cast<double>(n));
  return TokenAlignOut{mh.out, mh.attn, loss};
}

int64_t region_count(const GridGeometry& geometry, int window) {
  return static_cast<int64_t>(geometry.rows - window + 1) * (geometry.cols - window + 1);
}

nn::Tensor region_matrix(const GridGeometry& geometry, int window) {
  geometry.validate();
  if (window < 1 || window > std::min(geometry.rows, geometry.cols))
    throw std::invalid_argument("region window " + std::to_string(window) +
                                " too large for grid");
  const int64_t K = region_count(geometry, window);
  Tensor M({K, geometry.n_pieces()});
  const double w = 1.0 / static_cast<double>(window * window);
  int64_t k = 0;
  for (int r0 = 0; r0 + window <= geometry.rows; ++r0)
    for (int c0 = 0; c0 + window <= geometry.cols; ++c0, ++k)
      for (int dr = 0; dr < window; ++dr)
        for (int dc = 0; dc < window; ++dc)
          M.at(k, (r0 + dr) * geometry.cols + (c0 + dc)) = w;
  return M;
}

nn::Tensor phrase_matrix(int64_t n_tokens, int window) {
  if (window < 1 || window > n_tokens)
    throw std::invalid_argument("phrase window " + std::to_string(window) + " exceeds " +
                                std::to_string(n_tokens) + " tokens");
  const int64_t M = n_tokens - window + 1;
  Tensor P({M, n_tokens});
  const double w = 1.0 / static_cast<double>(window);
  for (int64_t m = 0; m < M; ++m)
    for (int64_t t = 0; t < window; ++t) P.at(m, m + t) = w;
  return P;
}

nn::Tensor scatter_matrix(const GridGeometry& geometry, int window) {
  const Tensor M = region_matrix(geometry, window);
  const int64_t K = M.rows(), N = M.cols();
  Tensor S({N, K});
  for (int64_t i = 0; i < N; ++i) {
    std::vector<int64_t> members;
    for (int64_t k = 0; k < K; ++k)
      if (M.at(k, i) > 0) members.push_back(k);
    const double w = 1.0 / static_cast<double>(members.size());
    for (int64_t k : members) S.at(i, k) = w;
  }
  return S;
}

Var build_regions(Tape& tp, Var v_combined, const GridGeometry& geometry, int window) {
  if (tp.val(v_combined).rows() != geometry.n_pieces())
    throw std::invalid_argument("build_regions: feature rows do not match geometry");
  return tp.matmul(tp.constant(region_matrix(geometry, window)), v_combined);
}

Var build_phrases(Tape& tp, Var c_tokens, int window) {
  return tp.matmul(tp.constant(phrase_matrix(tp.val(c_tokens).rows(), window)), c_tokens);
}

RegionAlignOut region_align(Tape& tp, const AttnParams& p, const AlignConfig& cfg, Var regions,
                            Var phrases) {
  const int64_t K = tp.val(regions).rows(), M = tp.val(phrases).rows();
  if (K < 1 || M < 1) throw std::invalid_argument("region_align: need K, M >= 1");
  const int d_v = static_cast<int>(tp.val(regions).cols());
  MultiheadOut mh = multihead_cross(tp, p, cfg.n_heads, regions, phrases, d_v);

  // Eq-10-style loss on the raw features: phrases are carried into d_v with
  // the alignment's key projection, then all pairs are scored by cosine.
  Var p_proj = tp.add_rowvec(tp.matmul(phrases, pvar(tp, p.Wk)), pvar(tp, p.bk));
  Var cosines = tp.matmul_nt(tp.normalize_rows(regions, cfg.eps),
                             tp.normalize_rows(p_proj, cfg.eps));
  Var loss = tp.scale(tp.sum_all(cosines), -1.0 / static_cast<double>(K * M));
  return RegionAlignOut{mh.out, loss};
}

Var scatter_regions(Tape& tp, Var v_region_raw, const GridGeometry& geometry, int window) {
  if (tp.val(v_region_raw).rows() != region_count(geometry, window))
    throw std::invalid_argument("scatter_regions: K does not match geometry/window");
  return tp.matmul(tp.constant(scatter_matrix(geometry, window)), v_region_raw);
}

GlobalAlignOut global_align(Tape& tp, const AlignParams& p, const AlignConfig& cfg,
                            Var v_combined, Var c_global) {
  if (!tp.val(v_combined).all_finite() || !tp.val(c_global).all_finite())
    throw NumericError("global_align: non-finite features");
  const int64_t n = tp.val(v_combined).rows();
  const int d_v = static_cast<int>(tp.val(v_combined).cols());

  Var h = v_combined;
  for (const GlobalLayerParams& gl : p.global_layers) {
    Var x1 = layer_norm(tp, h, gl.ln1_g, gl.ln1_b);
    h = tp.add(h, multihead_cross(tp, gl.attn, cfg.n_heads, x1, x1, d_v).out);
    Var x2 = layer_norm(tp, h, gl.ln2_g, gl.ln2_b);
    Var ff = tp.add_rowvec(
        tp.matmul(tp.gelu(tp.add_rowvec(tp.matmul(x2, pvar(tp, gl.ff_W1)), pvar(tp, gl.ff_b1))),
                  pvar(tp, gl.ff_W2)),
        pvar(tp, gl.ff_b2));
    h = tp.add(h, ff);
  }

  Var c_proj = tp.add_rowvec(tp.matmul(c_global, pvar(tp, p.cproj_W)), pvar(tp, p.cproj_b));
  Var c_expand = tp.matmul(ones_const(tp, n, 1), c_proj);
  Var gate_in = tp.concat_cols({h, c_expand});
  Var g = tp.sigmoid(tp.add_rowvec(tp.matmul(gate_in, pvar(tp, p.gate_W)), pvar(tp, p.gate_b)));
  Var ones = ones_const(tp, n, d_v);
  Var aligned = tp.add(tp.mul(g, h), tp.mul(tp.sub(ones, g), c_expand));

  Var pooled = tp.mean_over_rows(h);
  Var cos = tp.sum_all(
      tp.mul(tp.normalize_rows(pooled, cfg.eps), tp.normalize_rows(c_proj, cfg.eps)));
  return GlobalAlignOut{aligned, h, c_proj, g, tp.scale(cos, -1.0)};
}

FuseOut fuse(Tape& tp, Var theta, const std::vector<std::pair<Var, bool>>& levels) {
  if (tp.val(theta).rows() != 1 || tp.val(theta).cols() != static_cast<int64_t>(levels.size()))
    throw std::invalid_argument("fuse: theta must be [1, n_levels]");
  std::vector<int> enabled;
  for (size_t k = 0; k < levels.size(); ++k)
    if (levels[k].second) enabled.push_back(static_cast<int>(k));
  if (enabled.empty()) throw std::invalid_argument("fuse: no enabled levels");

  std::vector<Var> parts;
  for (int k : enabled) parts.push_back(tp.slice_cols(theta, k, k + 1));
  Var alpha = tp.softmax_rows(parts.size() == 1 ? parts[0] : tp.concat_cols(parts));

  const int64_t n = tp.val(levels[static_cast<size_t>(enabled[0])].first).rows();
  const int64_t d = tp.val(levels[static_cast<size_t>(enabled[0])].first).cols();
  Var fused;
  for (size_t e = 0; e < enabled.size(); ++e) {
    Var weight = broadcast_scalar(tp, tp.slice_cols(alpha, static_cast<int64_t>(e), static_cast<int64_t>(e) + 1), n, d);
    Var term = tp.mul(weight, levels[static_cast<size_t>(enabled[e])].first);
    fused = e == 0 ? term : tp.add(fused, term);
  }

  Tensor alpha_full({1, static_cast<int64_t>(levels.size())});
  for (size_t e = 0; e < enabled.size(); ++e)
    alpha_full.at(0, enabled[e]) = tp.val(alpha).at(0, static_cast<int64_t>(e));
  return FuseOut{fused, alpha_full};
}

AlignmentVars vlhsa_forward(Tape& tp, const AlignParams& p, const AlignConfig& cfg,
                            const GridGeometry& geometry, const BundleVars& bundle) {
  cfg.validate(static_cast<int>(tp.val(bundle.v_combined).cols()));
  AlignmentVars out;
  Var zero = tp.constant(Tensor::zeros({1, 1}));
  out.l_token = zero;
  out.l_region = zero;
  out.l_global = zero;

  if (cfg.enable_token) {
    TokenAlignOut t = token_align(tp, p.token, cfg, bundle.v_combined, bundle.c_tokens);
    out.v_token = t.v_token;
    out.attention = t.attn;
    out.l_token = t.loss;
  }
  if (cfg.enable_region) {
    Var R = build_regions(tp, bundle.v_combined, geometry, cfg.region_window);
    const int pw = static_cast<int>(
        std::min<int64_t>(cfg.phrase_window, tp.val(bundle.c_tokens).rows()));
    Var P = build_phrases(tp, bundle.c_tokens, pw);
    RegionAlignOut r = region_align(tp, p.region, cfg, R, P);
    out.v_region = scatter_regions(tp, r.v_region_raw, geometry, cfg.region_window);
    out.l_region = r.loss;
  }
  if (cfg.enable_global) {
    GlobalAlignOut g = global_align(tp, p, cfg, bundle.v_combined, bundle.c_global);
    out.v_global_aligned = g.v_aligned;
    out.l_global = g.loss;
  }

  FuseOut f = fuse(tp, pvar(tp, p.theta),
                   {{out.v_token, cfg.enable_token},
                    {out.v_region, cfg.enable_region},
                    {out.v_global_aligned, cfg.enable_global}});
  out.v_fused = f.v_fused;
  out.fusion_weights = f.alpha;
  return out;
}

AlignmentOutput alignment_values(const Tape& tp, const AlignmentVars& v) {
  AlignmentOutput out;
  if (v.v_token.valid()) out.v_token = tp.val(v.v_token);
  if (v.v_region.valid()) out.v_region = tp.val(v.v_region);
  if (v.v_global_aligned.valid()) out.v_global_aligned = tp.val(v.v_global_aligned);
  out.v_fused = tp.val(v.v_fused);
  out.fusion_weights = v.fusion_weights;
  if (v.attention.valid()) out.attention = tp.val(v.attention);
  out.l_token = tp.val(v.l_token).data[0];
  out.l_region = tp.val(v.l_region).data[0];
  out.l_global = tp.val(v.l_global).data[0];
  return out;
}

}  // namespace vlhsa
