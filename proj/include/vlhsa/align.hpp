#pragma once

#include <utility>
#include <vector>

#include "vlhsa/core.hpp"
#include "vlhsa/encoders.hpp"
#include "vlhsa/params.hpp"
#include "vlhsa/tape.hpp"

namespace vlhsa {

struct AlignConfig {
  int n_heads = 4;
  int region_window = 2;   // spatial window over the patch grid
  int phrase_window = 3;   // sliding window over caption tokens
  double alpha_token = 1.0;
  double eps = 1e-8;
  int encoder_layers = 2;  // global visual transformer depth
  bool enable_token = true;
  bool enable_region = true;
  bool enable_global = true;

  void validate(int d_v) const;
  bool operator==(const AlignConfig&) const = default;
};

struct AttnParams {
  nn::ParamRef Wq, bq, Wk, bk, Wv, bv, Wo, bo;
};

struct GlobalLayerParams {
  nn::ParamRef ln1_g, ln1_b, ln2_g, ln2_b;
  AttnParams attn;
  nn::ParamRef ff_W1, ff_b1, ff_W2, ff_b2;
};

struct AlignParams {
  AttnParams token;   // queries d_v, keys/values d_t
  AttnParams region;  // queries d_v, keys/values d_t
  std::vector<GlobalLayerParams> global_layers;
  nn::ParamRef cproj_W, cproj_b;  // d_t -> d_v
  nn::ParamRef gate_W, gate_b;    // [2*d_v, d_v]
  nn::ParamRef theta;             // [1, 3] fusion logits
};

AlignParams init_align_params(nn::ParamStore& ps, const AlignConfig& cfg, int d_v, int d_t,
                              Rng& rng);

struct MultiheadOut {
  nn::Var out;   // [Nq, d_v]
  nn::Var attn;  // [Nq, Nk] head-averaged post-softmax weights
};

/// Scaled dot-product multi-head cross-attention; queries from `queries`,
/// keys and values from `keys_values`.
MultiheadOut multihead_cross(nn::Tape& tp, const AttnParams& p, int n_heads, nn::Var queries,
                             nn::Var keys_values, int d_v);

struct TokenAlignOut {
  nn::Var v_token;  // [N, d_v]
  nn::Var attn;     // [N, L]
  nn::Var loss;     // scalar
};

TokenAlignOut token_align(nn::Tape& tp, const AttnParams& p, const AlignConfig& cfg,
                          nn::Var v_combined, nn::Var c_tokens);

// Constant pooling matrices; regions and phrases are means over windows.
nn::Tensor region_matrix(const GridGeometry& geometry, int window);   // [K, N]
nn::Tensor phrase_matrix(int64_t n_tokens, int window);               // [M, L]
nn::Tensor scatter_matrix(const GridGeometry& geometry, int window);  // [N, K]
int64_t region_count(const GridGeometry& geometry, int window);

nn::Var build_regions(nn::Tape& tp, nn::Var v_combined, const GridGeometry& geometry, int window);
nn::Var build_phrases(nn::Tape& tp, nn::Var c_tokens, int window);

struct RegionAlignOut {
  nn::Var v_region_raw;  // [K, d_v]
  nn::Var loss;          // scalar, mean negative cosine over region/phrase pairs
};

RegionAlignOut region_align(nn::Tape& tp, const AttnParams& p, const AlignConfig& cfg,
                            nn::Var regions, nn::Var phrases);

nn::Var scatter_regions(nn::Tape& tp, nn::Var v_region_raw, const GridGeometry& geometry,
                        int window);

struct GlobalAlignOut {
  nn::Var v_aligned;  // [N, d_v] gated mix of visual encoding and caption
  nn::Var v_global;   // [N, d_v] transformer output before gating
  nn::Var c_proj;     // [1, d_v] caption embedding in visual width
  nn::Var gate;       // [N, d_v] sigmoid gate values
  nn::Var loss;       // scalar
};

GlobalAlignOut global_align(nn::Tape& tp, const AlignParams& p, const AlignConfig& cfg,
                            nn::Var v_combined, nn::Var c_global);

struct FuseOut {
  nn::Var v_fused;
  nn::Tensor alpha;  // [1, 3]; zero at disabled levels
};

/// Softmax(theta)-weighted sum over the enabled levels.
FuseOut fuse(nn::Tape& tp, nn::Var theta, const std::vector<std::pair<nn::Var, bool>>& levels);

struct AlignmentVars {
  nn::Var v_token, v_region, v_global_aligned;  // invalid() when disabled
  nn::Var v_fused;
  nn::Var l_token, l_region, l_global;  // scalar vars (0 constants when disabled)
  nn::Var attention;                    // invalid() when token level disabled
  nn::Tensor fusion_weights;            // [1, 3]
};

AlignmentVars vlhsa_forward(nn::Tape& tp, const AlignParams& p, const AlignConfig& cfg,
                            const GridGeometry& geometry, const BundleVars& bundle);

/// Value-level snapshot of a forward pass, matching the module contract.
struct AlignmentOutput {
  nn::Tensor v_token, v_region, v_global_aligned, v_fused;
  nn::Tensor fusion_weights;  // [1, 3]
  nn::Tensor attention;       // [N, L]
  double l_token = 0, l_region = 0, l_global = 0;
};

AlignmentOutput alignment_values(const nn::Tape& tp, const AlignmentVars& v);

}  // namespace vlhsa
