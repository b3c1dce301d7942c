#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "vlhsa/datagen.hpp"
#include "vlhsa/params.hpp"
#include "vlhsa/tape.hpp"

namespace vlhsa {

struct EncoderConfig {
  int d_v = 256;
  int d_b = 128;
  int d_t = 128;
  int depth = 4;  // toy profile; the full-scale profile uses 24
  int patch_px = 96;
  int adapter_hidden = 0;  // 0 means d_v

  int adapter_width() const { return adapter_hidden > 0 ? adapter_hidden : d_v; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Closed vocabulary over the caption templates plus an OOV token at id 0.
class Vocab {
 public:
  Vocab();
  int64_t size() const { return static_cast<int64_t>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  std::vector<int64_t> encode(const std::string& caption) const;
  static std::vector<std::string> tokenize(const std::string& text);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int64_t> index_;
};

constexpr int64_t kMaxTokens = 32;

struct EncoderParams {
  nn::ParamRef embed_W, embed_b;
  struct Block {
    nn::ParamRef Wa, Wg, bg, Wo;
  };
  std::vector<Block> blocks;
  nn::ParamRef ad_W1, ad_b1, ad_W2, ad_b2;
  nn::ParamRef sec_W, sec_b;
  nn::ParamRef proj_W, proj_b;
  nn::ParamRef tok_E, pos_E;
};

EncoderParams init_encoder_params(nn::ParamStore& ps, const EncoderConfig& cfg,
                                  int64_t vocab_size, Rng& rng);

/// [N, px, px, 3] -> [N, px*px*3]
nn::Tensor flatten_pieces(const nn::Tensor& pieces);

/// Sequential patch encoder: linear patch embedding plus depth residual
/// gated mixing blocks over the piece sequence (causal prefix mean), so the
/// output is order sensitive. Stands in for a state-space backbone behind the
/// same pieces -> [N, d_v] contract.
nn::Var visual_backbone(nn::Tape& tp, const EncoderParams& p, const EncoderConfig& cfg,
                        const nn::Tensor& pieces_flat);

/// V + MLP(V), two linear layers around a GELU.
nn::Var adapt(nn::Tape& tp, const EncoderParams& p, nn::Var V);

/// Affine map of secondary features into the backbone width.
nn::Var project_secondary(nn::Tape& tp, const EncoderParams& p, const EncoderConfig& cfg,
                          nn::Var B);

nn::Var combine(nn::Tape& tp, nn::Var v_adapted, nn::Var b_proj);

struct TextVars {
  nn::Var tokens;  // [L, d_t]
  nn::Var global;  // [1, d_t]
  int64_t length = 0;
};

TextVars encode_text(nn::Tape& tp, const EncoderParams& p, const Vocab& vocab,
                     const std::string& caption);

enum class EncoderMode { toy, precomputed };
EncoderMode encoder_mode_from_string(const std::string& s);
const char* encoder_mode_name(EncoderMode m);

struct BundleVars {
  nn::Var v_combined;  // [N, d_v]
  nn::Var c_tokens;    // [L, d_t]
  nn::Var c_global;    // [1, d_t]
  int64_t n = 0, length = 0;
};

BundleVars build_bundle(nn::Tape& tp, const EncoderParams& p, const EncoderConfig& cfg,
                        const Vocab& vocab, const PuzzleInstance& inst, EncoderMode mode,
                        bool zero_text);

/// Value-level snapshot of a bundle (combined visual + text features).
struct FeatureBundle {
  nn::Tensor v_combined;
  nn::Tensor c_tokens;
  nn::Tensor c_global;
  void validate(int n_pieces) const;
};

FeatureBundle bundle_values(const nn::Tape& tp, const BundleVars& b);

}  // namespace vlhsa
