#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "vlhsa/align.hpp"
#include "vlhsa/assignment.hpp"
#include "vlhsa/encoders.hpp"

namespace vlhsa {

/// Everything needed to rebuild the network: encoder/alignment dimensions,
/// the puzzle geometry it was built for, and the feature source.
struct ModelConfig {
  EncoderConfig enc;
  AlignConfig align;
  GridGeometry geometry;
  std::string encoder_mode = "toy";
  bool zero_text = false;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  std::string canonical_json() const;
  uint64_t hash() const;
};

struct ForwardVars {
  BundleVars bundle;
  AlignmentVars align;
  nn::Var scores;  // [N, N]
};

class Model {
 public:
  Model(ModelConfig cfg, uint64_t init_seed);

  ForwardVars forward(nn::Tape& tp, const PuzzleInstance& inst) const;
  /// Forward + Hungarian decode, no gradient bookkeeping needed by callers.
  Permutation solve(const PuzzleInstance& inst) const;

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  const EncoderParams& encoder_params() const { return enc_; }
  const AlignParams& align_params() const { return align_; }
  const HeadParams& head_params() const { return head_; }
  const PairwiseParams& pairwise_params() const { return pair_; }

 private:
  ModelConfig cfg_;
  Vocab vocab_;
  nn::ParamStore ps_;
  EncoderParams enc_;
  AlignParams align_;
  HeadParams head_;
  PairwiseParams pair_;
};

/// Strict JSON helper: throws UsageError when j has keys outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

}  // namespace vlhsa
