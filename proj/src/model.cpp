#include "vlhsa/model.hpp"

#include <algorithm>

#include "vlhsa/errors.hpp"

namespace vlhsa {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  for (const auto& item : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* k) {
          return item.key() == k;
        }) == allowed.end())
      throw UsageError("unknown key \"" + item.key() + "\" in " + context);
  }
}

void ModelConfig::validate() const {
  enc.validate();
  align.validate(enc.d_v);
  geometry.validate();
  encoder_mode_from_string(encoder_mode);
  if (enc.patch_px != geometry.piece_px)
    throw UsageError("model config: encoder patch_px " + std::to_string(enc.patch_px) +
                     " does not match geometry piece_px " + std::to_string(geometry.piece_px));
  if (align.region_window > std::min(geometry.rows, geometry.cols))
    throw UsageError("model config: region window exceeds grid");
}

nlohmann::json ModelConfig::to_json() const {
  return nlohmann::json{
      {"encoder",
       {{"d_v", enc.d_v},
        {"d_b", enc.d_b},
        {"d_t", enc.d_t},
        {"depth", enc.depth},
        {"patch_px", enc.patch_px},
        {"adapter_hidden", enc.adapter_hidden}}},
      {"align",
       {{"n_heads", align.n_heads},
        {"region_window", align.region_window},
        {"phrase_window", align.phrase_window},
        {"alpha_token", align.alpha_token},
        {"eps", align.eps},
        {"encoder_layers", align.encoder_layers},
        {"enable_token", align.enable_token},
        {"enable_region", align.enable_region},
        {"enable_global", align.enable_global}}},
      {"geometry", geometry},
      {"encoder_mode", encoder_mode},
      {"zero_text", zero_text}};
}

namespace {

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"d_v", "d_b", "d_t", "depth", "patch_px", "adapter_hidden"},
                      "encoder config");
  EncoderConfig e;
  e.d_v = j.value("d_v", e.d_v);
  e.d_b = j.value("d_b", e.d_b);
  e.d_t = j.value("d_t", e.d_t);
  e.depth = j.value("depth", e.depth);
  e.patch_px = j.value("patch_px", e.patch_px);
  e.adapter_hidden = j.value("adapter_hidden", e.adapter_hidden);
  return e;
}

AlignConfig align_config_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"n_heads", "region_window", "phrase_window", "alpha_token", "eps",
                       "encoder_layers", "enable_token", "enable_region", "enable_global"},
                      "align config");
  AlignConfig a;
  a.n_heads = j.value("n_heads", a.n_heads);
  a.region_window = j.value("region_window", a.region_window);
  a.phrase_window = j.value("phrase_window", a.phrase_window);
  a.alpha_token = j.value("alpha_token", a.alpha_token);
  a.eps = j.value("eps", a.eps);
  a.encoder_layers = j.value("encoder_layers", a.encoder_layers);
  a.enable_token = j.value("enable_token", a.enable_token);
  a.enable_region = j.value("enable_region", a.enable_region);
  a.enable_global = j.value("enable_global", a.enable_global);
  return a;
}

}  // namespace

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"encoder", "align", "geometry", "encoder_mode", "zero_text"},
                      "model config");
  ModelConfig c;
  if (j.contains("encoder")) c.enc = encoder_config_from_json(j.at("encoder"));
  if (j.contains("align")) c.align = align_config_from_json(j.at("align"));
  if (j.contains("geometry")) c.geometry = j.at("geometry").get<GridGeometry>();
  c.encoder_mode = j.value("encoder_mode", c.encoder_mode);
  c.zero_text = j.value("zero_text", c.zero_text);
  return c;
}

std::string ModelConfig::canonical_json() const { return to_json().dump(); }

uint64_t ModelConfig::hash() const { return derive_seed(0x56c5a5ull, canonical_json()); }

Model::Model(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(init_seed, "model-init"));
  enc_ = init_encoder_params(ps_, cfg_.enc, vocab_.size(), rng);
  align_ = init_align_params(ps_, cfg_.align, cfg_.enc.d_v, cfg_.enc.d_t, rng);
  head_ = init_head_params(ps_, cfg_.enc.d_v, cfg_.enc.d_v, cfg_.geometry.n_pieces(), rng);
  pair_ = init_pairwise_params(ps_, cfg_.enc.d_v, rng);
}

ForwardVars Model::forward(nn::Tape& tp, const PuzzleInstance& inst) const {
  if (inst.geometry != cfg_.geometry)
    throw UsageError("instance " + inst.id + " geometry does not match the model");
  ForwardVars out;
  out.bundle = build_bundle(tp, enc_, cfg_.enc, vocab_, inst,
                            encoder_mode_from_string(cfg_.encoder_mode), cfg_.zero_text);
  out.align = vlhsa_forward(tp, align_, cfg_.align, cfg_.geometry, out.bundle);
  out.scores = predict_scores(tp, head_, out.align.v_fused);
  return out;
}

Permutation Model::solve(const PuzzleInstance& inst) const {
  nn::Tape tp;
  ForwardVars fv = forward(tp, inst);
  return decode(tp.val(fv.scores));
}

}  // namespace vlhsa
