#include "vlhsa/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "vlhsa/errors.hpp"

namespace vlhsa {

using nn::Tape;
using nn::Tensor;
using nn::Var;

void EncoderConfig::validate() const {
  if (d_v < 1 || d_b < 1 || d_t < 1 || depth < 0 || patch_px < 1 || adapter_hidden < 0)
    throw std::invalid_argument("encoder config: dimensions must be positive");
}

Vocab::Vocab() {
  std::vector<std::string> base = {"<oov>", "a",  "plain", "background", "on",
                                   "at",    "and", "above", "below",      "beside"};
  for (const PaletteColor& c : palette()) base.push_back(c.name);
  for (int s = 0; s < 4; ++s) base.push_back(shape_name(static_cast<Shape>(s)));
  for (int r = 0; r < kRegions; ++r) base.push_back(region_name(r));
  for (const std::string& w : base) {
    if (index_.count(w)) continue;
    index_[w] = static_cast<int64_t>(words_.size());
    words_.push_back(w);
  }
}

std::vector<std::string> Vocab::tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    // trim punctuation from both ends, keep in-word hyphens
    size_t b = 0, e = cur.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(cur[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(cur[e - 1]))) --e;
    if (e > b) out.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

std::vector<int64_t> Vocab::encode(const std::string& caption) const {
  if (caption.empty()) throw std::invalid_argument("encode_text: empty caption");
  std::vector<int64_t> ids;
  for (const std::string& w : tokenize(caption)) {
    auto it = index_.find(w);
    ids.push_back(it == index_.end() ? 0 : it->second);
    if (static_cast<int64_t>(ids.size()) == kMaxTokens) break;
  }
  if (ids.empty()) throw std::invalid_argument("encode_text: caption has no tokens");
  return ids;
}

EncoderParams init_encoder_params(nn::ParamStore& ps, const EncoderConfig& cfg,
                                  int64_t vocab_size, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  const int64_t P = static_cast<int64_t>(cfg.patch_px) * cfg.patch_px * 3;
  const int64_t dv = cfg.d_v, db = cfg.d_b, dt = cfg.d_t, hid = cfg.adapter_width();

  const auto mk = [&](const std::string& name, std::vector<int64_t> shape, int64_t fan_in) {
    ps.add(name, std::move(shape), fan_in, rng);
    return ps.ref(name);
  };

  p.embed_W = mk("enc.embed.W", {P, dv}, P);
  p.embed_b = mk("enc.embed.b", {1, dv}, P);
  for (int k = 0; k < cfg.depth; ++k) {
    const std::string pre = "enc.blk" + std::to_string(k) + ".";
    EncoderParams::Block b;
    b.Wa = mk(pre + "Wa", {dv, dv}, dv);
    b.Wg = mk(pre + "Wg", {dv, dv}, dv);
    b.bg = mk(pre + "bg", {1, dv}, dv);
    b.Wo = mk(pre + "Wo", {dv, dv}, dv);
    p.blocks.push_back(b);
  }
  p.ad_W1 = mk("enc.adapter.W1", {dv, hid}, dv);
  p.ad_b1 = mk("enc.adapter.b1", {1, hid}, dv);
  p.ad_W2 = mk("enc.adapter.W2", {hid, dv}, hid);
  p.ad_b2 = mk("enc.adapter.b2", {1, dv}, hid);
  p.sec_W = mk("enc.sec.W", {P, db}, P);
  p.sec_b = mk("enc.sec.b", {1, db}, P);
  p.proj_W = mk("enc.proj.W", {db, dv}, db);
  p.proj_b = mk("enc.proj.b", {1, dv}, db);
  p.tok_E = mk("enc.text.tok", {vocab_size, dt}, dt);
  p.pos_E = mk("enc.text.pos", {kMaxTokens, dt}, dt);
  return p;
}

nn::Tensor flatten_pieces(const Tensor& pieces) {
  if (pieces.shape.size() != 4 || pieces.shape[3] != 3)
    throw std::invalid_argument("flatten_pieces: expected [N, px, px, 3], got " +
                                pieces.shape_str());
  Tensor flat;
  flat.shape = {pieces.shape[0], pieces.shape[1] * pieces.shape[2] * 3};
  flat.data = pieces.data;
  return flat;
}

nn::Var visual_backbone(Tape& tp, const EncoderParams& p, const EncoderConfig& cfg,
                        const Tensor& pieces_flat) {
  const int64_t P = static_cast<int64_t>(cfg.patch_px) * cfg.patch_px * 3;
  if (pieces_flat.shape.size() != 2 || pieces_flat.shape[1] != P)
    throw std::invalid_argument("visual_backbone: pieces shape " + pieces_flat.shape_str() +
                                " does not match patch size " + std::to_string(cfg.patch_px));
  Var x = tp.constant(pieces_flat);
  Var h = tp.add_rowvec(tp.matmul(x, pvar(tp, p.embed_W)), pvar(tp, p.embed_b));
  for (const EncoderParams::Block& blk : p.blocks) {
    Var s = tp.cumavg_rows(tp.matmul(h, pvar(tp, blk.Wa)));
    Var g = tp.sigmoid(tp.add_rowvec(tp.matmul(h, pvar(tp, blk.Wg)), pvar(tp, blk.bg)));
    Var out = tp.matmul(tp.mul(g, s), pvar(tp, blk.Wo));
    h = tp.add(h, out);
  }
  return h;
}

nn::Var adapt(Tape& tp, const EncoderParams& p, Var V) {
  Var hidden = tp.gelu(tp.add_rowvec(tp.matmul(V, pvar(tp, p.ad_W1)), pvar(tp, p.ad_b1)));
  Var delta = tp.add_rowvec(tp.matmul(hidden, pvar(tp, p.ad_W2)), pvar(tp, p.ad_b2));
  return tp.add(V, delta);
}

nn::Var project_secondary(Tape& tp, const EncoderParams& p, const EncoderConfig& cfg, Var B) {
  if (tp.val(B).cols() != cfg.d_b)
    throw std::invalid_argument("project_secondary: width " +
                                std::to_string(tp.val(B).cols()) + " does not match d_b " +
                                std::to_string(cfg.d_b));
  return tp.add_rowvec(tp.matmul(B, pvar(tp, p.proj_W)), pvar(tp, p.proj_b));
}

nn::Var combine(Tape& tp, Var v_adapted, Var b_proj) { return tp.add(v_adapted, b_proj); }

TextVars encode_text(Tape& tp, const EncoderParams& p, const Vocab& vocab,
                     const std::string& caption) {
  const std::vector<int64_t> ids = vocab.encode(caption);
  const int64_t L = static_cast<int64_t>(ids.size());
  Var emb = tp.gather_rows(pvar(tp, p.tok_E), ids);
  Var pos = tp.slice_rows(pvar(tp, p.pos_E), 0, L);
  Var tokens = tp.add(emb, pos);
  return TextVars{tokens, tp.mean_over_rows(tokens), L};
}

EncoderMode encoder_mode_from_string(const std::string& s) {
  if (s == "toy") return EncoderMode::toy;
  if (s == "precomputed") return EncoderMode::precomputed;
  throw UsageError("unknown encoder mode: " + s + " (expected toy or precomputed)");
}

const char* encoder_mode_name(EncoderMode m) {
  return m == EncoderMode::toy ? "toy" : "precomputed";
}

BundleVars build_bundle(Tape& tp, const EncoderParams& p, const EncoderConfig& cfg,
                        const Vocab& vocab, const PuzzleInstance& inst, EncoderMode mode,
                        bool zero_text) {
  inst.validate();
  const Tensor flat = flatten_pieces(inst.pieces);
  Var V = visual_backbone(tp, p, cfg, flat);
  Var v_adapted = adapt(tp, p, V);

  Var B;
  if (mode == EncoderMode::toy) {
    B = tp.add_rowvec(tp.matmul(tp.constant(flat), pvar(tp, p.sec_W)), pvar(tp, p.sec_b));
  } else {
    if (!inst.vfeat)
      throw UsageError("record " + inst.id + ": precomputed mode needs .vfeat features");
    if (inst.vfeat->cols() != cfg.d_b)
      throw IoError("record " + inst.id + ": vfeat width " + std::to_string(inst.vfeat->cols()) +
                    " does not match configured d_b " + std::to_string(cfg.d_b));
    B = tp.constant(*inst.vfeat);
  }
  Var v_combined = combine(tp, v_adapted, project_secondary(tp, p, cfg, B));

  BundleVars out;
  out.v_combined = v_combined;
  out.n = inst.geometry.n_pieces();

  if (mode == EncoderMode::precomputed && inst.tfeat && inst.tglobal) {
    if (inst.tfeat->cols() != cfg.d_t || inst.tglobal->cols() != cfg.d_t)
      throw IoError("record " + inst.id + ": text feature width does not match configured d_t " +
                    std::to_string(cfg.d_t));
    out.c_tokens = tp.constant(*inst.tfeat);
    out.c_global = tp.constant(*inst.tglobal);
    out.length = inst.tfeat->rows();
  } else {
    TextVars text = encode_text(tp, p, vocab, inst.caption);
    out.c_tokens = text.tokens;
    out.c_global = text.global;
    out.length = text.length;
  }

  if (zero_text) {
    out.c_tokens = tp.constant(Tensor::zeros({out.length, cfg.d_t}));
    out.c_global = tp.constant(Tensor::zeros({1, cfg.d_t}));
  }
  return out;
}

void FeatureBundle::validate(int n_pieces) const {
  if (!v_combined.all_finite() || !c_tokens.all_finite() || !c_global.all_finite())
    throw NumericError("feature bundle contains non-finite values");
  if (v_combined.rows() != n_pieces)
    throw std::invalid_argument("feature bundle: piece count mismatch");
  if (c_tokens.rows() < 1) throw std::invalid_argument("feature bundle: L must be >= 1");
}

FeatureBundle bundle_values(const Tape& tp, const BundleVars& b) {
  return FeatureBundle{tp.val(b.v_combined), tp.val(b.c_tokens), tp.val(b.c_global)};
}

}  // namespace vlhsa
