#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vlhsa/encoders.hpp"
#include "vlhsa/errors.hpp"

using namespace vlhsa;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

EncoderConfig small_cfg() {
  EncoderConfig c;
  c.d_v = 32;
  c.d_b = 16;
  c.d_t = 12;
  c.depth = 2;
  c.patch_px = 4;
  return c;
}

struct Fixture {
  EncoderConfig cfg = small_cfg();
  nn::ParamStore ps;
  Vocab vocab;
  EncoderParams p;
  Fixture(uint64_t seed = 5) {
    Rng rng(seed);
    p = init_encoder_params(ps, cfg, vocab.size(), rng);
  }
};

Tensor random_pieces(int n, int px, uint64_t seed) {
  Rng rng(seed);
  Tensor t({n, px, px, 3});
  for (double& v : t.data) v = rng.uniform();
  return t;
}

void zero(nn::ParamRef r) { r.value->fill(0.0); }

}  // namespace

TEST_CASE("visual backbone contract") {
  Fixture f;
  const Tensor pieces = random_pieces(9, 4, 1);
  const Tensor flat = flatten_pieces(pieces);

  SUBCASE("output shape is N x d_v") {
    Tape tp;
    Var v = visual_backbone(tp, f.p, f.cfg, flat);
    CHECK(tp.val(v).shape == std::vector<int64_t>{9, 32});
  }

  SUBCASE("identical pieces at different sequence positions get different rows") {
    Tensor flat2 = flat;
    // make pieces 2 and 6 identical
    const int64_t P = flat2.cols();
    for (int64_t c = 0; c < P; ++c) flat2.at(6, c) = flat2.at(2, c);
    Tape tp;
    Var v = visual_backbone(tp, f.p, f.cfg, flat2);
    double diff = 0;
    for (int64_t c = 0; c < 32; ++c) diff += std::abs(tp.val(v).at(2, c) - tp.val(v).at(6, c));
    CHECK(diff > 1e-6);
  }

  SUBCASE("zeroed mixing blocks reduce to the patch projection") {
    for (auto& blk : f.p.blocks) {
      zero(blk.Wa);
      zero(blk.Wg);
      zero(blk.bg);
      zero(blk.Wo);
    }
    Tape tp;
    Var v = visual_backbone(tp, f.p, f.cfg, flat);
    Var proj = tp.add_rowvec(tp.matmul(tp.constant(flat), nn::pvar(tp, f.p.embed_W)),
                             nn::pvar(tp, f.p.embed_b));
    CHECK(tp.val(v).data == tp.val(proj).data);
  }

  SUBCASE("wrong piece shape is rejected") {
    Tape tp;
    Tensor bad({9, 17});
    CHECK_THROWS_AS(visual_backbone(tp, f.p, f.cfg, bad), std::invalid_argument);
  }
}

TEST_CASE("adapt") {
  Fixture f;
  Rng rng(2);
  Tensor V({5, 32});
  for (double& v : V.data) v = rng.normal();

  SUBCASE("zero adapter is the identity") {
    zero(f.p.ad_W1);
    zero(f.p.ad_b1);
    zero(f.p.ad_W2);
    zero(f.p.ad_b2);
    Tape tp;
    Var out = adapt(tp, f.p, tp.constant(V));
    CHECK(tp.val(out).data == V.data);
  }

  SUBCASE("shape preserved") {
    Tape tp;
    Var out = adapt(tp, f.p, tp.constant(V));
    CHECK(tp.val(out).shape == V.shape);
  }

  SUBCASE("analytic gradient of a scalar probe matches finite differences to 1e-4") {
    // probe: sum of adapt(V) weighted by a fixed random matrix
    Tensor W = V;
    for (double& v : W.data) v = rng.normal();
    Tensor analytic = Tensor::zeros(V.shape);
    {
      Tape tp;
      Var x = tp.param(V, &analytic);
      tp.backward(tp.sum_all(tp.mul(adapt(tp, f.p, x), tp.constant(W))));
    }
    const auto eval = [&](const Tensor& x) {
      Tape tp;
      return tp.scalar(tp.sum_all(tp.mul(adapt(tp, f.p, tp.constant(x)), tp.constant(W))));
    };
    const double h = 1e-5;
    for (size_t k = 0; k < V.data.size(); k += 7) {
      Tensor xp = V, xm = V;
      xp.data[k] += h;
      xm.data[k] -= h;
      const double fd = (eval(xp) - eval(xm)) / (2 * h);
      CHECK(std::abs(fd - analytic.data[k]) <=
            1e-4 * std::max({std::abs(fd), std::abs(analytic.data[k]), 1e-6}));
    }
  }
}

TEST_CASE("project_secondary") {
  Fixture f;
  Rng rng(3);
  Tensor B({6, 16});
  for (double& v : B.data) v = rng.normal();

  SUBCASE("zero map gives zeros") {
    zero(f.p.proj_W);
    zero(f.p.proj_b);
    Tape tp;
    Var out = project_secondary(tp, f.p, f.cfg, tp.constant(B));
    for (double v : tp.val(out).data) CHECK(v == 0.0);
  }

  SUBCASE("identity weight with d_b == d_v passes through") {
    EncoderConfig cfg = small_cfg();
    cfg.d_b = cfg.d_v;
    nn::ParamStore ps;
    Rng r2(9);
    Vocab vocab;
    EncoderParams p = init_encoder_params(ps, cfg, vocab.size(), r2);
    p.proj_W.value->fill(0.0);
    for (int i = 0; i < cfg.d_v; ++i) p.proj_W.value->at(i, i) = 1.0;
    p.proj_b.value->fill(0.0);
    Tensor B2({4, static_cast<int64_t>(cfg.d_v)});
    for (double& v : B2.data) v = r2.normal();
    Tape tp;
    Var out = project_secondary(tp, p, cfg, tp.constant(B2));
    CHECK(tp.val(out).data == B2.data);
  }

  SUBCASE("matches a naive triple-loop affine map") {
    Tape tp;
    Var out = project_secondary(tp, f.p, f.cfg, tp.constant(B));
    for (int64_t i = 0; i < 6; ++i)
      for (int64_t j = 0; j < 32; ++j) {
        double s = f.p.proj_b.value->at(0, j);
        for (int64_t k = 0; k < 16; ++k) s += B.at(i, k) * f.p.proj_W.value->at(k, j);
        CHECK(tp.val(out).at(i, j) == doctest::Approx(s).epsilon(1e-6));
      }
  }

  SUBCASE("width mismatch is rejected") {
    Tape tp;
    Tensor bad({6, 15});
    CHECK_THROWS_AS(project_secondary(tp, f.p, f.cfg, tp.constant(bad)), std::invalid_argument);
  }
}

TEST_CASE("combine is an elementwise sum with the obvious identities") {
  Rng rng(4);
  Tensor A({3, 8}), B({3, 8}), Z = Tensor::zeros({3, 8});
  for (double& v : A.data) v = rng.normal();
  for (double& v : B.data) v = rng.normal();
  Tape tp;
  CHECK(tp.val(combine(tp, tp.constant(A), tp.constant(Z))).data == A.data);
  CHECK(tp.val(combine(tp, tp.constant(Z), tp.constant(B))).data == B.data);
  CHECK(tp.val(combine(tp, tp.constant(A), tp.constant(B))).data ==
        tp.val(combine(tp, tp.constant(B), tp.constant(A))).data);
}

TEST_CASE("encode_text") {
  Fixture f;

  SUBCASE("tokenizer lowercases, splits, strips punctuation") {
    const auto toks = Vocab::tokenize("A red Circle, top-left!");
    REQUIRE(toks.size() == 4);
    CHECK(toks[0] == "a");
    CHECK(toks[1] == "red");
    CHECK(toks[2] == "circle");
    CHECK(toks[3] == "top-left");
  }

  SUBCASE("single-token caption: global equals the token row") {
    Tape tp;
    TextVars t = encode_text(tp, f.p, f.vocab, "circle");
    REQUIRE(t.length == 1);
    CHECK(tp.val(t.global).data == std::vector<double>(tp.val(t.tokens).data));
  }

  SUBCASE("identical token embeddings mean to themselves") {
    // every vocab row identical, positions zeroed
    for (int64_t r = 1; r < f.p.tok_E.value->rows(); ++r)
      for (int64_t c = 0; c < f.p.tok_E.value->cols(); ++c)
        f.p.tok_E.value->at(r, c) = f.p.tok_E.value->at(0, c);
    f.p.pos_E.value->fill(0.0);
    Tape tp;
    TextVars t = encode_text(tp, f.p, f.vocab, "red circle above blue square");
    for (int64_t c = 0; c < 12; ++c)
      CHECK(tp.val(t.global).at(0, c) == doctest::Approx(f.p.tok_E.value->at(0, c)));
  }

  SUBCASE("global embedding equals column means of token embeddings") {
    Tape tp;
    TextVars t = encode_text(tp, f.p, f.vocab, "a red circle at top-left on a green background");
    const Tensor& tok = tp.val(t.tokens);
    for (int64_t c = 0; c < tok.cols(); ++c) {
      double s = 0;
      for (int64_t r = 0; r < tok.rows(); ++r) s += tok.at(r, c);
      CHECK(tp.val(t.global).at(0, c) == doctest::Approx(s / tok.rows()).epsilon(1e-6));
    }
  }

  SUBCASE("empty caption is rejected") {
    Tape tp;
    CHECK_THROWS_AS(encode_text(tp, f.p, f.vocab, ""), std::invalid_argument);
  }

  SUBCASE("out-of-vocabulary words map to the OOV id") {
    const auto ids = f.vocab.encode("zephyr circle");
    REQUIRE(ids.size() == 2);
    CHECK(ids[0] == 0);
    CHECK(ids[1] != 0);
  }
}

TEST_CASE("build_bundle") {
  Fixture f;
  GridGeometry g;
  g.rows = 3;
  g.cols = 3;
  g.piece_px = 4;
  g.gap_px = 0;
  g.jitter_px = 0;

  PuzzleInstance inst;
  inst.id = "t0";
  inst.geometry = g;
  inst.pieces = random_pieces(9, 4, 11);
  Rng prng(12);
  inst.shuffle = Permutation::random(9, prng);
  inst.caption = "a red circle at top-left on a green background";

  SUBCASE("toy bundle shape and determinism") {
    Tape tp1, tp2;
    BundleVars b1 = build_bundle(tp1, f.p, f.cfg, f.vocab, inst, EncoderMode::toy, false);
    BundleVars b2 = build_bundle(tp2, f.p, f.cfg, f.vocab, inst, EncoderMode::toy, false);
    CHECK(tp1.val(b1.v_combined).shape == std::vector<int64_t>{9, 32});
    CHECK(tp1.val(b1.v_combined).data == tp2.val(b2.v_combined).data);
    CHECK(tp1.val(b1.c_tokens).data == tp2.val(b2.c_tokens).data);
    FeatureBundle fb = bundle_values(tp1, b1);
    CHECK_NOTHROW(fb.validate(9));
  }

  SUBCASE("bundle equals the manual composition of backbone, adapt, project, combine") {
    Tape tp;
    BundleVars b = build_bundle(tp, f.p, f.cfg, f.vocab, inst, EncoderMode::toy, false);
    Tape tm;
    const Tensor flat = flatten_pieces(inst.pieces);
    Var V = visual_backbone(tm, f.p, f.cfg, flat);
    Var Va = adapt(tm, f.p, V);
    Var B = tm.add_rowvec(tm.matmul(tm.constant(flat), nn::pvar(tm, f.p.sec_W)),
                          nn::pvar(tm, f.p.sec_b));
    Var Vc = combine(tm, Va, project_secondary(tm, f.p, f.cfg, B));
    CHECK(tp.val(b.v_combined).data == tm.val(Vc).data);
  }

  SUBCASE("precomputed mode uses loaded features and still applies the residual path") {
    PuzzleInstance pre = inst;
    Rng r2(13);
    nn::Tensor vf({9, 16});
    for (double& v : vf.data) v = r2.normal();
    nn::Tensor tf({4, 12}), tg({1, 12});
    for (double& v : tf.data) v = r2.normal();
    for (double& v : tg.data) v = r2.normal();
    pre.vfeat = vf;
    pre.tfeat = tf;
    pre.tglobal = tg;

    Tape tp;
    BundleVars b = build_bundle(tp, f.p, f.cfg, f.vocab, pre, EncoderMode::precomputed, false);
    CHECK(tp.val(b.c_tokens).data == tf.data);
    CHECK(tp.val(b.c_global).data == tg.data);

    Tape tm;
    const Tensor flat = flatten_pieces(pre.pieces);
    Var V = visual_backbone(tm, f.p, f.cfg, flat);
    Var Vc = combine(tm, adapt(tm, f.p, V),
                     project_secondary(tm, f.p, f.cfg, tm.constant(vf)));
    CHECK(tp.val(b.v_combined).data == tm.val(Vc).data);
  }

  SUBCASE("precomputed mode without features is a usage error") {
    Tape tp;
    CHECK_THROWS_AS(build_bundle(tp, f.p, f.cfg, f.vocab, inst, EncoderMode::precomputed, false),
                    UsageError);
  }

  SUBCASE("precomputed width mismatch is a load error") {
    PuzzleInstance pre = inst;
    pre.vfeat = nn::Tensor::zeros({9, 15});
    Tape tp;
    CHECK_THROWS_AS(build_bundle(tp, f.p, f.cfg, f.vocab, pre, EncoderMode::precomputed, false),
                    IoError);
  }

  SUBCASE("zero_text blanks the caption features") {
    Tape tp;
    BundleVars b = build_bundle(tp, f.p, f.cfg, f.vocab, inst, EncoderMode::toy, true);
    for (double v : tp.val(b.c_tokens).data) CHECK(v == 0.0);
    for (double v : tp.val(b.c_global).data) CHECK(v == 0.0);
  }
}
