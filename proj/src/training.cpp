#include "vlhsa/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>

#include "vlhsa/errors.hpp"

namespace fs = std::filesystem;

namespace vlhsa {

void TrainConfig::validate() const {
  if (lr <= 0) throw UsageError("train config: lr must be positive");
  if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw UsageError("train config: max_epochs must be >= 1");
  if (cosine_eta_min >= lr) throw UsageError("train config: eta_min must be below lr");
  if (scheduler != "cosine" && scheduler != "plateau")
    throw UsageError("train config: scheduler must be cosine or plateau");
  if (label_smoothing < 0 || label_smoothing >= 0.5)
    throw UsageError("train config: label_smoothing must be in [0, 0.5)");
  if (weight_decay < 0) throw UsageError("train config: negative weight_decay");
  encoder_mode_from_string(encoder_mode);
}

nlohmann::json TrainConfig::to_json() const {
  return nlohmann::json{
      {"batch_size", batch_size},
      {"max_epochs", max_epochs},
      {"lr", lr},
      {"weight_decay", weight_decay},
      {"scheduler", scheduler},
      {"cosine_t_max", cosine_t_max},
      {"cosine_eta_min", cosine_eta_min},
      {"plateau_factor", plateau_factor},
      {"plateau_patience", plateau_patience},
      {"label_smoothing", label_smoothing},
      {"lambda", lambda},
      {"lambda_p", lambda_p},
      {"seed", seed},
      {"encoder_mode", encoder_mode},
      {"zero_text", zero_text},
      {"color_jitter", color_jitter},
      {"grad_clip", grad_clip},
      {"early_stop_piece", early_stop_piece},
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
        {"enable_global", align.enable_global}}}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"batch_size", "max_epochs", "lr", "weight_decay", "scheduler",
                       "cosine_t_max", "cosine_eta_min", "plateau_factor", "plateau_patience",
                       "label_smoothing", "lambda", "lambda_p", "seed", "encoder_mode",
                       "zero_text", "color_jitter", "grad_clip", "early_stop_piece", "encoder",
                       "align"},
                      "train config");
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.scheduler = j.value("scheduler", c.scheduler);
  c.cosine_t_max = j.value("cosine_t_max", c.cosine_t_max);
  c.cosine_eta_min = j.value("cosine_eta_min", c.cosine_eta_min);
  c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
  c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.lambda = j.value("lambda", c.lambda);
  c.lambda_p = j.value("lambda_p", c.lambda_p);
  c.seed = j.value("seed", c.seed);
  c.encoder_mode = j.value("encoder_mode", c.encoder_mode);
  c.zero_text = j.value("zero_text", c.zero_text);
  c.color_jitter = j.value("color_jitter", c.color_jitter);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.early_stop_piece = j.value("early_stop_piece", c.early_stop_piece);
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    reject_unknown_keys(e, {"d_v", "d_b", "d_t", "depth", "patch_px", "adapter_hidden"},
                        "train config encoder");
    c.enc.d_v = e.value("d_v", c.enc.d_v);
    c.enc.d_b = e.value("d_b", c.enc.d_b);
    c.enc.d_t = e.value("d_t", c.enc.d_t);
    c.enc.depth = e.value("depth", c.enc.depth);
    c.enc.patch_px = e.value("patch_px", 0);
    c.enc.adapter_hidden = e.value("adapter_hidden", c.enc.adapter_hidden);
  } else {
    c.enc.patch_px = 0;
  }
  if (j.contains("align")) {
    const auto& a = j.at("align");
    reject_unknown_keys(a,
                        {"n_heads", "region_window", "phrase_window", "alpha_token", "eps",
                         "encoder_layers", "enable_token", "enable_region", "enable_global"},
                        "train config align");
    c.align.n_heads = a.value("n_heads", c.align.n_heads);
    c.align.region_window = a.value("region_window", c.align.region_window);
    c.align.phrase_window = a.value("phrase_window", c.align.phrase_window);
    c.align.alpha_token = a.value("alpha_token", c.align.alpha_token);
    c.align.eps = a.value("eps", c.align.eps);
    c.align.encoder_layers = a.value("encoder_layers", c.align.encoder_layers);
    c.align.enable_token = a.value("enable_token", c.align.enable_token);
    c.align.enable_region = a.value("enable_region", c.align.enable_region);
    c.align.enable_global = a.value("enable_global", c.align.enable_global);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot open config file " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return from_json(j);
}

ModelConfig TrainConfig::model_config(const GridGeometry& geometry) const {
  ModelConfig m;
  m.enc = enc;
  if (m.enc.patch_px == 0) m.enc.patch_px = geometry.piece_px;
  m.align = align;
  m.geometry = geometry;
  m.encoder_mode = encoder_mode;
  m.zero_text = zero_text;
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

struct Reader {
  const uint8_t* p;
  size_t left;
  std::string where;

  void need(size_t n, const std::string& what) {
    if (left < n) throw IoError("truncated checkpoint: incomplete " + what);
  }
  uint32_t u32(const std::string& what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[static_cast<size_t>(i)]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  uint64_t u64(const std::string& what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[static_cast<size_t>(i)]) << (8 * i);
    p += 8;
    left -= 8;
    return v;
  }
  double f64(const std::string& what) {
    const uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(uint32_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

}  // namespace

const Checkpoint::Block* Checkpoint::find(const std::string& name) const {
  for (const Block& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

ModelConfig Checkpoint::model_config() const {
  try {
    return ModelConfig::from_json(nlohmann::json::parse(config_json));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint has malformed config: ") + e.what());
  }
}

Model Checkpoint::materialize() const {
  Model model(model_config(), 0);
  nn::ParamStore& ps = model.params();
  for (size_t i = 0; i < ps.count(); ++i) {
    nn::ParamStore::Entry& e = ps.entry(i);
    const Block* b = find("param/" + e.name);
    if (!b) throw IoError("checkpoint missing parameter block " + e.name);
    if (b->shape != e.value.shape)
      throw IoError("checkpoint block " + e.name + " has wrong shape");
    for (size_t k = 0; k < e.value.data.size(); ++k)
      e.value.data[k] = static_cast<double>(b->data[k]);
  }
  return model;
}

void Checkpoint::save(const std::string& path) const {
  std::string out;
  out.append(kMagic, 8);
  put_u32(out, version);
  put_u64(out, config_hash);
  put_u32(out, static_cast<uint32_t>(config_json.size()));
  out += config_json;
  put_u32(out, epoch);
  put_f64(out, best_val_piece);
  put_u64(out, adam_step);
  put_u32(out, static_cast<uint32_t>(blocks.size()));
  for (const Block& b : blocks) {
    put_u32(out, static_cast<uint32_t>(b.name.size()));
    out += b.name;
    put_u32(out, static_cast<uint32_t>(b.shape.size()));
    for (int64_t d : b.shape) put_u64(out, static_cast<uint64_t>(d));
    for (float v : b.data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("checkpoint write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot finalize checkpoint " + path + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  Reader r{bytes.data(), bytes.size(), path};

  r.need(8, "magic");
  if (std::memcmp(r.p, kMagic, 8) != 0) throw IoError("bad checkpoint magic in " + path);
  r.p += 8;
  r.left -= 8;

  Checkpoint ck;
  ck.version = r.u32("version");
  if (ck.version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(ck.version));
  ck.config_hash = r.u64("config hash");
  const uint32_t clen = r.u32("config length");
  ck.config_json = r.str(clen, "config json");
  ck.epoch = r.u32("epoch");
  ck.best_val_piece = r.f64("best metric");
  ck.adam_step = r.u64("optimizer step");
  const uint32_t nblocks = r.u32("block count");
  for (uint32_t k = 0; k < nblocks; ++k) {
    Block b;
    const uint32_t nlen = r.u32("block name length");
    b.name = r.str(nlen, "block name");
    const uint32_t ndim = r.u32("block " + b.name + " rank");
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      b.shape.push_back(static_cast<int64_t>(r.u64("block " + b.name + " shape")));
      numel *= b.shape.back();
    }
    b.data.resize(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i) {
      const uint32_t bits = r.u32("block " + b.name + " payload");
      float v;
      std::memcpy(&v, &bits, 4);
      b.data[static_cast<size_t>(i)] = v;
    }
    ck.blocks.push_back(std::move(b));
  }

  const uint64_t expect = derive_seed(0x56c5a5ull, ck.config_json);
  if (expect != ck.config_hash)
    std::fprintf(stderr, "warning: checkpoint %s config hash mismatch\n", path.c_str());
  return ck;
}

Checkpoint snapshot_checkpoint(const Model& model, const AdamW& opt, uint32_t epoch,
                               double best_val_piece) {
  Checkpoint ck;
  ck.config_json = model.config().canonical_json();
  ck.config_hash = model.config().hash();
  ck.epoch = epoch;
  ck.best_val_piece = best_val_piece;
  ck.adam_step = opt.steps();

  const nn::ParamStore& ps = model.params();
  const auto push = [&](const std::string& name, const nn::Tensor& t) {
    Checkpoint::Block b;
    b.name = name;
    b.shape = t.shape;
    b.data.reserve(t.data.size());
    for (double v : t.data) b.data.push_back(static_cast<float>(v));
    ck.blocks.push_back(std::move(b));
  };
  for (size_t i = 0; i < ps.count(); ++i) push("param/" + ps.entry(i).name, ps.entry(i).value);
  for (size_t i = 0; i < ps.count(); ++i) push("adam/m/" + ps.entry(i).name, opt.moment1(i));
  for (size_t i = 0; i < ps.count(); ++i) push("adam/v/" + ps.entry(i).name, opt.moment2(i));
  return ck;
}

// ---------------------------------------------------------------------------
// optimizer & scheduler
// ---------------------------------------------------------------------------

AdamW::AdamW(nn::ParamStore& ps, double beta1, double beta2, double eps)
    : ps_(ps), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (size_t i = 0; i < ps.count(); ++i) {
    m_.push_back(nn::Tensor::zeros(ps.entry(i).value.shape));
    v_.push_back(nn::Tensor::zeros(ps.entry(i).value.shape));
  }
}

void AdamW::step(double lr, double weight_decay) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < ps_.count(); ++i) {
    nn::ParamStore::Entry& e = ps_.entry(i);
    for (size_t k = 0; k < e.value.data.size(); ++k) {
      const double g = e.grad.data[k];
      double& m = m_[i].data[k];
      double& v = v_[i].data[k];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      const double mh = m / bc1;
      const double vh = v / bc2;
      e.value.data[k] = e.value.data[k] * (1.0 - lr * weight_decay) -
                        lr * mh / (std::sqrt(vh) + eps_);
    }
  }
}

LrScheduler::LrScheduler(const TrainConfig& cfg)
    : cfg_(cfg), plateau_(cfg.scheduler == "plateau"), current_(cfg.lr) {}

double LrScheduler::lr_for_epoch(int epoch) {
  if (plateau_) return current_;
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg_.cosine_t_max);
  return cfg_.cosine_eta_min +
         (cfg_.lr - cfg_.cosine_eta_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void LrScheduler::observe_validation(double piece_accuracy) {
  if (!plateau_) return;
  if (piece_accuracy > best_ + 1e-12) {
    best_ = piece_accuracy;
    stale_ = 0;
  } else if (++stale_ > cfg_.plateau_patience) {
    current_ *= cfg_.plateau_factor;
    stale_ = 0;
  }
}

// ---------------------------------------------------------------------------
// train / evaluate
// ---------------------------------------------------------------------------

namespace {

EvalReport eval_instances(const Model& model, const std::vector<PuzzleInstance>& instances) {
  std::vector<Permutation> preds, truths;
  preds.reserve(instances.size());
  for (const PuzzleInstance& inst : instances) {
    preds.push_back(model.solve(inst));
    truths.push_back(inst.shuffle);
  }
  return aggregate_report(preds, truths, model.config().geometry);
}

std::vector<PuzzleInstance> load_split(const Dataset& data, const std::string& split) {
  std::vector<PuzzleInstance> out;
  for (const ManifestRecord* rec : data.manifest.split(split)) out.push_back(load_instance(data, *rec));
  return out;
}

}  // namespace

EvalReport evaluate(const Model& model, const Dataset& data, const std::string& split) {
  const std::vector<PuzzleInstance> instances = load_split(data, split);
  if (instances.empty()) throw UsageError("split " + split + " is empty");
  return eval_instances(model, instances);
}

EvalReport evaluate(const Checkpoint& ckpt, const Dataset& data, const std::string& split) {
  const Model model = ckpt.materialize();
  return evaluate(model, data, split);
}

TrainResult train(const TrainConfig& cfg, const Dataset& data, std::ostream* log) {
  cfg.validate();
  std::vector<PuzzleInstance> train_set = load_split(data, "train");
  std::vector<PuzzleInstance> val_set = load_split(data, "val");
  if (train_set.empty() || val_set.empty())
    throw UsageError("training needs non-empty train and val splits");

  Model model(cfg.model_config(data.manifest.geometry), derive_seed(cfg.seed, "init"));
  AdamW opt(model.params());
  LrScheduler sched(cfg);

  TrainResult result;
  double best_piece = -1.0;
  int64_t step = 0;
  const int n_train = static_cast<int>(train_set.size());

  std::vector<int> order(static_cast<size_t>(n_train));
  for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = sched.lr_for_epoch(epoch);

    Rng order_rng(derive_seed(cfg.seed, "order/" + std::to_string(epoch)));
    for (int i = n_train - 1; i > 0; --i) {
      const int j = static_cast<int>(order_rng.uniform_int(0, i));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int bsz = std::min(cfg.batch_size, n_train - start);
      model.params().zero_grads();
      LossBreakdown mean{};
      for (int k = 0; k < bsz; ++k) {
        const int idx = order[static_cast<size_t>(start + k)];
        const PuzzleInstance* inst = &train_set[static_cast<size_t>(idx)];
        PuzzleInstance jittered;
        if (cfg.color_jitter) {
          jittered = *inst;
          Rng jrng(derive_seed(cfg.seed, "jitter/" + std::to_string(epoch) + "/" + inst->id));
          color_jitter(jittered.pieces, jrng);
          inst = &jittered;
        }

        nn::Tape tp;
        ForwardVars fv = model.forward(tp, *inst);
        nn::Var l_assign = assign_loss(tp, fv.scores, inst->shuffle, cfg.label_smoothing);
        Rng pair_rng(derive_seed(cfg.seed, "pairs/" + std::to_string(step) + "/" + inst->id));
        nn::Var l_pair = pairwise_loss(tp, model.pairwise_params(), fv.align.v_fused,
                                       inst->shuffle, model.config().geometry, pair_rng);
        nn::Var total = total_loss(tp, l_assign, fv.align.l_token, fv.align.l_region,
                                   fv.align.l_global, l_pair, cfg.lambda, cfg.lambda_p);
        nn::Var scaled = tp.scale(total, 1.0 / static_cast<double>(bsz));

        const double tv = tp.scalar(total);
        if (!std::isfinite(tv))
          throw NumericError("non-finite loss at step " + std::to_string(step));
        mean.assign += tp.scalar(l_assign) / bsz;
        mean.token += tp.scalar(fv.align.l_token) / bsz;
        mean.region += tp.scalar(fv.align.l_region) / bsz;
        mean.global += tp.scalar(fv.align.l_global) / bsz;
        mean.pairwise += tp.scalar(l_pair) / bsz;
        mean.total += tv / bsz;

        tp.backward(scaled);
      }

      if (cfg.grad_clip > 0) {
        const double norm = model.params().grad_norm();
        if (norm > cfg.grad_clip) model.params().scale_grads(cfg.grad_clip / norm);
      }
      opt.step(lr, cfg.weight_decay);

      if (log) {
        nlohmann::json rec{{"step", step},       {"epoch", epoch},
                           {"total", mean.total}, {"assign", mean.assign},
                           {"token", mean.token}, {"region", mean.region},
                           {"global", mean.global}, {"pairwise", mean.pairwise},
                           {"lr", lr}};
        (*log) << rec.dump() << "\n";
      }
      ++step;
    }

    const EvalReport val = eval_instances(model, val_set);
    sched.observe_validation(val.piece);
    if (log) {
      nlohmann::json rec{{"epoch", epoch}, {"lr", lr}, {"val", val.to_json()}};
      (*log) << rec.dump() << "\n";
    }

    if (val.piece > best_piece) {
      best_piece = val.piece;
      result.best = snapshot_checkpoint(model, opt, static_cast<uint32_t>(epoch), best_piece);
      result.best_val_report = val;
    }
    result.epochs_run = epoch + 1;
    if (cfg.early_stop_piece > 0 && val.piece >= cfg.early_stop_piece) break;
  }
  return result;
}

}  // namespace vlhsa
