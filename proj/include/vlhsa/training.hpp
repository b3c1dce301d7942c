#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vlhsa/model.hpp"

namespace vlhsa {

struct TrainConfig {
  int batch_size = 32;
  int max_epochs = 200;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::string scheduler = "cosine";  // cosine | plateau
  int cosine_t_max = 50;
  double cosine_eta_min = 1e-6;
  double plateau_factor = 0.5;
  int plateau_patience = 5;
  double label_smoothing = 0.08;
  double lambda = 0.1;
  double lambda_p = 0.05;
  uint64_t seed = 0;
  std::string encoder_mode = "toy";
  bool zero_text = false;
  bool color_jitter = false;
  double grad_clip = 5.0;
  double early_stop_piece = -1.0;  // stop once val piece accuracy reaches this; off when < 0
  EncoderConfig enc;  // enc.patch_px == 0 means "use the dataset's piece_px"
  AlignConfig align;

  TrainConfig() { enc.patch_px = 0; }

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_file(const std::string& path);

  /// Resolve into the structural model config for a given dataset geometry.
  ModelConfig model_config(const GridGeometry& geometry) const;
};

/// Serialized model state: f32 parameter blocks plus optimizer moments.
struct Checkpoint {
  static constexpr char kMagic[9] = "VLHSACK1";
  uint32_t version = 1;
  std::string config_json;  // canonical ModelConfig
  uint64_t config_hash = 0;
  uint32_t epoch = 0;
  double best_val_piece = 0;
  uint64_t adam_step = 0;

  struct Block {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;
  };
  std::vector<Block> blocks;

  const Block* find(const std::string& name) const;
  ModelConfig model_config() const;
  Model materialize() const;

  void save(const std::string& path) const;  // write-temp then rename
  static Checkpoint load(const std::string& path);
};

class AdamW {
 public:
  explicit AdamW(nn::ParamStore& ps, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8);
  /// Decoupled update: p <- p*(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps).
  void step(double lr, double weight_decay);
  uint64_t steps() const { return t_; }
  const nn::Tensor& moment1(size_t i) const { return m_[i]; }
  const nn::Tensor& moment2(size_t i) const { return v_[i]; }

 private:
  nn::ParamStore& ps_;
  double beta1_, beta2_, eps_;
  uint64_t t_ = 0;
  std::vector<nn::Tensor> m_, v_;
};

/// Cosine closed form or reduce-on-plateau (monitors validation piece
/// accuracy, max mode).
class LrScheduler {
 public:
  explicit LrScheduler(const TrainConfig& cfg);
  double lr_for_epoch(int epoch);
  void observe_validation(double piece_accuracy);

 private:
  const TrainConfig cfg_;
  bool plateau_;
  double current_;
  double best_ = -1.0;
  int stale_ = 0;
};

struct TrainResult {
  Checkpoint best;
  EvalReport best_val_report;
  int epochs_run = 0;
};

/// Full optimization loop; JSON Lines records stream to `log` when non-null.
TrainResult train(const TrainConfig& cfg, const Dataset& data, std::ostream* log);

EvalReport evaluate(const Model& model, const Dataset& data, const std::string& split);
EvalReport evaluate(const Checkpoint& ckpt, const Dataset& data, const std::string& split);

Checkpoint snapshot_checkpoint(const Model& model, const AdamW& opt, uint32_t epoch,
                               double best_val_piece);

}  // namespace vlhsa
