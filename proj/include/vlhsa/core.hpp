#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlhsa/rng.hpp"

namespace vlhsa {

/// Grid layout of a gap puzzle. Cell side is piece_px + gap_px; pieces are
/// cut centered in their cell and may be jittered by at most jitter_px per
/// axis, which never exceeds gap_px / 2 so fragments cannot overlap.
struct GridGeometry {
  int rows = 3;
  int cols = 3;
  int piece_px = 96;
  int gap_px = 0;
  int jitter_px = 0;

  int n_pieces() const { return rows * cols; }
  int cell_px() const { return piece_px + gap_px; }
  int image_px_rows() const { return rows * cell_px(); }
  int image_px_cols() const { return cols * cell_px(); }

  void validate() const;
  bool operator==(const GridGeometry&) const = default;
};

void to_json(nlohmann::json& j, const GridGeometry& g);
void from_json(const nlohmann::json& j, GridGeometry& g);

/// Bijection piece index -> grid position; mapping[i] is where piece i goes.
class Permutation {
 public:
  Permutation() = default;
  explicit Permutation(std::vector<int> mapping);
  static Permutation identity(int n);
  static Permutation random(int n, Rng& rng);

  int size() const { return static_cast<int>(map_.size()); }
  int operator[](int i) const { return map_[static_cast<size_t>(i)]; }
  const std::vector<int>& mapping() const { return map_; }

  Permutation inverse() const;
  bool operator==(const Permutation&) const = default;

  nlohmann::json to_json() const;
  static Permutation from_json(const nlohmann::json& j);

 private:
  std::vector<int> map_;
};

/// compose(outer, inner)[i] = outer[inner[i]] (apply inner first).
Permutation compose(const Permutation& outer, const Permutation& inner);

enum class Axis { horizontal, vertical };

/// Misplaced-piece taxonomy. A permutation can never misplace exactly one
/// piece, so there is no 1-off bucket.
enum class OffByCategory : int { perfect = 0, off2, off3, off4, off5, off6_plus };
constexpr int kOffByCategories = 6;

const char* off_by_label(OffByCategory c);

double piece_accuracy(const Permutation& pred, const Permutation& truth);
double neighbor_accuracy(const Permutation& pred, const Permutation& truth,
                         const GridGeometry& geometry, Axis axis);
OffByCategory off_by_category(const Permutation& pred, const Permutation& truth);

/// Aggregated evaluation over a dataset split.
struct EvalReport {
  double perfect = 0;
  double piece = 0;
  double horizontal = 0;
  double vertical = 0;
  std::array<double, kOffByCategories> off_by_k{};  // fractions, sum to 1
  int64_t n_samples = 0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

EvalReport aggregate_report(const std::vector<Permutation>& preds,
                            const std::vector<Permutation>& truths,
                            const GridGeometry& geometry);

}  // namespace vlhsa
