#include "vlhsa/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vlhsa {

void GridGeometry::validate() const {
  if (rows < 2 || cols < 2) throw std::invalid_argument("geometry: rows and cols must be >= 2");
  if (piece_px < 1) throw std::invalid_argument("geometry: piece_px must be positive");
  if (gap_px < 0 || jitter_px < 0) throw std::invalid_argument("geometry: negative gap or jitter");
  if (jitter_px > gap_px / 2)
    throw std::invalid_argument("geometry: jitter_px must not exceed gap_px / 2");
}

void to_json(nlohmann::json& j, const GridGeometry& g) {
  j = nlohmann::json{{"rows", g.rows},
                     {"cols", g.cols},
                     {"piece_px", g.piece_px},
                     {"gap_px", g.gap_px},
                     {"jitter_px", g.jitter_px}};
}

void from_json(const nlohmann::json& j, GridGeometry& g) {
  j.at("rows").get_to(g.rows);
  j.at("cols").get_to(g.cols);
  j.at("piece_px").get_to(g.piece_px);
  j.at("gap_px").get_to(g.gap_px);
  j.at("jitter_px").get_to(g.jitter_px);
}

Permutation::Permutation(std::vector<int> mapping) : map_(std::move(mapping)) {
  const int n = static_cast<int>(map_.size());
  if (n < 1) throw std::invalid_argument("permutation: empty mapping");
  std::vector<bool> seen(static_cast<size_t>(n), false);
  for (int v : map_) {
    if (v < 0 || v >= n || seen[static_cast<size_t>(v)])
      throw std::invalid_argument("permutation: mapping is not a bijection on [0,n)");
    seen[static_cast<size_t>(v)] = true;
  }
}

Permutation Permutation::identity(int n) {
  std::vector<int> m(static_cast<size_t>(n));
  std::iota(m.begin(), m.end(), 0);
  return Permutation(std::move(m));
}

Permutation Permutation::random(int n, Rng& rng) {
  std::vector<int> m(static_cast<size_t>(n));
  std::iota(m.begin(), m.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(0, i));
    std::swap(m[static_cast<size_t>(i)], m[static_cast<size_t>(j)]);
  }
  return Permutation(std::move(m));
}

Permutation Permutation::inverse() const {
  std::vector<int> inv(map_.size());
  for (size_t i = 0; i < map_.size(); ++i) inv[static_cast<size_t>(map_[i])] = static_cast<int>(i);
  return Permutation(std::move(inv));
}

nlohmann::json Permutation::to_json() const { return nlohmann::json(map_); }

Permutation Permutation::from_json(const nlohmann::json& j) {
  return Permutation(j.get<std::vector<int>>());
}

Permutation compose(const Permutation& outer, const Permutation& inner) {
  if (outer.size() != inner.size()) throw std::invalid_argument("compose: size mismatch");
  std::vector<int> m(static_cast<size_t>(inner.size()));
  for (int i = 0; i < inner.size(); ++i) m[static_cast<size_t>(i)] = outer[inner[i]];
  return Permutation(std::move(m));
}

const char* off_by_label(OffByCategory c) {
  switch (c) {
    case OffByCategory::perfect: return "Perfect";
    case OffByCategory::off2: return "2-off";
    case OffByCategory::off3: return "3-off";
    case OffByCategory::off4: return "4-off";
    case OffByCategory::off5: return "5-off";
    case OffByCategory::off6_plus: return ">=6-off";
  }
  return "?";
}

static void require_same_size(const Permutation& a, const Permutation& b, const char* op) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(op) + ": permutation size mismatch");
}

double piece_accuracy(const Permutation& pred, const Permutation& truth) {
  require_same_size(pred, truth, "piece_accuracy");
  int hits = 0;
  for (int i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double neighbor_accuracy(const Permutation& pred, const Permutation& truth,
                         const GridGeometry& geometry, Axis axis) {
  require_same_size(pred, truth, "neighbor_accuracy");
  geometry.validate();
  if (pred.size() != geometry.n_pieces())
    throw std::invalid_argument("neighbor_accuracy: permutation does not match geometry");
  const int cols = geometry.cols;
  const int step = axis == Axis::horizontal ? 1 : cols;

  // inverse maps: which piece sits at a given cell
  const Permutation tinv = truth.inverse();

  const auto adjacent = [&](int cell_a, int cell_b) {
    // cell_b must be immediately right of / below cell_a
    if (cell_b != cell_a + step) return false;
    if (axis == Axis::horizontal && cell_a / cols != cell_b / cols) return false;
    return true;
  };

  int total = 0, kept = 0;
  for (int cell = 0; cell < geometry.n_pieces(); ++cell) {
    const int r = cell / cols, c = cell % cols;
    if (axis == Axis::horizontal && c == cols - 1) continue;
    if (axis == Axis::vertical && r == geometry.rows - 1) continue;
    const int piece_a = tinv[cell];
    const int piece_b = tinv[cell + step];
    ++total;
    if (adjacent(pred[piece_a], pred[piece_b])) ++kept;
  }
  return total == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(total);
}

OffByCategory off_by_category(const Permutation& pred, const Permutation& truth) {
  require_same_size(pred, truth, "off_by_category");
  int misplaced = 0;
  for (int i = 0; i < pred.size(); ++i)
    if (pred[i] != truth[i]) ++misplaced;
  switch (misplaced) {
    case 0: return OffByCategory::perfect;
    case 2: return OffByCategory::off2;
    case 3: return OffByCategory::off3;
    case 4: return OffByCategory::off4;
    case 5: return OffByCategory::off5;
    default: break;
  }
  if (misplaced == 1)
    throw std::logic_error("off_by_category: exactly one misplaced piece is impossible");
  return OffByCategory::off6_plus;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json off;
  for (int c = 0; c < kOffByCategories; ++c)
    off[off_by_label(static_cast<OffByCategory>(c))] = off_by_k[static_cast<size_t>(c)];
  return nlohmann::json{{"perfect", perfect},     {"piece", piece},
                        {"horizontal", horizontal}, {"vertical", vertical},
                        {"off_by_k", off},        {"n_samples", n_samples}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  j.at("perfect").get_to(r.perfect);
  j.at("piece").get_to(r.piece);
  j.at("horizontal").get_to(r.horizontal);
  j.at("vertical").get_to(r.vertical);
  j.at("n_samples").get_to(r.n_samples);
  for (int c = 0; c < kOffByCategories; ++c)
    j.at("off_by_k").at(off_by_label(static_cast<OffByCategory>(c))).get_to(r.off_by_k[static_cast<size_t>(c)]);
  return r;
}

EvalReport aggregate_report(const std::vector<Permutation>& preds,
                            const std::vector<Permutation>& truths,
                            const GridGeometry& geometry) {
  if (preds.empty() || preds.size() != truths.size())
    throw std::invalid_argument("aggregate_report: need equal-length non-empty lists");
  EvalReport rep;
  rep.n_samples = static_cast<int64_t>(preds.size());
  for (size_t k = 0; k < preds.size(); ++k) {
    rep.piece += piece_accuracy(preds[k], truths[k]);
    rep.horizontal += neighbor_accuracy(preds[k], truths[k], geometry, Axis::horizontal);
    rep.vertical += neighbor_accuracy(preds[k], truths[k], geometry, Axis::vertical);
    const OffByCategory c = off_by_category(preds[k], truths[k]);
    rep.off_by_k[static_cast<size_t>(c)] += 1.0;
    if (c == OffByCategory::perfect) rep.perfect += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(rep.n_samples);
  rep.perfect *= inv;
  rep.piece *= inv;
  rep.horizontal *= inv;
  rep.vertical *= inv;
  for (double& f : rep.off_by_k) f *= inv;
  return rep;
}

}  // namespace vlhsa
