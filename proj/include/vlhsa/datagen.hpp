#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vlhsa/core.hpp"
#include "vlhsa/image.hpp"
#include "vlhsa/tensor.hpp"

namespace vlhsa {

enum class Shape : int { circle = 0, square, triangle, stripe };
const char* shape_name(Shape s);

/// Fixed 8-color palette shared by scenes and captions.
struct PaletteColor {
  const char* name;
  Rgb rgb;
};
const std::vector<PaletteColor>& palette();
int palette_index(const std::string& name);

/// 3x3 placement grid; region 0..8 row-major (top-left .. bottom-right).
const char* region_name(int region);
constexpr int kRegions = 9;

struct SceneObject {
  Shape shape = Shape::circle;
  int color = 0;   // palette index
  int region = 0;  // placement region
};

/// Procedural scene; together with its seed it fully determines the render
/// and the caption. Generated datasets carry 1-4 objects; zero objects is
/// accepted by render/caption as the plain-background base case.
struct SceneSpec {
  int background = 1;  // palette index
  std::vector<SceneObject> objects;
  uint64_t seed = 0;

  void validate() const;
};

Image render_scene(const SceneSpec& spec, int height_px, int width_px);
Image render_scene(const SceneSpec& spec, int image_px);
std::string caption_scene(const SceneSpec& spec);

/// Blend a fixed per-cell tint over the render so every fragment is globally
/// identifiable by cell; used by the "distinct" dataset variant.
void apply_cell_tint(Image& img, const GridGeometry& geometry, double strength = 0.4);
Rgb cell_tint_color(int cell, int n_cells);

/// Full source image for a record: scene render plus optional tint.
Image compose_source_image(const SceneSpec& spec, const GridGeometry& geometry,
                           bool distinct_tint);

/// Cut the image into centered piece_px squares, one per cell, each offset by
/// an integer jitter drawn uniformly in [-jitter_px, +jitter_px] per axis.
/// Pieces are returned in row-major true cell order as [N, px, px, 3].
std::pair<nn::Tensor, std::vector<std::pair<int, int>>> fragment_image(
    const Image& image, const GridGeometry& geometry, uint64_t seed);

/// Reassemble pieces (given in true row-major cell order) into a gapless
/// rows*px x cols*px image.
Image stitch_pieces(const nn::Tensor& pieces, const GridGeometry& geometry);

/// One puzzle: pieces in scrambled order, shuffle[i] = true cell of piece i.
struct PuzzleInstance {
  std::string id;
  nn::Tensor pieces;  // [N, px, px, 3]
  Permutation shuffle;
  std::string caption;
  GridGeometry geometry;
  // optional precomputed features (loaded from .vfeat/.tfeat/.tglobal)
  std::optional<nn::Tensor> vfeat;    // [N, d_b]
  std::optional<nn::Tensor> tfeat;    // [L, d_t]
  std::optional<nn::Tensor> tglobal;  // [1, d_t]

  void validate() const;
};

/// Per-channel multiplicative noise in [0.9, 1.1], clamped to [0,1].
void color_jitter(nn::Tensor& pieces, Rng& rng);

// ---------------------------------------------------------------------------
// Array container: <base>.bin raw little-endian float32 + <base>.json sidecar
// ---------------------------------------------------------------------------
void save_array(const std::string& base_path, const nn::Tensor& t);
nn::Tensor load_array(const std::string& base_path);

// ---------------------------------------------------------------------------
// Dataset manifest (JSON Lines: header line, then one record per line)
// ---------------------------------------------------------------------------
struct ManifestRecord {
  std::string id;
  std::string split;  // train | val | test
  std::string pieces;  // container base path, relative to manifest dir
  std::string caption;
  Permutation shuffle;
  std::optional<std::string> vfeat, tfeat, tglobal;
};

struct DatasetManifest {
  std::string name;
  GridGeometry geometry;
  int n_train = 0, n_val = 0, n_test = 0;
  std::vector<ManifestRecord> records;

  std::vector<const ManifestRecord*> split(const std::string& name) const;
  const ManifestRecord* find(const std::string& id) const;
};

struct DatasetOptions {
  std::string out_dir;
  std::string name = "synthetic";
  GridGeometry geometry;
  int n_train = 0, n_val = 0, n_test = 0;
  uint64_t seed = 0;
  bool distinct_tint = false;
};

/// Generate, render, fragment and serialize a dataset; byte-identical output
/// for identical options.
DatasetManifest make_dataset(const DatasetOptions& opts);

/// Draw the scene a generated record was rendered from (for round-trip
/// checks); deterministic in (dataset seed, record id).
SceneSpec record_scene_spec(uint64_t dataset_seed, const std::string& record_id);

struct Dataset {
  std::string dir;
  DatasetManifest manifest;
};

Dataset load_external(const std::string& manifest_path);
PuzzleInstance load_instance(const Dataset& ds, const ManifestRecord& rec);

std::string manifest_path(const std::string& out_dir);

}  // namespace vlhsa
