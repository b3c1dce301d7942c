#include "vlhsa/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "vlhsa/errors.hpp"

namespace fs = std::filesystem;

namespace vlhsa {

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::circle: return "circle";
    case Shape::square: return "square";
    case Shape::triangle: return "triangle";
    case Shape::stripe: return "stripe";
  }
  return "?";
}

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> p = {
      {"red", {0.85, 0.10, 0.10}},    {"green", {0.10, 0.65, 0.15}},
      {"blue", {0.10, 0.20, 0.85}},   {"yellow", {0.95, 0.85, 0.10}},
      {"orange", {0.95, 0.55, 0.10}}, {"purple", {0.55, 0.15, 0.75}},
      {"cyan", {0.10, 0.80, 0.85}},   {"magenta", {0.90, 0.15, 0.70}},
  };
  return p;
}

int palette_index(const std::string& name) {
  const auto& p = palette();
  for (size_t i = 0; i < p.size(); ++i)
    if (name == p[i].name) return static_cast<int>(i);
  throw std::invalid_argument("unknown palette color: " + name);
}

const char* region_name(int region) {
  static const char* names[kRegions] = {"top-left", "top",    "top-right",
                                        "left",     "center", "right",
                                        "bottom-left", "bottom", "bottom-right"};
  if (region < 0 || region >= kRegions) throw std::invalid_argument("region out of range");
  return names[region];
}

void SceneSpec::validate() const {
  if (background < 0 || background >= static_cast<int>(palette().size()))
    throw std::invalid_argument("scene: background color out of palette range");
  if (objects.size() > 4) throw std::invalid_argument("scene: at most 4 objects");
  for (const SceneObject& o : objects) {
    if (o.color < 0 || o.color >= static_cast<int>(palette().size()))
      throw std::invalid_argument("scene: object color out of palette range");
    if (o.region < 0 || o.region >= kRegions)
      throw std::invalid_argument("scene: object placement outside bounds");
    if (static_cast<int>(o.shape) < 0 || static_cast<int>(o.shape) > 3)
      throw std::invalid_argument("scene: unknown shape");
  }
}

namespace {

void draw_object(Image& img, const SceneObject& obj, uint64_t scene_seed, int obj_index) {
  const int reg_h = img.height / 3, reg_w = img.width / 3;
  const int rr = obj.region / 3, rc = obj.region % 3;
  const int cy = rr * reg_h + reg_h / 2;
  const int cx = rc * reg_w + reg_w / 2;
  const double base = static_cast<double>(std::min(reg_h, reg_w));
  const Rgb color = palette()[static_cast<size_t>(obj.color)].rgb;

  // size varies per object but the center stays on the region center
  Rng rng(derive_seed(scene_seed, std::string("obj/") + std::to_string(obj_index)));
  const double scale = rng.uniform(0.85, 1.0);

  switch (obj.shape) {
    case Shape::circle: {
      const double rad = 0.34 * base * scale;
      const int r2 = static_cast<int>(rad * rad);
      const int irad = static_cast<int>(rad) + 1;
      for (int r = cy - irad; r <= cy + irad; ++r)
        for (int c = cx - irad; c <= cx + irad; ++c)
          if (img.in_bounds(r, c) && (r - cy) * (r - cy) + (c - cx) * (c - cx) <= r2)
            img.set(r, c, color);
      break;
    }
    case Shape::square: {
      const int hs = static_cast<int>(0.30 * base * scale);
      fill_rect(img, cy - hs, cx - hs, cy + hs + 1, cx + hs + 1, color);
      break;
    }
    case Shape::triangle: {
      const int hh = static_cast<int>(0.34 * base * scale);
      const int hw = static_cast<int>(0.36 * base * scale);
      for (int r = cy - hh; r <= cy + hh; ++r) {
        const double t = static_cast<double>(r - (cy - hh)) / static_cast<double>(2 * hh);
        const int half = static_cast<int>(t * hw);
        for (int c = cx - half; c <= cx + half; ++c)
          if (img.in_bounds(r, c)) img.set(r, c, color);
      }
      break;
    }
    case Shape::stripe: {
      const int hh = std::max(1, static_cast<int>(0.12 * base * scale));
      fill_rect(img, cy - hh, rc * reg_w, cy + hh + 1, (rc + 1) * reg_w, color);
      break;
    }
  }
}

}  // namespace

Image render_scene(const SceneSpec& spec, int height_px, int width_px) {
  spec.validate();
  if (height_px <= 0 || width_px <= 0) throw std::invalid_argument("render: non-positive size");
  Image img(height_px, width_px, palette()[static_cast<size_t>(spec.background)].rgb);
  for (size_t k = 0; k < spec.objects.size(); ++k)
    draw_object(img, spec.objects[k], spec.seed, static_cast<int>(k));
  return img;
}

Image render_scene(const SceneSpec& spec, int image_px) {
  return render_scene(spec, image_px, image_px);
}

std::string caption_scene(const SceneSpec& spec) {
  spec.validate();
  const auto color = [&](const SceneObject& o) {
    return std::string(palette()[static_cast<size_t>(o.color)].name);
  };
  const auto shape = [&](const SceneObject& o) { return std::string(shape_name(o.shape)); };
  const auto region = [&](const SceneObject& o) { return std::string(region_name(o.region)); };
  const std::string bg = palette()[static_cast<size_t>(spec.background)].name;
  const auto& obj = spec.objects;

  std::ostringstream os;
  switch (obj.size()) {
    case 0:
      os << "a plain " << bg << " background";
      break;
    case 1:
      os << "a " << color(obj[0]) << " " << shape(obj[0]) << " at " << region(obj[0]) << " on a "
         << bg << " background";
      break;
    case 2:
      os << "a " << color(obj[0]) << " " << shape(obj[0]) << " at " << region(obj[0]) << " and a "
         << color(obj[1]) << " " << shape(obj[1]) << " at " << region(obj[1]) << " on " << bg
         << " background";
      break;
    case 3:
      os << color(obj[0]) << " " << shape(obj[0]) << " at " << region(obj[0]) << ", "
         << color(obj[1]) << " " << shape(obj[1]) << " at " << region(obj[1]) << " and "
         << color(obj[2]) << " " << shape(obj[2]) << " at " << region(obj[2]);
      break;
    default:
      os << color(obj[0]) << " " << shape(obj[0]) << " " << region(obj[0]) << ", "
         << color(obj[1]) << " " << shape(obj[1]) << " " << region(obj[1]) << ", "
         << color(obj[2]) << " " << shape(obj[2]) << " " << region(obj[2]) << " and "
         << color(obj[3]) << " " << shape(obj[3]) << " " << region(obj[3]);
      break;
  }
  return os.str();
}

Rgb cell_tint_color(int cell, int n_cells) {
  // evenly spaced hues, full saturation wheel
  const double h = 6.0 * static_cast<double>(cell) / static_cast<double>(n_cells);
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double v = 1.0, s = 0.8;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

void apply_cell_tint(Image& img, const GridGeometry& geometry, double strength) {
  geometry.validate();
  const int cell_px = geometry.cell_px();
  if (img.height != geometry.image_px_rows() || img.width != geometry.image_px_cols())
    throw std::invalid_argument("cell tint: image does not match geometry");
  for (int cell = 0; cell < geometry.n_pieces(); ++cell) {
    const Rgb tint = cell_tint_color(cell, geometry.n_pieces());
    const int r0 = (cell / geometry.cols) * cell_px;
    const int c0 = (cell % geometry.cols) * cell_px;
    for (int r = r0; r < r0 + cell_px; ++r)
      for (int c = c0; c < c0 + cell_px; ++c) {
        double* p = img.at(r, c);
        for (int ch = 0; ch < 3; ++ch)
          p[ch] = (1.0 - strength) * p[ch] + strength * tint[static_cast<size_t>(ch)];
      }
  }
}

Image compose_source_image(const SceneSpec& spec, const GridGeometry& geometry,
                           bool distinct_tint) {
  Image img = render_scene(spec, geometry.image_px_rows(), geometry.image_px_cols());
  if (distinct_tint) apply_cell_tint(img, geometry);
  return img;
}

std::pair<nn::Tensor, std::vector<std::pair<int, int>>> fragment_image(
    const Image& image, const GridGeometry& geometry, uint64_t seed) {
  geometry.validate();
  if (image.height != geometry.image_px_rows() || image.width != geometry.image_px_cols())
    throw std::invalid_argument("fragment: image size does not match geometry");
  const int n = geometry.n_pieces();
  const int px = geometry.piece_px;
  const int cell = geometry.cell_px();
  const int margin = geometry.gap_px / 2;

  nn::Tensor pieces({n, px, px, 3});
  std::vector<std::pair<int, int>> jitters;
  jitters.reserve(static_cast<size_t>(n));
  Rng rng(seed);

  for (int k = 0; k < n; ++k) {
    const int jy = geometry.jitter_px == 0
                       ? 0
                       : static_cast<int>(rng.uniform_int(-geometry.jitter_px, geometry.jitter_px));
    const int jx = geometry.jitter_px == 0
                       ? 0
                       : static_cast<int>(rng.uniform_int(-geometry.jitter_px, geometry.jitter_px));
    jitters.emplace_back(jy, jx);
    const int top = (k / geometry.cols) * cell + margin + jy;
    const int left = (k % geometry.cols) * cell + margin + jx;
    double* dst = pieces.data.data() + static_cast<size_t>(k) * px * px * 3;
    for (int r = 0; r < px; ++r)
      for (int c = 0; c < px; ++c) {
        const double* src = image.at(top + r, left + c);
        double* d = dst + (static_cast<size_t>(r) * px + c) * 3;
        d[0] = src[0];
        d[1] = src[1];
        d[2] = src[2];
      }
  }
  return {std::move(pieces), std::move(jitters)};
}

Image stitch_pieces(const nn::Tensor& pieces, const GridGeometry& geometry) {
  if (pieces.shape.size() != 4) throw std::invalid_argument("stitch: pieces must be rank 4");
  const int n = geometry.n_pieces();
  const int px = geometry.piece_px;
  if (pieces.shape[0] != n || pieces.shape[1] != px || pieces.shape[2] != px ||
      pieces.shape[3] != 3)
    throw std::invalid_argument("stitch: pieces do not match geometry");
  Image img(geometry.rows * px, geometry.cols * px);
  for (int k = 0; k < n; ++k) {
    const int r0 = (k / geometry.cols) * px;
    const int c0 = (k % geometry.cols) * px;
    const double* src = pieces.data.data() + static_cast<size_t>(k) * px * px * 3;
    for (int r = 0; r < px; ++r)
      for (int c = 0; c < px; ++c) {
        const double* s = src + (static_cast<size_t>(r) * px + c) * 3;
        img.set(r0 + r, c0 + c, {s[0], s[1], s[2]});
      }
  }
  return img;
}

void PuzzleInstance::validate() const {
  geometry.validate();
  if (pieces.shape.size() != 4 || pieces.shape[0] != geometry.n_pieces() ||
      pieces.shape[1] != geometry.piece_px || pieces.shape[2] != geometry.piece_px ||
      pieces.shape[3] != 3)
    throw std::invalid_argument("instance " + id + ": pieces shape " + pieces.shape_str() +
                                " does not match geometry");
  if (shuffle.size() != geometry.n_pieces())
    throw std::invalid_argument("instance " + id + ": shuffle size mismatch");
  if (caption.empty()) throw std::invalid_argument("instance " + id + ": empty caption");
}

void color_jitter(nn::Tensor& pieces, Rng& rng) {
  const double f[3] = {rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1)};
  for (size_t i = 0; i < pieces.data.size(); ++i)
    pieces.data[i] = std::clamp(pieces.data[i] * f[i % 3], 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// array container
// ---------------------------------------------------------------------------

namespace {

void write_f32_le(std::ofstream& f, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  const uint8_t b[4] = {static_cast<uint8_t>(bits), static_cast<uint8_t>(bits >> 8),
                        static_cast<uint8_t>(bits >> 16), static_cast<uint8_t>(bits >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

float read_f32_le(const uint8_t* b) {
  const uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                        (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_array(const std::string& base_path, const nn::Tensor& t) {
  std::ofstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot write " + base_path + ".bin");
  for (double v : t.data) write_f32_le(bin, static_cast<float>(v));
  if (!bin) throw IoError("write failed for " + base_path + ".bin");
  bin.close();

  nlohmann::json side{{"shape", t.shape}, {"dtype", "f32"}};
  std::ofstream js(base_path + ".json");
  if (!js) throw IoError("cannot write " + base_path + ".json");
  js << side.dump() << "\n";
}

nn::Tensor load_array(const std::string& base_path) {
  std::ifstream js(base_path + ".json");
  if (!js) throw IoError("missing sidecar " + base_path + ".json");
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad sidecar " + base_path + ".json: " + e.what());
  }
  if (side.value("dtype", "") != "f32")
    throw IoError("dtype mismatch in " + base_path + ".json (expected f32)");
  std::vector<int64_t> shape = side.at("shape").get<std::vector<int64_t>>();
  int64_t numel = 1;
  for (int64_t d : shape) {
    if (d < 0) throw IoError("negative dimension in " + base_path + ".json");
    numel *= d;
  }

  std::ifstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw IoError("missing array file " + base_path + ".bin");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(bin)),
                             std::istreambuf_iterator<char>());
  if (static_cast<int64_t>(bytes.size()) != numel * 4)
    throw IoError("shape mismatch for " + base_path + ".bin: expected " +
                  std::to_string(numel * 4) + " bytes, got " + std::to_string(bytes.size()));
  nn::Tensor t;
  t.shape = std::move(shape);
  t.data.resize(static_cast<size_t>(numel));
  for (int64_t i = 0; i < numel; ++i)
    t.data[static_cast<size_t>(i)] = static_cast<double>(read_f32_le(&bytes[static_cast<size_t>(i) * 4]));
  return t;
}

// ---------------------------------------------------------------------------
// manifest + generation
// ---------------------------------------------------------------------------

std::string manifest_path(const std::string& out_dir) {
  return (fs::path(out_dir) / "manifest.jsonl").string();
}

std::vector<const ManifestRecord*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestRecord*> out;
  for (const ManifestRecord& r : records)
    if (r.split == name) out.push_back(&r);
  return out;
}

const ManifestRecord* DatasetManifest::find(const std::string& id) const {
  for (const ManifestRecord& r : records)
    if (r.id == id) return &r;
  return nullptr;
}

namespace {

SceneSpec sample_scene(uint64_t dataset_seed, const std::string& id) {
  Rng rng(derive_seed(dataset_seed, "scene/" + id));
  SceneSpec spec;
  spec.seed = rng.next_u64();
  spec.background = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(palette().size()) - 1));
  const int n_obj = static_cast<int>(rng.uniform_int(1, 4));
  std::vector<int> regions(kRegions);
  std::iota(regions.begin(), regions.end(), 0);
  for (int i = kRegions - 1; i > 0; --i)
    std::swap(regions[static_cast<size_t>(i)], regions[static_cast<size_t>(rng.uniform_int(0, i))]);
  for (int k = 0; k < n_obj; ++k) {
    SceneObject o;
    o.shape = static_cast<Shape>(rng.uniform_int(0, 3));
    // avoid objects in the background color; they would be invisible
    int c = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(palette().size()) - 2));
    if (c >= spec.background) ++c;
    o.color = c;
    o.region = regions[static_cast<size_t>(k)];
    spec.objects.push_back(o);
  }
  return spec;
}

nlohmann::json record_to_json(const ManifestRecord& r) {
  nlohmann::json j{{"type", "record"}, {"id", r.id},           {"split", r.split},
                   {"pieces", r.pieces}, {"caption", r.caption}, {"shuffle", r.shuffle.to_json()}};
  if (r.vfeat) j["vfeat"] = *r.vfeat;
  if (r.tfeat) j["tfeat"] = *r.tfeat;
  if (r.tglobal) j["tglobal"] = *r.tglobal;
  return j;
}

ManifestRecord record_from_json(const nlohmann::json& j) {
  ManifestRecord r;
  j.at("id").get_to(r.id);
  j.at("split").get_to(r.split);
  j.at("pieces").get_to(r.pieces);
  j.at("caption").get_to(r.caption);
  r.shuffle = Permutation::from_json(j.at("shuffle"));
  if (j.contains("vfeat")) r.vfeat = j.at("vfeat").get<std::string>();
  if (j.contains("tfeat")) r.tfeat = j.at("tfeat").get<std::string>();
  if (j.contains("tglobal")) r.tglobal = j.at("tglobal").get<std::string>();
  return r;
}

}  // namespace

SceneSpec record_scene_spec(uint64_t dataset_seed, const std::string& record_id) {
  return sample_scene(dataset_seed, record_id);
}

DatasetManifest make_dataset(const DatasetOptions& opts) {
  opts.geometry.validate();
  if (opts.n_train < 0 || opts.n_val < 0 || opts.n_test < 0 ||
      opts.n_train + opts.n_val + opts.n_test == 0)
    throw std::invalid_argument("make_dataset: need positive record counts");

  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + opts.out_dir + ": " + ec.message());

  DatasetManifest man;
  man.name = opts.name;
  man.geometry = opts.geometry;
  man.n_train = opts.n_train;
  man.n_val = opts.n_val;
  man.n_test = opts.n_test;

  const int total = opts.n_train + opts.n_val + opts.n_test;
  const int n = opts.geometry.n_pieces();
  const int px = opts.geometry.piece_px;

  for (int idx = 0; idx < total; ++idx) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "r%06d", idx);
    const std::string id = idbuf;
    const std::string split =
        idx < opts.n_train ? "train" : (idx < opts.n_train + opts.n_val ? "val" : "test");

    const SceneSpec spec = sample_scene(opts.seed, id);
    const Image source = compose_source_image(spec, opts.geometry, opts.distinct_tint);
    auto [fragments, jitters] = fragment_image(source, opts.geometry,
                                               derive_seed(opts.seed, "frag/" + id));
    Rng shuffle_rng(derive_seed(opts.seed, "shuffle/" + id));
    const Permutation shuffle = Permutation::random(n, shuffle_rng);

    // piece i is the fragment whose true cell is shuffle[i]
    nn::Tensor pieces({n, px, px, 3});
    const size_t piece_sz = static_cast<size_t>(px) * px * 3;
    for (int i = 0; i < n; ++i)
      std::memcpy(pieces.data.data() + static_cast<size_t>(i) * piece_sz,
                  fragments.data.data() + static_cast<size_t>(shuffle[i]) * piece_sz,
                  piece_sz * sizeof(double));

    save_array((fs::path(opts.out_dir) / id).string(), pieces);

    ManifestRecord rec;
    rec.id = id;
    rec.split = split;
    rec.pieces = id;
    rec.caption = caption_scene(spec);
    rec.shuffle = shuffle;
    man.records.push_back(std::move(rec));
  }

  // atomic manifest write
  const std::string final_path = manifest_path(opts.out_dir);
  const std::string tmp_path = final_path + ".tmp";
  {
    std::ofstream f(tmp_path);
    if (!f) throw IoError("cannot write manifest " + tmp_path);
    nlohmann::json header{{"type", "header"},
                          {"name", man.name},
                          {"geometry", man.geometry},
                          {"splits", {{"train", man.n_train}, {"val", man.n_val}, {"test", man.n_test}}}};
    f << header.dump() << "\n";
    for (const ManifestRecord& r : man.records) f << record_to_json(r).dump() << "\n";
    if (!f) throw IoError("manifest write failed");
  }
  fs::rename(tmp_path, final_path, ec);
  if (ec) throw IoError("cannot finalize manifest: " + ec.message());
  return man;
}

Dataset load_external(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path);
  Dataset ds;
  ds.dir = fs::path(path).parent_path().string();
  if (ds.dir.empty()) ds.dir = ".";

  std::string line;
  size_t lineno = 0;
  std::set<std::string> seen_ids;
  bool have_header = false;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest " + path + " line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      if (have_header) throw IoError("manifest " + path + ": duplicate header");
      have_header = true;
      j.at("name").get_to(ds.manifest.name);
      ds.manifest.geometry = j.at("geometry").get<GridGeometry>();
      ds.manifest.n_train = j.at("splits").at("train").get<int>();
      ds.manifest.n_val = j.at("splits").at("val").get<int>();
      ds.manifest.n_test = j.at("splits").at("test").get<int>();
    } else if (type == "record") {
      if (!have_header) throw IoError("manifest " + path + ": record before header");
      ManifestRecord r = record_from_json(j);
      if (!seen_ids.insert(r.id).second)
        throw IoError("manifest " + path + ": duplicate record id " + r.id);
      if (r.split != "train" && r.split != "val" && r.split != "test")
        throw IoError("manifest " + path + ": record " + r.id + " has unknown split " + r.split);
      ds.manifest.records.push_back(std::move(r));
    } else {
      throw IoError("manifest " + path + " line " + std::to_string(lineno) + ": unknown type");
    }
  }
  if (!have_header) throw IoError("manifest " + path + ": missing header");
  ds.manifest.geometry.validate();

  // all referenced files must exist up front
  for (const ManifestRecord& r : ds.manifest.records) {
    const auto check = [&](const std::string& base) {
      for (const char* ext : {".bin", ".json"}) {
        const fs::path p = fs::path(ds.dir) / (base + ext);
        if (!fs::exists(p))
          throw IoError("record " + r.id + ": missing file " + p.string());
      }
    };
    check(r.pieces);
    if (r.vfeat) check(*r.vfeat);
    if (r.tfeat) check(*r.tfeat);
    if (r.tglobal) check(*r.tglobal);
  }
  return ds;
}

PuzzleInstance load_instance(const Dataset& ds, const ManifestRecord& rec) {
  PuzzleInstance inst;
  inst.id = rec.id;
  inst.caption = rec.caption;
  inst.shuffle = rec.shuffle;
  inst.geometry = ds.manifest.geometry;
  try {
    inst.pieces = load_array((fs::path(ds.dir) / rec.pieces).string());
    if (rec.vfeat) inst.vfeat = load_array((fs::path(ds.dir) / *rec.vfeat).string());
    if (rec.tfeat) inst.tfeat = load_array((fs::path(ds.dir) / *rec.tfeat).string());
    if (rec.tglobal) {
      nn::Tensor tg = load_array((fs::path(ds.dir) / *rec.tglobal).string());
      if (tg.shape.size() == 1) tg.shape = {1, tg.shape[0]};
      inst.tglobal = std::move(tg);
    }
  } catch (const IoError& e) {
    throw IoError("record " + rec.id + ": " + e.what());
  }
  try {
    inst.validate();
    if (inst.vfeat &&
        (inst.vfeat->shape.size() != 2 || inst.vfeat->shape[0] != inst.geometry.n_pieces()))
      throw std::invalid_argument("vfeat shape " + inst.vfeat->shape_str() +
                                  " does not match piece count");
    if (inst.tfeat && inst.tfeat->shape.size() != 2)
      throw std::invalid_argument("tfeat must be rank 2, got " + inst.tfeat->shape_str());
    if (inst.tglobal && inst.tglobal->shape.size() != 2)
      throw std::invalid_argument("tglobal must be a vector");
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("record ") + rec.id + ": " + e.what());
  }
  return inst;
}

}  // namespace vlhsa
