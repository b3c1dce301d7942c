#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vlhsa/datagen.hpp"
#include "vlhsa/errors.hpp"

namespace fs = std::filesystem;
using namespace vlhsa;

namespace {

GridGeometry grid(int rows, int cols, int px, int gap = 0, int jitter = 0) {
  GridGeometry g;
  g.rows = rows;
  g.cols = cols;
  g.piece_px = px;
  g.gap_px = gap;
  g.jitter_px = jitter;
  return g;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("vlhsa_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int count_words(const std::string& s) {
  std::istringstream is(s);
  std::string w;
  int n = 0;
  while (is >> w) ++n;
  return n;
}

}  // namespace

TEST_CASE("render_scene basics") {
  SceneSpec spec;
  spec.background = palette_index("green");
  spec.seed = 4;

  SUBCASE("zero objects gives a constant background image") {
    const Image img = render_scene(spec, 90);
    const Rgb bg = palette()[static_cast<size_t>(spec.background)].rgb;
    for (int r = 0; r < img.height; r += 7)
      for (int c = 0; c < img.width; c += 7) CHECK(img.get(r, c) == bg);
  }

  SUBCASE("same spec renders bit-identical images") {
    spec.objects.push_back({Shape::triangle, palette_index("yellow"), 4});
    const Image a = render_scene(spec, 90);
    const Image b = render_scene(spec, 90);
    CHECK(a.px == b.px);
  }

  SUBCASE("red circle at top-left puts palette red at the region center") {
    spec.objects.push_back({Shape::circle, palette_index("red"), 0});
    const Image img = render_scene(spec, 90);
    CHECK(img.get(15, 15) == palette()[static_cast<size_t>(palette_index("red"))].rgb);
  }

  SUBCASE("out-of-range placement is rejected") {
    spec.objects.push_back({Shape::circle, palette_index("red"), 11});
    CHECK_THROWS_AS(render_scene(spec, 90), std::invalid_argument);
  }
}

TEST_CASE("caption_scene templates") {
  SceneSpec spec;
  spec.background = palette_index("green");

  SUBCASE("zero objects") {
    CHECK(caption_scene(spec) == "a plain green background");
  }

  SUBCASE("deterministic") {
    spec.objects.push_back({Shape::circle, palette_index("red"), 0});
    CHECK(caption_scene(spec) == caption_scene(spec));
  }

  SUBCASE("two-object caption mentions both shapes") {
    spec.objects.push_back({Shape::circle, palette_index("red"), 0});
    spec.objects.push_back({Shape::square, palette_index("blue"), 8});
    const std::string cap = caption_scene(spec);
    CHECK(cap.find("circle") != std::string::npos);
    CHECK(cap.find("square") != std::string::npos);
  }

  SUBCASE("word count stays in 5..14 for 1-4 objects") {
    Rng rng(77);
    for (int trial = 0; trial < 300; ++trial) {
      const SceneSpec s = record_scene_spec(rng.next_u64(), "t");
      REQUIRE(!s.objects.empty());
      const int words = count_words(caption_scene(s));
      CAPTURE(caption_scene(s));
      CHECK(words >= 5);
      CHECK(words <= 14);
    }
  }

  SUBCASE("caption words and scene objects agree") {
    Rng rng(78);
    std::set<std::string> colors, shapes;
    for (const PaletteColor& c : palette()) colors.insert(c.name);
    for (int s = 0; s < 4; ++s) shapes.insert(shape_name(static_cast<Shape>(s)));
    for (int trial = 0; trial < 200; ++trial) {
      const SceneSpec s = record_scene_spec(rng.next_u64(), "t");
      std::set<std::string> cap_colors, cap_shapes, spec_colors, spec_shapes;
      std::istringstream is(caption_scene(s));
      std::string word;
      while (is >> word) {
        while (!word.empty() && !isalpha(static_cast<unsigned char>(word.back()))) word.pop_back();
        if (shapes.count(word)) cap_shapes.insert(word);
        if (colors.count(word)) cap_colors.insert(word);
      }
      for (const SceneObject& o : s.objects) {
        spec_colors.insert(palette()[static_cast<size_t>(o.color)].name);
        spec_shapes.insert(shape_name(o.shape));
      }
      // the background color word may also legitimately appear
      cap_colors.erase(palette()[static_cast<size_t>(s.background)].name);
      CHECK(cap_shapes == spec_shapes);
      CHECK(cap_colors == spec_colors);
    }
  }
}

TEST_CASE("fragment_image") {
  SUBCASE("no gaps, no jitter: pieces tile the image exactly") {
    SceneSpec spec;
    spec.background = palette_index("blue");
    spec.objects.push_back({Shape::square, palette_index("yellow"), 4});
    const GridGeometry g = grid(3, 3, 12);
    const Image img = render_scene(spec, g.image_px_rows());
    auto [pieces, jitters] = fragment_image(img, g, 9);
    const Image back = stitch_pieces(pieces, g);
    CHECK(back.px == img.px);
    for (auto [jy, jx] : jitters) {
      CHECK(jy == 0);
      CHECK(jx == 0);
    }
  }

  SUBCASE("paper-profile geometries give the expected sides and counts") {
    const GridGeometry g3 = grid(3, 3, 96, 48, 7);
    CHECK(g3.image_px_rows() == 432);
    const Image img3(432, 432, {0.5, 0.5, 0.5});
    auto [p3, j3] = fragment_image(img3, g3, 1);
    CHECK(p3.shape == std::vector<int64_t>{9, 96, 96, 3});

    const GridGeometry g5 = grid(5, 5, 96, 12, 5);
    CHECK(g5.image_px_rows() == 540);
    const Image img5(540, 540, {0.5, 0.5, 0.5});
    auto [p5, j5] = fragment_image(img5, g5, 1);
    CHECK(p5.shape[0] == 25);
  }

  SUBCASE("jitter stays within bounds and is deterministic in the seed") {
    const GridGeometry g = grid(3, 3, 10, 6, 3);
    const Image img(g.image_px_rows(), g.image_px_cols(), {0.2, 0.3, 0.4});
    auto [pa, ja] = fragment_image(img, g, 123);
    auto [pb, jb] = fragment_image(img, g, 123);
    CHECK(ja == jb);
    CHECK(pa.data == pb.data);
    for (auto [jy, jx] : ja) {
      CHECK(std::abs(jy) <= 3);
      CHECK(std::abs(jx) <= 3);
    }
  }

  SUBCASE("size mismatch is rejected") {
    const GridGeometry g = grid(3, 3, 10);
    const Image img(29, 30);
    CHECK_THROWS_AS(fragment_image(img, g, 0), std::invalid_argument);
  }
}

TEST_CASE("make_dataset") {
  DatasetOptions opts;
  opts.geometry = grid(3, 3, 10, 4, 2);
  opts.n_train = 2;
  opts.n_val = 1;
  opts.n_test = 1;
  opts.seed = 7;

  SUBCASE("counts, unique ids, reproducible bytes") {
    const fs::path d1 = fresh_dir("mk1"), d2 = fresh_dir("mk2");
    opts.out_dir = d1.string();
    const DatasetManifest m1 = make_dataset(opts);
    opts.out_dir = d2.string();
    const DatasetManifest m2 = make_dataset(opts);

    CHECK(m1.records.size() == 4);
    std::set<std::string> ids;
    for (const auto& r : m1.records) ids.insert(r.id);
    CHECK(ids.size() == 4);
    CHECK(m1.split("train").size() == 2);
    CHECK(m1.split("val").size() == 1);
    CHECK(m1.split("test").size() == 1);

    CHECK(read_file(manifest_path(d1.string())) == read_file(manifest_path(d2.string())));
    CHECK(read_file((d1 / "r000000.bin").string()) == read_file((d2 / "r000000.bin").string()));
  }

  SUBCASE("unshuffling pieces recovers the source render cell content") {
    const fs::path dir = fresh_dir("mk3");
    opts.out_dir = dir.string();
    make_dataset(opts);
    const Dataset ds = load_external(manifest_path(dir.string()));
    for (const ManifestRecord& rec : ds.manifest.records) {
      const PuzzleInstance inst = load_instance(ds, rec);
      const SceneSpec spec = record_scene_spec(opts.seed, rec.id);
      const Image source = compose_source_image(spec, opts.geometry, false);
      const int px = opts.geometry.piece_px;
      const int cell = opts.geometry.cell_px();
      const int j = opts.geometry.jitter_px;
      const int margin = opts.geometry.gap_px / 2;
      // piece i belongs at cell shuffle[i]; it must appear somewhere inside
      // that cell at one of the admissible jitter offsets
      for (int i = 0; i < inst.shuffle.size(); ++i) {
        const int c = inst.shuffle[i];
        const int r0 = (c / opts.geometry.cols) * cell, c0 = (c % opts.geometry.cols) * cell;
        bool found = false;
        for (int dy = -j; dy <= j && !found; ++dy)
          for (int dx = -j; dx <= j && !found; ++dx) {
            bool match = true;
            for (int r = 0; r < px && match; ++r)
              for (int cc = 0; cc < px && match; ++cc) {
                const double* s = source.at(r0 + margin + dy + r, c0 + margin + dx + cc);
                const double* p =
                    inst.pieces.data.data() + ((static_cast<size_t>(i) * px + r) * px + cc) * 3;
                // pieces round-trip through f32
                match = std::abs(s[0] - p[0]) < 1e-6 && std::abs(s[1] - p[1]) < 1e-6 &&
                        std::abs(s[2] - p[2]) < 1e-6;
              }
            found = match;
          }
        CHECK(found);
      }
    }
  }
}

TEST_CASE("distinct tint makes every cell globally identifiable") {
  const GridGeometry g = grid(3, 3, 8);
  SceneSpec spec;
  spec.background = palette_index("green");
  const Image plain = compose_source_image(spec, g, false);
  const Image tinted = compose_source_image(spec, g, true);
  CHECK(plain.px != tinted.px);
  std::set<std::array<int, 3>> seen;
  for (int cellr = 0; cellr < 3; ++cellr)
    for (int cellc = 0; cellc < 3; ++cellc) {
      const Rgb v = tinted.get(cellr * 8 + 4, cellc * 8 + 4);
      seen.insert({static_cast<int>(v[0] * 1000), static_cast<int>(v[1] * 1000),
                   static_cast<int>(v[2] * 1000)});
    }
  CHECK(seen.size() == 9);
}

TEST_CASE("array container round trip and failure modes") {
  const fs::path dir = fresh_dir("arr");
  nn::Tensor t({2, 3});
  t.data = {0.25, -1.5, 3.0, 0.125, 9.0, -0.75};  // exactly representable in f32
  save_array((dir / "x").string(), t);
  const nn::Tensor back = load_array((dir / "x").string());
  CHECK(back.shape == t.shape);
  CHECK(back.data == t.data);

  SUBCASE("dtype mismatch") {
    std::ofstream((dir / "x.json").string()) << "{\"shape\":[2,3],\"dtype\":\"f64\"}\n";
    CHECK_THROWS_AS(load_array((dir / "x").string()), IoError);
  }
  SUBCASE("size mismatch") {
    std::ofstream((dir / "x.json").string()) << "{\"shape\":[2,4],\"dtype\":\"f32\"}\n";
    CHECK_THROWS_AS(load_array((dir / "x").string()), IoError);
  }
  SUBCASE("missing bin") {
    fs::remove(dir / "x.bin");
    CHECK_THROWS_AS(load_array((dir / "x").string()), IoError);
  }
}

TEST_CASE("load_external validation") {
  DatasetOptions opts;
  opts.geometry = grid(2, 2, 6);
  opts.n_train = 1;
  opts.n_val = 1;
  opts.n_test = 1;
  opts.seed = 3;
  const fs::path dir = fresh_dir("ld");
  opts.out_dir = dir.string();
  make_dataset(opts);

  SUBCASE("round trip") {
    const Dataset ds = load_external(manifest_path(dir.string()));
    CHECK(ds.manifest.records.size() == 3);
    for (const auto& rec : ds.manifest.records) CHECK_NOTHROW(load_instance(ds, rec));
  }

  SUBCASE("a missing piece file is reported with the record id") {
    fs::remove(dir / "r000001.bin");
    try {
      load_external(manifest_path(dir.string()));
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("r000001") != std::string::npos);
    }
  }

  SUBCASE("precomputed embedding files ride along") {
    // append feature containers to the first record by rewriting the manifest
    const Dataset ds0 = load_external(manifest_path(dir.string()));
    nn::Tensor vf({4, 5}), tf({3, 7}), tg({7});
    for (size_t i = 0; i < vf.data.size(); ++i) vf.data[i] = static_cast<double>(i) * 0.5;
    for (size_t i = 0; i < tf.data.size(); ++i) tf.data[i] = 1.0 - static_cast<double>(i);
    for (size_t i = 0; i < tg.data.size(); ++i) tg.data[i] = static_cast<double>(i);
    save_array((dir / "r000000.vfeat").string(), vf);
    save_array((dir / "r000000.tfeat").string(), tf);
    save_array((dir / "r000000.tglobal").string(), tg);

    std::ifstream in(manifest_path(dir.string()));
    std::string line, out;
    while (std::getline(in, line)) {
      nlohmann::json j = nlohmann::json::parse(line);
      if (j.value("type", "") == "record" && j.at("id") == "r000000") {
        j["vfeat"] = "r000000.vfeat";
        j["tfeat"] = "r000000.tfeat";
        j["tglobal"] = "r000000.tglobal";
      }
      out += j.dump() + "\n";
    }
    in.close();
    std::ofstream(manifest_path(dir.string())) << out;

    const Dataset ds = load_external(manifest_path(dir.string()));
    const PuzzleInstance inst = load_instance(ds, *ds.manifest.find("r000000"));
    REQUIRE(inst.vfeat.has_value());
    REQUIRE(inst.tfeat.has_value());
    REQUIRE(inst.tglobal.has_value());
    CHECK(inst.vfeat->shape == std::vector<int64_t>{4, 5});
    CHECK(inst.tglobal->shape == std::vector<int64_t>{1, 7});
  }

  SUBCASE("duplicate ids are rejected") {
    std::ifstream in(manifest_path(dir.string()));
    std::string all, line, dup;
    while (std::getline(in, line)) {
      all += line + "\n";
      nlohmann::json j = nlohmann::json::parse(line);
      if (j.value("type", "") == "record") dup = line;
    }
    in.close();
    std::ofstream(manifest_path(dir.string())) << all << dup << "\n";
    CHECK_THROWS_AS(load_external(manifest_path(dir.string())), IoError);
  }
}

TEST_CASE("color jitter stays multiplicative and bounded") {
  nn::Tensor pieces({2, 2, 2, 3});
  for (size_t i = 0; i < pieces.data.size(); ++i) pieces.data[i] = 0.5;
  nn::Tensor jittered = pieces;
  Rng rng(1);
  color_jitter(jittered, rng);
  for (size_t i = 0; i < pieces.data.size(); ++i) {
    const double ratio = jittered.data[i] / pieces.data[i];
    CHECK(ratio >= 0.9 - 1e-12);
    CHECK(ratio <= 1.1 + 1e-12);
  }
  // channel factors are shared across pieces
  CHECK(jittered.data[0] == jittered.data[3]);
}
