// vlhsa: generate gap puzzles, train and evaluate the alignment model, solve
// single instances, and render report artifacts. stdout carries only
// machine-readable payloads; diagnostics go to stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vlhsa/datagen.hpp"
#include "vlhsa/errors.hpp"
#include "vlhsa/image.hpp"
#include "vlhsa/model.hpp"
#include "vlhsa/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vlhsa;

namespace {

void print_resolved_config(const std::string& cmd, const json& resolved) {
  std::cerr << "[vlhsa] " << cmd << " config: " << resolved.dump() << "\n";
}

GridGeometry parse_grid(const std::string& grid, int piece_px, int gap_px, int jitter_px) {
  GridGeometry g;
  const size_t x = grid.find('x');
  if (x == std::string::npos) throw UsageError("bad --grid value \"" + grid + "\", expected RxC");
  try {
    g.rows = std::stoi(grid.substr(0, x));
    g.cols = std::stoi(grid.substr(x + 1));
  } catch (const std::exception&) {
    throw UsageError("bad --grid value \"" + grid + "\", expected RxC");
  }
  g.piece_px = piece_px;
  g.gap_px = gap_px;
  g.jitter_px = jitter_px;
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// simple line charts
// ---------------------------------------------------------------------------

Image line_chart(const std::vector<std::vector<std::pair<double, double>>>& series,
                 const std::vector<Rgb>& colors, int width = 640, int height = 400) {
  Image img(height, width, {1, 1, 1});
  const int m = 32;  // margin
  draw_border(img, m - 1, m - 1, height - m + 1, width - m + 1, 1, {0.6, 0.6, 0.6});

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }

  const auto to_px = [&](double x, double y) {
    const int c = m + static_cast<int>((x - xmin) / (xmax - xmin) * (width - 2 * m));
    const int r = height - m - static_cast<int>((y - ymin) / (ymax - ymin) * (height - 2 * m));
    return std::pair<int, int>{r, c};
  };

  for (size_t k = 0; k < series.size(); ++k) {
    const Rgb col = colors[k % colors.size()];
    const auto& s = series[k];
    for (size_t i = 0; i < s.size(); ++i) {
      auto [r1, c1] = to_px(s[i].first, s[i].second);
      if (i > 0) {
        auto [r0, c0] = to_px(s[i - 1].first, s[i - 1].second);
        draw_line(img, r0, c0, r1, c1, col);
      }
      fill_rect(img, r1 - 1, c1 - 1, r1 + 2, c1 + 2, col);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// subcommand handlers
// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out, grid = "3x3", name = "synthetic";
  int piece_px = 96, gap_px = 0, jitter_px = 0;
  int n_train = 0, n_val = 0, n_test = 0;
  uint64_t seed = 0;
  bool distinct = false;
};

int run_gen(const GenArgs& a) {
  DatasetOptions opts;
  opts.out_dir = a.out;
  opts.name = a.name;
  opts.geometry = parse_grid(a.grid, a.piece_px, a.gap_px, a.jitter_px);
  opts.n_train = a.n_train;
  opts.n_val = a.n_val;
  opts.n_test = a.n_test;
  opts.seed = a.seed;
  opts.distinct_tint = a.distinct;

  print_resolved_config("gen", json{{"out", a.out},
                                    {"grid", a.grid},
                                    {"piece_px", a.piece_px},
                                    {"gap_px", a.gap_px},
                                    {"jitter_px", a.jitter_px},
                                    {"train", a.n_train},
                                    {"val", a.n_val},
                                    {"test", a.n_test},
                                    {"seed", a.seed},
                                    {"name", a.name},
                                    {"distinct", a.distinct}});
  const DatasetManifest man = make_dataset(opts);
  std::cout << json{{"manifest", manifest_path(a.out)},
                    {"train", man.n_train},
                    {"val", man.n_val},
                    {"test", man.n_test}}
                   .dump()
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  bool ablation_grid = false;
};

json run_one_training(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir,
                      const std::string& eval_split) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  const std::string log_path = (fs::path(out_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path);
  TrainResult res = train(cfg, data, &log);
  log.close();

  const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
  res.best.save(ckpt_path);

  const EvalReport rep = evaluate(res.best, data, eval_split);
  return json{{"checkpoint", ckpt_path},
              {"log", log_path},
              {"epochs_run", res.epochs_run},
              {"split", eval_split},
              {"report", rep.to_json()}};
}

int run_train(const TrainArgs& a) {
  const TrainConfig cfg = TrainConfig::from_file(a.config);
  print_resolved_config("train", json{{"config", a.config},
                                      {"data", a.data},
                                      {"out", a.out},
                                      {"ablation_grid", a.ablation_grid},
                                      {"resolved", cfg.to_json()}});
  const Dataset data = load_external(a.data);

  if (!a.ablation_grid) {
    const json out = run_one_training(cfg, data, a.out, "val");
    std::cout << out.dump() << "\n";
    return 0;
  }

  // alignment-module ablation grid: global only, token+global, region+global,
  // all three; one table in the Table-7 column layout
  struct Row {
    bool token, region, global;
    const char* tag;
  };
  const Row rows[] = {{false, false, true, "g"},
                      {true, false, true, "tg"},
                      {false, true, true, "rg"},
                      {true, true, true, "trg"}};
  const std::string eval_split = data.manifest.n_test > 0 ? "test" : "val";

  json results = json::array();
  std::string csv = "Token,Region,Global,Perf.,Piece,Hori.,Vert.\n";
  for (const Row& row : rows) {
    TrainConfig c = cfg;
    c.align.enable_token = row.token;
    c.align.enable_region = row.region;
    c.align.enable_global = row.global;
    const std::string run_dir = (fs::path(a.out) / (std::string("ablate_") + row.tag)).string();
    const json r = run_one_training(c, data, run_dir, eval_split);
    const EvalReport rep = EvalReport::from_json(r.at("report"));
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%s,%s,%.2f,%.2f,%.2f,%.2f\n",
                  row.token ? "yes" : "no", row.region ? "yes" : "no",
                  row.global ? "yes" : "no", 100.0 * rep.perfect, 100.0 * rep.piece,
                  100.0 * rep.horizontal, 100.0 * rep.vertical);
    csv += line;
    json jr = r;
    jr["token"] = row.token;
    jr["region"] = row.region;
    jr["global"] = row.global;
    results.push_back(jr);
  }

  std::error_code ec;
  fs::create_directories(a.out, ec);
  const std::string table_path = (fs::path(a.out) / "ablation_table.csv").string();
  std::ofstream tf(table_path);
  if (!tf) throw IoError("cannot write " + table_path);
  tf << csv;
  tf.close();
  std::cout << json{{"table", table_path}, {"rows", results}}.dump() << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, split = "test";
};

int run_eval(const EvalArgs& a) {
  print_resolved_config("eval", json{{"ckpt", a.ckpt}, {"data", a.data}, {"split", a.split}});
  const Checkpoint ck = Checkpoint::load(a.ckpt);
  const Dataset data = load_external(a.data);
  const EvalReport rep = evaluate(ck, data, a.split);
  std::cout << rep.to_json().dump() << "\n";
  return 0;
}

struct SolveArgs {
  std::string ckpt, data, instance_id, render;
  int border_px = 3;
};

int run_solve(const SolveArgs& a) {
  print_resolved_config("solve", json{{"ckpt", a.ckpt},
                                      {"data", a.data},
                                      {"instance_id", a.instance_id},
                                      {"render", a.render},
                                      {"border_px", a.border_px}});
  const Checkpoint ck = Checkpoint::load(a.ckpt);
  const Dataset data = load_external(a.data);
  const ManifestRecord* rec = data.manifest.find(a.instance_id);
  if (!rec) throw UsageError("unknown instance id " + a.instance_id);
  const PuzzleInstance inst = load_instance(data, *rec);
  const Model model = ck.materialize();
  const Permutation pred = model.solve(inst);

  std::cout << json{{"id", inst.id},
                    {"assignment", pred.to_json()},
                    {"piece_accuracy", piece_accuracy(pred, inst.shuffle)}}
                   .dump()
            << "\n";

  if (!a.render.empty()) {
    const GridGeometry& g = inst.geometry;
    const int px = g.piece_px;
    Image img(g.rows * px, g.cols * px);
    const Permutation pinv = pred.inverse();
    for (int cell = 0; cell < g.n_pieces(); ++cell) {
      const int piece = pinv[cell];
      const int r0 = (cell / g.cols) * px, c0 = (cell % g.cols) * px;
      for (int r = 0; r < px; ++r)
        for (int c = 0; c < px; ++c) {
          const double* s =
              inst.pieces.data.data() + ((static_cast<size_t>(piece) * px + r) * px + c) * 3;
          img.set(r0 + r, c0 + c, {s[0], s[1], s[2]});
        }
      if (a.border_px > 0) {
        const bool correct = pred[piece] == inst.shuffle[piece];
        draw_border(img, r0, c0, r0 + px, c0 + px, a.border_px,
                    correct ? Rgb{0.0, 0.8, 0.0} : Rgb{0.9, 0.0, 0.0});
      }
    }
    save_png(a.render, img);
  }
  return 0;
}

struct ReportArgs {
  std::string log, out;
};

int run_report(const ReportArgs& a) {
  print_resolved_config("report", json{{"log", a.log}, {"out", a.out}});
  std::ifstream f(a.log);
  if (!f) throw IoError("cannot open log " + a.log);

  std::vector<std::pair<double, double>> loss_points;
  std::vector<std::pair<double, double>> piece_points, perfect_points;
  std::optional<EvalReport> last_report;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      if (j.contains("step")) {
        loss_points.emplace_back(j.at("step").get<double>(), j.at("total").get<double>());
      } else if (j.contains("val")) {
        const double e = j.at("epoch").get<double>();
        const EvalReport rep = EvalReport::from_json(j.at("val"));
        piece_points.emplace_back(e, rep.piece);
        perfect_points.emplace_back(e, rep.perfect);
        last_report = rep;
      }
    } catch (const json::exception& ex) {
      throw UsageError("malformed log line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  if (!last_report) throw UsageError("log has no epoch records");

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());

  const std::string loss_png = (fs::path(a.out) / "loss_curve.png").string();
  const std::string acc_png = (fs::path(a.out) / "accuracy_curve.png").string();
  const std::string csv_path = (fs::path(a.out) / "off_by_k.csv").string();

  save_png(loss_png, line_chart({loss_points}, {{0.85, 0.2, 0.1}}));
  save_png(acc_png,
           line_chart({piece_points, perfect_points}, {{0.1, 0.3, 0.85}, {0.1, 0.65, 0.2}}));

  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path);
  csv << "Perfect,2-off,3-off,4-off,5-off,≥6-off\n";
  char row[160];
  std::snprintf(row, sizeof(row), "%.2f,%.2f,%.2f,%.2f,%.2f,%.2f\n",
                100.0 * last_report->off_by_k[0], 100.0 * last_report->off_by_k[1],
                100.0 * last_report->off_by_k[2], 100.0 * last_report->off_by_k[3],
                100.0 * last_report->off_by_k[4], 100.0 * last_report->off_by_k[5]);
  csv << row;
  csv.close();

  std::cout << json{{"loss_curve", loss_png}, {"accuracy_curve", acc_png}, {"off_by_k", csv_path}}
                   .dump()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VLHSA gap-puzzle pipeline"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cgen = app.add_subcommand("gen", "generate a synthetic gap-puzzle dataset");
  cgen->add_option("--out", gen.out, "output directory")->required()->envname("VLHSA_OUT");
  cgen->add_option("--grid", gen.grid, "grid as RxC, e.g. 3x3")->envname("VLHSA_GRID");
  cgen->add_option("--piece-px", gen.piece_px, "fragment side in pixels")->envname("VLHSA_PIECE_PX");
  cgen->add_option("--gap-px", gen.gap_px, "eroded gap in pixels")->envname("VLHSA_GAP_PX");
  cgen->add_option("--jitter-px", gen.jitter_px, "max fragment displacement")->envname("VLHSA_JITTER_PX");
  cgen->add_option("--train", gen.n_train, "train split size")->envname("VLHSA_TRAIN");
  cgen->add_option("--val", gen.n_val, "val split size")->envname("VLHSA_VAL");
  cgen->add_option("--test", gen.n_test, "test split size")->envname("VLHSA_TEST");
  cgen->add_option("--seed", gen.seed, "generation seed")->envname("VLHSA_SEED");
  cgen->add_option("--name", gen.name, "dataset name")->envname("VLHSA_NAME");
  cgen->add_flag("--distinct", gen.distinct, "blend a distinct per-cell tint")->envname("VLHSA_DISTINCT");

  TrainArgs tr;
  CLI::App* ctrain = app.add_subcommand("train", "train the alignment model");
  ctrain->add_option("--config", tr.config, "train config JSON")->required()->envname("VLHSA_CONFIG");
  ctrain->add_option("--data", tr.data, "dataset manifest")->required()->envname("VLHSA_DATA");
  ctrain->add_option("--out", tr.out, "output directory")->required()->envname("VLHSA_TRAIN_OUT");
  ctrain->add_flag("--ablation-grid", tr.ablation_grid,
                   "run the alignment-module ablation grid and emit a table")
      ->envname("VLHSA_ABLATION_GRID");

  EvalArgs ev;
  CLI::App* ceval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ceval->add_option("--ckpt", ev.ckpt, "checkpoint path")->required()->envname("VLHSA_CKPT");
  ceval->add_option("--data", ev.data, "dataset manifest")->required()->envname("VLHSA_DATA");
  ceval->add_option("--split", ev.split, "train | val | test")->envname("VLHSA_SPLIT");

  SolveArgs so;
  CLI::App* csolve = app.add_subcommand("solve", "solve one instance");
  csolve->add_option("--ckpt", so.ckpt, "checkpoint path")->required()->envname("VLHSA_CKPT");
  csolve->add_option("--data", so.data, "dataset manifest")->required()->envname("VLHSA_DATA");
  csolve->add_option("--instance-id", so.instance_id, "record id")->required()->envname("VLHSA_INSTANCE_ID");
  csolve->add_option("--render", so.render, "write reconstruction PNG here")->envname("VLHSA_RENDER");
  csolve->add_option("--border-px", so.border_px, "correctness border thickness")->envname("VLHSA_BORDER_PX");

  ReportArgs re;
  CLI::App* creport = app.add_subcommand("report", "render curves and the error table");
  creport->add_option("--log", re.log, "training log JSONL")->required()->envname("VLHSA_LOG");
  creport->add_option("--out", re.out, "output directory")->required()->envname("VLHSA_REPORT_OUT");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cgen->parsed()) return run_gen(gen);
    if (ctrain->parsed()) return run_train(tr);
    if (ceval->parsed()) return run_eval(ev);
    if (csolve->parsed()) return run_solve(so);
    if (creport->parsed()) return run_report(re);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
