#include <atomic>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mgf/pipeline/stages.hpp"

using namespace mgf;
using namespace mgf::pipeline;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mgf_test_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

/// Smallest setup that still exercises every stage.
PipelineConfig tiny_config() {
  return parse_config(R"(
[run]
seed = 3
[synth]
height = 32
width = 32
n_grains = 4
particle_count = 3
particle_radius_min = 1.5
particle_radius_max = 2.5
scratch_count = 1
scratch_length_min = 10
scratch_length_max = 16
train_images = 2
test_images = 4
[augment]
keep_every = 1
[edge]
blocks_per_stage = 1
stage_channels = 8, 8, 8
epochs = 6
[segmenter]
base_channels = 4
epochs = 15
[regressor]
d_model = 8
n_heads = 2
n_layers = 1
epochs = 10
)");
}

}  // namespace

TEST_CASE("config: empty text gives the defaults") {
  CHECK(serialize_config(parse_config("")) == serialize_config(PipelineConfig{}));
  CHECK(serialize_config(parse_config("# only a comment\n\n   \n")) == serialize_config(PipelineConfig{}));
}

TEST_CASE("config: unknown keys are rejected by name") {
  const std::string msg = config_error("[edge]\nfooo=1\n");
  CHECK(msg.find("fooo") != std::string::npos);

  const std::string both = config_error("[edge]\nfooo = 1\n[regressor]\nbar = 2\nepochs = 5\n");
  CHECK(both.find("edge.fooo") != std::string::npos);
  CHECK(both.find("regressor.bar") != std::string::npos);
}

TEST_CASE("config: syntax errors name the line") {
  CHECK(config_error("[edge]\nepochs = 3\nno equals sign\n").find("line 3") != std::string::npos);
  CHECK(config_error("\n[nosuch]\n").find("line 2") != std::string::npos);
  CHECK(config_error("[edge\n").find("line 1") != std::string::npos);
  CHECK(config_error("epochs = 3\n").find("before any [section]") != std::string::npos);
  CHECK(config_error("[edge]\n = 3\n").find("line 2") != std::string::npos);
}

TEST_CASE("config: bad values name the key and line") {
  const std::string neg = config_error("[edge]\n\nepochs = -1\n");
  CHECK(neg.find("line 3") != std::string::npos);
  CHECK(neg.find("edge.epochs") != std::string::npos);
  CHECK_FALSE(config_error("[regressor]\nlr = 1e-3x\n").empty());
  CHECK_FALSE(config_error("[regressor]\ntoken_mode = words\n").empty());
  CHECK_FALSE(config_error("[segmenter]\ndeep_supervision = yes\n").empty());
  CHECK_FALSE(config_error("[edge]\npdc_schedule = cpdc, nope\n").empty());
}

TEST_CASE("config: serialize(load(x)) is the canonical form and a fixed point") {
  const std::string messy =
      "# demo\n"
      "[regressor]\n"
      "  epochs=12   # trailing comment\n"
      "lr = 0.1\n"
      "[edge]\n"
      "stage_channels = 8,16 ,  32\n"
      "pdc_schedule = cpdc, apdc, rpdc, vanilla, cpdc, apdc, rpdc, vanilla, cpdc, apdc, rpdc, vanilla\n"
      "[segmenter]\n"
      "deep_supervision = true\n"
      "[paths]\n"
      "out = \"run dir\"\n"
      "[regressor]\n"
      "epochs = 13\n";
  const PipelineConfig cfg = parse_config(messy);
  CHECK(cfg.regressor.epochs == 13);  // last value wins
  CHECK(cfg.regressor.lr == 0.1);
  CHECK(cfg.edge.net.stage_channels == std::vector<std::size_t>{8, 16, 32});
  CHECK(cfg.edge.net.pdc_schedule.size() == 12);
  CHECK(cfg.segmenter.net.deep_supervision);
  CHECK(cfg.paths.out == "run dir");

  const std::string canonical = serialize_config(cfg);
  CHECK(serialize_config(parse_config(canonical)) == canonical);
  CHECK(canonical.find("epochs = 13\n") != std::string::npos);
  CHECK(canonical.find("stage_channels = 8, 16, 32\n") != std::string::npos);

  // Doubles survive the text round trip bit for bit.
  PipelineConfig odd;
  odd.synth.spec.noise_sigma = 0.1 + 0.2;
  odd.regressor.lr = 1.0 / 3.0;
  const PipelineConfig back = parse_config(serialize_config(odd));
  CHECK(back.synth.spec.noise_sigma == odd.synth.spec.noise_sigma);
  CHECK(back.regressor.lr == odd.regressor.lr);
}

TEST_CASE("config: validation") {
  PipelineConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.synth.gd_min = 3.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  PipelineConfig real;
  real.paths.images = "imgs";
  CHECK_THROWS_AS(real.validate(), ConfigError);
  real.paths.labels = "l.csv";
  real.paths.edge_weights = "e.mgf";
  real.paths.seg_weights = "s.mgf";
  CHECK_NOTHROW(real.validate());

  PipelineConfig heads;
  heads.regressor.n_heads = 5;
  CHECK_THROWS_AS(heads.validate(), ConfigError);

  CHECK_THROWS_AS(load_config("/nonexistent/mgf.cfg"), ConfigError);
}

TEST_CASE("output lock excludes a second owner and is released") {
  const fs::path dir = scratch_dir("lock");
  {
    OutputLock a(dir);
    CHECK(fs::exists(dir / ".mgf.lock"));
    CHECK_THROWS(OutputLock{dir});
  }
  CHECK_FALSE(fs::exists(dir / ".mgf.lock"));
  CHECK_NOTHROW(OutputLock{dir});
  fs::remove_all(dir);
}

TEST_CASE("parallel_for visits every index once and rethrows") {
  ::setenv("MGF_THREADS", "3", 1);
  CHECK(worker_count() == 3);
  std::vector<std::atomic<int>> hits(100);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_WITH(parallel_for(10,
                                 [](std::size_t i) {
                                   if (i == 4 || i == 7) throw std::runtime_error("item " + std::to_string(i));
                                 }),
                    "item 4");
  ::setenv("MGF_THREADS", "zero", 1);
  CHECK(worker_count() >= 1);
  ::unsetenv("MGF_THREADS");
}

TEST_CASE("evaluate: identical masks score perfectly") {
  const fs::path dir = scratch_dir("eval");
  fs::create_directories(dir);
  BinaryMask m(20, 20);
  for (std::size_t i = 0; i < 20; ++i) m(i, 7) = m(12, i) = 1;
  write_mask_pgm(dir / "a.pgm", m);
  write_mask_pgm(dir / "b.pgm", m);

  const StageResult e = run_evaluate(EvalMode::edge, dir / "a.pgm", dir / "b.pgm", 2);
  CHECK(e.metrics["f1"].get<double>() == 1.0);
  const StageResult s = run_evaluate(EvalMode::seg, dir / "a.pgm", dir / "b.pgm", 2);
  CHECK(s.metrics["iou_foreground"].get<double>() == 1.0);
  CHECK(s.metrics["miou"].get<double>() == 1.0);

  CHECK_THROWS_AS(run_evaluate(EvalMode::edge, dir / "missing.pgm", dir / "b.pgm", 2), InputError);
  CHECK(parse_eval_mode("hv") == EvalMode::hv);
  CHECK_THROWS(parse_eval_mode("iou"));
  fs::remove_all(dir);
}

TEST_CASE("stages report missing inputs by path") {
  const fs::path dir = scratch_dir("missing");
  const PipelineConfig cfg;
  try {
    run_train_hv(cfg, dir / "nope.csv", dir);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("nope.csv") != std::string::npos);
  }
  CHECK_THROWS_AS(run_detect_edges(cfg, dir / "w.mgf", dir, dir), InputError);

  fs::create_directories(dir / "b");
  fs::create_directories(dir / "p");
  write_mask_pgm(dir / "b" / "x.pgm", BinaryMask(8, 8));
  write_mask_pgm(dir / "p" / "x.pgm", BinaryMask(8, 8));
  std::ofstream(dir / "labels.csv") << "name,gd\nx,1\n";
  CHECK_THROWS_AS(run_features(cfg, dir / "b", dir / "p", dir / "labels.csv", dir), InputError);
  std::ofstream(dir / "labels.csv") << "id,gd_at_pct,hv\ny,1,50\n";
  CHECK_THROWS_WITH_AS(run_features(cfg, dir / "b", dir / "p", dir / "labels.csv", dir), doctest::Contains("'x'"),
                       InputError);
  fs::remove_all(dir);
}

TEST_CASE("pipeline smoke run: every stage once, metric blocks filled, stages reproducible alone") {
  const PipelineConfig cfg = tiny_config();
  const fs::path out = scratch_dir("smoke");
  const StageResult r = run_pipeline(cfg, out);
  REQUIRE(fs::exists(out / kRunReport));
  const Json report = Json::parse(slurp(out / kRunReport));

  std::multiset<std::string> names;
  for (const Json& s : report["stages"]) {
    names.insert(s["name"].get<std::string>());
    CHECK_FALSE(s.contains("seconds"));
  }
  for (const char* want : {"synth", "augment", "train-edges", "train-phase", "detect-edges", "repair",
                           "segment-phase", "features", "loocv", "train-hv", "explain", "evaluate"})
    CHECK_MESSAGE(names.count(want) == 1, want);
  CHECK(names.size() == 12);

  CHECK(report["images"].size() == cfg.synth.test_images);
  for (const char* block : {"edge", "segmentation", "regression"}) CHECK_FALSE(report["metrics"][block].is_null());
  CHECK(report["shap_summary"].get<std::string>() == "shap/summary.json");
  CHECK(fs::exists(out / "shap" / "summary.json"));

  // Standalone stages with the same config rewrite the same bytes.
  const fs::path alone = scratch_dir("smoke_alone");
  run_train_edges(cfg, out / kAugmentDir / "images", out / kAugmentDir / "masks", alone);
  CHECK(slurp(alone / kEdgeModelDir / "weights.mgf") == slurp(out / kEdgeModelDir / "weights.mgf"));
  run_detect_edges(cfg, alone / kEdgeModelDir / "weights.mgf", out / "synth/test/images", alone);
  CHECK(slurp(alone / kEdgesDir / "test_002.pgm") == slurp(out / kEdgesDir / "test_002.pgm"));
  run_train_hv(cfg, out / kFeaturesCsv, alone);
  CHECK(slurp(alone / kHvModelDir / "weights.mgf") == slurp(out / kHvModelDir / "weights.mgf"));

  // Predictions from the saved regressor; unlabeled rows are fine here.
  run_predict(cfg, out / kHvModelDir, out / kFeaturesCsv, alone);
  CHECK(fs::exists(alone / kPredictionsCsv));

  // Timings only appear on request.
  const fs::path timed = scratch_dir("smoke_timed");
  PipelineConfig quick = cfg;
  quick.synth.test_images = 3;
  run_pipeline(quick, timed, {.record_timings = true});
  const Json tr = Json::parse(slurp(timed / kRunReport));
  for (const Json& s : tr["stages"]) CHECK(s.contains("seconds"));

  fs::remove_all(out);
  fs::remove_all(alone);
  fs::remove_all(timed);
}
