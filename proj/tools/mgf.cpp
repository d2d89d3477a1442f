// mgf: command-line front end for the micrograph-to-hardness stages.
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mgf/pipeline/stages.hpp"

namespace pl = mgf::pipeline;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

pl::PipelineConfig resolve(const Common& c) {
  pl::PipelineConfig cfg = c.config.empty() ? pl::PipelineConfig{} : pl::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.paths.out = c.out;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Micrograph feature extraction and hardness regression"};
  app.name("mgf");
  app.require_subcommand(1);

  Common common;
  app.add_option("--config", common.config, "Config file ([section] / key = value)");
  app.add_option("--seed", common.seed, "Override run.seed");
  app.add_option("--out", common.out, "Output directory (overrides paths.out)");
  app.fallthrough();

  std::string images, masks, weights, edges, boundaries, phases, labels, features, pred, gt, mode = "edge";
  int tolerance = 2;
  bool timings = false;
  std::function<pl::StageResult(const pl::PipelineConfig&)> action;

  auto sub = [&](const char* name, const char* help) { return app.add_subcommand(name, help); };
  auto need = [](CLI::App* s, const char* flag, std::string& v, const char* help) {
    s->add_option(flag, v, help)->required();
  };

  auto* synth = sub("synth", "Generate synthetic micrographs with ground-truth masks");
  synth->callback([&] { action = [](const auto& cfg) { return pl::run_synth(cfg, cfg.paths.out); }; });

  auto* augment = sub("augment", "Rotate, flip and crop image/mask pairs");
  need(augment, "--images", images, "Image directory");
  need(augment, "--masks", masks, "Mask directory (same file stems)");
  augment->callback([&] {
    action = [&](const auto& cfg) { return pl::run_augment(cfg, images, masks, cfg.paths.out); };
  });

  auto* train_edges = sub("train-edges", "Train the edge detector");
  need(train_edges, "--images", images, "Image directory");
  need(train_edges, "--masks", masks, "Boundary mask directory");
  train_edges->callback([&] {
    action = [&](const auto& cfg) { return pl::run_train_edges(cfg, images, masks, cfg.paths.out); };
  });

  auto* detect = sub("detect-edges", "Write fused edge probability maps");
  need(detect, "--weights", weights, "Edge weights file");
  need(detect, "--images", images, "Image directory");
  detect->callback([&] {
    action = [&](const auto& cfg) { return pl::run_detect_edges(cfg, weights, images, cfg.paths.out); };
  });

  auto* repair = sub("repair", "Close gaps in detected boundaries");
  need(repair, "--images", images, "Image directory");
  need(repair, "--edges", edges, "Edge map directory");
  repair->callback([&] {
    action = [&](const auto& cfg) { return pl::run_repair(cfg, images, edges, cfg.paths.out); };
  });

  auto* train_phase = sub("train-phase", "Train the phase segmenter");
  need(train_phase, "--images", images, "Image directory");
  need(train_phase, "--masks", masks, "Phase mask directory");
  train_phase->callback([&] {
    action = [&](const auto& cfg) { return pl::run_train_phase(cfg, images, masks, cfg.paths.out); };
  });

  auto* segment = sub("segment-phase", "Write second-phase masks");
  need(segment, "--weights", weights, "Segmenter weights file");
  need(segment, "--images", images, "Image directory");
  segment->callback([&] {
    action = [&](const auto& cfg) { return pl::run_segment_phase(cfg, weights, images, cfg.paths.out); };
  });

  auto* feats = sub("features", "Measure grain size, phase fraction and ECD");
  need(feats, "--boundaries", boundaries, "Boundary mask directory");
  need(feats, "--phases", phases, "Phase mask directory");
  need(feats, "--labels", labels, "CSV id,gd_at_pct[,hv]");
  feats->callback([&] {
    action = [&](const auto& cfg) { return pl::run_features(cfg, boundaries, phases, labels, cfg.paths.out); };
  });

  auto* train_hv = sub("train-hv", "Fit the hardness regressor on all rows");
  need(train_hv, "--features", features, "Feature CSV");
  train_hv->callback([&] {
    action = [&](const auto& cfg) { return pl::run_train_hv(cfg, features, cfg.paths.out); };
  });

  auto* loocv = sub("loocv", "Leave-one-out cross-validation of the regressor");
  need(loocv, "--features", features, "Feature CSV");
  loocv->callback([&] { action = [&](const auto& cfg) { return pl::run_loocv(cfg, features, cfg.paths.out); }; });

  auto* predict = sub("predict", "Predict hardness with a trained regressor");
  need(predict, "--weights", weights, "Regressor directory from train-hv");
  need(predict, "--features", features, "Feature CSV");
  predict->callback([&] {
    action = [&](const auto& cfg) { return pl::run_predict(cfg, weights, features, cfg.paths.out); };
  });

  auto* explain = sub("explain", "Exact Shapley attributions per row");
  need(explain, "--weights", weights, "Regressor directory from train-hv");
  need(explain, "--features", features, "Feature CSV (also the background set)");
  explain->callback([&] {
    action = [&](const auto& cfg) { return pl::run_explain(cfg, weights, features, cfg.paths.out); };
  });

  auto* evaluate = sub("evaluate", "Score predictions against ground truth");
  need(evaluate, "--pred", pred, "Predicted mask, mask directory, or predictions CSV");
  evaluate->add_option("--gt", gt, "Ground-truth mask or directory (edge, seg)");
  evaluate->add_option("--mode", mode, "edge, seg or hv")->check(CLI::IsMember({"edge", "seg", "hv"}));
  evaluate->add_option("--tolerance", tolerance, "Edge match tolerance in px")->check(CLI::NonNegativeNumber);
  evaluate->callback([&] {
    action = [&](const auto&) {
      const auto m = pl::parse_eval_mode(mode);
      if (m != pl::EvalMode::hv && gt.empty()) throw CLI::RequiredError("--gt");
      return pl::run_evaluate(m, pred, gt, tolerance);
    };
  });

  auto* pipeline = sub("pipeline", "Run every stage and write run_report.json");
  pipeline->add_flag("--timings", timings, "Record per-stage wall-clock seconds (breaks byte-identical reruns)");
  pipeline->callback([&] {
    action = [&](const auto& cfg) {
      return pl::run_pipeline(cfg, cfg.paths.out, pl::PipelineOptions{.record_timings = timings});
    };
  });

  if (argc <= 1) {
    std::cerr << app.help();
    return kUsageError;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    const pl::PipelineConfig cfg = resolve(common);
    if (stage == "evaluate") {
      std::cout << action(cfg).summary << "\n";
      return 0;
    }
    pl::OutputLock lock(cfg.paths.out);
    std::cout << action(cfg).summary << "\n";
    return 0;
  } catch (const pl::ConfigError& e) {
    std::cerr << "mgf " << stage << ": " << e.what() << "\n";
    return kUsageError;
  } catch (const CLI::RequiredError& e) {
    std::cerr << "mgf " << stage << ": " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "mgf " << stage << ": error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
