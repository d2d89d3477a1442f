#include "mgf/pipeline/stages.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "mgf/edge/augment.hpp"
#include "mgf/edge/metrics.hpp"
#include "mgf/feature_row.hpp"
#include "mgf/params.hpp"
#include "mgf/shap/shapley.hpp"

namespace mgf::pipeline {

namespace {

// Seed streams per stage, derived from the global seed.
enum Stream : std::uint64_t { kSynthTrain = 1, kSynthTest, kSynthGd, kEdgeTrain, kSegTrain };

std::uint64_t stream_seed(const PipelineConfig& cfg, Stream s, std::uint64_t index = 0) {
  return Rng::derive(Rng::derive(cfg.seed, s).next_u64(), index).next_u64();
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create directory " + p.string() + ": " + ec.message());
}

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw InputError(std::string(what) + " not found: " + p.string());
}

bool is_image(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".pgm" || ext == ".png";
}

/// Image files in a directory, sorted by file name.
std::vector<fs::path> list_images(const fs::path& dir) {
  require_exists(dir, "image directory");
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InputError("no .pgm/.png images in " + dir.string());
  return out;
}

/// The file in `dir` with the same stem as `like`.
fs::path partner(const fs::path& dir, const fs::path& like) {
  for (const char* ext : {".pgm", ".png"}) {
    fs::path p = dir / (like.stem().string() + ext);
    if (fs::exists(p)) return p;
  }
  throw InputError("no file for '" + like.stem().string() + "' in " + dir.string());
}

std::string id_of(std::size_t i, const char* prefix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", prefix, i);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

void write_json(const fs::path& p, const Json& j) { write_text(p, j.dump(2) + "\n"); }

void write_loss_csv(const fs::path& p, const std::vector<double>& curve) {
  std::string s = "epoch,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) s += std::to_string(i) + "," + format_double(curve[i]) + "\n";
  write_text(p, s);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct Label {
  double gd_at_pct = 0;
  std::optional<double> hv;
};

/// `id,gd_at_pct[,hv]`; an empty hv cell means unlabelled.
std::map<std::string, Label> read_labels(const fs::path& path) {
  require_exists(path, "labels file");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,gd_at_pct,hv" && line != "id,gd_at_pct")
    throw InputError(path.string() + ": expected header 'id,gd_at_pct[,hv]', got '" + line + "'");
  std::map<std::string, Label> out;
  for (std::size_t no = 2; std::getline(in, line); ++no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    try {
      if (cells.size() < 2 || cells.size() > 3) throw std::invalid_argument("wrong cell count");
      Label l{std::stod(cells[1]), std::nullopt};
      if (cells.size() == 3 && !cells[2].empty()) l.hv = std::stod(cells[2]);
      out[cells[0]] = l;
    } catch (const std::exception&) {
      throw InputError(path.string() + ":" + std::to_string(no) + ": malformed row '" + line + "'");
    }
  }
  return out;
}

/// Edge maps are stored as 8-bit grayscale.
ProbMap read_prob(const fs::path& path) {
  const GrayImage g = read_gray(path);
  ProbMap p(g.height(), g.width());
  p.data() = g.data();
  return p;
}

ParamStore store_from(const std::map<std::string, Tensor>& tensors) {
  ParamStore s;
  for (const auto& [k, t] : tensors) s.add(k, t);
  return s;
}

std::vector<FeatureRow> read_rows(const fs::path& path) {
  require_exists(path, "feature table");
  return read_feature_csv(path);
}

std::vector<FeatureRow> labelled(const std::vector<FeatureRow>& rows, const fs::path& path) {
  for (const FeatureRow& r : rows)
    if (!r.hv) throw InputError(path.string() + ": row '" + r.id + "' has no hv label");
  return rows;
}

hv::RegressorConfig regressor_config(const PipelineConfig& cfg) {
  hv::RegressorConfig rc = cfg.regressor;
  rc.seed = cfg.seed;
  return rc;
}

hv::TrainedRegressor load_hv(const fs::path& dir, hv::RegressorConfig& rc) {
  require_exists(dir / "weights.mgf", "regressor weights");
  require_exists(dir / "weights.json", "regressor sidecar");
  return hv::load_regressor(dir / "weights.mgf", dir / "weights.json", rc);
}

Json metrics_json(const hv::Metrics& m) { return {{"mae", m.mae}, {"mse", m.mse}, {"rmse", m.rmse}, {"r2", m.r2}}; }

Json edge_summary_json(const edge::EdgeMetricsSummary& s, int tol) {
  return {{"images", s.images},
          {"tolerance_px", tol},
          {"precision", s.mean_precision},
          {"recall", s.mean_recall},
          {"f1", s.mean_f1},
          {"f1_of_means", s.f1_of_means}};
}

struct SegTotals {
  double accuracy = 0, precision = 0, miou = 0, iou_fg = 0;
  std::size_t images = 0, scratch_px = 0, scratch_fp = 0;

  void add(const seg::SegMetrics& m) {
    accuracy += m.accuracy;
    precision += m.precision;
    miou += m.miou;
    iou_fg += m.iou_foreground;
    ++images;
  }
  Json json() const {
    const double n = static_cast<double>(std::max<std::size_t>(images, 1));
    Json j = {{"images", images},
              {"accuracy", accuracy / n},
              {"precision", precision / n},
              {"miou", miou / n},
              {"iou_foreground", iou_fg / n}};
    j["scratch_false_positive_rate"] =
        scratch_px ? Json(static_cast<double>(scratch_fp) / static_cast<double>(scratch_px)) : Json(nullptr);
    return j;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::size_t worker_count() {
  if (const char* env = std::getenv("MGF_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".mgf.lock") {
  make_dir(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw std::runtime_error("output directory is locked by another run (" + path_.string() + ")");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

StageResult run_synth(const PipelineConfig& cfg, const fs::path& out) {
  const fs::path root = out / kSynthDir;
  std::string labels = "id,gd_at_pct,hv\n";
  std::string truth = "id,gd_at_pct,true_intercept_um,true_phase_fraction,true_mean_ecd_um,hv\n";
  for (const char* split : {"train", "test"}) {
    const bool test = std::string(split) == "test";
    const std::size_t n = test ? cfg.synth.test_images : cfg.synth.train_images;
    for (const char* sub : {"images", "boundary", "phase", "scratches"}) make_dir(root / split / sub);
    std::vector<synth::Sample> samples(n);
    std::vector<double> gd(n);
    Rng gd_rng(stream_seed(cfg, kSynthGd, test));
    for (std::size_t i = 0; i < n; ++i) gd[i] = gd_rng.uniform(cfg.synth.gd_min, cfg.synth.gd_max);
    parallel_for(n, [&](std::size_t i) {
      synth::SynthSpec spec = cfg.synth.spec;
      spec.seed = stream_seed(cfg, test ? kSynthTest : kSynthTrain, i);
      spec.gd_at_pct = gd[i];
      samples[i] = synth::generate(spec);
    });
    for (std::size_t i = 0; i < n; ++i) {
      const std::string id = id_of(i, split);
      const auto& s = samples[i];
      write_pgm(root / split / "images" / (id + ".pgm"), s.image);
      write_mask_pgm(root / split / "boundary" / (id + ".pgm"), s.truth.boundary);
      write_mask_pgm(root / split / "phase" / (id + ".pgm"), s.truth.phase);
      write_mask_pgm(root / split / "scratches" / (id + ".pgm"), s.truth.scratches);
      if (test) {
        labels += id + "," + format_double(gd[i]) + "," + format_double(s.truth.hv) + "\n";
        truth += id + "," + format_double(gd[i]) + "," + format_double(s.truth.true_intercept_um) + "," +
                 format_double(s.truth.true_phase_fraction) + "," + format_double(s.truth.true_mean_ecd_um) + "," +
                 format_double(s.truth.hv) + "\n";
      }
    }
  }
  write_text(root / "test" / "labels.csv", labels);
  write_text(root / "test" / "truth.csv", truth);
  return {"synth: " + std::to_string(cfg.synth.train_images) + " train + " + std::to_string(cfg.synth.test_images) +
              " test images in " + kSynthDir.string(),
          nullptr};
}

StageResult run_augment(const PipelineConfig& cfg, const fs::path& images, const fs::path& masks, const fs::path& out) {
  std::vector<GrayImage> imgs;
  std::vector<BinaryMask> ms;
  for (const fs::path& p : list_images(images)) {
    imgs.push_back(read_gray(p, cfg.synth.spec.pixel_scale_um));
    ms.push_back(read_mask(partner(masks, p)));
  }
  const edge::Augmented aug = edge::augment(imgs, ms, cfg.augment.spec);
  const fs::path root = out / kAugmentDir;
  make_dir(root / "images");
  make_dir(root / "masks");
  std::size_t kept = 0;
  for (std::size_t i = 0; i < aug.images.size(); i += cfg.augment.keep_every, ++kept) {
    char name[32];
    std::snprintf(name, sizeof name, "aug_%05zu.pgm", kept);
    write_pgm(root / "images" / name, aug.images[i]);
    write_mask_pgm(root / "masks" / name, aug.masks[i]);
  }
  return {"augment: " + std::to_string(imgs.size()) + " inputs -> " + std::to_string(kept) + " samples in " +
              kAugmentDir.string(),
          nullptr};
}

StageResult run_train_edges(const PipelineConfig& cfg, const fs::path& images, const fs::path& masks,
                            const fs::path& out) {
  std::vector<edge::EdgeSample> data;
  for (const fs::path& p : list_images(images))
    data.push_back({read_gray(p, cfg.synth.spec.pixel_scale_um), read_mask(partner(masks, p))});
  edge::EdgeTrainOptions opt = cfg.edge.train;
  opt.seed = stream_seed(cfg, kEdgeTrain);
  const edge::EdgeTrainResult r = edge::train_edge_detector(data, cfg.edge.net, opt);
  const fs::path root = out / kEdgeModelDir;
  make_dir(root);
  save_tensors(root / "weights.mgf", r.params.values());
  write_loss_csv(root / "loss.csv", r.loss_curve);
  const double last = r.loss_curve.empty() ? 0.0 : r.loss_curve.back();
  return {"train-edges: " + std::to_string(data.size()) + " samples, " + std::to_string(opt.epochs) +
              " epochs, final loss " + fmt(last) + " -> " + kEdgeModelDir.string(),
          Json{{"final_loss", last}}};
}

StageResult run_detect_edges(const PipelineConfig& cfg, const fs::path& weights, const fs::path& images,
                             const fs::path& out) {
  require_exists(weights, "edge weights");
  const ParamStore params = store_from(load_tensors(weights));
  const auto files = list_images(images);
  const fs::path root = out / kEdgesDir;
  make_dir(root);
  parallel_for(files.size(), [&](std::size_t i) {
    const auto det = edge::detect_edges(read_gray(files[i], cfg.synth.spec.pixel_scale_um), params, cfg.edge.net);
    write_pgm(root / (files[i].stem().string() + ".pgm"), det.fused);
  });
  return {"detect-edges: " + std::to_string(files.size()) + " edge maps in " + kEdgesDir.string(), nullptr};
}

StageResult run_repair(const PipelineConfig& cfg, const fs::path& images, const fs::path& edges, const fs::path& out) {
  const auto files = list_images(images);
  const fs::path root = out / kRepairedDir;
  make_dir(root);
  parallel_for(files.size(), [&](std::size_t i) {
    const GrayImage img = read_gray(files[i], cfg.synth.spec.pixel_scale_um);
    const ProbMap prob = read_prob(partner(edges, files[i]));
    write_mask_pgm(root / (files[i].stem().string() + ".pgm"), repair::repair(img, prob, cfg.repair));
  });
  return {"repair: " + std::to_string(files.size()) + " boundary masks in " + kRepairedDir.string(), nullptr};
}

StageResult run_train_phase(const PipelineConfig& cfg, const fs::path& images, const fs::path& masks,
                            const fs::path& out) {
  std::vector<seg::SegSample> data;
  for (const fs::path& p : list_images(images))
    data.push_back({read_gray(p, cfg.synth.spec.pixel_scale_um), read_mask(partner(masks, p))});
  seg::SegTrainOptions opt = cfg.segmenter.train;
  opt.seed = stream_seed(cfg, kSegTrain);
  const seg::SegTrainResult r = seg::train_segmenter(data, cfg.segmenter.net, opt);
  const fs::path root = out / kPhaseModelDir;
  make_dir(root);
  save_tensors(root / "weights.mgf", r.model.tensors());
  write_loss_csv(root / "loss.csv", r.loss_curve);
  const double last = r.loss_curve.empty() ? 0.0 : r.loss_curve.back();
  return {"train-phase: " + std::to_string(data.size()) + " samples, " + std::to_string(opt.epochs) +
              " epochs, final loss " + fmt(last) + " -> " + kPhaseModelDir.string(),
          Json{{"final_loss", last}}};
}

StageResult run_segment_phase(const PipelineConfig& cfg, const fs::path& weights, const fs::path& images,
                              const fs::path& out) {
  require_exists(weights, "segmenter weights");
  seg::SegModel model;
  model.load(load_tensors(weights));
  const auto files = list_images(images);
  const fs::path root = out / kPhaseDir;
  make_dir(root);
  parallel_for(files.size(), [&](std::size_t i) {
    // Inference reads the batch-norm running stats without updating them, so one model serves every thread.
    const GrayImage img = read_gray(files[i], cfg.synth.spec.pixel_scale_um);
    write_mask_pgm(root / (files[i].stem().string() + ".pgm"),
                   seg::segment_phase(img, model, cfg.segmenter.net, cfg.segmenter.threshold));
  });
  return {"segment-phase: " + std::to_string(files.size()) + " phase masks in " + kPhaseDir.string(), nullptr};
}

StageResult run_features(const PipelineConfig& cfg, const fs::path& boundaries, const fs::path& phases,
                         const fs::path& labels, const fs::path& out) {
  const auto lab = read_labels(labels);
  const auto files = list_images(boundaries);
  std::vector<FeatureRow> rows(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    const std::string id = files[i].stem().string();
    auto it = lab.find(id);
    if (it == lab.end()) throw InputError(labels.string() + ": no label for '" + id + "'");
    const BinaryMask boundary = read_mask(files[i]), phase = read_mask(partner(phases, files[i]));
    try {
      rows[i] = features::assemble_features(id, it->second.gd_at_pct, boundary, phase, cfg.synth.spec.pixel_scale_um,
                                            it->second.hv, cfg.intercept);
    } catch (const features::MeasurementUndefined& e) {
      throw features::MeasurementUndefined("image '" + id + "': " + e.what());
    }
  });
  make_dir(out);
  write_feature_csv(out / kFeaturesCsv, rows);
  return {"features: " + std::to_string(rows.size()) + " rows -> " + kFeaturesCsv.string(), nullptr};
}

StageResult run_train_hv(const PipelineConfig& cfg, const fs::path& features, const fs::path& out) {
  const auto rows = labelled(read_rows(features), features);
  const hv::RegressorConfig rc = regressor_config(cfg);
  const hv::TrainedRegressor model = hv::train_regressor(rows, rc);
  const fs::path root = out / kHvModelDir;
  make_dir(root);
  hv::save_regressor(root / "weights.mgf", root / "weights.json", model, rc);
  write_loss_csv(root / "loss.csv", model.loss_curve);
  const double first = model.loss_curve.empty() ? 0.0 : model.loss_curve.front();
  const double last = model.loss_curve.empty() ? 0.0 : model.loss_curve.back();
  return {"train-hv: " + std::to_string(rows.size()) + " rows, loss " + fmt(first) + " -> " + fmt(last) + " -> " +
              kHvModelDir.string(),
          Json{{"initial_loss", first}, {"final_loss", last}}};
}

StageResult run_loocv(const PipelineConfig& cfg, const fs::path& features, const fs::path& out) {
  const auto rows = labelled(read_rows(features), features);
  if (rows.size() < 3) throw InputError(features.string() + ": leave-one-out needs at least 3 labelled rows");
  const hv::RegressorConfig rc = regressor_config(cfg);
  std::vector<double> pred(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) { pred[i] = hv::loocv_fold(rows, i, rc); });
  std::vector<double> y;
  for (const FeatureRow& r : rows) y.push_back(*r.hv);
  const hv::Metrics m = hv::regression_metrics(y, pred);
  const fs::path root = out / kLoocvDir;
  make_dir(root);
  hv::write_predictions_csv(root / "predictions.csv", rows, pred);
  hv::write_metrics_json(root / "metrics.json", m);
  return {"loocv: " + std::to_string(rows.size()) + " folds, R2 " + fmt(m.r2) + ", RMSE " + fmt(m.rmse) + ", MAE " +
              fmt(m.mae),
          metrics_json(m)};
}

StageResult run_predict(const PipelineConfig& cfg, const fs::path& weights, const fs::path& features,
                        const fs::path& out) {
  hv::RegressorConfig rc = regressor_config(cfg);
  const hv::TrainedRegressor model = load_hv(weights, rc);
  const auto rows = read_rows(features);
  const auto pred = hv::predict(rows, model, rc);
  make_dir(out);
  hv::write_predictions_csv(out / kPredictionsCsv, rows, pred);
  return {"predict: " + std::to_string(rows.size()) + " predictions -> " + kPredictionsCsv.string(), nullptr};
}

StageResult run_explain(const PipelineConfig& cfg, const fs::path& weights, const fs::path& features,
                        const fs::path& out) {
  hv::RegressorConfig rc = regressor_config(cfg);
  const hv::TrainedRegressor model = load_hv(weights, rc);
  const auto rows = read_rows(features);
  const shap::BatchModel f = shap::regressor_model(model, rc);
  std::vector<shap::ShapleyReport> reports(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) { reports[i] = shap::exact_shapley(f, rows[i], rows); });
  const shap::Ranking ranking = shap::importance_ranking(reports);
  std::array<std::vector<double>, FeatureRow::kFeatures> thresholds;
  for (std::size_t k = 0; k < FeatureRow::kFeatures; ++k)
    thresholds[k] = shap::critical_values(shap::dependence_series(rows, reports, k));
  const fs::path root = out / kShapDir;
  make_dir(root);
  shap::write_shap_rows_json(root / "rows.json", rows, reports);
  shap::write_shap_summary_json(root / "summary.json", ranking, thresholds);
  std::string order;
  for (const auto& fi : ranking.order) order += std::string(order.empty() ? "" : " > ") + kFeatureNames[fi.feature];
  Json j = {{"ranking", Json::array()}, {"degenerate", ranking.degenerate}};
  for (const auto& fi : ranking.order) j["ranking"].push_back(kFeatureNames[fi.feature]);
  return {"explain: " + order + (ranking.degenerate ? " (degenerate)" : ""), j};
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "edge") return EvalMode::edge;
  if (s == "seg") return EvalMode::seg;
  if (s == "hv") return EvalMode::hv;
  throw std::invalid_argument("unknown evaluation mode '" + s + "' (edge, seg, hv)");
}

StageResult run_evaluate(EvalMode mode, const fs::path& pred, const fs::path& gt, int tolerance_px) {
  require_exists(pred, "prediction");
  if (mode == EvalMode::hv) {
    std::ifstream in(pred);
    std::string line;
    std::getline(in, line);
    const auto head = split_csv(line);
    const auto col = [&](const char* name) {
      auto it = std::find(head.begin(), head.end(), name);
      if (it == head.end()) throw InputError(pred.string() + ": missing column " + name);
      return static_cast<std::size_t>(it - head.begin());
    };
    const std::size_t ca = col("actual_hv"), cp = col("predicted_hv");
    std::vector<double> y, yhat;
    while (std::getline(in, line)) {
      const auto cells = split_csv(line);
      if (cells.size() <= std::max(ca, cp) || cells[ca].empty()) continue;
      y.push_back(std::stod(cells[ca]));
      yhat.push_back(std::stod(cells[cp]));
    }
    const hv::Metrics m = hv::regression_metrics(y, yhat);
    return {"evaluate hv: R2 " + fmt(m.r2) + ", RMSE " + fmt(m.rmse) + ", MAE " + fmt(m.mae), metrics_json(m)};
  }

  require_exists(gt, "ground truth");
  std::vector<std::pair<fs::path, fs::path>> pairs;
  if (fs::is_directory(pred)) {
    for (const fs::path& p : list_images(pred)) pairs.emplace_back(p, partner(gt, p));
  } else {
    pairs.emplace_back(pred, gt);
  }
  if (mode == EvalMode::edge) {
    std::vector<edge::EdgeMetrics> per;
    for (const auto& [p, g] : pairs) per.push_back(edge::edge_metrics(read_mask(p), read_mask(g), tolerance_px));
    const auto s = edge::summarize(per);
    return {"evaluate edge: P " + fmt(s.mean_precision) + ", R " + fmt(s.mean_recall) + ", F1 " + fmt(s.mean_f1),
            edge_summary_json(s, tolerance_px)};
  }
  SegTotals t;
  for (const auto& [p, g] : pairs) t.add(seg::seg_metrics(read_mask(p), read_mask(g)));
  const Json j = t.json();
  return {"evaluate seg: IoU " + fmt(j["iou_foreground"].get<double>()) + ", MIoU " + fmt(j["miou"].get<double>()), j};
}

StageResult run_pipeline(const PipelineConfig& cfg, const fs::path& out, const PipelineOptions& opt) {
  cfg.validate();
  const bool synthetic = cfg.paths.images.empty();
  Json report;
  report["seed"] = cfg.seed;
  report["source"] = synthetic ? "synthetic" : "images";
  report["stages"] = Json::array();
  Json metrics = {{"edge", nullptr}, {"segmentation", nullptr}, {"regression", nullptr}};

  auto stage = [&](const std::string& name, const std::function<StageResult()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    StageResult r;
    try {
      r = fn();
    } catch (const InputError& e) {
      throw InputError(name + ": " + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error(name + ": " + e.what());
    }
    Json s = {{"name", name}, {"summary", r.summary}};
    if (opt.record_timings)
      s["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report["stages"].push_back(s);
    return r;
  };

  fs::path images, labels, edge_weights, seg_weights;
  if (synthetic) {
    const fs::path train = out / kSynthDir / "train", test = out / kSynthDir / "test";
    stage("synth", [&] { return run_synth(cfg, out); });
    stage("augment", [&] { return run_augment(cfg, train / "images", train / "boundary", out); });
    stage("train-edges", [&] {
      return run_train_edges(cfg, out / kAugmentDir / "images", out / kAugmentDir / "masks", out);
    });
    stage("train-phase", [&] { return run_train_phase(cfg, train / "images", train / "phase", out); });
    images = test / "images";
    labels = test / "labels.csv";
    edge_weights = out / kEdgeModelDir / "weights.mgf";
    seg_weights = out / kPhaseModelDir / "weights.mgf";
  } else {
    images = cfg.paths.images;
    labels = cfg.paths.labels;
    edge_weights = cfg.paths.edge_weights;
    seg_weights = cfg.paths.seg_weights;
    require_exists(images, "image directory");
    require_exists(labels, "labels file");
    require_exists(edge_weights, "edge weights");
    require_exists(seg_weights, "segmenter weights");
  }

  stage("detect-edges", [&] { return run_detect_edges(cfg, edge_weights, images, out); });
  stage("repair", [&] { return run_repair(cfg, images, out / kEdgesDir, out); });
  stage("segment-phase", [&] { return run_segment_phase(cfg, seg_weights, images, out); });
  stage("features", [&] { return run_features(cfg, out / kRepairedDir, out / kPhaseDir, labels, out); });

  const auto rows = read_feature_csv(out / kFeaturesCsv);
  const bool has_labels = rows.size() >= 3 && std::all_of(rows.begin(), rows.end(), [](const FeatureRow& r) {
                            return r.hv.has_value();
                          });
  if (has_labels) {
    metrics["regression"] = stage("loocv", [&] { return run_loocv(cfg, out / kFeaturesCsv, out); }).metrics;
    stage("train-hv", [&] { return run_train_hv(cfg, out / kFeaturesCsv, out); });
    stage("explain", [&] { return run_explain(cfg, out / kHvModelDir, out / kFeaturesCsv, out); });
    report["shap_summary"] = (kShapDir / "summary.json").string();
  } else {
    report["shap_summary"] = nullptr;
  }

  if (synthetic) {
    stage("evaluate", [&] {
      const fs::path test = out / kSynthDir / "test";
      const auto files = list_images(test / "boundary");
      std::vector<edge::EdgeMetrics> detected, repaired;
      SegTotals seg_totals;
      for (const fs::path& gt_path : files) {
        const std::string name = gt_path.filename().string();
        const BinaryMask gt = read_mask(gt_path);
        const BinaryMask det = read_prob(out / kEdgesDir / name).threshold(cfg.edge.threshold);
        detected.push_back(edge::edge_metrics(det, gt, cfg.edge.tolerance_px));
        repaired.push_back(edge::edge_metrics(read_mask(out / kRepairedDir / name), gt, cfg.edge.tolerance_px));
        const BinaryMask phase = read_mask(out / kPhaseDir / name);
        seg_totals.add(seg::seg_metrics(phase, read_mask(test / "phase" / name)));
        const BinaryMask scratches = read_mask(test / "scratches" / name);
        seg_totals.scratch_px += scratches.count();
        seg_totals.scratch_fp += intersection_count(scratches, phase);
      }
      metrics["edge"] = {{"detected", edge_summary_json(edge::summarize(detected), cfg.edge.tolerance_px)},
                         {"repaired", edge_summary_json(edge::summarize(repaired), cfg.edge.tolerance_px)}};
      metrics["segmentation"] = seg_totals.json();
      return StageResult{"evaluate: edge F1 " + fmt(metrics["edge"]["detected"]["f1"].get<double>()) +
                             ", phase IoU " + fmt(metrics["segmentation"]["iou_foreground"].get<double>()),
                         nullptr};
    });
  }

  report["images"] = Json::array();
  for (const FeatureRow& r : rows) {
    Json j = {{"id", r.id}};
    for (std::size_t k = 0; k < FeatureRow::kFeatures; ++k) j[kFeatureNames[k]] = r.feature(k);
    j["hv"] = r.hv ? Json(*r.hv) : Json(nullptr);
    report["images"].push_back(j);
  }
  report["metrics"] = metrics;
  write_json(out / kRunReport, report);
  return {"pipeline: " + std::to_string(report["stages"].size()) + " stages, report " + kRunReport.string(),
          metrics};
}

}  // namespace mgf::pipeline
