#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "mgf/pipeline/config.hpp"

namespace mgf::pipeline {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Worker cap from MGF_THREADS (unset or invalid: hardware concurrency, at least 1).
std::size_t worker_count();
/// Runs fn(0..n-1) on up to worker_count() threads. Rethrows the exception of the lowest index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Holds `<dir>/.mgf.lock` for the lifetime of the object; the directory is created if needed.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

/// Raised for unreadable or missing inputs; the message names the path.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StageResult {
  std::string summary;  // one line for the terminal
  Json metrics;         // null when the stage measures nothing
};

// Output layout, relative to the output directory.
inline const fs::path kSynthDir = "synth";
inline const fs::path kAugmentDir = "augment";
inline const fs::path kEdgeModelDir = "edge_model";
inline const fs::path kEdgesDir = "edges";
inline const fs::path kRepairedDir = "repaired";
inline const fs::path kPhaseModelDir = "phase_model";
inline const fs::path kPhaseDir = "phase";
inline const fs::path kFeaturesCsv = "features.csv";
inline const fs::path kHvModelDir = "hv_model";
inline const fs::path kLoocvDir = "loocv";
inline const fs::path kPredictionsCsv = "predictions.csv";
inline const fs::path kShapDir = "shap";
inline const fs::path kRunReport = "run_report.json";

/// synth/{train,test}/{images,boundary,phase,scratches}/<id>.pgm plus synth/test/labels.csv
/// (id,gd_at_pct,hv) and synth/test/truth.csv (analytic feature values).
StageResult run_synth(const PipelineConfig& cfg, const fs::path& out);
/// augment/{images,masks}/aug_NNNNN.pgm from same-named images and masks.
StageResult run_augment(const PipelineConfig& cfg, const fs::path& images, const fs::path& masks, const fs::path& out);
StageResult run_train_edges(const PipelineConfig& cfg, const fs::path& images, const fs::path& masks,
                            const fs::path& out);
/// edges/<id>.pgm: fused edge probability.
StageResult run_detect_edges(const PipelineConfig& cfg, const fs::path& weights, const fs::path& images,
                             const fs::path& out);
StageResult run_repair(const PipelineConfig& cfg, const fs::path& images, const fs::path& edges, const fs::path& out);
StageResult run_train_phase(const PipelineConfig& cfg, const fs::path& images, const fs::path& masks,
                            const fs::path& out);
StageResult run_segment_phase(const PipelineConfig& cfg, const fs::path& weights, const fs::path& images,
                              const fs::path& out);
/// features.csv from boundary and phase masks sharing ids with the labels CSV.
StageResult run_features(const PipelineConfig& cfg, const fs::path& boundaries, const fs::path& phases,
                         const fs::path& labels, const fs::path& out);
StageResult run_train_hv(const PipelineConfig& cfg, const fs::path& features, const fs::path& out);
StageResult run_loocv(const PipelineConfig& cfg, const fs::path& features, const fs::path& out);
/// `weights` is the hv_model directory written by run_train_hv.
StageResult run_predict(const PipelineConfig& cfg, const fs::path& weights, const fs::path& features,
                        const fs::path& out);
StageResult run_explain(const PipelineConfig& cfg, const fs::path& weights, const fs::path& features,
                        const fs::path& out);

enum class EvalMode { edge, seg, hv };
EvalMode parse_eval_mode(const std::string& s);
/// `pred` and `gt` are both mask files or both directories of same-named masks (edge, seg), or
/// a predictions CSV with actual_hv / predicted_hv columns (hv, `gt` unused).
StageResult run_evaluate(EvalMode mode, const fs::path& pred, const fs::path& gt, int tolerance_px);

struct PipelineOptions {
  bool record_timings = false;  // wall-clock seconds per stage in the report
};
/// Chains every stage into `out` and writes run_report.json.
StageResult run_pipeline(const PipelineConfig& cfg, const fs::path& out, const PipelineOptions& opt = {});

}  // namespace mgf::pipeline
