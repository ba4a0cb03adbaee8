#pragma once

// Batch experiment runner: trains and evaluates one decoder per
// (features, mode, roi) tuple and writes per-tuple reports, an aggregate CSV,
// per-ROI SVG charts and a manifest.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurodec/eval.hpp"
#include "neurodec/ridge.hpp"
#include "neurodec/roi.hpp"

namespace neurodec {

// "whole" uses every voxel; the others come from the atlas.
enum class PlanRoi { Whole, Low, High, Language };

std::string_view to_string(PlanRoi r);
PlanRoi parse_plan_roi(std::string_view s);

struct PlanTuple {
  std::filesystem::path features;
  TrainingMode mode = TrainingMode::Agnostic;
  PlanRoi roi = PlanRoi::Whole;
};

struct RunPlan {
  std::filesystem::path dataset_dir;  // events.tsv, train.ndm, test.ndm
  std::filesystem::path atlas;        // required when any tuple uses an atlas ROI
  std::vector<PlanTuple> tuples;
  CvConfig cv;
  EvalOptions bootstrap;
  std::filesystem::path output_dir;

  // Files exist, tuples unique, configs valid.
  void validate() const;
  // Either an explicit "tuples" list or a "features"/"modes"/"rois" grid.
  // Relative paths are resolved against `base_dir`.
  static RunPlan from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunPlan load(const std::filesystem::path& path);
};

struct TupleResult {
  PlanTuple tuple;
  std::string model;
  std::optional<FeatureModality> feature_modality;
  std::string status;  // "ok" or "failed:<error>"
  std::filesystem::path report_path;
  std::optional<EvalReport> report;

  bool ok() const { return status == "ok"; }
};

struct RunManifest {
  std::vector<TupleResult> results;  // plan order

  int n_ok() const;
  int exit_code() const;  // 0 all ok, 2 partial, 1 none
  nlohmann::json to_json() const;
};

// Worker cap from NEURODEC_WORKERS (default 1).
int worker_count();

RunManifest run_plan(const RunPlan& plan, int workers = worker_count());

std::string report_file_name(const std::string& model, TrainingMode mode, PlanRoi roi);
std::string results_csv(const RunManifest& manifest);
std::string roi_chart_svg(const RunManifest& manifest, PlanRoi roi);

struct PoolingRow {
  std::string model;
  std::string pooling;  // "mean" or "cls"
  EvalReport report;
};

// Trains and evaluates a modality-agnostic decoder on each of two feature
// matrices covering the same stimuli.
std::vector<PoolingRow> compare_pooling(const FeatureMatrix& features_mean, const FeatureMatrix& features_cls,
                                        const Dataset& ds, const CvConfig& cv, const EvalOptions& bootstrap);
std::string pooling_csv(const std::vector<PoolingRow>& rows);

}  // namespace neurodec
