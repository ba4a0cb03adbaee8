#pragma once

// HRF-convolved design matrices and the two-phase GLM that turns voxel time
// series into single-trial betas.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "neurodec/core_model.hpp"

namespace neurodec {

// Difference of two gamma densities; each gamma has shape delay/dispersion and
// scale dispersion, so its mode sits one dispersion before the delay.
struct HrfParams {
  double peak_delay = 6.0;
  double undershoot_delay = 16.0;
  double peak_dispersion = 1.0;
  double undershoot_dispersion = 1.0;
  double undershoot_ratio = 1.0 / 6.0;
  double kernel_length = 32.0;

  void validate() const;
};

double double_gamma(const HrfParams& p, double t);

// Sampled at t = k*tr for k in [0, ceil(kernel_length / tr)), scaled to unit peak.
std::vector<double> canonical_hrf(const HrfParams& p, double tr);

enum class Grouping { PerCondition, PerTrial };

struct DesignMatrix {
  Eigen::MatrixXd values;  // volumes x regressors
  std::vector<std::string> regressor_names;
  bool includes_intercept = false;
};

// Column names for the event classes shared across runs.
inline constexpr std::string_view kFixationColumn = "@fixation";
inline constexpr std::string_view kBlankColumn = "@blank";
inline constexpr std::string_view kOneBackColumn = "@oneback";
inline constexpr std::string_view kInterceptColumn = "@intercept";

struct DesignOptions {
  bool intercept = true;
  int drift_order = 0;  // polynomial drift columns per run, off by default
  // Fixed PerCondition column order; conditions absent from the run give zero
  // columns. Empty means derive from the events in order of appearance.
  std::vector<std::string> conditions;
};

// Condition column that an event feeds in a PerCondition design, or empty if
// the event is not modeled there (training trials).
std::string condition_name(const StimulusEvent& e);

// Boxcar over [onset, onset + duration) sampled at k*tr, convolved with the kernel.
Eigen::VectorXd event_regressor(double onset, double duration, const ScanParams& scan,
                                std::span<const double> kernel);

// `events` must all belong to one run.
DesignMatrix build_design(std::span<const StimulusEvent> events, Grouping grouping, const ScanParams& scan,
                          const HrfParams& hrf, const DesignOptions& options = {});

struct GlmFit {
  Eigen::MatrixXd betas;      // regressors x voxels
  Eigen::MatrixXd residuals;  // volumes x voxels
  Eigen::Index rank = 0;
  bool rank_deficient = false;
};

// Minimum-norm least squares via complete orthogonal decomposition.
GlmFit fit_ols(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);
GlmFit fit_ols(const DesignMatrix& X, const Eigen::MatrixXd& Y);

struct RunBold {
  RunKey key;
  Eigen::MatrixXd bold;  // volumes x voxels
};

struct TwoPhaseOptions {
  // Phase 2 re-enters each run's nonzero phase-1 columns as nuisance
  // regressors, so residual leakage of the training responses into phase-1
  // space is absorbed instead of biasing the single-trial betas.
  bool carry_phase1_regressors = true;
  int drift_order = 0;
  std::vector<VoxelId> voxel_ids;  // empty: 0..n_voxels-1
};

struct TwoPhaseResult {
  BetaMatrix train;  // one row per training trial
  BetaMatrix test;   // one row per test condition from phase 1
  bool phase1_rank_deficient = false;
  int phase2_rank_deficient_runs = 0;
};

TwoPhaseResult two_phase_betas(std::span<const StimulusEvent> events, std::span<const RunBold> bold,
                               const ScanParams& scan, const HrfParams& hrf, const TwoPhaseOptions& options = {});

}  // namespace neurodec
