#pragma once

// Multi-target ridge regression from voxel betas to model feature vectors,
// with k-fold cross-validated regularization and a final refit.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "neurodec/core_model.hpp"

namespace neurodec {

enum class TrainingMode { Agnostic, ImageOnly, CaptionOnly };

std::string_view to_string(TrainingMode m);
TrainingMode parse_training_mode(std::string_view s);

enum class RidgeSolver {
  Auto,    // dual whenever voxels outnumber trials
  Primal,  // (X'X + aI) W = X'Y, voxels x voxels system
  Dual,    // W = X' (XX' + aI)^-1 Y, trials x trials system
};

inline constexpr double kScaleFloor = 1e-12;

struct RidgeDecoder {
  Eigen::MatrixXd weights;    // voxels x dims, in standardized voxel units
  Eigen::VectorXd intercept;  // dims; the training target mean
  double alpha = 0.0;
  Eigen::VectorXd x_mean;
  Eigen::VectorXd x_scale;  // population std, floored at kScaleFloor
  TrainingMode trained_on = TrainingMode::Agnostic;
  std::string target_model;
  std::vector<VoxelId> voxel_ids;  // empty when fit on a bare matrix
  std::uint64_t fold_seed = 0;
  std::vector<double> cv_alphas;
  std::vector<double> cv_scores;

  Eigen::Index n_voxels() const { return weights.rows(); }
  Eigen::Index n_dims() const { return weights.cols(); }
};

RidgeDecoder fit_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double alpha,
                       RidgeSolver solver = RidgeSolver::Auto);

Eigen::MatrixXd predict(const RidgeDecoder& d, const Eigen::MatrixXd& X);

struct CvConfig {
  std::vector<double> alpha_grid = {1e3, 1e4, 1e5, 1e6, 1e7};
  int n_folds = 5;
  std::uint64_t fold_seed = 17;

  void validate() const;
};

struct CvResult {
  double best_alpha = 0.0;
  std::vector<double> alphas;
  std::vector<double> mean_scores;  // one per alpha, averaged over folds
};

// Seeded shuffle, then contiguous blocks whose sizes differ by at most one.
std::vector<std::vector<Eigen::Index>> make_folds(Eigen::Index n_rows, int n_folds, std::uint64_t seed);

// Mean over target dimensions of the Pearson correlation between columns;
// a dimension with zero variance on either side scores 0.
double mean_pearson(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth);

// Highest mean validation score wins; exact ties go to the larger alpha.
CvResult cv_select_alpha(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const CvConfig& cfg);

// `targets` holds one row per training stimulus id (see assign_targets).
RidgeDecoder train_decoder(const Dataset& ds, const FeatureMatrix& targets, TrainingMode mode, const CvConfig& cfg);

// Objective minimized by fit_ridge, in the decoder's standardized coordinates.
double ridge_objective(const RidgeDecoder& d, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                       const Eigen::MatrixXd& weights);

MatrixFile decoder_to_file(const RidgeDecoder& d);
RidgeDecoder decoder_from_file(const MatrixFile& file);
void save_decoder(const std::filesystem::path& path, const RidgeDecoder& d);
RidgeDecoder load_decoder(const std::filesystem::path& path);

}  // namespace neurodec
