#pragma once

// Target assignment, cosine-distance pairwise accuracy and per-modality
// evaluation reports with percentile-bootstrap confidence intervals.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "neurodec/core_model.hpp"
#include "neurodec/ridge.hpp"

namespace neurodec {

// Row per Train/Test stimulus (first appearance order). A stimulus whose
// modality matches the feature space gets its own features; otherwise the
// features of its paired counterpart. Concatenated features are keyed by
// either member of the image-caption pair.
FeatureMatrix assign_targets(std::span<const StimulusEvent> stimuli, const FeatureMatrix& feats,
                             const std::map<std::string, std::string>& pairing);
FeatureMatrix assign_targets(const Dataset& ds, const FeatureMatrix& feats);

double cosine_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

enum class PairwiseVariant {
  OneVsTwo,  // prediction i vs its own target and distractor j, over ordered pairs
  TwoVsTwo,  // matched-sum comparison over unordered pairs
};

// D(i, j) = cosine_distance(preds[i], targets[j]).
Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets);

// Exact ties count 0.5.
double pairwise_accuracy(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets,
                         PairwiseVariant variant = PairwiseVariant::OneVsTwo);

// Accuracy over a (possibly repeated) index sample of a distance matrix.
// Pairs whose entries refer to the same underlying row are skipped. Returns
// NaN when no valid pair exists.
double pairwise_accuracy_subset(const Eigen::MatrixXd& distances, std::span<const Eigen::Index> sample,
                                PairwiseVariant variant = PairwiseVariant::OneVsTwo);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct EvalReport {
  double acc_captions = 0.0;
  double acc_images = 0.0;
  double acc_overall = 0.0;
  Interval ci95_captions;
  Interval ci95_images;
  Interval ci95_overall;
  int n_test = 0;
  std::map<std::string, std::string> decoder_meta;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

struct EvalOptions {
  int n_boot = 1000;
  std::uint64_t seed = 7;
  PairwiseVariant variant = PairwiseVariant::OneVsTwo;
};

// Type-7 (linear interpolation) quantile of unsorted values.
double quantile(std::vector<double> values, double q);

// Scores predictions already paired with their targets. Distractors for each
// modality come from test rows of that same presentation modality.
EvalReport evaluate_predictions(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets,
                                std::span<const Modality> modalities, const EvalOptions& options);

EvalReport evaluate(const RidgeDecoder& d, const Dataset& ds, const FeatureMatrix& feats, int boot,
                    std::uint64_t seed, PairwiseVariant variant = PairwiseVariant::OneVsTwo);

}  // namespace neurodec
