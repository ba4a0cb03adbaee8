#pragma once

// Ground-truth forward model: paired image/caption stimuli share a semantic
// latent that drives an amodal voxel block, while each modality also drives
// its own private block. Produces events, betas or BOLD runs, synthetic
// "model" features and a block-labeled atlas.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "neurodec/core_model.hpp"
#include "neurodec/glm.hpp"
#include "neurodec/roi.hpp"

namespace neurodec {

enum class VoxelBlock { Amodal, Vision, Language, Noise };

struct VoxelBlocks {
  int amodal = 200;
  int vision_only = 200;
  int language_only = 200;
  int noise_only = 200;

  int total() const { return amodal + vision_only + language_only + noise_only; }
  int size(VoxelBlock b) const;
  int offset(VoxelBlock b) const;
};

struct SynthConfig {
  int n_train = 400;
  int n_test = 40;  // even, half images and half captions of the same pairs
  int d_sem = 32;
  int d_vis = 16;
  int d_lang = 16;
  VoxelBlocks voxel_blocks;
  double noise_sigma = 0.5;
  bool bold_mode = false;
  std::uint64_t seed = 1;
  ScanParams scan;  // tr is used; volume count and runs are derived from the schedule
  HrfParams hrf;

  double amodal_gain = 0.2;  // std of amodal weight entries
  double modal_gain = 1.5;   // std of modality-private weight entries
  double feature_noise = 0.0;
  int test_repeats = 4;  // test presentations; beta-mode test noise is noise_sigma/sqrt(test_repeats)
  int stimuli_per_run = 86;
  int runs_per_session = 14;
  int fixation_every = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthTruth {
  std::uint64_t seed = 0;
  std::string model_prefix;  // feature model names start with this
  VoxelBlocks blocks;
  Eigen::MatrixXd w_amodal;    // d_sem x n_amodal
  Eigen::MatrixXd w_vis;       // d_vis x n_vision
  Eigen::MatrixXd w_lang;      // d_lang x n_language
  std::vector<std::string> image_ids;  // per pair
  std::vector<std::string> caption_ids;
  Eigen::MatrixXd sem;   // pairs x d_sem, unit rows
  Eigen::MatrixXd vis;   // pairs x d_vis, unit rows
  Eigen::MatrixXd lang;  // pairs x d_lang, unit rows
  std::vector<std::string> train_ids;  // presented training stimuli, event order
  std::vector<std::string> test_ids;   // unique test stimuli

  std::optional<std::pair<std::size_t, Modality>> locate(std::string_view stimulus_id) const;
  // Noise-free voxel response to one presentation.
  Eigen::VectorXd response(std::string_view stimulus_id) const;
};

struct SynthOutput {
  SynthConfig config;
  ScanParams scan;
  std::vector<StimulusEvent> events;
  std::optional<BetaMatrix> betas_train;  // beta mode
  std::optional<BetaMatrix> betas_test;
  std::vector<RunBold> bold;  // BOLD mode
  BetaMatrix true_train_betas;  // noise-free responses, one row per training trial
  BetaMatrix true_test_betas;
  FeatureMatrix vision;
  FeatureMatrix language;
  FeatureMatrix multimodal;
  AtlasAssignment atlas;
  SynthTruth truth;

  // Beta mode: the generated betas. BOLD mode: betas from the two-phase GLM.
  Dataset dataset() const;
};

SynthOutput generate(const SynthConfig& cfg);

// Files: events.tsv, train.ndm/test.ndm or bold/, features_*.ndm, atlas.tsv, truth.json.
void write_synth_output(const std::filesystem::path& dir, const SynthOutput& out);
std::filesystem::path bold_file_name(const RunKey& key);

struct OracleAccuracy {
  double captions = 0.0;
  double images = 0.0;
  double overall = 0.0;
};

// Linear readout fit by least squares on noise-free training responses and
// applied to noise-free test responses; an upper reference for decoders.
// `blocks` restricts the voxels used (empty: all blocks).
OracleAccuracy oracle_accuracies(const SynthTruth& truth, const FeatureMatrix& feats,
                                 std::span<const std::string> test_ids, std::span<const VoxelBlock> blocks = {});
double oracle_best_accuracy(const SynthTruth& truth, const FeatureMatrix& feats, std::span<const std::string> test_ids,
                            std::span<const VoxelBlock> blocks = {});

}  // namespace neurodec
