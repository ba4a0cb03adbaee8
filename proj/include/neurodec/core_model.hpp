#pragma once

// Domain types shared by every pipeline stage: stimulus events, beta and
// feature matrices, and the validated train/test Dataset.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "neurodec/matrix_io.hpp"

namespace neurodec {

enum class Modality { Image, Caption };
enum class Role { Train, Test, Fixation, Blank, OneBackTarget };
enum class FeatureModality { Vision, Language, MultimodalConcat };

std::string_view to_string(Modality m);
std::string_view to_string(Role r);
std::string_view to_string(FeatureModality f);
Modality parse_modality(std::string_view s);
Role parse_role(std::string_view s);
FeatureModality parse_feature_modality(std::string_view s);
Modality opposite(Modality m);

using VoxelId = std::int64_t;

struct RunKey {
  int session = 0;
  int run = 0;
  auto operator<=>(const RunKey&) const = default;
};

struct StimulusEvent {
  std::string stimulus_id;
  std::optional<Modality> modality;  // empty for fixation and blank trials
  double onset = 0.0;                // seconds from run start
  double duration = 2.5;
  int run = 0;
  int session = 0;
  Role role = Role::Train;
  std::string paired_id;  // cross-modal counterpart; empty for fixation/blank

  RunKey run_key() const { return {session, run}; }
};

struct ScanParams {
  double tr = 2.0;
  int n_volumes_per_run = 0;
  std::vector<RunKey> runs;

  double run_length() const { return tr * n_volumes_per_run; }
  void validate() const;
};

// trials x voxels, float32 storage.
class BetaMatrix {
 public:
  BetaMatrix() = default;
  BetaMatrix(MatrixF values, std::vector<std::string> trial_ids, std::vector<VoxelId> voxel_ids);

  const MatrixF& values() const { return values_; }
  const std::vector<std::string>& trial_ids() const { return trial_ids_; }
  const std::vector<VoxelId>& voxel_ids() const { return voxel_ids_; }
  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  std::optional<Eigen::Index> row_of(std::string_view trial_id) const;

  MatrixFile to_file() const;
  static BetaMatrix from_file(MatrixFile file);

 private:
  MatrixF values_;
  std::vector<std::string> trial_ids_;
  std::vector<VoxelId> voxel_ids_;
  std::unordered_map<std::string, Eigen::Index> index_;
};

// stimuli x feature dimensions.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(MatrixF values, std::vector<std::string> stimulus_ids, std::string model_name,
                FeatureModality modality);

  const MatrixF& values() const { return values_; }
  const std::vector<std::string>& stimulus_ids() const { return stimulus_ids_; }
  const std::string& model_name() const { return model_name_; }
  FeatureModality feature_modality() const { return modality_; }
  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index dims() const { return values_.cols(); }
  std::optional<Eigen::Index> row_of(std::string_view stimulus_id) const;

  MatrixFile to_file() const;
  // Model name and modality come from the trailer when present, else from the
  // fallbacks; a file with neither is rejected.
  static FeatureMatrix from_file(MatrixFile file, std::optional<std::string> model_name = std::nullopt,
                                 std::optional<FeatureModality> modality = std::nullopt);

 private:
  MatrixF values_;
  std::vector<std::string> stimulus_ids_;
  std::string model_name_;
  FeatureModality modality_ = FeatureModality::Vision;
  std::unordered_map<std::string, Eigen::Index> index_;
};

class Dataset {
 public:
  const std::vector<StimulusEvent>& events() const { return events_; }
  const BetaMatrix& betas_train() const { return betas_train_; }
  const BetaMatrix& betas_test() const { return betas_test_; }
  const std::map<std::string, std::string>& pairing() const { return pairing_; }

  std::optional<Modality> modality_of(std::string_view stimulus_id) const;
  std::optional<std::string> paired_id(std::string_view stimulus_id) const;

 private:
  friend Dataset assemble_dataset(std::vector<StimulusEvent>, BetaMatrix, BetaMatrix);
  friend Dataset select_modality(const Dataset&, Modality);

  std::vector<StimulusEvent> events_;
  BetaMatrix betas_train_;
  BetaMatrix betas_test_;
  std::map<std::string, std::string> pairing_;
  std::map<std::string, Modality, std::less<>> modality_;
};

// Checks event-table invariants: single presentation of training stimuli,
// disjoint train/test ids, cross-modal pairing, increasing onsets per run.
void validate_events(const std::vector<StimulusEvent>& events);

Dataset assemble_dataset(std::vector<StimulusEvent> events, BetaMatrix betas_train, BetaMatrix betas_test);

// Keeps only training trials presented in modality `m`; the test set is untouched.
Dataset select_modality(const Dataset& ds, Modality m);

std::vector<StimulusEvent> parse_events_tsv(std::string_view text);
std::string format_events_tsv(const std::vector<StimulusEvent>& events);
std::vector<StimulusEvent> read_events_tsv(const std::filesystem::path& path);
void write_events_tsv(const std::filesystem::path& path, const std::vector<StimulusEvent>& events);

// Dataset directory layout: events.tsv, train.ndm, test.ndm.
Dataset load_dataset_dir(const std::filesystem::path& dir);
void save_dataset_dir(const std::filesystem::path& dir, const Dataset& ds);

std::string format_number(double v);

}  // namespace neurodec
