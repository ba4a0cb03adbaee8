#pragma once

// ROI definitions over Destrieux atlas labels and voxel masking of beta matrices.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "neurodec/core_model.hpp"

namespace neurodec {

enum class Hemisphere { L, R };
enum class RoiName { LowLevelVisual, HighLevelVisual, Language, Custom };

std::string_view to_string(Hemisphere h);
std::string_view to_string(RoiName r);
RoiName parse_roi_name(std::string_view s);  // accepts low/high/language/custom and the enum spellings

struct RoiLabel {
  Hemisphere hemisphere = Hemisphere::L;
  int label_id = 0;
  std::string label;        // e.g. "G_oc-temp_lat-fusifor"
  std::string description;  // long anatomical name
};

struct AtlasEntry {
  Hemisphere hemisphere = Hemisphere::L;
  int label_id = 0;
  std::string label_name;
};

// voxel id -> single atlas label.
using AtlasAssignment = std::map<VoxelId, AtlasEntry>;

struct RoiMask {
  RoiName name = RoiName::Custom;
  std::vector<VoxelId> voxel_ids;  // sorted, unique
  std::vector<std::pair<Hemisphere, int>> source_labels;
};

// Embedded label tables for the three anatomical ROIs, in table order.
std::vector<RoiLabel> load_roi_definition(RoiName name);

RoiMask build_mask(const std::vector<RoiLabel>& definition, const AtlasAssignment& atlas,
                   RoiName name = RoiName::Custom);

BetaMatrix apply_mask(const BetaMatrix& betas, const RoiMask& mask);
// Masks both beta matrices of a dataset.
Dataset mask_dataset(const Dataset& ds, const RoiMask& mask);

// Two tab-separated columns: voxel_id and "HEMI label_id"; an optional third
// column holds the label name. A header line starting with "voxel" is skipped.
AtlasAssignment parse_atlas_tsv(std::string_view text);
AtlasAssignment read_atlas_tsv(const std::filesystem::path& path);
std::string format_atlas_tsv(const AtlasAssignment& atlas);

// Custom label list: one "HEMI label_id" per line, optional trailing label text.
std::vector<RoiLabel> parse_label_list(std::string_view text);

}  // namespace neurodec
