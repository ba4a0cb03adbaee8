#include "neurodec/roi.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "neurodec/error.hpp"

namespace neurodec {
namespace {

struct Row {
  int id;
  char hemi;
  const char* label;
  const char* description;
};

// High-level visual: bilateral ventral and lateral temporal cortex.
constexpr Row kHighLevelVisual[] = {
    {21, 'L', "G_oc-temp_lat-fusifor", "Lateral occipito-temporal gyrus (fusiform gyrus, O4-T4)"},
    {21, 'R', "G_oc-temp_lat-fusifor", "Lateral occipito-temporal gyrus (fusiform gyrus, O4-T4)"},
    {23, 'L', "G_oc-temp_med-Parahip", "Parahippocampal gyrus, parahippocampal part of the medial occipito-temporal gyrus, (T5)"},
    {23, 'R', "G_oc-temp_med-Parahip", "Parahippocampal gyrus, parahippocampal part of the medial occipito-temporal gyrus, (T5)"},
    {61, 'L', "S_oc-temp_med_and_Lingual", "Medial occipito-temporal sulcus (collateral sulcus) and lingual sulcus"},
    {61, 'R', "S_oc-temp_med_and_Lingual", "Medial occipito-temporal sulcus (collateral sulcus) and lingual sulcus"},
    {60, 'L', "S_oc-temp_lat", "Lateral occipito-temporal sulcus"},
    {60, 'R', "S_oc-temp_lat", "Lateral occipito-temporal sulcus"},
    {37, 'L', "G_temporal_inf", "Inferior temporal gyrus (T3)"},
    {38, 'L', "G_temporal_middle", "Middle temporal gyrus (T2)"},
    {72, 'L', "S_temporal_inf", "Inferior temporal sulcus"},
    {37, 'R', "G_temporal_inf", "Inferior temporal gyrus (T3)"},
    {38, 'R', "G_temporal_middle", "Middle temporal gyrus (T2)"},
    {72, 'R', "S_temporal_inf", "Inferior temporal sulcus"},
};

// Low-level visual: bilateral occipital lobe plus lingual gyrus.
constexpr Row kLowLevelVisual[] = {
    {2, 'L', "G_and_S_occipital_inf", "Inferior occipital gyrus (O3) and sulcus"},
    {19, 'L', "G_occipital_middle", "Middle occipital gyrus (O2, lateral occipital gyrus)"},
    {20, 'L', "G_occipital_sup", "Superior occipital gyrus (O1)"},
    {42, 'L', "Pole_occipital", "Occipital pole"},
    {57, 'L', "S_oc_middle_and_Lunatus", "Middle occipital sulcus and lunatus sulcus"},
    {58, 'L', "S_oc_sup_and_transversal", "Superior occipital sulcus and transverse occipital sulcus"},
    {59, 'L', "S_occipital_ant", "Anterior occipital sulcus and preoccipital notch (temporo-occipital incisure)"},
    {65, 'L', "S_parieto_occipital", "Parieto-occipital sulcus (or fissure)"},
    {2, 'R', "G_and_S_occipital_inf", "Inferior occipital gyrus (O3) and sulcus"},
    {19, 'R', "G_occipital_middle", "Middle occipital gyrus (O2, lateral occipital gyrus)"},
    {20, 'R', "G_occipital_sup", "Superior occipital gyrus (O1)"},
    {42, 'R', "Pole_occipital", "Occipital pole"},
    {57, 'R', "S_oc_middle_and_Lunatus", "Middle occipital sulcus and lunatus sulcus"},
    {58, 'R', "S_oc_sup_and_transversal", "Superior occipital sulcus and transverse occipital sulcus"},
    {59, 'R', "S_occipital_ant", "Anterior occipital sulcus and preoccipital notch (temporo-occipital incisure)"},
    {65, 'R', "S_parieto_occipital", "Parieto-occipital sulcus (or fissure)"},
    {22, 'L', "G_oc-temp_med-Lingual", "Lingual gyrus, ligual part of the medial occipito-temporal gyrus"},
    {22, 'R', "G_oc-temp_med-Lingual", "Lingual gyrus, ligual part of the medial occipito-temporal gyrus"},
};

// Language: left-lateralized frontal, temporal, parietal and posterior cingulate.
constexpr Row kLanguage[] = {
    {12, 'L', "G_front_inf-Opercular", "Opercular part of the inferior frontal gyrus"},
    {13, 'L', "G_front_inf-Orbital", "Orbital part of the inferior frontal gyrus"},
    {14, 'L', "G_front_inf-Triangul", "Triangular part of the inferior frontal gyrus"},
    {25, 'L', "G_pariet_inf-Angular", "Angular gyrus"},
    {15, 'L', "G_front_middle", "Middle frontal gyrus (F2)"},
    {34, 'L', "G_temp_sup-Lateral", "Lateral aspect of the superior temporal gyrus"},
    {36, 'L', "G_temp_sup-Plan_tempo", "Planum temporale or temporal plane of the superior temporal gyrus"},
    {35, 'L', "G_temp_sup-Plan_polar", "Planum polare of the superior temporal gyrus"},
    {4, 'L', "G_and_S_subcentral", "Subcentral gyrus (central operculum) and sulci"},
    {26, 'L', "G_pariet_inf-Supramar", "Supramarginal gyrus"},
    {9, 'L', "G_cingul-Post-dorsal", "Posterior-dorsal part of the cingulate gyrus (dPCC)"},
    {10, 'L', "G_cingul-Post-ventral", "Posterior-ventral part of the cingulate gyrus (vPCC, isthmus of the cingulate gyrus)"},
};

template <std::size_t N>
std::vector<RoiLabel> to_labels(const Row (&rows)[N]) {
  std::vector<RoiLabel> out;
  out.reserve(N);
  for (const auto& r : rows)
    out.push_back({r.hemi == 'L' ? Hemisphere::L : Hemisphere::R, r.id, r.label, r.description});
  return out;
}

Hemisphere parse_hemisphere(std::string_view s) {
  if (s == "L" || s == "l" || s == "lh") return Hemisphere::L;
  if (s == "R" || s == "r" || s == "rh") return Hemisphere::R;
  throw Error(ErrorCode::FormatError, "unknown hemisphere '" + std::string(s) + "'");
}

template <typename T>
T parse_integer(std::string_view s, std::string_view what) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorCode::FormatError, "bad " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// "L 42" -> (L, 42)
std::pair<Hemisphere, int> parse_hemi_label(std::string_view s) {
  s = trim(s);
  const auto sp = s.find_first_of(" \t");
  if (sp == std::string_view::npos) throw Error(ErrorCode::FormatError, "expected 'HEMI label_id', got '" + std::string(s) + "'");
  return {parse_hemisphere(s.substr(0, sp)), parse_integer<int>(trim(s.substr(sp + 1)), "label id")};
}

std::string known_label_name(Hemisphere h, int id) {
  for (const auto name : {RoiName::HighLevelVisual, RoiName::LowLevelVisual, RoiName::Language})
    for (const auto& l : load_roi_definition(name))
      if (l.hemisphere == h && l.label_id == id) return l.label;
  return {};
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  while (!text.empty()) {
    const auto nl = text.find('\n');
    f(trim(text.substr(0, nl)));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
  }
}

}  // namespace

std::string_view to_string(Hemisphere h) { return h == Hemisphere::L ? "L" : "R"; }

std::string_view to_string(RoiName r) {
  switch (r) {
    case RoiName::LowLevelVisual: return "low";
    case RoiName::HighLevelVisual: return "high";
    case RoiName::Language: return "language";
    case RoiName::Custom: return "custom";
  }
  return "custom";
}

RoiName parse_roi_name(std::string_view s) {
  if (s == "low" || s == "LowLevelVisual") return RoiName::LowLevelVisual;
  if (s == "high" || s == "HighLevelVisual") return RoiName::HighLevelVisual;
  if (s == "language" || s == "Language") return RoiName::Language;
  if (s == "custom" || s == "Custom") return RoiName::Custom;
  throw Error(ErrorCode::UnknownRoi, "unknown ROI '" + std::string(s) + "'");
}

std::vector<RoiLabel> load_roi_definition(RoiName name) {
  switch (name) {
    case RoiName::HighLevelVisual: return to_labels(kHighLevelVisual);
    case RoiName::LowLevelVisual: return to_labels(kLowLevelVisual);
    case RoiName::Language: return to_labels(kLanguage);
    case RoiName::Custom: break;
  }
  throw Error(ErrorCode::UnknownRoi, "custom ROIs have no embedded definition");
}

RoiMask build_mask(const std::vector<RoiLabel>& definition, const AtlasAssignment& atlas, RoiName name) {
  if (atlas.empty()) throw Error(ErrorCode::EmptyMask, "atlas has no voxels");
  std::set<std::pair<Hemisphere, int>> wanted;
  RoiMask mask;
  mask.name = name;
  for (const auto& l : definition)
    if (wanted.emplace(l.hemisphere, l.label_id).second) mask.source_labels.emplace_back(l.hemisphere, l.label_id);
  for (const auto& [voxel, entry] : atlas)
    if (wanted.count({entry.hemisphere, entry.label_id})) mask.voxel_ids.push_back(voxel);
  if (mask.voxel_ids.empty())
    throw Error(ErrorCode::EmptyMask, "no atlas voxel carries a label of ROI '" + std::string(to_string(name)) + "'");
  return mask;  // std::map iteration keeps voxel ids sorted and unique
}

BetaMatrix apply_mask(const BetaMatrix& betas, const RoiMask& mask) {
  const std::unordered_set<VoxelId> present(betas.voxel_ids().begin(), betas.voxel_ids().end());
  for (const auto v : mask.voxel_ids)
    if (!present.count(v)) throw Error(ErrorCode::UnknownVoxel, "mask voxel " + std::to_string(v) + " not in beta matrix");

  std::vector<Eigen::Index> keep;
  std::vector<VoxelId> voxels;
  for (std::size_t c = 0; c < betas.voxel_ids().size(); ++c)
    if (std::binary_search(mask.voxel_ids.begin(), mask.voxel_ids.end(), betas.voxel_ids()[c])) {
      keep.push_back(static_cast<Eigen::Index>(c));
      voxels.push_back(betas.voxel_ids()[c]);
    }
  MatrixF values(betas.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) values.col(static_cast<Eigen::Index>(i)) = betas.values().col(keep[i]);
  return BetaMatrix(std::move(values), betas.trial_ids(), std::move(voxels));
}

Dataset mask_dataset(const Dataset& ds, const RoiMask& mask) {
  return assemble_dataset(ds.events(), apply_mask(ds.betas_train(), mask), apply_mask(ds.betas_test(), mask));
}

AtlasAssignment parse_atlas_tsv(std::string_view text) {
  AtlasAssignment atlas;
  for_each_line(text, [&](std::string_view line) {
    if (line.empty() || line.starts_with("voxel") || line.starts_with('#')) return;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw Error(ErrorCode::FormatError, "atlas line without tab: '" + std::string(line) + "'");
    const auto voxel = parse_integer<VoxelId>(trim(line.substr(0, tab)), "voxel id");
    auto rest = line.substr(tab + 1);
    const auto tab2 = rest.find('\t');
    const auto [hemi, id] = parse_hemi_label(rest.substr(0, tab2));
    AtlasEntry entry{hemi, id, tab2 == std::string_view::npos ? known_label_name(hemi, id) : std::string(trim(rest.substr(tab2 + 1)))};
    if (!atlas.emplace(voxel, std::move(entry)).second)
      throw Error(ErrorCode::FormatError, "voxel " + std::to_string(voxel) + " labeled twice");
  });
  if (atlas.empty()) throw Error(ErrorCode::EmptyMask, "atlas file lists no voxels");
  return atlas;
}

AtlasAssignment read_atlas_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_atlas_tsv(buf.str());
}

std::string format_atlas_tsv(const AtlasAssignment& atlas) {
  std::string out = "voxel_id\tlabel\tlabel_name\n";
  for (const auto& [voxel, e] : atlas)
    out += std::to_string(voxel) + '\t' + std::string(to_string(e.hemisphere)) + ' ' + std::to_string(e.label_id) +
           '\t' + e.label_name + '\n';
  return out;
}

std::vector<RoiLabel> parse_label_list(std::string_view text) {
  std::vector<RoiLabel> labels;
  for_each_line(text, [&](std::string_view line) {
    if (line.empty() || line.starts_with('#')) return;
    // "L 42" optionally followed by whitespace and a label string.
    const auto sp = line.find_first_of(" \t");
    if (sp == std::string_view::npos) throw Error(ErrorCode::FormatError, "bad label line '" + std::string(line) + "'");
    auto rest = trim(line.substr(sp + 1));
    const auto end = rest.find_first_of(" \t");
    const auto hemi = parse_hemisphere(line.substr(0, sp));
    const int id = parse_integer<int>(rest.substr(0, end), "label id");
    std::string label = end == std::string_view::npos ? known_label_name(hemi, id) : std::string(trim(rest.substr(end)));
    labels.push_back({hemi, id, std::move(label), {}});
  });
  if (labels.empty()) throw Error(ErrorCode::UnknownRoi, "label list is empty");
  return labels;
}

}  // namespace neurodec
