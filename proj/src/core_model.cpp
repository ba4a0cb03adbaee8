#include "neurodec/core_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "neurodec/error.hpp"

namespace neurodec {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

double parse_double(std::string_view s, std::string_view what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorCode::FormatError, "bad " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

int parse_int(std::string_view s, std::string_view what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorCode::FormatError, "bad " + std::string(what) + " '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename Ids>
std::unordered_map<std::string, Eigen::Index> build_index(const Ids& ids, std::string_view what) {
  std::unordered_map<std::string, Eigen::Index> index;
  index.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (!index.emplace(ids[i], static_cast<Eigen::Index>(i)).second)
      throw Error(ErrorCode::DuplicateTrial, "duplicate " + std::string(what) + " '" + ids[i] + "'");
  return index;
}

void require_finite(const MatrixF& m, std::string_view what) {
  if (!m.allFinite()) throw Error(ErrorCode::NumericalFailure, std::string(what) + " contains NaN or Inf");
}

constexpr std::string_view kEventsHeader = "stimulus_id\tmodality\tonset\tduration\trun\tsession\trole\tpaired_id";

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string_view to_string(Modality m) { return m == Modality::Image ? "image" : "caption"; }

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Train: return "train";
    case Role::Test: return "test";
    case Role::Fixation: return "fixation";
    case Role::Blank: return "blank";
    case Role::OneBackTarget: return "oneback";
  }
  return "train";
}

std::string_view to_string(FeatureModality f) {
  switch (f) {
    case FeatureModality::Vision: return "vision";
    case FeatureModality::Language: return "language";
    case FeatureModality::MultimodalConcat: return "multimodal";
  }
  return "vision";
}

Modality parse_modality(std::string_view s) {
  const auto v = lower(s);
  if (v == "image") return Modality::Image;
  if (v == "caption") return Modality::Caption;
  throw Error(ErrorCode::FormatError, "unknown modality '" + std::string(s) + "'");
}

Role parse_role(std::string_view s) {
  const auto v = lower(s);
  if (v == "train") return Role::Train;
  if (v == "test") return Role::Test;
  if (v == "fixation") return Role::Fixation;
  if (v == "blank") return Role::Blank;
  if (v == "oneback" || v == "onebacktarget" || v == "one-back") return Role::OneBackTarget;
  throw Error(ErrorCode::FormatError, "unknown role '" + std::string(s) + "'");
}

FeatureModality parse_feature_modality(std::string_view s) {
  const auto v = lower(s);
  if (v == "vision") return FeatureModality::Vision;
  if (v == "language") return FeatureModality::Language;
  if (v == "multimodal" || v == "multimodalconcat" || v == "concat") return FeatureModality::MultimodalConcat;
  throw Error(ErrorCode::FormatError, "unknown feature modality '" + std::string(s) + "'");
}

Modality opposite(Modality m) { return m == Modality::Image ? Modality::Caption : Modality::Image; }

void ScanParams::validate() const {
  if (!(tr > 0.0) || !std::isfinite(tr)) throw Error(ErrorCode::InvalidParams, "tr must be positive");
  if (n_volumes_per_run <= 0) throw Error(ErrorCode::InvalidParams, "n_volumes_per_run must be positive");
}

// ---------------------------------------------------------------------------

BetaMatrix::BetaMatrix(MatrixF values, std::vector<std::string> trial_ids, std::vector<VoxelId> voxel_ids)
    : values_(std::move(values)), trial_ids_(std::move(trial_ids)), voxel_ids_(std::move(voxel_ids)) {
  if (static_cast<Eigen::Index>(trial_ids_.size()) != values_.rows() ||
      static_cast<Eigen::Index>(voxel_ids_.size()) != values_.cols())
    throw Error(ErrorCode::ShapeMismatch, "beta matrix is " + std::to_string(values_.rows()) + "x" +
                                              std::to_string(values_.cols()) + " but has " +
                                              std::to_string(trial_ids_.size()) + " trial ids and " +
                                              std::to_string(voxel_ids_.size()) + " voxel ids");
  require_finite(values_, "beta matrix");
  index_ = build_index(trial_ids_, "trial id");
}

std::optional<Eigen::Index> BetaMatrix::row_of(std::string_view trial_id) const {
  const auto it = index_.find(std::string(trial_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

MatrixFile BetaMatrix::to_file() const {
  MatrixFile f{values_, trial_ids_, nullptr};
  bool identity = true;
  for (std::size_t i = 0; i < voxel_ids_.size() && identity; ++i) identity = voxel_ids_[i] == static_cast<VoxelId>(i);
  if (!identity) f.meta["col_ids"] = voxel_ids_;
  return f;
}

BetaMatrix BetaMatrix::from_file(MatrixFile file) {
  std::vector<VoxelId> voxels;
  if (file.meta.is_object() && file.meta.contains("col_ids")) {
    voxels = file.meta["col_ids"].get<std::vector<VoxelId>>();
  } else {
    voxels.resize(static_cast<std::size_t>(file.values.cols()));
    for (std::size_t i = 0; i < voxels.size(); ++i) voxels[i] = static_cast<VoxelId>(i);
  }
  return BetaMatrix(std::move(file.values), std::move(file.row_ids), std::move(voxels));
}

// ---------------------------------------------------------------------------

FeatureMatrix::FeatureMatrix(MatrixF values, std::vector<std::string> stimulus_ids, std::string model_name,
                             FeatureModality modality)
    : values_(std::move(values)),
      stimulus_ids_(std::move(stimulus_ids)),
      model_name_(std::move(model_name)),
      modality_(modality) {
  if (static_cast<Eigen::Index>(stimulus_ids_.size()) != values_.rows())
    throw Error(ErrorCode::ShapeMismatch, "feature matrix rows != stimulus id count");
  require_finite(values_, "feature matrix");
  index_ = build_index(stimulus_ids_, "stimulus id");
}

std::optional<Eigen::Index> FeatureMatrix::row_of(std::string_view stimulus_id) const {
  const auto it = index_.find(std::string(stimulus_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

MatrixFile FeatureMatrix::to_file() const {
  MatrixFile f{values_, stimulus_ids_, nullptr};
  f.meta["model_name"] = model_name_;
  f.meta["feature_modality"] = std::string(to_string(modality_));
  return f;
}

FeatureMatrix FeatureMatrix::from_file(MatrixFile file, std::optional<std::string> model_name,
                                       std::optional<FeatureModality> modality) {
  if (file.meta.is_object()) {
    if (file.meta.contains("model_name")) model_name = file.meta["model_name"].get<std::string>();
    if (file.meta.contains("feature_modality"))
      modality = parse_feature_modality(file.meta["feature_modality"].get<std::string>());
  }
  if (!modality) throw Error(ErrorCode::FormatError, "feature file does not declare its feature modality");
  return FeatureMatrix(std::move(file.values), std::move(file.row_ids), model_name.value_or("unnamed"), *modality);
}

// ---------------------------------------------------------------------------

std::optional<Modality> Dataset::modality_of(std::string_view stimulus_id) const {
  const auto it = modality_.find(stimulus_id);
  if (it == modality_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::string> Dataset::paired_id(std::string_view stimulus_id) const {
  const auto it = pairing_.find(std::string(stimulus_id));
  if (it == pairing_.end()) return std::nullopt;
  return it->second;
}

void validate_events(const std::vector<StimulusEvent>& events) {
  if (events.empty()) throw Error(ErrorCode::EmptyDataset, "event list is empty");

  std::set<std::string> train_ids, test_ids;
  std::map<std::string, Modality> presented;
  std::map<std::string, std::string> pair_of;
  std::map<RunKey, double> last_onset;

  for (const auto& e : events) {
    if (!(e.onset >= 0.0) || !std::isfinite(e.onset))
      throw Error(ErrorCode::InvalidEvents, "negative onset for '" + e.stimulus_id + "'");
    if (!(e.duration > 0.0) || !std::isfinite(e.duration))
      throw Error(ErrorCode::InvalidEvents, "non-positive duration for '" + e.stimulus_id + "'");
    if (const auto it = last_onset.find(e.run_key()); it != last_onset.end() && !(e.onset > it->second))
      throw Error(ErrorCode::InvalidEvents, "onsets not strictly increasing in session " +
                                                std::to_string(e.session) + " run " + std::to_string(e.run));
    last_onset[e.run_key()] = e.onset;

    if (e.role != Role::Train && e.role != Role::Test) continue;
    if (!e.modality) throw Error(ErrorCode::InvalidEvents, "stimulus '" + e.stimulus_id + "' has no modality");
    if (e.paired_id.empty()) throw Error(ErrorCode::MissingPair, "stimulus '" + e.stimulus_id + "' has no paired_id");
    if (e.role == Role::Train && !train_ids.insert(e.stimulus_id).second)
      throw Error(ErrorCode::DuplicateTrial, "training stimulus '" + e.stimulus_id + "' presented more than once");
    if (e.role == Role::Test) test_ids.insert(e.stimulus_id);

    if (const auto [it, fresh] = presented.emplace(e.stimulus_id, *e.modality); !fresh && it->second != *e.modality)
      throw Error(ErrorCode::InvalidEvents, "stimulus '" + e.stimulus_id + "' appears with two modalities");
    if (const auto [it, fresh] = pair_of.emplace(e.stimulus_id, e.paired_id); !fresh && it->second != e.paired_id)
      throw Error(ErrorCode::MissingPair, "stimulus '" + e.stimulus_id + "' has inconsistent paired_id");
  }

  for (const auto& id : test_ids)
    if (train_ids.count(id)) throw Error(ErrorCode::TrainTestOverlap, "stimulus '" + id + "' is both train and test");

  // Counterparts are often never presented; when they are, modalities must differ.
  for (const auto& [id, partner] : pair_of) {
    const auto it = presented.find(partner);
    if (it != presented.end() && it->second == presented.at(id))
      throw Error(ErrorCode::MissingPair, "'" + id + "' is paired with same-modality stimulus '" + partner + "'");
  }
}

Dataset assemble_dataset(std::vector<StimulusEvent> events, BetaMatrix betas_train, BetaMatrix betas_test) {
  validate_events(events);

  if (betas_train.cols() != betas_test.cols() || betas_train.voxel_ids() != betas_test.voxel_ids())
    throw Error(ErrorCode::ShapeMismatch, "train and test betas cover different voxels");

  Dataset ds;
  std::set<std::string, std::less<>> train_ids, test_ids;
  for (const auto& e : events) {
    if (e.role == Role::Train) train_ids.insert(e.stimulus_id);
    if (e.role == Role::Test) test_ids.insert(e.stimulus_id);
    if (e.role == Role::Train || e.role == Role::Test) {
      ds.pairing_.emplace(e.stimulus_id, e.paired_id);
      ds.modality_.emplace(e.stimulus_id, *e.modality);
    }
  }
  for (const auto& id : betas_train.trial_ids())
    if (!train_ids.count(id)) throw Error(ErrorCode::UnknownTrial, "train beta row '" + id + "' has no Train event");
  for (const auto& id : betas_test.trial_ids())
    if (!test_ids.count(id)) throw Error(ErrorCode::UnknownTrial, "test beta row '" + id + "' has no Test event");

  ds.events_ = std::move(events);
  ds.betas_train_ = std::move(betas_train);
  ds.betas_test_ = std::move(betas_test);
  return ds;
}

Dataset select_modality(const Dataset& ds, Modality m) {
  const auto& train = ds.betas_train();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < train.rows(); ++r)
    if (ds.modality_of(train.trial_ids()[static_cast<std::size_t>(r)]) == m) keep.push_back(r);

  MatrixF values(static_cast<Eigen::Index>(keep.size()), train.cols());
  std::vector<std::string> ids;
  ids.reserve(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    values.row(static_cast<Eigen::Index>(i)) = train.values().row(keep[i]);
    ids.push_back(train.trial_ids()[static_cast<std::size_t>(keep[i])]);
  }

  Dataset out = ds;
  out.betas_train_ = BetaMatrix(std::move(values), std::move(ids), train.voxel_ids());
  return out;
}

// ---------------------------------------------------------------------------

std::vector<StimulusEvent> parse_events_tsv(std::string_view text) {
  std::vector<StimulusEvent> events;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kEventsHeader) throw Error(ErrorCode::FormatError, "events header mismatch");
      header_seen = true;
      continue;
    }
    const auto f = split(line, '\t');
    if (f.size() != 8)
      throw Error(ErrorCode::FormatError, "events line " + std::to_string(line_no) + " has " +
                                              std::to_string(f.size()) + " fields, expected 8");
    StimulusEvent e;
    e.stimulus_id = std::string(f[0]);
    if (const auto m = lower(f[1]); !(m.empty() || m == "n/a" || m == "-")) e.modality = parse_modality(f[1]);
    e.onset = parse_double(f[2], "onset");
    e.duration = parse_double(f[3], "duration");
    e.run = parse_int(f[4], "run");
    e.session = parse_int(f[5], "session");
    e.role = parse_role(f[6]);
    e.paired_id = std::string(f[7]);
    events.push_back(std::move(e));
  }
  if (!header_seen) throw Error(ErrorCode::FormatError, "events file is empty");
  return events;
}

std::string format_events_tsv(const std::vector<StimulusEvent>& events) {
  std::string out(kEventsHeader);
  out.push_back('\n');
  for (const auto& e : events) {
    out += e.stimulus_id;
    out += '\t';
    out += e.modality ? std::string(to_string(*e.modality)) : "n/a";
    out += '\t' + format_number(e.onset) + '\t' + format_number(e.duration) + '\t' + std::to_string(e.run) + '\t' +
           std::to_string(e.session) + '\t' + std::string(to_string(e.role)) + '\t' + e.paired_id + '\n';
  }
  return out;
}

std::vector<StimulusEvent> read_events_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_events_tsv(buf.str());
}

void write_events_tsv(const std::filesystem::path& path, const std::vector<StimulusEvent>& events) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << format_events_tsv(events);
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  return assemble_dataset(read_events_tsv(dir / "events.tsv"),
                          BetaMatrix::from_file(read_matrix_file(dir / "train.ndm")),
                          BetaMatrix::from_file(read_matrix_file(dir / "test.ndm")));
}

void save_dataset_dir(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_events_tsv(dir / "events.tsv", ds.events());
  write_matrix_file(dir / "train.ndm", ds.betas_train().to_file());
  write_matrix_file(dir / "test.ndm", ds.betas_test().to_file());
}

}  // namespace neurodec
