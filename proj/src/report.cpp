#include "neurodec/report.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "neurodec/error.hpp"

namespace neurodec {
namespace {

namespace fs = std::filesystem;

std::string failure_status(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return "failed:" + std::string(to_string(err->code()));
  return "failed:Internal";
}

std::string sanitize(std::string_view s) {
  std::string out;
  for (const char c : s) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '.';
    out.push_back(keep ? c : '_');
  }
  return out.empty() ? "_" : out;
}

std::optional<RoiName> atlas_roi(PlanRoi r) {
  switch (r) {
    case PlanRoi::Whole: return std::nullopt;
    case PlanRoi::Low: return RoiName::LowLevelVisual;
    case PlanRoi::High: return RoiName::HighLevelVisual;
    case PlanRoi::Language: return RoiName::Language;
  }
  return std::nullopt;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

PairwiseVariant parse_variant(std::string_view s) {
  if (s == "1v2" || s == "one_vs_two") return PairwiseVariant::OneVsTwo;
  if (s == "2v2" || s == "two_vs_two") return PairwiseVariant::TwoVsTwo;
  throw Error(ErrorCode::InvalidPlan, "unknown pairwise variant '" + std::string(s) + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

void append_report_columns(std::ostringstream& os, const EvalReport& r) {
  os << format_number(r.acc_captions) << ',' << format_number(r.acc_images) << ',' << format_number(r.acc_overall)
     << ',' << format_number(r.ci95_captions.lo) << ',' << format_number(r.ci95_captions.hi) << ','
     << format_number(r.ci95_images.lo) << ',' << format_number(r.ci95_images.hi) << ','
     << format_number(r.ci95_overall.lo) << ',' << format_number(r.ci95_overall.hi);
}

constexpr const char* kAccuracyColumns =
    "acc_captions,acc_images,acc_overall,ci95_captions_lo,ci95_captions_hi,ci95_images_lo,ci95_images_hi,"
    "ci95_overall_lo,ci95_overall_hi";

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + '"';
}

}  // namespace

std::string_view to_string(PlanRoi r) {
  switch (r) {
    case PlanRoi::Whole: return "whole";
    case PlanRoi::Low: return "low";
    case PlanRoi::High: return "high";
    case PlanRoi::Language: return "language";
  }
  return "?";
}

PlanRoi parse_plan_roi(std::string_view s) {
  if (s == "whole") return PlanRoi::Whole;
  if (s == "low") return PlanRoi::Low;
  if (s == "high") return PlanRoi::High;
  if (s == "language") return PlanRoi::Language;
  throw Error(ErrorCode::UnknownRoi, "unknown ROI '" + std::string(s) + "'");
}

void RunPlan::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidPlan, msg); };
  if (tuples.empty()) fail("plan has no tuples");
  if (output_dir.empty()) fail("plan has no output directory");
  for (const char* name : {"events.tsv", "train.ndm", "test.ndm"})
    if (!fs::is_regular_file(dataset_dir / name)) fail("missing dataset file " + (dataset_dir / name).string());

  std::set<std::tuple<std::string, TrainingMode, PlanRoi>> seen;
  std::map<std::string, fs::path> stems;
  for (const auto& t : tuples) {
    if (!fs::is_regular_file(t.features)) fail("missing feature file " + t.features.string());
    const auto key = fs::weakly_canonical(t.features).string();
    if (!seen.emplace(key, t.mode, t.roi).second)
      fail("duplicate tuple (" + t.features.string() + ", " + std::string(to_string(t.mode)) + ", " +
           std::string(to_string(t.roi)) + ")");
    const auto stem = t.features.stem().string();
    const auto [it, inserted] = stems.emplace(stem, key);
    if (!inserted && it->second != key) fail("feature files share the name '" + stem + "'");
    if (t.roi != PlanRoi::Whole && !fs::is_regular_file(atlas))
      fail("ROI '" + std::string(to_string(t.roi)) + "' needs an atlas file");
  }
  try {
    cv.validate();
  } catch (const Error& e) {
    fail(std::string("cv: ") + e.what());
  }
  if (bootstrap.n_boot < 1) fail("bootstrap count must be at least 1");
}

RunPlan RunPlan::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  RunPlan p;
  try {
    if (!j.is_object()) throw Error(ErrorCode::InvalidPlan, "plan must be a JSON object");
    p.dataset_dir = resolve(base_dir, j.at("dataset").get<std::string>());
    if (j.contains("atlas")) p.atlas = resolve(base_dir, j["atlas"].get<std::string>());
    p.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());

    if (j.contains("tuples")) {
      for (const auto& t : j["tuples"])
        p.tuples.push_back({resolve(base_dir, t.at("features").get<std::string>()),
                            parse_training_mode(t.value("mode", "agnostic")),
                            parse_plan_roi(t.value("roi", "whole"))});
    } else {
      const auto modes = j.value("modes", std::vector<std::string>{"agnostic", "image", "caption"});
      const auto rois = j.value("rois", std::vector<std::string>{"whole"});
      for (const auto& f : j.at("features").get<std::vector<std::string>>())
        for (const auto& m : modes)
          for (const auto& r : rois) p.tuples.push_back({resolve(base_dir, f), parse_training_mode(m), parse_plan_roi(r)});
    }

    if (j.contains("cv")) {
      const auto& cv = j["cv"];
      p.cv.alpha_grid = cv.value("alphas", p.cv.alpha_grid);
      p.cv.n_folds = cv.value("folds", p.cv.n_folds);
      p.cv.fold_seed = cv.value("seed", p.cv.fold_seed);
    }
    if (j.contains("bootstrap")) {
      const auto& b = j["bootstrap"];
      p.bootstrap.n_boot = b.value("n", p.bootstrap.n_boot);
      p.bootstrap.seed = b.value("seed", p.bootstrap.seed);
      if (b.contains("variant")) p.bootstrap.variant = parse_variant(b["variant"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidPlan, e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidPlan) throw;
    throw Error(ErrorCode::InvalidPlan, e.what());
  }
  return p;
}

RunPlan RunPlan::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open plan " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidPlan, e.what());
  }
  return from_json(j, path.parent_path());
}

int RunManifest::n_ok() const {
  return static_cast<int>(std::count_if(results.begin(), results.end(), [](const auto& r) { return r.ok(); }));
}

int RunManifest::exit_code() const {
  const int ok = n_ok();
  if (ok == static_cast<int>(results.size())) return 0;
  return ok > 0 ? 2 : 1;
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["tuples"] = nlohmann::json::array();
  for (const auto& r : results) {
    j["tuples"].push_back({{"features", r.tuple.features.string()},
                           {"model", r.model},
                           {"mode", std::string(to_string(r.tuple.mode))},
                           {"roi", std::string(to_string(r.tuple.roi))},
                           {"status", r.status},
                           {"report", r.report_path.empty() ? "" : r.report_path.filename().string()}});
  }
  j["n_ok"] = n_ok();
  j["n_failed"] = static_cast<int>(results.size()) - n_ok();
  return j;
}

int worker_count() {
  const char* env = std::getenv("NEURODEC_WORKERS");
  if (!env) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (const std::exception&) {
    return 1;
  }
}

std::string report_file_name(const std::string& model, TrainingMode mode, PlanRoi roi) {
  return sanitize(model) + "__" + std::string(to_string(mode)) + "__" + std::string(to_string(roi)) + ".json";
}

RunManifest run_plan(const RunPlan& plan, int workers) {
  plan.validate();
  fs::create_directories(plan.output_dir / "reports");

  RunManifest manifest;
  manifest.results.resize(plan.tuples.size());
  for (std::size_t i = 0; i < plan.tuples.size(); ++i) manifest.results[i].tuple = plan.tuples[i];

  // Shared inputs are loaded once up front; a failure only marks the tuples
  // that depend on it.
  const Dataset ds = load_dataset_dir(plan.dataset_dir);

  std::map<fs::path, FeatureMatrix> features;
  std::map<fs::path, std::string> feature_errors;
  for (const auto& t : plan.tuples) {
    if (features.count(t.features) || feature_errors.count(t.features)) continue;
    try {
      features.emplace(t.features, FeatureMatrix::from_file(read_matrix_file(t.features)));
    } catch (const std::exception& e) {
      feature_errors.emplace(t.features, failure_status(e));
    }
  }

  std::map<PlanRoi, Dataset> masked;
  std::map<PlanRoi, std::string> mask_errors;
  std::optional<AtlasAssignment> atlas;
  for (const auto& t : plan.tuples) {
    const auto roi = atlas_roi(t.roi);
    if (!roi || masked.count(t.roi) || mask_errors.count(t.roi)) continue;
    try {
      if (!atlas) atlas = read_atlas_tsv(plan.atlas);
      masked.emplace(t.roi, mask_dataset(ds, build_mask(load_roi_definition(*roi), *atlas, *roi)));
    } catch (const std::exception& e) {
      mask_errors.emplace(t.roi, failure_status(e));
    }
  }

  std::mutex write_mutex;
  auto run_one = [&](std::size_t i) {
    TupleResult& r = manifest.results[i];
    const PlanTuple& t = r.tuple;
    r.model = sanitize(t.features.stem().string());
    if (auto it = feature_errors.find(t.features); it != feature_errors.end()) {
      r.status = it->second;
      return;
    }
    const FeatureMatrix& feats = features.at(t.features);
    r.model = feats.model_name();
    r.feature_modality = feats.feature_modality();
    if (auto it = mask_errors.find(t.roi); it != mask_errors.end()) {
      r.status = it->second;
      return;
    }
    try {
      const Dataset& data = t.roi == PlanRoi::Whole ? ds : masked.at(t.roi);
      const FeatureMatrix targets = assign_targets(data, feats);
      const RidgeDecoder d = train_decoder(data, targets, t.mode, plan.cv);
      EvalReport report = evaluate(d, data, feats, plan.bootstrap.n_boot, plan.bootstrap.seed, plan.bootstrap.variant);
      report.decoder_meta["roi"] = std::string(to_string(t.roi));
      report.decoder_meta["n_voxels"] = std::to_string(d.n_voxels());

      nlohmann::json j = report.to_json();
      j["model"] = feats.model_name();
      j["feature_modality"] = std::string(to_string(feats.feature_modality()));
      j["mode"] = std::string(to_string(t.mode));
      j["roi"] = std::string(to_string(t.roi));
      const fs::path path = plan.output_dir / "reports" / report_file_name(fs::path(t.features).stem().string(), t.mode, t.roi);
      {
        std::lock_guard lock(write_mutex);
        write_text(path, j.dump(2) + "\n");
      }
      r.report_path = path;
      r.report = std::move(report);
      r.status = "ok";
    } catch (const std::exception& e) {
      r.status = failure_status(e);
    }
  };

  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), plan.tuples.size());
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < plan.tuples.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < plan.tuples.size(); i = next++) run_one(i);
      });
    for (auto& th : pool) th.join();
  }

  write_text(plan.output_dir / "results.csv", results_csv(manifest));
  std::set<PlanRoi> rois;
  for (const auto& t : plan.tuples) rois.insert(t.roi);
  for (const auto roi : rois)
    write_text(plan.output_dir / ("accuracy_" + std::string(to_string(roi)) + ".svg"), roi_chart_svg(manifest, roi));
  write_text(plan.output_dir / "manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

std::string results_csv(const RunManifest& manifest) {
  std::ostringstream os;
  os << "model,feature_modality,mode,roi," << kAccuracyColumns << '\n';
  for (const auto& r : manifest.results) {
    if (!r.report) continue;
    os << csv_field(r.model) << ',' << to_string(*r.feature_modality) << ',' << to_string(r.tuple.mode) << ','
       << to_string(r.tuple.roi) << ',';
    append_report_columns(os, *r.report);
    os << '\n';
  }
  return os.str();
}

std::string roi_chart_svg(const RunManifest& manifest, PlanRoi roi) {
  // Groups are models in order of first appearance; the bar is the
  // modality-agnostic decoder, markers the modality-specific ones.
  std::vector<std::string> models;
  std::map<std::string, std::map<TrainingMode, const EvalReport*>> by_model;
  for (const auto& r : manifest.results) {
    if (r.tuple.roi != roi || !r.report) continue;
    if (!by_model.count(r.model)) models.push_back(r.model);
    by_model[r.model][r.tuple.mode] = &*r.report;
  }

  constexpr double kPanelW = 420, kPanelH = 260, kLeft = 50, kTop = 40, kGap = 40;
  const double width = kLeft + 2 * kPanelW + kGap + 20;
  const double height = kTop + kPanelH + 110;
  auto y_of = [&](double acc) { return kTop + kPanelH * (1.0 - std::clamp(acc, 0.0, 1.0)); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << kLeft << "\" y=\"16\" font-size=\"13\">Pairwise accuracy, ROI: " << to_string(roi) << "</text>\n";

  const std::pair<const char*, double EvalReport::*> panels[] = {{"captions", &EvalReport::acc_captions},
                                                                {"images", &EvalReport::acc_images}};
  for (std::size_t p = 0; p < 2; ++p) {
    const double x0 = kLeft + static_cast<double>(p) * (kPanelW + kGap);
    os << "<g>\n<text x=\"" << x0 << "\" y=\"" << kTop - 8 << "\">" << panels[p].first << "</text>\n";
    os << "<rect x=\"" << x0 << "\" y=\"" << kTop << "\" width=\"" << kPanelW << "\" height=\"" << kPanelH
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (const double tick : {0.0, 0.25, 0.5, 0.75, 1.0})
      os << "<text x=\"" << x0 - 4 << "\" y=\"" << y_of(tick) + 4 << "\" text-anchor=\"end\">" << format_number(tick)
         << "</text>\n";
    os << "<line x1=\"" << x0 << "\" x2=\"" << x0 + kPanelW << "\" y1=\"" << y_of(0.5) << "\" y2=\"" << y_of(0.5)
       << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";

    const double slot = models.empty() ? kPanelW : kPanelW / static_cast<double>(models.size());
    for (std::size_t m = 0; m < models.size(); ++m) {
      const double cx = x0 + slot * (static_cast<double>(m) + 0.5);
      const auto& modes = by_model[models[m]];
      if (auto it = modes.find(TrainingMode::Agnostic); it != modes.end()) {
        const double acc = it->second->*panels[p].second;
        os << "<rect x=\"" << cx - slot * 0.3 << "\" y=\"" << y_of(acc) << "\" width=\"" << slot * 0.6
           << "\" height=\"" << kTop + kPanelH - y_of(acc) << "\" fill=\"#9ab\"/>\n";
      }
      if (auto it = modes.find(TrainingMode::ImageOnly); it != modes.end())
        os << "<circle cx=\"" << cx << "\" cy=\"" << y_of(it->second->*panels[p].second)
           << "\" r=\"4\" fill=\"#c33\"/>\n";
      if (auto it = modes.find(TrainingMode::CaptionOnly); it != modes.end()) {
        const double y = y_of(it->second->*panels[p].second);
        os << "<rect x=\"" << cx - 4 << "\" y=\"" << y - 4 << "\" width=\"8\" height=\"8\" fill=\"#36c\"/>\n";
      }
      os << "<text transform=\"translate(" << cx << "," << kTop + kPanelH + 8 << ") rotate(45)\">" << models[m]
         << "</text>\n";
    }
    os << "</g>\n";
  }
  const double ly = height - 14;
  os << "<rect x=\"" << kLeft << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"10\" fill=\"#9ab\"/><text x=\""
     << kLeft + 16 << "\" y=\"" << ly << "\">modality-agnostic</text>\n";
  os << "<circle cx=\"" << kLeft + 146 << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\"#c33\"/><text x=\"" << kLeft + 154
     << "\" y=\"" << ly << "\">trained on images</text>\n";
  os << "<rect x=\"" << kLeft + 272 << "\" y=\"" << ly - 8 << "\" width=\"8\" height=\"8\" fill=\"#36c\"/><text x=\""
     << kLeft + 284 << "\" y=\"" << ly << "\">trained on captions</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::vector<PoolingRow> compare_pooling(const FeatureMatrix& features_mean, const FeatureMatrix& features_cls,
                                        const Dataset& ds, const CvConfig& cv, const EvalOptions& bootstrap) {
  if (features_mean.stimulus_ids() != features_cls.stimulus_ids())
    throw Error(ErrorCode::AlignmentMismatch, "pooled feature matrices cover different stimuli");
  if (features_mean.feature_modality() != features_cls.feature_modality())
    throw Error(ErrorCode::AlignmentMismatch, "pooled feature matrices have different modalities");

  std::vector<PoolingRow> rows;
  for (const auto& [feats, pooling] : {std::pair{&features_mean, "mean"}, std::pair{&features_cls, "cls"}}) {
    const RidgeDecoder d = train_decoder(ds, assign_targets(ds, *feats), TrainingMode::Agnostic, cv);
    rows.push_back({features_mean.model_name(), pooling,
                    evaluate(d, ds, *feats, bootstrap.n_boot, bootstrap.seed, bootstrap.variant)});
  }
  return rows;
}

std::string pooling_csv(const std::vector<PoolingRow>& rows) {
  std::ostringstream os;
  os << "model,pooling," << kAccuracyColumns << '\n';
  for (const auto& r : rows) {
    os << csv_field(r.model) << ',' << r.pooling << ',';
    append_report_columns(os, r.report);
    os << '\n';
  }
  return os.str();
}

}  // namespace neurodec
