// Command-line front end for the decoding pipeline.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>

#include "neurodec/error.hpp"
#include "neurodec/eval.hpp"
#include "neurodec/glm.hpp"
#include "neurodec/report.hpp"
#include "neurodec/ridge.hpp"
#include "neurodec/roi.hpp"
#include "neurodec/synth.hpp"

namespace fs = std::filesystem;
using namespace neurodec;

namespace {

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, end - start);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size())
      throw Error(ErrorCode::InvalidParams, "bad alpha '" + item + "'");
    out.push_back(v);
    start = end + 1;
  }
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

FeatureMatrix load_features(const fs::path& path, const std::string& modality) {
  std::optional<FeatureModality> fm;
  if (!modality.empty()) fm = parse_feature_modality(modality);
  return FeatureMatrix::from_file(read_matrix_file(path), path.stem().string(), fm);
}

std::vector<RunBold> read_bold_dir(const fs::path& dir, std::vector<VoxelId>& voxel_ids) {
  static const std::regex name(R"(bold_ses-(\d+)_run-(\d+)\.ndm)");
  std::vector<RunBold> runs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string file = entry.path().filename().string();
    if (!std::regex_match(file, m, name)) continue;
    const MatrixFile f = read_matrix_file(entry.path());
    std::vector<VoxelId> ids;
    if (f.meta.is_object() && f.meta.contains("col_ids")) ids = f.meta["col_ids"].get<std::vector<VoxelId>>();
    if (runs.empty())
      voxel_ids = ids;
    else if (ids != voxel_ids)
      throw Error(ErrorCode::ShapeMismatch, file + " has different voxel ids");
    runs.push_back({{std::stoi(m[1]), std::stoi(m[2])}, f.values.cast<double>()});
  }
  if (runs.empty()) throw Error(ErrorCode::MissingRun, "no bold_ses-S_run-R.ndm files in " + dir.string());
  std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return runs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Brain decoding pipeline: GLM betas, ridge decoders, ROI masks and evaluation"};
  app.require_subcommand(1);

  // simulate
  std::string sim_config, sim_out;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset with known ground truth");
  simulate->add_option("--config", sim_config, "SynthConfig JSON (defaults when omitted)");
  simulate->add_option("--out-dir", sim_out, "Output directory")->required();

  // fit-glm
  std::string glm_events, glm_bold, glm_train, glm_test;
  double glm_tr = 2.0;
  auto* fit_glm = app.add_subcommand("fit-glm", "Estimate single-trial betas from BOLD runs");
  fit_glm->add_option("--events", glm_events, "Events TSV")->required();
  fit_glm->add_option("--bold-dir", glm_bold, "Directory of bold_ses-S_run-R.ndm files")->required();
  fit_glm->add_option("--tr", glm_tr, "Repetition time in seconds");
  fit_glm->add_option("--out-train", glm_train, "Training betas output")->required();
  fit_glm->add_option("--out-test", glm_test, "Test betas output")->required();

  // train
  std::string tr_dataset, tr_features, tr_mode = "agnostic", tr_alphas = "1e3,1e4,1e5,1e6,1e7", tr_out, tr_fmod;
  int tr_folds = 5;
  std::uint64_t tr_seed = 17;
  auto* train = app.add_subcommand("train", "Fit a cross-validated ridge decoder");
  train->add_option("--dataset", tr_dataset, "Dataset directory")->required();
  train->add_option("--features", tr_features, "Feature matrix")->required();
  train->add_option("--feature-modality", tr_fmod, "vision|language|multimodal, when the file does not say");
  train->add_option("--mode", tr_mode, "agnostic|image|caption");
  train->add_option("--alphas", tr_alphas, "Comma-separated regularization grid");
  train->add_option("--folds", tr_folds, "Cross-validation folds");
  train->add_option("--seed", tr_seed, "Fold assignment seed");
  train->add_option("--out", tr_out, "Decoder output")->required();

  // evaluate
  std::string ev_decoder, ev_dataset, ev_features, ev_out, ev_fmod, ev_variant = "1v2";
  int ev_boot = 1000;
  std::uint64_t ev_seed = 7;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a decoder on the test set");
  evaluate_cmd->add_option("--decoder", ev_decoder, "Decoder file")->required();
  evaluate_cmd->add_option("--dataset", ev_dataset, "Dataset directory")->required();
  evaluate_cmd->add_option("--features", ev_features, "Feature matrix")->required();
  evaluate_cmd->add_option("--feature-modality", ev_fmod, "vision|language|multimodal, when the file does not say");
  evaluate_cmd->add_option("--bootstrap", ev_boot, "Bootstrap resamples");
  evaluate_cmd->add_option("--seed", ev_seed, "Bootstrap seed");
  evaluate_cmd->add_option("--variant", ev_variant, "1v2|2v2")->check(CLI::IsMember({"1v2", "2v2"}));
  evaluate_cmd->add_option("--out", ev_out, "Report JSON")->required();

  // mask
  std::string mk_atlas, mk_roi, mk_labels, mk_betas, mk_out;
  auto* mask = app.add_subcommand("mask", "Restrict a beta matrix to an ROI");
  mask->add_option("--atlas", mk_atlas, "Atlas TSV")->required();
  mask->add_option("--roi", mk_roi, "low|high|language|custom")->required();
  mask->add_option("--labels", mk_labels, "Label list for --roi custom");
  mask->add_option("--betas", mk_betas, "Beta matrix")->required();
  mask->add_option("--out", mk_out, "Masked beta matrix")->required();

  // run
  std::string run_plan_path;
  auto* run = app.add_subcommand("run", "Execute an experiment plan");
  run->add_option("--plan", run_plan_path, "Plan JSON")->required();

  // compare-pooling
  std::string cp_dataset, cp_mean, cp_cls, cp_out, cp_alphas = "1e3,1e4,1e5,1e6,1e7";
  int cp_folds = 5, cp_boot = 1000;
  std::uint64_t cp_seed = 17, cp_boot_seed = 7;
  auto* pooling = app.add_subcommand("compare-pooling", "Compare mean-pooled and CLS features of one model");
  pooling->add_option("--dataset", cp_dataset, "Dataset directory")->required();
  pooling->add_option("--mean", cp_mean, "Mean-pooled features")->required();
  pooling->add_option("--cls", cp_cls, "CLS features")->required();
  pooling->add_option("--alphas", cp_alphas, "Comma-separated regularization grid");
  pooling->add_option("--folds", cp_folds, "Cross-validation folds");
  pooling->add_option("--seed", cp_seed, "Fold assignment seed");
  pooling->add_option("--bootstrap", cp_boot, "Bootstrap resamples");
  pooling->add_option("--bootstrap-seed", cp_boot_seed, "Bootstrap seed");
  pooling->add_option("--out", cp_out, "CSV output (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      const SynthConfig cfg = sim_config.empty() ? SynthConfig{} : SynthConfig::from_json(read_json(sim_config));
      const SynthOutput out = generate(cfg);
      write_synth_output(sim_out, out);
      std::cout << "wrote " << out.events.size() << " events, " << out.scan.runs.size() << " runs to " << sim_out << '\n';
    } else if (*fit_glm) {
      const auto events = read_events_tsv(glm_events);
      validate_events(events);
      std::vector<VoxelId> voxel_ids;
      const auto bold = read_bold_dir(glm_bold, voxel_ids);
      ScanParams scan;
      scan.tr = glm_tr;
      scan.n_volumes_per_run = static_cast<int>(bold.front().bold.rows());
      for (const auto& r : bold) {
        if (r.bold.rows() != scan.n_volumes_per_run)
          throw Error(ErrorCode::ShapeMismatch, "runs have different volume counts");
        scan.runs.push_back(r.key);
      }
      TwoPhaseOptions opts;
      opts.voxel_ids = voxel_ids;
      const auto result = two_phase_betas(events, bold, scan, HrfParams{}, opts);
      write_matrix_file(glm_train, result.train.to_file());
      write_matrix_file(glm_test, result.test.to_file());
      if (result.phase1_rank_deficient) std::cerr << "warning: phase-1 design is rank deficient\n";
      if (result.phase2_rank_deficient_runs > 0)
        std::cerr << "warning: " << result.phase2_rank_deficient_runs << " rank-deficient phase-2 runs\n";
    } else if (*train) {
      const Dataset ds = load_dataset_dir(tr_dataset);
      const FeatureMatrix feats = load_features(tr_features, tr_fmod);
      CvConfig cfg;
      cfg.alpha_grid = parse_alphas(tr_alphas);
      cfg.n_folds = tr_folds;
      cfg.fold_seed = tr_seed;
      const RidgeDecoder d = train_decoder(ds, assign_targets(ds, feats), parse_training_mode(tr_mode), cfg);
      save_decoder(tr_out, d);
      std::cout << "alpha " << format_number(d.alpha) << '\n';
    } else if (*evaluate_cmd) {
      const RidgeDecoder d = load_decoder(ev_decoder);
      const Dataset ds = load_dataset_dir(ev_dataset);
      const FeatureMatrix feats = load_features(ev_features, ev_fmod);
      const auto variant = ev_variant == "2v2" ? PairwiseVariant::TwoVsTwo : PairwiseVariant::OneVsTwo;
      const EvalReport report = evaluate(d, ds, feats, ev_boot, ev_seed, variant);
      write_json(ev_out, report.to_json());
      std::cout << "captions " << format_number(report.acc_captions) << "  images " << format_number(report.acc_images)
                << "  overall " << format_number(report.acc_overall) << '\n';
    } else if (*mask) {
      const RoiName roi = parse_roi_name(mk_roi);
      std::vector<RoiLabel> labels;
      if (roi == RoiName::Custom) {
        if (mk_labels.empty()) throw Error(ErrorCode::UnknownRoi, "--roi custom needs --labels");
        std::ifstream in(mk_labels);
        if (!in) throw Error(ErrorCode::IoError, "cannot open " + mk_labels);
        labels = parse_label_list(std::string(std::istreambuf_iterator<char>(in), {}));
      } else {
        labels = load_roi_definition(roi);
      }
      const RoiMask m = build_mask(labels, read_atlas_tsv(mk_atlas), roi);
      const BetaMatrix betas = BetaMatrix::from_file(read_matrix_file(mk_betas));
      write_matrix_file(mk_out, apply_mask(betas, m).to_file());
      std::cout << m.voxel_ids.size() << " voxels\n";
    } else if (*run) {
      const RunPlan plan = RunPlan::load(run_plan_path);
      const RunManifest manifest = run_plan(plan);
      for (const auto& r : manifest.results)
        std::cout << r.status << '\t' << r.model << '\t' << to_string(r.tuple.mode) << '\t' << to_string(r.tuple.roi)
                  << '\n';
      return manifest.exit_code();
    } else if (*pooling) {
      const Dataset ds = load_dataset_dir(cp_dataset);
      const FeatureMatrix mean = load_features(cp_mean, "");
      const FeatureMatrix cls = load_features(cp_cls, "");
      CvConfig cfg;
      cfg.alpha_grid = parse_alphas(cp_alphas);
      cfg.n_folds = cp_folds;
      cfg.fold_seed = cp_seed;
      const std::string csv = pooling_csv(compare_pooling(mean, cls, ds, cfg, {cp_boot, cp_boot_seed}));
      if (cp_out.empty()) {
        std::cout << csv;
      } else {
        std::ofstream(cp_out, std::ios::trunc) << csv;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
