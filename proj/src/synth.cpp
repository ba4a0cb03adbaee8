#include "neurodec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include <Eigen/QR>

#include "neurodec/error.hpp"
#include "neurodec/eval.hpp"

namespace neurodec {
namespace {

constexpr double kStimulusDuration = 2.5;
constexpr double kStep = 3.5;  // 2.5 s stimulus + 1 s inter-stimulus interval
constexpr double kRunPadding = 8.0;

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, i);
  return buf;
}

Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd) {
  std::normal_distribution<double> normal(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  return m;
}

Eigen::MatrixXd unit_rows(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m = gaussian(rng, rows, cols, 1.0);
  for (Eigen::Index r = 0; r < rows; ++r) m.row(r).normalize();
  return m;
}

// Labels for the noise-only block; outside every embedded ROI.
constexpr std::pair<Hemisphere, int> kNoiseLabels[] = {{Hemisphere::L, 29}, {Hemisphere::R, 29}};

std::vector<RoiLabel> block_labels(VoxelBlock b) {
  switch (b) {
    case VoxelBlock::Amodal: return load_roi_definition(RoiName::HighLevelVisual);
    case VoxelBlock::Vision: return load_roi_definition(RoiName::LowLevelVisual);
    case VoxelBlock::Language: return load_roi_definition(RoiName::Language);
    case VoxelBlock::Noise: break;
  }
  std::vector<RoiLabel> out;
  for (const auto& [h, id] : kNoiseLabels) out.push_back({h, id, "G_precentral", "Precentral gyrus"});
  return out;
}

BetaMatrix to_betas(const Eigen::MatrixXd& values, std::vector<std::string> ids) {
  std::vector<VoxelId> voxels(static_cast<std::size_t>(values.cols()));
  for (std::size_t i = 0; i < voxels.size(); ++i) voxels[i] = static_cast<VoxelId>(i);
  return BetaMatrix(values.cast<float>(), std::move(ids), std::move(voxels));
}

}  // namespace

int VoxelBlocks::size(VoxelBlock b) const {
  switch (b) {
    case VoxelBlock::Amodal: return amodal;
    case VoxelBlock::Vision: return vision_only;
    case VoxelBlock::Language: return language_only;
    case VoxelBlock::Noise: return noise_only;
  }
  return 0;
}

int VoxelBlocks::offset(VoxelBlock b) const {
  switch (b) {
    case VoxelBlock::Amodal: return 0;
    case VoxelBlock::Vision: return amodal;
    case VoxelBlock::Language: return amodal + vision_only;
    case VoxelBlock::Noise: return amodal + vision_only + language_only;
  }
  return 0;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (n_train < 2) fail("n_train must be at least 2");
  if (n_test < 4 || n_test % 2 != 0) fail("n_test must be even and at least 4");
  if (d_sem <= 0 || d_vis <= 0 || d_lang <= 0) fail("latent dimensions must be positive");
  const auto& b = voxel_blocks;
  if (b.amodal < 0 || b.vision_only < 0 || b.language_only < 0 || b.noise_only < 0) fail("voxel blocks must be non-negative");
  if (b.amodal + b.vision_only + b.language_only == 0) fail("at least one signal-carrying voxel block is required");
  if (!(noise_sigma >= 0.0) || !(feature_noise >= 0.0)) fail("noise levels must be non-negative");
  if (!(amodal_gain >= 0.0) || !(modal_gain >= 0.0)) fail("gains must be non-negative");
  if (!(scan.tr > 0.0)) fail("tr must be positive");
  if (test_repeats < 1 || stimuli_per_run < 1 || runs_per_session < 1 || fixation_every < 0)
    fail("schedule parameters must be positive");
  hrf.validate();
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json j;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["d_sem"] = d_sem;
  j["d_vis"] = d_vis;
  j["d_lang"] = d_lang;
  j["voxel_blocks"] = {{"amodal", voxel_blocks.amodal}, {"vision_only", voxel_blocks.vision_only},
                       {"language_only", voxel_blocks.language_only}, {"noise_only", voxel_blocks.noise_only}};
  j["noise_sigma"] = noise_sigma;
  j["bold_mode"] = bold_mode;
  j["seed"] = seed;
  j["scan"] = {{"tr", scan.tr}};
  j["hrf"] = {{"peak_delay", hrf.peak_delay}, {"undershoot_delay", hrf.undershoot_delay},
              {"peak_dispersion", hrf.peak_dispersion}, {"undershoot_dispersion", hrf.undershoot_dispersion},
              {"undershoot_ratio", hrf.undershoot_ratio}, {"kernel_length", hrf.kernel_length}};
  j["amodal_gain"] = amodal_gain;
  j["modal_gain"] = modal_gain;
  j["feature_noise"] = feature_noise;
  j["test_repeats"] = test_repeats;
  j["stimuli_per_run"] = stimuli_per_run;
  j["runs_per_session"] = runs_per_session;
  j["fixation_every"] = fixation_every;
  return j;
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.n_train = j.value("n_train", c.n_train);
    c.n_test = j.value("n_test", c.n_test);
    c.d_sem = j.value("d_sem", c.d_sem);
    c.d_vis = j.value("d_vis", c.d_vis);
    c.d_lang = j.value("d_lang", c.d_lang);
    if (j.contains("voxel_blocks")) {
      const auto& b = j["voxel_blocks"];
      if (b.is_array()) {
        if (b.size() != 4) throw Error(ErrorCode::InvalidConfig, "voxel_blocks array needs 4 entries");
        c.voxel_blocks = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
      } else {
        c.voxel_blocks.amodal = b.value("amodal", c.voxel_blocks.amodal);
        c.voxel_blocks.vision_only = b.value("vision_only", c.voxel_blocks.vision_only);
        c.voxel_blocks.language_only = b.value("language_only", c.voxel_blocks.language_only);
        c.voxel_blocks.noise_only = b.value("noise_only", c.voxel_blocks.noise_only);
      }
    }
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.bold_mode = j.value("bold_mode", c.bold_mode);
    c.seed = j.value("seed", c.seed);
    if (j.contains("scan")) c.scan.tr = j["scan"].value("tr", c.scan.tr);
    if (j.contains("hrf")) {
      const auto& h = j["hrf"];
      c.hrf.peak_delay = h.value("peak_delay", c.hrf.peak_delay);
      c.hrf.undershoot_delay = h.value("undershoot_delay", c.hrf.undershoot_delay);
      c.hrf.peak_dispersion = h.value("peak_dispersion", c.hrf.peak_dispersion);
      c.hrf.undershoot_dispersion = h.value("undershoot_dispersion", c.hrf.undershoot_dispersion);
      c.hrf.undershoot_ratio = h.value("undershoot_ratio", c.hrf.undershoot_ratio);
      c.hrf.kernel_length = h.value("kernel_length", c.hrf.kernel_length);
    }
    c.amodal_gain = j.value("amodal_gain", c.amodal_gain);
    c.modal_gain = j.value("modal_gain", c.modal_gain);
    c.feature_noise = j.value("feature_noise", c.feature_noise);
    c.test_repeats = j.value("test_repeats", c.test_repeats);
    c.stimuli_per_run = j.value("stimuli_per_run", c.stimuli_per_run);
    c.runs_per_session = j.value("runs_per_session", c.runs_per_session);
    c.fixation_every = j.value("fixation_every", c.fixation_every);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  return c;
}

std::optional<std::pair<std::size_t, Modality>> SynthTruth::locate(std::string_view id) const {
  for (std::size_t p = 0; p < image_ids.size(); ++p) {
    if (image_ids[p] == id) return std::pair{p, Modality::Image};
    if (caption_ids[p] == id) return std::pair{p, Modality::Caption};
  }
  return std::nullopt;
}

Eigen::VectorXd SynthTruth::response(std::string_view id) const {
  const auto where = locate(id);
  if (!where) throw Error(ErrorCode::MismatchedProvenance, "stimulus '" + std::string(id) + "' not generated here");
  const auto [p, modality] = *where;
  const auto pi = static_cast<Eigen::Index>(p);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(blocks.total());
  r.segment(blocks.offset(VoxelBlock::Amodal), blocks.amodal) = w_amodal.transpose() * sem.row(pi).transpose();
  if (modality == Modality::Image)
    r.segment(blocks.offset(VoxelBlock::Vision), blocks.vision_only) = w_vis.transpose() * vis.row(pi).transpose();
  else
    r.segment(blocks.offset(VoxelBlock::Language), blocks.language_only) = w_lang.transpose() * lang.row(pi).transpose();
  return r;
}

SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SynthOutput out;
  out.config = cfg;
  SynthTruth& truth = out.truth;
  truth.seed = cfg.seed;
  truth.model_prefix = "synth" + std::to_string(cfg.seed) + "-";
  truth.blocks = cfg.voxel_blocks;

  const auto& blocks = cfg.voxel_blocks;
  truth.w_amodal = gaussian(rng, cfg.d_sem, blocks.amodal, cfg.amodal_gain);
  truth.w_vis = gaussian(rng, cfg.d_vis, blocks.vision_only, cfg.modal_gain);
  truth.w_lang = gaussian(rng, cfg.d_lang, blocks.language_only, cfg.modal_gain);

  const auto n_train = static_cast<std::size_t>(cfg.n_train);
  const auto n_test_pairs = static_cast<std::size_t>(cfg.n_test / 2);
  const std::size_t n_pairs = n_train + n_test_pairs;
  for (std::size_t p = 0; p < n_train; ++p) {
    truth.image_ids.push_back(numbered("img-tr", p, 5));
    truth.caption_ids.push_back(numbered("cap-tr", p, 5));
  }
  for (std::size_t p = 0; p < n_test_pairs; ++p) {
    truth.image_ids.push_back(numbered("img-te", p, 4));
    truth.caption_ids.push_back(numbered("cap-te", p, 4));
  }
  truth.sem = unit_rows(rng, static_cast<Eigen::Index>(n_pairs), cfg.d_sem);
  truth.vis = unit_rows(rng, static_cast<Eigen::Index>(n_pairs), cfg.d_vis);
  truth.lang = unit_rows(rng, static_cast<Eigen::Index>(n_pairs), cfg.d_lang);

  // Features per pair; vision keyed by image id, language by caption id,
  // concatenation by image id.
  {
    const auto np = static_cast<Eigen::Index>(n_pairs);
    Eigen::MatrixXd v(np, cfg.d_sem + cfg.d_vis), l(np, cfg.d_sem + cfg.d_lang);
    v << truth.sem, truth.vis;
    l << truth.sem, truth.lang;
    if (cfg.feature_noise > 0.0) {
      v += gaussian(rng, v.rows(), v.cols(), cfg.feature_noise);
      l += gaussian(rng, l.rows(), l.cols(), cfg.feature_noise);
    }
    Eigen::MatrixXd m(np, v.cols() + l.cols());
    m << v, l;
    out.vision = FeatureMatrix(v.cast<float>(), truth.image_ids, truth.model_prefix + "vision", FeatureModality::Vision);
    out.language = FeatureMatrix(l.cast<float>(), truth.caption_ids, truth.model_prefix + "language", FeatureModality::Language);
    out.multimodal = FeatureMatrix(m.cast<float>(), truth.image_ids, truth.model_prefix + "multimodal",
                                   FeatureModality::MultimodalConcat);
  }

  // Presentation schedule. Training pairs alternate modality so the set is
  // balanced; test pairs appear in both modalities, test_repeats times each.
  struct Item {
    std::size_t pair;
    Modality modality;
    Role role;
  };
  std::vector<Item> items;
  for (std::size_t p = 0; p < n_train; ++p) items.push_back({p, p % 2 == 0 ? Modality::Image : Modality::Caption, Role::Train});
  for (int rep = 0; rep < cfg.test_repeats; ++rep)
    for (std::size_t p = n_train; p < n_pairs; ++p) {
      items.push_back({p, Modality::Image, Role::Test});
      items.push_back({p, Modality::Caption, Role::Test});
    }
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng() % i]);

  double longest = 0.0;
  const auto per_run = static_cast<std::size_t>(cfg.stimuli_per_run);
  const std::size_t n_runs = (items.size() + per_run - 1) / per_run;
  std::vector<RunKey> runs;
  for (std::size_t r = 0; r < n_runs; ++r) {
    const RunKey key{static_cast<int>(r) / cfg.runs_per_session + 1, static_cast<int>(r) % cfg.runs_per_session + 1};
    runs.push_back(key);
    double t = kRunPadding;
    std::size_t fixations = 0;
    for (std::size_t k = r * per_run; k < std::min(items.size(), (r + 1) * per_run); ++k) {
      const std::size_t in_run = k - r * per_run;
      if (cfg.fixation_every > 0 && in_run > 0 && in_run % static_cast<std::size_t>(cfg.fixation_every) == 0) {
        out.events.push_back({"fix-s" + std::to_string(key.session) + "r" + std::to_string(key.run) + "-" +
                                  std::to_string(fixations++),
                              std::nullopt, t, kStimulusDuration, key.run, key.session, Role::Fixation, ""});
        t += kStep;
      }
      const Item& it = items[k];
      const bool image = it.modality == Modality::Image;
      out.events.push_back({image ? truth.image_ids[it.pair] : truth.caption_ids[it.pair], it.modality, t,
                            kStimulusDuration, key.run, key.session, it.role,
                            image ? truth.caption_ids[it.pair] : truth.image_ids[it.pair]});
      t += kStep;
    }
    longest = std::max(longest, t - kStep + kStimulusDuration + kRunPadding);
  }
  out.scan.tr = cfg.scan.tr;
  out.scan.n_volumes_per_run = static_cast<int>(std::ceil(longest / cfg.scan.tr));
  out.scan.runs = runs;

  // Noise-free responses.
  std::vector<std::string> test_ids;
  for (const auto& e : out.events) {
    if (e.role == Role::Train) truth.train_ids.push_back(e.stimulus_id);
    if (e.role == Role::Test && std::find(test_ids.begin(), test_ids.end(), e.stimulus_id) == test_ids.end())
      test_ids.push_back(e.stimulus_id);
  }
  truth.test_ids = test_ids;
  const Eigen::Index V = blocks.total();
  Eigen::MatrixXd true_train(static_cast<Eigen::Index>(truth.train_ids.size()), V);
  for (std::size_t i = 0; i < truth.train_ids.size(); ++i)
    true_train.row(static_cast<Eigen::Index>(i)) = truth.response(truth.train_ids[i]).transpose();
  Eigen::MatrixXd true_test(static_cast<Eigen::Index>(test_ids.size()), V);
  for (std::size_t i = 0; i < test_ids.size(); ++i)
    true_test.row(static_cast<Eigen::Index>(i)) = truth.response(test_ids[i]).transpose();
  out.true_train_betas = to_betas(true_train, truth.train_ids);
  out.true_test_betas = to_betas(true_test, test_ids);

  if (!cfg.bold_mode) {
    const double test_sd = cfg.noise_sigma / std::sqrt(static_cast<double>(cfg.test_repeats));
    Eigen::MatrixXd train = true_train, test = true_test;
    if (cfg.noise_sigma > 0.0) {
      train += gaussian(rng, train.rows(), V, cfg.noise_sigma);
      test += gaussian(rng, test.rows(), V, test_sd);
    }
    out.betas_train = to_betas(train, truth.train_ids);
    out.betas_test = to_betas(test, test_ids);
  } else {
    const auto kernel = canonical_hrf(cfg.hrf, out.scan.tr);
    for (const auto& key : runs) {
      Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(out.scan.n_volumes_per_run, V);
      for (const auto& e : out.events) {
        if (e.run_key() != key || (e.role != Role::Train && e.role != Role::Test)) continue;
        Y += event_regressor(e.onset, e.duration, out.scan, kernel) * truth.response(e.stimulus_id).transpose();
      }
      if (cfg.noise_sigma > 0.0) Y += gaussian(rng, Y.rows(), V, cfg.noise_sigma);
      out.bold.push_back({key, std::move(Y)});
    }
  }

  for (const auto b : {VoxelBlock::Amodal, VoxelBlock::Vision, VoxelBlock::Language, VoxelBlock::Noise}) {
    const auto labels = block_labels(b);
    for (int v = 0; v < blocks.size(b); ++v) {
      const auto& l = labels[static_cast<std::size_t>(v) % labels.size()];
      out.atlas.emplace(static_cast<VoxelId>(blocks.offset(b) + v), AtlasEntry{l.hemisphere, l.label_id, l.label});
    }
  }
  return out;
}

Dataset SynthOutput::dataset() const {
  if (betas_train && betas_test) return assemble_dataset(events, *betas_train, *betas_test);
  auto phases = two_phase_betas(events, bold, scan, config.hrf);
  return assemble_dataset(events, std::move(phases.train), std::move(phases.test));
}

std::filesystem::path bold_file_name(const RunKey& key) {
  return "bold_ses-" + std::to_string(key.session) + "_run-" + std::to_string(key.run) + ".ndm";
}

void write_synth_output(const std::filesystem::path& dir, const SynthOutput& out) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_events_tsv(dir / "events.tsv", out.events);
  if (out.betas_train) write_matrix_file(dir / "train.ndm", out.betas_train->to_file());
  if (out.betas_test) write_matrix_file(dir / "test.ndm", out.betas_test->to_file());
  if (!out.bold.empty()) {
    fs::create_directories(dir / "bold");
    for (const auto& run : out.bold) {
      MatrixFile f{run.bold.cast<float>(), {}, nullptr};
      for (Eigen::Index t = 0; t < run.bold.rows(); ++t) f.row_ids.push_back(std::to_string(t));
      write_matrix_file(dir / "bold" / bold_file_name(run.key), f);
    }
  }
  write_matrix_file(dir / "true_train.ndm", out.true_train_betas.to_file());
  write_matrix_file(dir / "true_test.ndm", out.true_test_betas.to_file());
  write_matrix_file(dir / "features_vision.ndm", out.vision.to_file());
  write_matrix_file(dir / "features_language.ndm", out.language.to_file());
  write_matrix_file(dir / "features_multimodal.ndm", out.multimodal.to_file());
  {
    std::ofstream atlas(dir / "atlas.tsv", std::ios::binary | std::ios::trunc);
    atlas << format_atlas_tsv(out.atlas);
  }
  nlohmann::json manifest;
  manifest["config"] = out.config.to_json();
  manifest["tr"] = out.scan.tr;
  manifest["n_volumes_per_run"] = out.scan.n_volumes_per_run;
  manifest["n_runs"] = out.scan.runs.size();
  manifest["n_events"] = out.events.size();
  manifest["n_train_trials"] = out.truth.train_ids.size();
  manifest["n_test_stimuli"] = out.truth.test_ids.size();
  manifest["model_prefix"] = out.truth.model_prefix;
  const auto& b = out.truth.blocks;
  manifest["voxel_blocks"] = {
      {"amodal", {b.offset(VoxelBlock::Amodal), b.amodal}},
      {"vision_only", {b.offset(VoxelBlock::Vision), b.vision_only}},
      {"language_only", {b.offset(VoxelBlock::Language), b.language_only}},
      {"noise_only", {b.offset(VoxelBlock::Noise), b.noise_only}},
  };
  std::ofstream(dir / "truth.json", std::ios::trunc) << manifest.dump(2) << '\n';
}

OracleAccuracy oracle_accuracies(const SynthTruth& truth, const FeatureMatrix& feats,
                                 std::span<const std::string> test_ids, std::span<const VoxelBlock> blocks) {
  if (!feats.model_name().starts_with(truth.model_prefix))
    throw Error(ErrorCode::MismatchedProvenance, "features '" + feats.model_name() + "' were not generated with seed " +
                                                     std::to_string(truth.seed));
  const Eigen::Index expected = [&] {
    switch (feats.feature_modality()) {
      case FeatureModality::Vision: return truth.sem.cols() + truth.vis.cols();
      case FeatureModality::Language: return truth.sem.cols() + truth.lang.cols();
      case FeatureModality::MultimodalConcat: return 2 * truth.sem.cols() + truth.vis.cols() + truth.lang.cols();
    }
    return Eigen::Index{0};
  }();
  if (feats.dims() != expected) throw Error(ErrorCode::MismatchedProvenance, "feature dimensionality does not match truth");

  std::vector<Eigen::Index> voxels;
  const std::vector<VoxelBlock> all = {VoxelBlock::Amodal, VoxelBlock::Vision, VoxelBlock::Language, VoxelBlock::Noise};
  for (const auto b : blocks.empty() ? std::span<const VoxelBlock>(all) : blocks)
    for (int v = 0; v < truth.blocks.size(b); ++v) voxels.push_back(truth.blocks.offset(b) + v);

  std::map<std::string, std::string> pairing;
  for (std::size_t p = 0; p < truth.image_ids.size(); ++p) {
    pairing[truth.image_ids[p]] = truth.caption_ids[p];
    pairing[truth.caption_ids[p]] = truth.image_ids[p];
  }
  auto build = [&](std::span<const std::string> ids, Eigen::MatrixXd& X, Eigen::MatrixXd& Y, std::vector<Modality>& mods) {
    std::vector<StimulusEvent> stimuli;
    for (const auto& id : ids) {
      const auto where = truth.locate(id);
      if (!where) throw Error(ErrorCode::MismatchedProvenance, "unknown stimulus '" + id + "'");
      stimuli.push_back({id, where->second, 0.0, 1.0, 0, 0, Role::Test, pairing.at(id)});
      mods.push_back(where->second);
    }
    const FeatureMatrix targets = assign_targets(stimuli, feats, pairing);
    X.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(voxels.size()));
    Y = targets.values().cast<double>();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Eigen::VectorXd r = truth.response(ids[i]);
      for (std::size_t v = 0; v < voxels.size(); ++v) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(v)) = r(voxels[v]);
    }
  };

  Eigen::MatrixXd Xtr, Ytr, Xte, Yte;
  std::vector<Modality> train_mods, test_mods;
  build(truth.train_ids, Xtr, Ytr, train_mods);
  build(test_ids, Xte, Yte, test_mods);

  const Eigen::RowVectorXd x_mean = Xtr.colwise().mean();
  const Eigen::RowVectorXd y_mean = Ytr.colwise().mean();
  const Eigen::MatrixXd Xc = Xtr.rowwise() - x_mean;
  const Eigen::MatrixXd W = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(Xc).solve(Ytr.rowwise() - y_mean);
  const Eigen::MatrixXd preds = ((Xte.rowwise() - x_mean) * W).rowwise() + y_mean;

  const EvalReport report = evaluate_predictions(preds, Yte, test_mods, {1, 0, PairwiseVariant::OneVsTwo});
  return {report.acc_captions, report.acc_images, report.acc_overall};
}

double oracle_best_accuracy(const SynthTruth& truth, const FeatureMatrix& feats, std::span<const std::string> test_ids,
                            std::span<const VoxelBlock> blocks) {
  return oracle_accuracies(truth, feats, test_ids, blocks).overall;
}

}  // namespace neurodec
