#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "neurodec/eval.hpp"
#include "neurodec/matrix_io.hpp"
#include "neurodec/ridge.hpp"
#include "neurodec/synth.hpp"

using namespace neurodec;

namespace {

SynthConfig small_config(std::uint64_t seed = 1, double noise = 0.5) {
  SynthConfig cfg;
  cfg.n_train = 120;
  cfg.n_test = 16;
  cfg.voxel_blocks = {40, 40, 40, 40};
  cfg.noise_sigma = noise;
  cfg.seed = seed;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

EvalReport decode(const SynthOutput& out, const Dataset& ds, const FeatureMatrix& feats, TrainingMode mode) {
  const RidgeDecoder d = train_decoder(ds, assign_targets(ds, feats), mode, CvConfig{});
  return evaluate(d, ds, feats, 1, 0);
}

EvalReport decode_roi(const SynthOutput& out, RoiName roi) {
  const Dataset ds = out.dataset();
  return decode(out, mask_dataset(ds, build_mask(load_roi_definition(roi), out.atlas, roi)), out.multimodal,
                TrainingMode::Agnostic);
}

}  // namespace

TEST_CASE("generation is bit-identical for a fixed seed") {
  const SynthConfig cfg = small_config(5);
  const SynthOutput a = generate(cfg);
  const SynthOutput b = generate(cfg);
  CHECK(format_events_tsv(a.events) == format_events_tsv(b.events));
  CHECK(encode_matrix_file(a.betas_train->to_file()) == encode_matrix_file(b.betas_train->to_file()));
  CHECK(encode_matrix_file(a.betas_test->to_file()) == encode_matrix_file(b.betas_test->to_file()));
  CHECK(encode_matrix_file(a.multimodal.to_file()) == encode_matrix_file(b.multimodal.to_file()));
  CHECK(a.truth.w_amodal == b.truth.w_amodal);

  const auto d1 = testing::scratch_dir("synth_det1");
  const auto d2 = testing::scratch_dir("synth_det2");
  write_synth_output(d1, a);
  write_synth_output(d2, b);
  for (const auto& e : std::filesystem::directory_iterator(d1)) {
    REQUIRE(std::filesystem::exists(d2 / e.path().filename()));
    CHECK_MESSAGE(slurp(e.path()) == slurp(d2 / e.path().filename()), e.path().filename().string());
  }

  const SynthOutput other = generate(small_config(6));
  CHECK(other.truth.w_amodal != a.truth.w_amodal);
}

TEST_CASE("default configuration is deterministic") {
  SynthConfig cfg;
  cfg.noise_sigma = 0.5;
  const SynthOutput a = generate(cfg);
  const SynthOutput b = generate(cfg);
  CHECK(a.betas_train->values() == b.betas_train->values());
  CHECK(a.betas_test->values() == b.betas_test->values());
  CHECK(a.betas_train->rows() == 400);
  CHECK(a.betas_test->rows() == 40);
  CHECK(a.betas_train->cols() == 800);
}

TEST_CASE("zero-noise betas equal the forward model") {
  const SynthOutput out = generate(small_config(3, 0.0));
  REQUIRE(out.betas_train);
  CHECK(out.betas_train->values() == out.true_train_betas.values());
  CHECK(out.betas_test->values() == out.true_test_betas.values());
  const auto& blocks = out.truth.blocks;
  for (Eigen::Index r = 0; r < out.betas_train->rows(); ++r) {
    const std::string& id = out.betas_train->trial_ids()[static_cast<std::size_t>(r)];
    const Eigen::VectorXd expect = out.truth.response(id);
    CHECK(out.true_train_betas.values().row(r).transpose() == expect.cast<float>());
    // Noise block silent; the other modality's private block silent.
    CHECK(out.true_train_betas.values().row(r).segment(blocks.offset(VoxelBlock::Noise), blocks.noise_only).isZero(0.0));
    const bool image = out.truth.locate(id)->second == Modality::Image;
    const VoxelBlock silent = image ? VoxelBlock::Language : VoxelBlock::Vision;
    CHECK(out.true_train_betas.values().row(r).segment(blocks.offset(silent), blocks.size(silent)).isZero(0.0));
  }
}

TEST_CASE("noise block is Gaussian with the configured sigma") {
  SynthConfig cfg = small_config(4, 0.8);
  cfg.voxel_blocks = {20, 20, 20, 400};
  const SynthOutput out = generate(cfg);
  const auto& b = out.truth.blocks;
  const Eigen::MatrixXd noise =
      out.betas_train->values().middleCols(b.offset(VoxelBlock::Noise), b.noise_only).cast<double>();
  const double mean = noise.mean();
  const double sd = std::sqrt((noise.array() - mean).square().mean());
  CHECK(std::abs(mean) < 0.01);
  CHECK(sd == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("latents are unit norm and features follow the block layout") {
  const SynthOutput out = generate(small_config(2, 0.0));
  const auto& t = out.truth;
  for (const Eigen::MatrixXd* m : {&t.sem, &t.vis, &t.lang})
    for (Eigen::Index r = 0; r < m->rows(); ++r) CHECK(m->row(r).norm() == doctest::Approx(1.0).epsilon(1e-12));
  const auto& cfg = out.config;
  CHECK(out.vision.dims() == cfg.d_sem + cfg.d_vis);
  CHECK(out.language.dims() == cfg.d_sem + cfg.d_lang);
  CHECK(out.multimodal.dims() == out.vision.dims() + out.language.dims());
  CHECK(out.vision.feature_modality() == FeatureModality::Vision);
  CHECK(out.language.feature_modality() == FeatureModality::Language);
  CHECK(out.multimodal.feature_modality() == FeatureModality::MultimodalConcat);
  CHECK(out.vision.model_name().rfind(t.model_prefix, 0) == 0);
  for (std::size_t p = 0; p < t.image_ids.size(); ++p) {
    const auto pi = static_cast<Eigen::Index>(p);
    const auto vr = *out.vision.row_of(t.image_ids[p]);
    const auto lr = *out.language.row_of(t.caption_ids[p]);
    CHECK(out.vision.values().row(vr).head(cfg.d_sem).cast<double>().isApprox(t.sem.row(pi), 1e-6));
    CHECK(out.vision.values().row(vr).tail(cfg.d_vis).cast<double>().isApprox(t.vis.row(pi), 1e-6));
    CHECK(out.language.values().row(lr).tail(cfg.d_lang).cast<double>().isApprox(t.lang.row(pi), 1e-6));
  }
}

TEST_CASE("schedule produces the configured trial counts") {
  const SynthConfig cfg = small_config(1);
  const SynthOutput out = generate(cfg);
  const Dataset ds = out.dataset();
  CHECK(ds.betas_train().rows() == cfg.n_train);
  CHECK(ds.betas_test().rows() == cfg.n_test);
  CHECK(select_modality(ds, Modality::Image).betas_train().rows() == cfg.n_train / 2);
  CHECK(ds.pairing().size() == static_cast<std::size_t>(cfg.n_train + cfg.n_test));
  int fixations = 0;
  for (const auto& e : out.events) fixations += e.role == Role::Fixation;
  CHECK(fixations > 0);
  CHECK_NOTHROW(validate_events(out.events));
}

TEST_CASE("invalid configurations are rejected") {
  auto bad = [](auto mutate) {
    SynthConfig c = small_config();
    mutate(c);
    CHECK_THROWS_CODE(generate(c), ErrorCode::InvalidConfig);
  };
  bad([](SynthConfig& c) { c.n_test = 15; });
  bad([](SynthConfig& c) { c.n_test = 0; });
  bad([](SynthConfig& c) { c.d_sem = 0; });
  bad([](SynthConfig& c) { c.d_vis = -1; });
  bad([](SynthConfig& c) { c.voxel_blocks = {0, 0, 0, 50}; });
  bad([](SynthConfig& c) { c.voxel_blocks.amodal = -3; });
  bad([](SynthConfig& c) { c.noise_sigma = -0.1; });
  bad([](SynthConfig& c) { c.noise_sigma = std::nan(""); });
  bad([](SynthConfig& c) { c.scan.tr = 0.0; });
  CHECK_THROWS_CODE(SynthConfig::from_json(nlohmann::json{{"voxel_blocks", {1, 2}}}), ErrorCode::InvalidConfig);
  CHECK_THROWS_CODE(SynthConfig::from_json(nlohmann::json{{"n_train", "many"}}), ErrorCode::InvalidConfig);
}

TEST_CASE("config JSON round trip") {
  SynthConfig c = small_config(99, 0.25);
  c.bold_mode = true;
  c.test_repeats = 3;
  const SynthConfig back = SynthConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  const SynthConfig arr = SynthConfig::from_json(nlohmann::json{{"voxel_blocks", {1, 2, 3, 4}}});
  CHECK(arr.voxel_blocks.amodal == 1);
  CHECK(arr.voxel_blocks.noise_only == 4);
  CHECK(SynthConfig::from_json(nlohmann::json::object()).to_json() == SynthConfig{}.to_json());
}

TEST_CASE("written output reloads") {
  SynthConfig cfg = small_config(8, 0.0);
  const SynthOutput out = generate(cfg);
  const auto dir = testing::scratch_dir("synth_write");
  write_synth_output(dir, out);
  for (const char* f : {"events.tsv", "train.ndm", "test.ndm", "true_train.ndm", "true_test.ndm", "features_vision.ndm",
                        "features_language.ndm", "features_multimodal.ndm", "atlas.tsv", "truth.json"})
    CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
  const Dataset ds = load_dataset_dir(dir);
  CHECK(ds.betas_train().values() == out.betas_train->values());
  CHECK(read_atlas_tsv(dir / "atlas.tsv").size() == out.atlas.size());
  const FeatureMatrix mm = FeatureMatrix::from_file(read_matrix_file(dir / "features_multimodal.ndm"));
  CHECK(mm.model_name() == out.multimodal.model_name());
  CHECK(mm.feature_modality() == FeatureModality::MultimodalConcat);
  CHECK(mm.values() == out.multimodal.values());

  cfg.bold_mode = true;
  cfg.n_train = 40;
  cfg.stimuli_per_run = 20;
  const auto bdir = testing::scratch_dir("synth_write_bold");
  const SynthOutput bold = generate(cfg);
  write_synth_output(bdir, bold);
  for (const auto& r : bold.bold) CHECK(std::filesystem::exists(bdir / "bold" / bold_file_name(r.key)));
  CHECK(!std::filesystem::exists(bdir / "train.ndm"));
}

TEST_CASE("atlas labels select the voxel blocks") {
  const SynthOutput out = generate(small_config());
  const auto& b = out.truth.blocks;
  auto block_ids = [&](VoxelBlock blk) {
    std::vector<VoxelId> ids;
    for (int i = 0; i < b.size(blk); ++i) ids.push_back(static_cast<VoxelId>(b.offset(blk) + i));
    return ids;
  };
  CHECK(build_mask(load_roi_definition(RoiName::HighLevelVisual), out.atlas).voxel_ids == block_ids(VoxelBlock::Amodal));
  CHECK(build_mask(load_roi_definition(RoiName::LowLevelVisual), out.atlas).voxel_ids == block_ids(VoxelBlock::Vision));
  CHECK(build_mask(load_roi_definition(RoiName::Language), out.atlas).voxel_ids == block_ids(VoxelBlock::Language));
}

TEST_CASE("oracle accuracy") {
  const SynthOutput out = generate(small_config(1, 0.0));
  CHECK(oracle_best_accuracy(out.truth, out.multimodal, out.truth.test_ids) == 1.0);
  const OracleAccuracy o = oracle_accuracies(out.truth, out.vision, out.truth.test_ids);
  CHECK(o.images == 1.0);
  CHECK(o.captions == 1.0);

  SUBCASE("noise-only block is at chance") {
    const std::vector<VoxelBlock> noise{VoxelBlock::Noise};
    double sum = 0.0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      const SynthOutput s = generate(small_config(seed, 1.0));
      sum += oracle_best_accuracy(s.truth, s.multimodal, s.truth.test_ids, noise);
    }
    CHECK(std::abs(sum / 50 - 0.5) <= 0.05);
  }
  SUBCASE("features from another generator are rejected") {
    const SynthOutput other = generate(small_config(2, 0.0));
    CHECK_THROWS_CODE(oracle_best_accuracy(out.truth, other.multimodal, out.truth.test_ids), ErrorCode::MismatchedProvenance);
    const std::vector<std::string> stray{"img-nowhere"};
    CHECK_THROWS_CODE(oracle_best_accuracy(out.truth, out.multimodal, stray), ErrorCode::MismatchedProvenance);
  }
}

TEST_CASE("trained decoders do not beat the oracle") {
  for (const double noise : {0.0, 0.5, 1.0}) {
    for (const bool bold : {false, true}) {
      SynthConfig cfg = small_config(11, noise);
      cfg.bold_mode = bold;
      const SynthOutput out = generate(cfg);
      const Dataset ds = out.dataset();
      for (const FeatureMatrix* f : {&out.vision, &out.language, &out.multimodal}) {
        const OracleAccuracy o = oracle_accuracies(out.truth, *f, out.truth.test_ids);
        const EvalReport r = decode(out, ds, *f, TrainingMode::Agnostic);
        CHECK(r.acc_overall <= o.overall + 0.02);
        CHECK(r.acc_images <= o.images + 0.02);
        CHECK(r.acc_captions <= o.captions + 0.02);
      }
    }
  }
}

TEST_CASE("zero-noise data is decoded perfectly in BOLD mode") {
  SynthConfig cfg = small_config(12, 0.0);
  cfg.bold_mode = true;
  const SynthOutput out = generate(cfg);
  const EvalReport r = decode(out, out.dataset(), out.multimodal, TrainingMode::Agnostic);
  CHECK(r.acc_captions == 1.0);
  CHECK(r.acc_images == 1.0);
}

TEST_CASE("ROI decoders follow the block structure at default noise") {
  SynthConfig cfg;
  cfg.seed = 3;
  const SynthOutput out = generate(cfg);
  const EvalReport high = decode_roi(out, RoiName::HighLevelVisual);
  const EvalReport low = decode_roi(out, RoiName::LowLevelVisual);
  const EvalReport lang = decode_roi(out, RoiName::Language);
  CHECK(high.acc_images > 0.9);
  CHECK(high.acc_captions > 0.9);
  CHECK(low.acc_images > 0.9);
  CHECK(low.acc_captions < 0.7);
  CHECK(lang.acc_captions > 0.9);
  CHECK(lang.acc_images < 0.7);
}

TEST_CASE("accuracy does not increase with noise") {
  const std::vector<double> levels{0.0, 0.25, 0.5, 1.0, 2.0};
  std::vector<double> mean(levels.size(), 0.0);
  const int seeds = 10;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    for (int s = 1; s <= seeds; ++s) {
      SynthConfig cfg;
      cfg.seed = static_cast<std::uint64_t>(s);
      cfg.noise_sigma = levels[i];
      const SynthOutput out = generate(cfg);
      mean[i] += decode(out, out.dataset(), out.multimodal, TrainingMode::Agnostic).acc_overall / seeds;
    }
  }
  for (std::size_t i = 1; i < levels.size(); ++i)
    CHECK_MESSAGE(mean[i] <= mean[i - 1] + 0.02, "noise ", levels[i], ": ", mean[i], " vs ", mean[i - 1]);
  CHECK(mean.front() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mean.back() < mean.front());
}
