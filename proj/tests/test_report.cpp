#include <fstream>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "neurodec/matrix_io.hpp"
#include "neurodec/report.hpp"
#include "neurodec/synth.hpp"

using namespace neurodec;
namespace fs = std::filesystem;

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

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// A synthetic dataset written to disk; returns the directory.
fs::path synth_dir(const std::string& name, const SynthConfig& cfg = small_config()) {
  const fs::path dir = testing::scratch_dir(name);
  write_synth_output(dir, generate(cfg));
  return dir;
}

nlohmann::json grid_plan(const fs::path& data, const fs::path& out) {
  return {{"dataset", data.string()},
          {"atlas", (data / "atlas.tsv").string()},
          {"features",
           {(data / "features_vision.ndm").string(), (data / "features_language.ndm").string(),
            (data / "features_multimodal.ndm").string()}},
          {"modes", {"agnostic", "image", "caption"}},
          {"rois", {"whole", "low", "high", "language"}},
          {"cv", {{"alphas", {1e3, 1e4, 1e5, 1e6, 1e7}}, {"folds", 5}, {"seed", 17}}},
          {"bootstrap", {{"n", 100}, {"seed", 3}}},
          {"output_dir", out.string()}};
}

}  // namespace

TEST_CASE("plan parsing") {
  const fs::path data = synth_dir("report_parse");
  SUBCASE("grid expands features x modes x rois") {
    const RunPlan p = RunPlan::from_json(grid_plan(data, data / "out"));
    CHECK(p.tuples.size() == 36);
    CHECK(p.cv.alpha_grid == std::vector<double>{1e3, 1e4, 1e5, 1e6, 1e7});
    CHECK(p.bootstrap.n_boot == 100);
    CHECK_NOTHROW(p.validate());
  }
  SUBCASE("defaults and relative paths") {
    const nlohmann::json j = {{"dataset", "."}, {"features", {"features_vision.ndm"}}, {"output_dir", "out"}};
    {
      std::ofstream f(data / "plan.json");
      f << j.dump();
    }
    const RunPlan p = RunPlan::load(data / "plan.json");
    REQUIRE(p.tuples.size() == 3);
    CHECK(p.tuples[0].features == data / "features_vision.ndm");
    CHECK(p.tuples[0].roi == PlanRoi::Whole);
    CHECK(p.tuples[1].mode == TrainingMode::ImageOnly);
    CHECK(p.output_dir == data / "out");
    CHECK(p.cv.alpha_grid == CvConfig{}.alpha_grid);
    CHECK_NOTHROW(p.validate());
  }
  SUBCASE("explicit tuples") {
    const nlohmann::json j = {{"dataset", data.string()},
                              {"atlas", (data / "atlas.tsv").string()},
                              {"tuples", {{{"features", (data / "features_vision.ndm").string()}, {"mode", "image"}, {"roi", "low"}}}},
                              {"bootstrap", {{"variant", "2v2"}}},
                              {"output_dir", "o"}};
    const RunPlan p = RunPlan::from_json(j);
    REQUIRE(p.tuples.size() == 1);
    CHECK(p.tuples[0].roi == PlanRoi::Low);
    CHECK(p.bootstrap.variant == PairwiseVariant::TwoVsTwo);
  }
  SUBCASE("malformed plans") {
    CHECK_THROWS_CODE(RunPlan::from_json(nlohmann::json::array()), ErrorCode::InvalidPlan);
    CHECK_THROWS_CODE(RunPlan::from_json({{"dataset", "."}}), ErrorCode::InvalidPlan);
    nlohmann::json j = grid_plan(data, data / "out");
    j["rois"] = {"cerebellum"};
    CHECK_THROWS_CODE(RunPlan::from_json(j), ErrorCode::InvalidPlan);
    j = grid_plan(data, data / "out");
    j["modes"] = {"smell"};
    CHECK_THROWS_CODE(RunPlan::from_json(j), ErrorCode::InvalidPlan);
    j = grid_plan(data, data / "out");
    j["bootstrap"]["variant"] = "3v3";
    CHECK_THROWS_CODE(RunPlan::from_json(j), ErrorCode::InvalidPlan);
    CHECK_THROWS_CODE(RunPlan::load(data / "absent.json"), ErrorCode::IoError);
  }
  SUBCASE("validation") {
    auto invalid = [&](auto mutate) {
      RunPlan p = RunPlan::from_json(grid_plan(data, data / "out"));
      mutate(p);
      CHECK_THROWS_CODE(p.validate(), ErrorCode::InvalidPlan);
    };
    invalid([](RunPlan& p) { p.tuples.clear(); });
    invalid([](RunPlan& p) { p.tuples.push_back(p.tuples.front()); });
    invalid([&](RunPlan& p) { p.tuples[0].features = data / "missing.ndm"; });
    invalid([&](RunPlan& p) { p.dataset_dir = data / "nowhere"; });
    invalid([&](RunPlan& p) { p.atlas = data / "no_atlas.tsv"; });
    invalid([](RunPlan& p) { p.cv.alpha_grid = {1e4, 1e3}; });
    invalid([](RunPlan& p) { p.cv.n_folds = 1; });
    invalid([](RunPlan& p) { p.bootstrap.n_boot = 0; });
    invalid([](RunPlan& p) { p.output_dir.clear(); });
    invalid([&](RunPlan& p) {
      fs::create_directories(data / "copy");
      fs::copy_file(data / "features_vision.ndm", data / "copy" / "features_vision.ndm", fs::copy_options::overwrite_existing);
      p.tuples.push_back({data / "copy" / "features_vision.ndm", TrainingMode::Agnostic, PlanRoi::Whole});
    });
    RunPlan whole_only = RunPlan::from_json(grid_plan(data, data / "out"));
    whole_only.atlas.clear();
    std::erase_if(whole_only.tuples, [](const PlanTuple& t) { return t.roi != PlanRoi::Whole; });
    CHECK_NOTHROW(whole_only.validate());
  }
  CHECK(parse_plan_roi("whole") == PlanRoi::Whole);
  CHECK_THROWS_CODE(parse_plan_roi("everything"), ErrorCode::UnknownRoi);
}

TEST_CASE("full grid run writes every artifact") {
  const fs::path data = synth_dir("report_grid");
  const fs::path out = data / "out";
  const RunPlan plan = RunPlan::from_json(grid_plan(data, out));
  const RunManifest m = run_plan(plan, 1);

  REQUIRE(m.results.size() == 36);
  CHECK(m.n_ok() == 36);
  CHECK(m.exit_code() == 0);
  std::size_t reports = 0;
  for (const auto& e : fs::directory_iterator(out / "reports")) reports += e.path().extension() == ".json";
  CHECK(reports == 36);
  for (const char* roi : {"whole", "low", "high", "language"}) {
    const std::string svg = slurp(out / (std::string("accuracy_") + roi + ".svg"));
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("<circle") != std::string::npos);
    CHECK(svg.find("stroke-dasharray") != std::string::npos);
  }

  // Manifest: every tuple once, in plan order, with a known status.
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  REQUIRE(manifest["tuples"].size() == 36);
  for (std::size_t i = 0; i < 36; ++i) {
    CHECK(manifest["tuples"][i]["status"] == "ok");
    CHECK(manifest["tuples"][i]["roi"] == std::string(to_string(plan.tuples[i].roi)));
  }

  // CSV values equal the report files exactly.
  const std::string csv = slurp(out / "results.csv");
  CHECK(csv == results_csv(m));
  const auto rows = read_csv(csv);
  REQUIRE(rows.size() == 37);
  CHECK(rows[0] == std::vector<std::string>{"model", "feature_modality", "mode", "roi", "acc_captions", "acc_images",
                                            "acc_overall", "ci95_captions_lo", "ci95_captions_hi", "ci95_images_lo",
                                            "ci95_images_hi", "ci95_overall_lo", "ci95_overall_hi"});
  for (std::size_t i = 0; i < 36; ++i) {
    const auto& row = rows[i + 1];
    REQUIRE(row.size() == 13);
    const auto j = nlohmann::json::parse(slurp(m.results[i].report_path));
    const EvalReport r = EvalReport::from_json(j);
    CHECK(row[0] == j["model"]);
    CHECK(row[1] == j["feature_modality"]);
    CHECK(row[2] == j["mode"]);
    CHECK(row[3] == j["roi"]);
    const double expect[] = {r.acc_captions,     r.acc_images,     r.acc_overall,    r.ci95_captions.lo, r.ci95_captions.hi,
                             r.ci95_images.lo,   r.ci95_images.hi, r.ci95_overall.lo, r.ci95_overall.hi};
    for (std::size_t c = 0; c < 9; ++c) CHECK(std::stod(row[4 + c]) == expect[c]);
    CHECK(j["decoder_meta"]["roi"] == row[3]);
  }

  SUBCASE("rerun is bit-identical, also with several workers") {
    RunPlan again = plan;
    again.output_dir = data / "out2";
    run_plan(again, 1);
    CHECK(slurp(again.output_dir / "results.csv") == csv);
    again.output_dir = data / "out3";
    run_plan(again, 3);
    CHECK(slurp(again.output_dir / "results.csv") == csv);
    for (const auto& e : fs::directory_iterator(out / "reports"))
      CHECK(slurp(e.path()) == slurp(again.output_dir / "reports" / e.path().filename()));
  }
}

TEST_CASE("failing tuples are isolated") {
  const fs::path data = synth_dir("report_partial");
  {
    std::ofstream f(data / "broken.ndm", std::ios::binary);
    f << "not a matrix";
  }
  nlohmann::json j = grid_plan(data, data / "out");
  j["features"] = {(data / "features_multimodal.ndm").string(), (data / "broken.ndm").string()};
  j["modes"] = {"agnostic"};
  j["rois"] = {"whole", "high"};
  const RunManifest m = run_plan(RunPlan::from_json(j), 2);
  REQUIRE(m.results.size() == 4);
  CHECK(m.results[0].ok());
  CHECK(m.results[1].ok());
  CHECK(m.results[2].status == "failed:FormatError");
  CHECK(m.results[3].status == "failed:FormatError");
  CHECK(m.exit_code() == 2);
  CHECK(read_csv(slurp(data / "out" / "results.csv")).size() == 3);
  const auto manifest = nlohmann::json::parse(slurp(data / "out" / "manifest.json"));
  CHECK(manifest["n_ok"] == 2);
  CHECK(manifest["n_failed"] == 2);

  SUBCASE("an atlas without matching labels fails only the ROI tuples") {
    {
      std::ofstream f(data / "atlas_other.tsv");
      f << "0\tL 29\tG_precentral\n";
    }
    j["atlas"] = (data / "atlas_other.tsv").string();
    j["features"] = {(data / "features_multimodal.ndm").string()};
    const RunManifest r = run_plan(RunPlan::from_json(j), 1);
    CHECK(r.results[0].ok());
    CHECK(r.results[1].status == "failed:EmptyMask");
    CHECK(r.exit_code() == 2);
  }
  SUBCASE("nothing succeeds") {
    j["features"] = {(data / "broken.ndm").string()};
    CHECK(run_plan(RunPlan::from_json(j), 1).exit_code() == 1);
  }
}

TEST_CASE("report file names and worker cap") {
  CHECK(report_file_name("synth1-vision", TrainingMode::ImageOnly, PlanRoi::Low) == "synth1-vision__image__low.json");
  CHECK(report_file_name("a/b c", TrainingMode::Agnostic, PlanRoi::Whole) == "a_b_c__agnostic__whole.json");
  setenv("NEURODEC_WORKERS", "3", 1);
  CHECK(worker_count() == 3);
  setenv("NEURODEC_WORKERS", "0", 1);
  CHECK(worker_count() == 1);
  unsetenv("NEURODEC_WORKERS");
  CHECK(worker_count() == 1);
}

TEST_CASE("pooling comparison") {
  const EvalOptions boot{100, 5, PairwiseVariant::OneVsTwo};
  const SynthOutput out = generate(small_config(1, 1.0));
  const Dataset ds = out.dataset();

  const auto rows = compare_pooling(out.multimodal, out.multimodal, ds, CvConfig{}, boot);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].pooling == "mean");
  CHECK(rows[1].pooling == "cls");
  CHECK(rows[0].report.to_json() == rows[1].report.to_json());
  const auto csv = read_csv(pooling_csv(rows));
  REQUIRE(csv.size() == 3);
  CHECK(csv[0][0] == "model");
  CHECK(csv[0][1] == "pooling");
  CHECK(csv[1][0] == out.multimodal.model_name());
  CHECK(csv[1][1] == "mean");
  CHECK(csv[2][1] == "cls");

  CHECK_THROWS_CODE(compare_pooling(out.vision, out.language, ds, CvConfig{}, boot), ErrorCode::AlignmentMismatch);
  const FeatureMatrix relabeled(out.vision.values(), out.vision.stimulus_ids(), out.vision.model_name(),
                                FeatureModality::Language);
  CHECK_THROWS_CODE(compare_pooling(out.vision, relabeled, ds, CvConfig{}, boot), ErrorCode::AlignmentMismatch);

  SUBCASE("clean features beat a noise-corrupted copy") {
    double clean = 0.0, corrupted = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const SynthOutput s = generate(small_config(seed, 1.0));
      std::mt19937_64 rng(seed + 1000);
      const MatrixF noisy = s.multimodal.values() + testing::random_matrix(rng, s.multimodal.rows(), s.multimodal.dims(), 0.3).cast<float>();
      const FeatureMatrix copy(noisy, s.multimodal.stimulus_ids(), s.multimodal.model_name(), s.multimodal.feature_modality());
      const auto r = compare_pooling(s.multimodal, copy, s.dataset(), CvConfig{}, boot);
      clean += r[0].report.acc_overall;
      corrupted += r[1].report.acc_overall;
    }
    CHECK(clean >= corrupted);
    MESSAGE("clean ", clean / 10, " corrupted ", corrupted / 10);
  }
}
