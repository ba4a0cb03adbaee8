#include "neurodec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "neurodec/error.hpp"
#include "neurodec/random.hpp"

namespace neurodec {
namespace {

std::optional<Eigen::Index> target_row(const FeatureMatrix& feats, const std::string& id, Modality modality,
                                       const std::map<std::string, std::string>& pairing) {
  const auto paired = [&]() -> std::optional<Eigen::Index> {
    const auto it = pairing.find(id);
    if (it == pairing.end() || it->second.empty()) return std::nullopt;
    return feats.row_of(it->second);
  };
  switch (feats.feature_modality()) {
    case FeatureModality::Vision: return modality == Modality::Image ? feats.row_of(id) : paired();
    case FeatureModality::Language: return modality == Modality::Caption ? feats.row_of(id) : paired();
    case FeatureModality::MultimodalConcat:
      if (auto own = feats.row_of(id)) return own;
      return paired();
  }
  return std::nullopt;
}

Interval percentile_interval(const std::vector<double>& samples, double point) {
  Interval ci{quantile(samples, 0.025), quantile(samples, 0.975)};
  // Percentile intervals need not cover the point estimate; widen so they do.
  ci.lo = std::min(ci.lo, point);
  ci.hi = std::max(ci.hi, point);
  return ci;
}

std::string variant_name(PairwiseVariant v) { return v == PairwiseVariant::OneVsTwo ? "1v2" : "2v2"; }

}  // namespace

FeatureMatrix assign_targets(std::span<const StimulusEvent> stimuli, const FeatureMatrix& feats,
                             const std::map<std::string, std::string>& pairing) {
  std::vector<std::string> ids;
  std::vector<Eigen::Index> rows;
  std::set<std::string, std::less<>> seen;
  for (const auto& e : stimuli) {
    if ((e.role != Role::Train && e.role != Role::Test) || !e.modality) continue;
    if (!seen.insert(e.stimulus_id).second) continue;
    const auto row = target_row(feats, e.stimulus_id, *e.modality, pairing);
    if (!row)
      throw Error(ErrorCode::MissingTarget, "no " + std::string(to_string(feats.feature_modality())) +
                                                " features for stimulus '" + e.stimulus_id + "'");
    ids.push_back(e.stimulus_id);
    rows.push_back(*row);
  }
  MatrixF values(static_cast<Eigen::Index>(rows.size()), feats.dims());
  for (std::size_t i = 0; i < rows.size(); ++i) values.row(static_cast<Eigen::Index>(i)) = feats.values().row(rows[i]);
  return FeatureMatrix(std::move(values), std::move(ids), feats.model_name(), feats.feature_modality());
}

FeatureMatrix assign_targets(const Dataset& ds, const FeatureMatrix& feats) {
  return assign_targets(ds.events(), feats, ds.pairing());
}

double cosine_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "cosine distance of vectors with different sizes");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorCode::ZeroVector, "cosine distance with a zero vector");
  return 1.0 - a.dot(b) / (na * nb);
}

Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets) {
  if (preds.rows() != targets.rows() || preds.cols() != targets.cols())
    throw Error(ErrorCode::ShapeMismatch, "predictions and targets are not aligned");
  const Eigen::Index n = preds.rows();
  Eigen::MatrixXd D(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) D(i, j) = cosine_distance(preds.row(i).transpose(), targets.row(j).transpose());
  return D;
}

double pairwise_accuracy_subset(const Eigen::MatrixXd& D, std::span<const Eigen::Index> sample,
                                PairwiseVariant variant) {
  double score = 0.0;
  std::size_t pairs = 0;
  const std::size_t n = sample.size();
  for (std::size_t a = 0; a < n; ++a) {
    const Eigen::Index i = sample[a];
    for (std::size_t b = variant == PairwiseVariant::OneVsTwo ? 0 : a + 1; b < n; ++b) {
      const Eigen::Index j = sample[b];
      if (a == b || i == j) continue;
      const double own = variant == PairwiseVariant::OneVsTwo ? D(i, i) : D(i, i) + D(j, j);
      const double other = variant == PairwiseVariant::OneVsTwo ? D(i, j) : D(i, j) + D(j, i);
      score += own < other ? 1.0 : (own == other ? 0.5 : 0.0);
      ++pairs;
    }
  }
  return pairs == 0 ? std::numeric_limits<double>::quiet_NaN() : score / static_cast<double>(pairs);
}

double pairwise_accuracy(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets, PairwiseVariant variant) {
  if (preds.rows() < 2) throw Error(ErrorCode::TooFewRows, "pairwise accuracy needs at least 2 rows");
  const Eigen::MatrixXd D = distance_matrix(preds, targets);
  std::vector<Eigen::Index> all(static_cast<std::size_t>(preds.rows()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  return pairwise_accuracy_subset(D, all, variant);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::TooFewRows, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["acc_captions"] = acc_captions;
  j["acc_images"] = acc_images;
  j["acc_overall"] = acc_overall;
  j["ci95_captions"] = {ci95_captions.lo, ci95_captions.hi};
  j["ci95_images"] = {ci95_images.lo, ci95_images.hi};
  j["ci95_overall"] = {ci95_overall.lo, ci95_overall.hi};
  j["n_test"] = n_test;
  j["decoder_meta"] = decoder_meta;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.acc_captions = j.at("acc_captions").get<double>();
  r.acc_images = j.at("acc_images").get<double>();
  r.acc_overall = j.at("acc_overall").get<double>();
  auto interval = [&](const char* key) { return Interval{j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()}; };
  r.ci95_captions = interval("ci95_captions");
  r.ci95_images = interval("ci95_images");
  r.ci95_overall = interval("ci95_overall");
  r.n_test = j.at("n_test").get<int>();
  r.decoder_meta = j.value("decoder_meta", std::map<std::string, std::string>{});
  return r;
}

EvalReport evaluate_predictions(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& targets,
                                std::span<const Modality> modalities, const EvalOptions& options) {
  if (options.n_boot < 1) throw Error(ErrorCode::InvalidConfig, "bootstrap count must be at least 1");
  if (static_cast<Eigen::Index>(modalities.size()) != preds.rows())
    throw Error(ErrorCode::ShapeMismatch, "one modality label per test row required");

  struct Group {
    Eigen::MatrixXd distances;
    double point = 0.0;
    std::vector<double> boot;
  };
  auto make_group = [&](Modality m) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < modalities.size(); ++i)
      if (modalities[i] == m) rows.push_back(static_cast<Eigen::Index>(i));
    if (rows.size() < 2)
      throw Error(ErrorCode::TooFewRows, "fewer than 2 " + std::string(to_string(m)) + " test stimuli");
    Eigen::MatrixXd p(static_cast<Eigen::Index>(rows.size()), preds.cols());
    Eigen::MatrixXd t(static_cast<Eigen::Index>(rows.size()), targets.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      p.row(static_cast<Eigen::Index>(i)) = preds.row(rows[i]);
      t.row(static_cast<Eigen::Index>(i)) = targets.row(rows[i]);
    }
    Group g;
    g.distances = distance_matrix(p, t);
    std::vector<Eigen::Index> all(rows.size());
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    g.point = pairwise_accuracy_subset(g.distances, all, options.variant);
    return g;
  };

  Group captions = make_group(Modality::Caption);
  Group images = make_group(Modality::Image);

  std::vector<double> overall_boot;
  overall_boot.reserve(static_cast<std::size_t>(options.n_boot));
  for (int b = 0; b < options.n_boot; ++b) {
    std::mt19937_64 rng(mix_seed(options.seed, static_cast<std::uint64_t>(b)));
    double means[2];
    Group* groups[2] = {&captions, &images};
    for (int g = 0; g < 2; ++g) {
      const auto n = static_cast<std::uint64_t>(groups[g]->distances.rows());
      std::vector<Eigen::Index> sample(n);
      for (auto& s : sample) s = static_cast<Eigen::Index>(rng() % n);
      double acc = pairwise_accuracy_subset(groups[g]->distances, sample, options.variant);
      if (std::isnan(acc)) acc = groups[g]->point;  // resample drew a single stimulus
      groups[g]->boot.push_back(acc);
      means[g] = acc;
    }
    overall_boot.push_back((means[0] + means[1]) / 2.0);
  }

  EvalReport report;
  report.acc_captions = captions.point;
  report.acc_images = images.point;
  report.acc_overall = (captions.point + images.point) / 2.0;
  report.ci95_captions = percentile_interval(captions.boot, report.acc_captions);
  report.ci95_images = percentile_interval(images.boot, report.acc_images);
  report.ci95_overall = percentile_interval(overall_boot, report.acc_overall);
  report.n_test = static_cast<int>(preds.rows());
  report.decoder_meta["ci_method"] = "percentile bootstrap over test items, stratified by modality";
  report.decoder_meta["n_boot"] = std::to_string(options.n_boot);
  report.decoder_meta["boot_seed"] = std::to_string(options.seed);
  report.decoder_meta["pairwise_variant"] = variant_name(options.variant);
  return report;
}

EvalReport evaluate(const RidgeDecoder& d, const Dataset& ds, const FeatureMatrix& feats, int boot,
                    std::uint64_t seed, PairwiseVariant variant) {
  const auto& test = ds.betas_test();
  if (test.rows() == 0) throw Error(ErrorCode::TooFewRows, "test set is empty");
  if (!d.voxel_ids.empty() && d.voxel_ids != test.voxel_ids())
    throw Error(ErrorCode::ShapeMismatch, "decoder and test betas cover different voxels");

  const FeatureMatrix targets = assign_targets(ds, feats);
  Eigen::MatrixXd Y(test.rows(), targets.dims());
  std::vector<Modality> modalities;
  for (Eigen::Index r = 0; r < test.rows(); ++r) {
    const auto& id = test.trial_ids()[static_cast<std::size_t>(r)];
    const auto row = targets.row_of(id);
    if (!row) throw Error(ErrorCode::MissingTarget, "no target for test stimulus '" + id + "'");
    Y.row(r) = targets.values().row(*row).cast<double>();
    modalities.push_back(*ds.modality_of(id));
  }
  if (Y.cols() != d.n_dims())
    throw Error(ErrorCode::ShapeMismatch, "decoder predicts " + std::to_string(d.n_dims()) + " dims, features have " +
                                              std::to_string(Y.cols()));

  const Eigen::MatrixXd preds = predict(d, test.values().cast<double>());
  EvalReport report = evaluate_predictions(preds, Y, modalities, {boot, seed, variant});
  report.decoder_meta["alpha"] = format_number(d.alpha);
  report.decoder_meta["mode"] = std::string(to_string(d.trained_on));
  report.decoder_meta["target_model"] = d.target_model;
  report.decoder_meta["feature_model"] = feats.model_name();
  report.decoder_meta["feature_modality"] = std::string(to_string(feats.feature_modality()));
  report.decoder_meta["fold_seed"] = std::to_string(d.fold_seed);
  report.decoder_meta["cv_metric"] = "mean per-dimension pearson";
  return report;
}

}  // namespace neurodec
