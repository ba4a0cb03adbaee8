#include "neurodec/ridge.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>

#include "neurodec/error.hpp"

namespace neurodec {
namespace {

// Standardized design, centered targets and the normal-equation system for
// one training set. Solving for several alphas reuses the Gram matrix.
class RidgeProblem {
 public:
  RidgeProblem(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, RidgeSolver solver) {
    if (X.rows() != Y.rows())
      throw Error(ErrorCode::ShapeMismatch, "X has " + std::to_string(X.rows()) + " rows, Y has " +
                                                std::to_string(Y.rows()));
    if (X.rows() < 2) throw Error(ErrorCode::TooFewRows, "ridge needs at least 2 rows");
    if (X.cols() == 0 || Y.cols() == 0) throw Error(ErrorCode::ShapeMismatch, "empty design or targets");
    if (!X.allFinite() || !Y.allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite ridge input");

    const double n = static_cast<double>(X.rows());
    mean_ = X.colwise().mean().transpose();
    scale_.resize(X.cols());
    Xs_ = X.rowwise() - mean_.transpose();
    constant_.assign(static_cast<std::size_t>(X.cols()), 0);
    Eigen::Index active = 0;
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double sd = std::sqrt(Xs_.col(c).squaredNorm() / n);
      if (sd < kScaleFloor) {
        scale_(c) = kScaleFloor;
        constant_[static_cast<std::size_t>(c)] = 1;
        Xs_.col(c).setZero();
      } else {
        scale_(c) = sd;
        Xs_.col(c) /= sd;
        ++active;
      }
    }
    if (active == 0) throw Error(ErrorCode::DegenerateInput, "every voxel column is constant");

    y_mean_ = Y.colwise().mean().transpose();
    Yc_ = Y.rowwise() - y_mean_.transpose();

    dual_ = solver == RidgeSolver::Dual || (solver == RidgeSolver::Auto && X.cols() > X.rows());
    if (dual_) {
      gram_ = Xs_ * Xs_.transpose();
    } else {
      gram_ = Xs_.transpose() * Xs_;
      rhs_ = Xs_.transpose() * Yc_;
    }
  }

  Eigen::MatrixXd solve(double alpha) const {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Error(ErrorCode::InvalidParams, "alpha must be positive");
    Eigen::MatrixXd system = gram_;
    system.diagonal().array() += alpha;
    const Eigen::LLT<Eigen::MatrixXd> llt(system);
    Eigen::MatrixXd W;
    if (llt.info() == Eigen::Success) {
      W = dual_ ? Eigen::MatrixXd(Xs_.transpose() * llt.solve(Yc_)) : Eigen::MatrixXd(llt.solve(rhs_));
    } else {
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
      W = dual_ ? Eigen::MatrixXd(Xs_.transpose() * ldlt.solve(Yc_)) : Eigen::MatrixXd(ldlt.solve(rhs_));
    }
    // Constant voxels carry no information and get exactly zero weight.
    for (Eigen::Index c = 0; c < scale_.size(); ++c)
      if (constant_[static_cast<std::size_t>(c)]) W.row(c).setZero();
    if (!W.allFinite()) throw Error(ErrorCode::NumericalFailure, "ridge solve produced non-finite weights");
    return W;
  }

  RidgeDecoder decoder(double alpha) const {
    RidgeDecoder d;
    d.weights = solve(alpha);
    d.intercept = y_mean_;
    d.alpha = alpha;
    d.x_mean = mean_;
    d.x_scale = scale_;
    return d;
  }

 private:
  Eigen::VectorXd mean_, scale_, y_mean_;
  Eigen::MatrixXd Xs_, Yc_, gram_, rhs_;
  std::vector<char> constant_;
  bool dual_ = false;
};

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& M, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), M.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = M.row(rows[i]);
  return out;
}

}  // namespace

std::string_view to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::Agnostic: return "agnostic";
    case TrainingMode::ImageOnly: return "image";
    case TrainingMode::CaptionOnly: return "caption";
  }
  return "agnostic";
}

TrainingMode parse_training_mode(std::string_view s) {
  if (s == "agnostic") return TrainingMode::Agnostic;
  if (s == "image" || s == "images") return TrainingMode::ImageOnly;
  if (s == "caption" || s == "captions") return TrainingMode::CaptionOnly;
  throw Error(ErrorCode::InvalidConfig, "unknown training mode '" + std::string(s) + "'");
}

RidgeDecoder fit_ridge(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double alpha, RidgeSolver solver) {
  return RidgeProblem(X, Y, solver).decoder(alpha);
}

Eigen::MatrixXd predict(const RidgeDecoder& d, const Eigen::MatrixXd& X) {
  if (X.cols() != d.n_voxels())
    throw Error(ErrorCode::ShapeMismatch, "decoder expects " + std::to_string(d.n_voxels()) + " voxels, got " +
                                              std::to_string(X.cols()));
  const Eigen::MatrixXd Xs =
      (X.rowwise() - d.x_mean.transpose()).array().rowwise() / d.x_scale.transpose().array();
  return (Xs * d.weights).rowwise() + d.intercept.transpose();
}

void CvConfig::validate() const {
  if (alpha_grid.empty()) throw Error(ErrorCode::InvalidConfig, "alpha grid is empty");
  for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
    if (!(alpha_grid[i] > 0.0)) throw Error(ErrorCode::InvalidConfig, "alpha grid entries must be positive");
    if (i > 0 && !(alpha_grid[i] > alpha_grid[i - 1]))
      throw Error(ErrorCode::InvalidConfig, "alpha grid must be strictly increasing");
  }
  if (n_folds < 2) throw Error(ErrorCode::InvalidConfig, "need at least 2 folds");
}

std::vector<std::vector<Eigen::Index>> make_folds(Eigen::Index n_rows, int n_folds, std::uint64_t seed) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates: std::shuffle's draw sequence is implementation-defined.
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  std::vector<std::vector<Eigen::Index>> folds(static_cast<std::size_t>(n_folds));
  for (int k = 0; k < n_folds; ++k) {
    const auto begin = static_cast<std::size_t>(n_rows * k / n_folds);
    const auto end = static_cast<std::size_t>(n_rows * (k + 1) / n_folds);
    folds[static_cast<std::size_t>(k)].assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                              order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return folds;
}

double mean_pearson(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
    throw Error(ErrorCode::ShapeMismatch, "prediction and target shapes differ");
  if (predicted.cols() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index j = 0; j < predicted.cols(); ++j) {
    const Eigen::VectorXd a = predicted.col(j).array() - predicted.col(j).mean();
    const Eigen::VectorXd b = truth.col(j).array() - truth.col(j).mean();
    const double denom = std::sqrt(a.squaredNorm() * b.squaredNorm());
    if (denom > 0.0) total += a.dot(b) / denom;
  }
  return total / static_cast<double>(predicted.cols());
}

CvResult cv_select_alpha(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const CvConfig& cfg) {
  cfg.validate();
  if (X.rows() != Y.rows()) throw Error(ErrorCode::ShapeMismatch, "X and Y row counts differ");
  if (X.rows() < cfg.n_folds)
    throw Error(ErrorCode::TooFewRows, std::to_string(X.rows()) + " rows for " + std::to_string(cfg.n_folds) + " folds");

  const auto folds = make_folds(X.rows(), cfg.n_folds, cfg.fold_seed);
  CvResult result;
  result.alphas = cfg.alpha_grid;
  result.mean_scores.assign(cfg.alpha_grid.size(), 0.0);

  for (const auto& validation : folds) {
    std::vector<char> held(static_cast<std::size_t>(X.rows()), 0);
    for (const auto r : validation) held[static_cast<std::size_t>(r)] = 1;
    std::vector<Eigen::Index> training;
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      if (!held[static_cast<std::size_t>(r)]) training.push_back(r);

    const RidgeProblem problem(select_rows(X, training), select_rows(Y, training), RidgeSolver::Auto);
    const Eigen::MatrixXd Xv = select_rows(X, validation);
    const Eigen::MatrixXd Yv = select_rows(Y, validation);
    for (std::size_t a = 0; a < cfg.alpha_grid.size(); ++a)
      result.mean_scores[a] += mean_pearson(predict(problem.decoder(cfg.alpha_grid[a]), Xv), Yv);
  }

  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < cfg.alpha_grid.size(); ++a) {
    result.mean_scores[a] /= static_cast<double>(folds.size());
    if (result.mean_scores[a] >= best) {
      best = result.mean_scores[a];
      result.best_alpha = cfg.alpha_grid[a];
    }
  }
  return result;
}

RidgeDecoder train_decoder(const Dataset& ds, const FeatureMatrix& targets, TrainingMode mode, const CvConfig& cfg) {
  const Dataset selected = mode == TrainingMode::Agnostic  ? ds
                           : mode == TrainingMode::ImageOnly ? select_modality(ds, Modality::Image)
                                                             : select_modality(ds, Modality::Caption);
  const auto& train = selected.betas_train();
  const Eigen::MatrixXd X = train.values().cast<double>();
  Eigen::MatrixXd Y(train.rows(), targets.dims());
  for (Eigen::Index r = 0; r < train.rows(); ++r) {
    const auto& id = train.trial_ids()[static_cast<std::size_t>(r)];
    const auto row = targets.row_of(id);
    if (!row) throw Error(ErrorCode::MissingTarget, "no target row for training trial '" + id + "'");
    Y.row(r) = targets.values().row(*row).cast<double>();
  }

  const CvResult cv = cv_select_alpha(X, Y, cfg);
  RidgeDecoder d = fit_ridge(X, Y, cv.best_alpha);
  d.trained_on = mode;
  d.target_model = targets.model_name();
  d.voxel_ids = train.voxel_ids();
  d.fold_seed = cfg.fold_seed;
  d.cv_alphas = cv.alphas;
  d.cv_scores = cv.mean_scores;
  return d;
}

double ridge_objective(const RidgeDecoder& d, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                       const Eigen::MatrixXd& weights) {
  const Eigen::MatrixXd Xs =
      (X.rowwise() - d.x_mean.transpose()).array().rowwise() / d.x_scale.transpose().array();
  const Eigen::MatrixXd Yc = Y.rowwise() - d.intercept.transpose();
  return (Xs * weights - Yc).squaredNorm() + d.alpha * weights.squaredNorm();
}

MatrixFile decoder_to_file(const RidgeDecoder& d) {
  MatrixFile f;
  f.values = d.weights.cast<float>();
  f.row_ids.reserve(static_cast<std::size_t>(d.n_voxels()));
  for (Eigen::Index v = 0; v < d.n_voxels(); ++v)
    f.row_ids.push_back(d.voxel_ids.empty() ? std::to_string(v) : std::to_string(d.voxel_ids[static_cast<std::size_t>(v)]));
  auto to_vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  nlohmann::json meta;
  meta["alpha"] = d.alpha;
  meta["mode"] = std::string(to_string(d.trained_on));
  meta["target_model"] = d.target_model;
  meta["fold_seed"] = d.fold_seed;
  meta["cv_metric"] = "mean_pearson";
  meta["cv_alphas"] = d.cv_alphas;
  meta["cv_scores"] = d.cv_scores;
  meta["intercept"] = to_vec(d.intercept);
  meta["x_mean"] = to_vec(d.x_mean);
  meta["x_scale"] = to_vec(d.x_scale);
  f.meta["decoder"] = std::move(meta);
  return f;
}

RidgeDecoder decoder_from_file(const MatrixFile& file) {
  if (!file.meta.is_object() || !file.meta.contains("decoder"))
    throw Error(ErrorCode::FormatError, "matrix file has no decoder metadata");
  const auto& m = file.meta["decoder"];
  auto to_eigen = [](const std::vector<double>& v) { return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))); };
  RidgeDecoder d;
  d.weights = file.values.cast<double>();
  d.alpha = m.at("alpha").get<double>();
  d.trained_on = parse_training_mode(m.at("mode").get<std::string>());
  d.target_model = m.at("target_model").get<std::string>();
  d.fold_seed = m.at("fold_seed").get<std::uint64_t>();
  d.cv_alphas = m.value("cv_alphas", std::vector<double>{});
  d.cv_scores = m.value("cv_scores", std::vector<double>{});
  d.intercept = to_eigen(m.at("intercept").get<std::vector<double>>());
  d.x_mean = to_eigen(m.at("x_mean").get<std::vector<double>>());
  d.x_scale = to_eigen(m.at("x_scale").get<std::vector<double>>());
  for (const auto& id : file.row_ids) d.voxel_ids.push_back(std::stoll(id));
  if (d.intercept.size() != d.n_dims() || d.x_mean.size() != d.n_voxels() || d.x_scale.size() != d.n_voxels())
    throw Error(ErrorCode::FormatError, "decoder metadata does not match weight shape");
  if (!(d.x_scale.array() > 0.0).all()) throw Error(ErrorCode::FormatError, "decoder has non-positive x_scale");
  return d;
}

void save_decoder(const std::filesystem::path& path, const RidgeDecoder& d) { write_matrix_file(path, decoder_to_file(d)); }

RidgeDecoder load_decoder(const std::filesystem::path& path) { return decoder_from_file(read_matrix_file(path)); }

}  // namespace neurodec
