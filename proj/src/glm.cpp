#include "neurodec/glm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <Eigen/QR>

#include "neurodec/error.hpp"

namespace neurodec {
namespace {

double gamma_pdf(double t, double shape, double scale) {
  if (t <= 0.0) return 0.0;
  return std::exp((shape - 1.0) * std::log(t) - t / scale - std::lgamma(shape) - shape * std::log(scale));
}

constexpr double kTimeEps = 1e-9;

void check_run_bounds(const StimulusEvent& e, const ScanParams& scan) {
  const double length = scan.run_length();
  if (e.onset < 0.0 || e.onset >= length || e.onset + e.duration > length + kTimeEps)
    throw Error(ErrorCode::EventOutOfRange, "event '" + e.stimulus_id + "' at " + format_number(e.onset) +
                                                "s does not fit in a " + format_number(length) + "s run");
}

void append_drift(Eigen::Ref<Eigen::MatrixXd> block, int order) {
  const auto n = block.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double x = n > 1 ? 2.0 * static_cast<double>(k) / static_cast<double>(n - 1) - 1.0 : 0.0;
    double p = 1.0;
    for (int d = 0; d < order; ++d) {
      p *= x;
      block(k, d) = p;
    }
  }
}

}  // namespace

void HrfParams::validate() const {
  for (const double v : {peak_delay, undershoot_delay, peak_dispersion, undershoot_dispersion, undershoot_ratio,
                         kernel_length})
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidParams, "HRF parameters must be positive");
}

double double_gamma(const HrfParams& p, double t) {
  return gamma_pdf(t, p.peak_delay / p.peak_dispersion, p.peak_dispersion) -
         gamma_pdf(t, p.undershoot_delay / p.undershoot_dispersion, p.undershoot_dispersion) * p.undershoot_ratio;
}

std::vector<double> canonical_hrf(const HrfParams& p, double tr) {
  p.validate();
  if (!(tr > 0.0)) throw Error(ErrorCode::InvalidParams, "tr must be positive");
  const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(p.kernel_length / tr - kTimeEps)));
  std::vector<double> kernel(n);
  for (std::size_t k = 0; k < n; ++k) kernel[k] = double_gamma(p, static_cast<double>(k) * tr);
  // A kernel that only samples t=0 is identically zero and stays unscaled.
  if (const double peak = *std::max_element(kernel.begin(), kernel.end()); peak > 0.0)
    for (auto& v : kernel) v /= peak;
  return kernel;
}

std::string condition_name(const StimulusEvent& e) {
  switch (e.role) {
    case Role::Test: return e.stimulus_id;
    case Role::Fixation: return std::string(kFixationColumn);
    case Role::Blank: return std::string(kBlankColumn);
    case Role::OneBackTarget: return std::string(kOneBackColumn);
    case Role::Train: return {};
  }
  return {};
}

Eigen::VectorXd event_regressor(double onset, double duration, const ScanParams& scan,
                                std::span<const double> kernel) {
  const Eigen::Index n = scan.n_volumes_per_run;
  Eigen::VectorXd boxcar = Eigen::VectorXd::Zero(n);
  bool any = false;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * scan.tr;
    if (t + kTimeEps >= onset && t + kTimeEps < onset + duration) {
      boxcar(k) = 1.0;
      any = true;
    }
  }
  if (!any) {
    // Events shorter than a TR that fall between samples land on the next volume.
    const auto k = static_cast<Eigen::Index>(std::ceil(onset / scan.tr - kTimeEps));
    boxcar(std::min(k, n - 1)) = 1.0;
  }

  Eigen::VectorXd column = Eigen::VectorXd::Zero(n);
  const auto klen = static_cast<Eigen::Index>(kernel.size());
  for (Eigen::Index j = 0; j < n; ++j) {
    if (boxcar(j) == 0.0) continue;
    for (Eigen::Index l = 0; l < klen && j + l < n; ++l) column(j + l) += boxcar(j) * kernel[static_cast<std::size_t>(l)];
  }
  return column;
}

DesignMatrix build_design(std::span<const StimulusEvent> events, Grouping grouping, const ScanParams& scan,
                          const HrfParams& hrf, const DesignOptions& options) {
  scan.validate();
  const auto kernel = canonical_hrf(hrf, scan.tr);
  for (std::size_t i = 1; i < events.size(); ++i)
    if (events[i].run_key() != events[0].run_key())
      throw Error(ErrorCode::InvalidEvents, "build_design expects the events of a single run");

  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> columns;
  if (grouping == Grouping::PerTrial) {
    for (const auto& e : events) {
      if (e.role != Role::Train) continue;
      check_run_bounds(e, scan);
      names.push_back(e.stimulus_id);
      columns.push_back(event_regressor(e.onset, e.duration, scan, kernel));
    }
  } else {
    names = options.conditions;
    if (names.empty())
      for (const auto& e : events)
        if (auto c = condition_name(e); !c.empty() && std::find(names.begin(), names.end(), c) == names.end())
          names.push_back(std::move(c));
    std::unordered_map<std::string, std::size_t> slot;
    for (std::size_t i = 0; i < names.size(); ++i) slot.emplace(names[i], i);
    columns.assign(names.size(), Eigen::VectorXd::Zero(scan.n_volumes_per_run));
    for (const auto& e : events) {
      const auto c = condition_name(e);
      if (c.empty()) continue;
      const auto it = slot.find(c);
      if (it == slot.end()) throw Error(ErrorCode::InvalidEvents, "condition '" + c + "' not in the column list");
      check_run_bounds(e, scan);
      columns[it->second] += event_regressor(e.onset, e.duration, scan, kernel);
    }
  }
  if (columns.empty()) throw Error(ErrorCode::EmptyDesign, "no event regressors");

  const auto n_event = static_cast<Eigen::Index>(columns.size());
  const Eigen::Index n_cols = n_event + options.drift_order + (options.intercept ? 1 : 0);
  DesignMatrix design;
  design.values.resize(scan.n_volumes_per_run, n_cols);
  for (Eigen::Index c = 0; c < n_event; ++c) design.values.col(c) = columns[static_cast<std::size_t>(c)];
  design.regressor_names = std::move(names);
  if (options.drift_order > 0) {
    append_drift(design.values.middleCols(n_event, options.drift_order), options.drift_order);
    for (int d = 1; d <= options.drift_order; ++d) design.regressor_names.push_back("@drift" + std::to_string(d));
  }
  if (options.intercept) {
    design.values.col(n_cols - 1).setOnes();
    design.regressor_names.emplace_back(kInterceptColumn);
    design.includes_intercept = true;
  }
  return design;
}

GlmFit fit_ols(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (X.rows() != Y.rows())
    throw Error(ErrorCode::ShapeMismatch, "design has " + std::to_string(X.rows()) + " rows, data has " +
                                              std::to_string(Y.rows()));
  if (X.cols() == 0) throw Error(ErrorCode::EmptyDesign, "design has no columns");
  const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
  GlmFit fit;
  fit.betas = cod.solve(Y);
  fit.residuals = Y - X * fit.betas;
  fit.rank = cod.rank();
  fit.rank_deficient = fit.rank < X.cols();
  if (!fit.betas.allFinite() || !fit.residuals.allFinite())
    throw Error(ErrorCode::NumericalFailure, "OLS produced non-finite values");
  return fit;
}

GlmFit fit_ols(const DesignMatrix& X, const Eigen::MatrixXd& Y) { return fit_ols(X.values, Y); }

TwoPhaseResult two_phase_betas(std::span<const StimulusEvent> events, std::span<const RunBold> bold,
                               const ScanParams& scan, const HrfParams& hrf, const TwoPhaseOptions& options) {
  scan.validate();
  if (events.empty()) throw Error(ErrorCode::EmptyDataset, "no events");
  if (bold.empty()) throw Error(ErrorCode::MissingRun, "no BOLD runs");

  std::map<RunKey, const Eigen::MatrixXd*> bold_by_run;
  const Eigen::Index n_vox = bold.front().bold.cols();
  for (const auto& r : bold) {
    if (r.bold.rows() != scan.n_volumes_per_run || r.bold.cols() != n_vox)
      throw Error(ErrorCode::ShapeMismatch, "BOLD for session " + std::to_string(r.key.session) + " run " +
                                                std::to_string(r.key.run) + " has wrong shape");
    if (!bold_by_run.emplace(r.key, &r.bold).second)
      throw Error(ErrorCode::InvalidEvents, "duplicate BOLD run");
  }

  std::map<RunKey, std::vector<StimulusEvent>> events_by_run;
  for (const auto& e : events) {
    if (!bold_by_run.count(e.run_key()))
      throw Error(ErrorCode::MissingRun, "no BOLD for session " + std::to_string(e.session) + " run " +
                                             std::to_string(e.run));
    events_by_run[e.run_key()].push_back(e);
  }

  std::vector<VoxelId> voxel_ids = options.voxel_ids;
  if (voxel_ids.empty()) {
    voxel_ids.resize(static_cast<std::size_t>(n_vox));
    for (std::size_t i = 0; i < voxel_ids.size(); ++i) voxel_ids[i] = static_cast<VoxelId>(i);
  } else if (static_cast<Eigen::Index>(voxel_ids.size()) != n_vox) {
    throw Error(ErrorCode::ShapeMismatch, "voxel id count does not match BOLD columns");
  }

  // Phase 1: shared conditions over all runs jointly, per-run intercepts and drift.
  std::vector<std::string> conditions;
  for (const auto& [key, evs] : events_by_run)
    for (const auto& e : evs)
      if (auto c = condition_name(e); !c.empty() && std::find(conditions.begin(), conditions.end(), c) == conditions.end())
        conditions.push_back(std::move(c));

  const auto n_runs = static_cast<Eigen::Index>(bold_by_run.size());
  const Eigen::Index T = scan.n_volumes_per_run;
  const auto n_cond = static_cast<Eigen::Index>(conditions.size());
  const Eigen::Index per_run_nuisance = 1 + options.drift_order;
  Eigen::MatrixXd X1 = Eigen::MatrixXd::Zero(T * n_runs, n_cond + per_run_nuisance * n_runs);
  Eigen::MatrixXd Y1(T * n_runs, n_vox);

  std::map<RunKey, Eigen::Index> run_index;
  for (const auto& [key, data] : bold_by_run) {
    const auto r = static_cast<Eigen::Index>(run_index.size());
    run_index.emplace(key, r);
    Y1.middleRows(r * T, T) = *data;
    const auto it = events_by_run.find(key);
    if (it != events_by_run.end() && n_cond > 0) {
      DesignOptions opt;
      opt.intercept = false;
      opt.conditions = conditions;
      X1.block(r * T, 0, T, n_cond) = build_design(it->second, Grouping::PerCondition, scan, hrf, opt).values;
    }
    const Eigen::Index nuisance_col = n_cond + r * per_run_nuisance;
    X1.block(r * T, nuisance_col, T, 1).setOnes();
    if (options.drift_order > 0)
      append_drift(X1.block(r * T, nuisance_col + 1, T, options.drift_order), options.drift_order);
  }

  TwoPhaseResult result;
  const GlmFit phase1 = fit_ols(X1, Y1);
  result.phase1_rank_deficient = phase1.rank_deficient;

  std::vector<std::string> test_ids;
  std::vector<Eigen::Index> test_cols;
  for (Eigen::Index c = 0; c < n_cond; ++c)
    if (!conditions[static_cast<std::size_t>(c)].starts_with('@')) {
      test_ids.push_back(conditions[static_cast<std::size_t>(c)]);
      test_cols.push_back(c);
    }
  MatrixF test_values(static_cast<Eigen::Index>(test_cols.size()), n_vox);
  for (std::size_t i = 0; i < test_cols.size(); ++i)
    test_values.row(static_cast<Eigen::Index>(i)) = phase1.betas.row(test_cols[i]).cast<float>();

  // Phase 2: per-run single-trial fits on phase-1 residuals.
  std::vector<std::string> train_ids;
  std::vector<Eigen::RowVectorXd> train_rows;
  for (const auto& [key, evs] : events_by_run) {
    const bool has_train = std::any_of(evs.begin(), evs.end(), [](const auto& e) { return e.role == Role::Train; });
    if (!has_train) continue;
    const Eigen::Index r = run_index.at(key);

    DesignOptions opt;
    opt.intercept = true;
    opt.drift_order = options.drift_order;
    DesignMatrix X2 = build_design(evs, Grouping::PerTrial, scan, hrf, opt);
    const auto n_trials = static_cast<Eigen::Index>(std::count_if(
        evs.begin(), evs.end(), [](const auto& e) { return e.role == Role::Train; }));

    if (options.carry_phase1_regressors && n_cond > 0) {
      const auto block = X1.block(r * T, 0, T, n_cond);
      std::vector<Eigen::Index> active;
      for (Eigen::Index c = 0; c < n_cond; ++c)
        if (block.col(c).cwiseAbs().maxCoeff() > 0.0) active.push_back(c);
      if (!active.empty()) {
        Eigen::MatrixXd extended(T, X2.values.cols() + static_cast<Eigen::Index>(active.size()));
        extended.leftCols(X2.values.cols()) = X2.values;
        for (std::size_t i = 0; i < active.size(); ++i)
          extended.col(X2.values.cols() + static_cast<Eigen::Index>(i)) = block.col(active[i]);
        X2.values = std::move(extended);
      }
    }

    const GlmFit phase2 = fit_ols(X2.values, phase1.residuals.middleRows(r * T, T));
    if (phase2.rank_deficient) ++result.phase2_rank_deficient_runs;
    for (Eigen::Index t = 0; t < n_trials; ++t) {
      train_ids.push_back(X2.regressor_names[static_cast<std::size_t>(t)]);
      train_rows.push_back(phase2.betas.row(t));
    }
  }

  MatrixF train_values(static_cast<Eigen::Index>(train_rows.size()), n_vox);
  for (std::size_t i = 0; i < train_rows.size(); ++i)
    train_values.row(static_cast<Eigen::Index>(i)) = train_rows[i].cast<float>();

  result.train = BetaMatrix(std::move(train_values), std::move(train_ids), voxel_ids);
  result.test = BetaMatrix(std::move(test_values), std::move(test_ids), std::move(voxel_ids));
  return result;
}

}  // namespace neurodec
