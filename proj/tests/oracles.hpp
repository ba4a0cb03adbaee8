#pragma once

// Reference implementations written straight from the definitions, without
// any of the library's factorizations or shortcuts.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct Standardized {
  Eigen::MatrixXd Xs;
  Eigen::MatrixXd Yc;
  Eigen::VectorXd mean, scale, y_mean;
};

inline Standardized standardize(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  Standardized s;
  const double n = static_cast<double>(X.rows());
  s.mean = Eigen::VectorXd::Zero(X.cols());
  s.scale = Eigen::VectorXd::Zero(X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    double sum = 0.0;
    for (Eigen::Index r = 0; r < X.rows(); ++r) sum += X(r, c);
    s.mean(c) = sum / n;
    double ss = 0.0;
    for (Eigen::Index r = 0; r < X.rows(); ++r) ss += (X(r, c) - s.mean(c)) * (X(r, c) - s.mean(c));
    s.scale(c) = std::max(std::sqrt(ss / n), 1e-12);
  }
  s.Xs = X;
  for (Eigen::Index c = 0; c < X.cols(); ++c)
    for (Eigen::Index r = 0; r < X.rows(); ++r) s.Xs(r, c) = (X(r, c) - s.mean(c)) / s.scale(c);
  s.y_mean = Y.colwise().mean().transpose();
  s.Yc = Y.rowwise() - s.y_mean.transpose();
  return s;
}

// W = (Xs'Xs + aI)^-1 Xs'Yc with an explicitly formed inverse.
inline Eigen::MatrixXd ridge_weights(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double alpha) {
  const Standardized s = standardize(X, Y);
  const Eigen::MatrixXd A = s.Xs.transpose() * s.Xs + alpha * Eigen::MatrixXd::Identity(X.cols(), X.cols());
  return A.inverse() * s.Xs.transpose() * s.Yc;
}

inline Eigen::MatrixXd ridge_predict(const Eigen::MatrixXd& Xtrain, const Eigen::MatrixXd& Ytrain, double alpha,
                                     const Eigen::MatrixXd& Xnew) {
  const Standardized s = standardize(Xtrain, Ytrain);
  const Eigen::MatrixXd W = ridge_weights(Xtrain, Ytrain, alpha);
  Eigen::MatrixXd Xs = Xnew;
  for (Eigen::Index c = 0; c < Xnew.cols(); ++c)
    for (Eigen::Index r = 0; r < Xnew.rows(); ++r) Xs(r, c) = (Xnew(r, c) - s.mean(c)) / s.scale(c);
  return (Xs * W).rowwise() + s.y_mean.transpose();
}

inline double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = a.mean(), mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return saa > 0.0 && sbb > 0.0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

// Fold rule: Fisher-Yates with a 64-bit Mersenne Twister seeded by `seed`
// (swap position i-1 with draw % i, for i from n down to 2), then fold k holds
// shuffled positions [n*k/K, n*(k+1)/K).
inline std::vector<std::vector<Eigen::Index>> folds(Eigen::Index n, int K, std::uint64_t seed) {
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < n; ++i) order.push_back(i);
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    const Eigen::Index tmp = order[i - 1];
    order[i - 1] = order[j];
    order[j] = tmp;
  }
  std::vector<std::vector<Eigen::Index>> out(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    for (Eigen::Index p = n * k / K; p < n * (k + 1) / K; ++p) out[static_cast<std::size_t>(k)].push_back(order[static_cast<std::size_t>(p)]);
  return out;
}

struct CvScores {
  std::vector<double> scores;
  double best_alpha = 0.0;
};

inline CvScores exhaustive_cv(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const std::vector<double>& grid,
                              int K, std::uint64_t seed) {
  const auto fs = folds(X.rows(), K, seed);
  CvScores out;
  for (const double alpha : grid) {
    double total = 0.0;
    for (const auto& val : fs) {
      std::vector<Eigen::Index> tr;
      for (Eigen::Index r = 0; r < X.rows(); ++r)
        if (std::find(val.begin(), val.end(), r) == val.end()) tr.push_back(r);
      Eigen::MatrixXd Xt(static_cast<Eigen::Index>(tr.size()), X.cols()), Yt(static_cast<Eigen::Index>(tr.size()), Y.cols());
      for (std::size_t i = 0; i < tr.size(); ++i) {
        Xt.row(static_cast<Eigen::Index>(i)) = X.row(tr[i]);
        Yt.row(static_cast<Eigen::Index>(i)) = Y.row(tr[i]);
      }
      Eigen::MatrixXd Xv(static_cast<Eigen::Index>(val.size()), X.cols()), Yv(static_cast<Eigen::Index>(val.size()), Y.cols());
      for (std::size_t i = 0; i < val.size(); ++i) {
        Xv.row(static_cast<Eigen::Index>(i)) = X.row(val[i]);
        Yv.row(static_cast<Eigen::Index>(i)) = Y.row(val[i]);
      }
      const Eigen::MatrixXd P = ridge_predict(Xt, Yt, alpha, Xv);
      double fold_score = 0.0;
      for (Eigen::Index j = 0; j < Y.cols(); ++j) fold_score += pearson(P.col(j), Yv.col(j));
      total += fold_score / static_cast<double>(Y.cols());
    }
    out.scores.push_back(total / static_cast<double>(fs.size()));
  }
  double best = -1e300;
  for (std::size_t a = 0; a < grid.size(); ++a)
    if (out.scores[a] >= best) {
      best = out.scores[a];
      out.best_alpha = grid[a];
    }
  return out;
}

inline double cosine_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a(i) * b(i);
    na += a(i) * a(i);
    nb += b(i) * b(i);
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

// Ordered pairs i != j; prediction i wins when its own target is strictly
// closer than target j; exact ties score one half.
inline double pairwise_accuracy(const Eigen::MatrixXd& P, const Eigen::MatrixXd& T) {
  double score = 0.0;
  long pairs = 0;
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.rows(); ++j) {
      if (i == j) continue;
      const double own = cosine_distance(P.row(i).transpose(), T.row(i).transpose());
      const double other = cosine_distance(P.row(i).transpose(), T.row(j).transpose());
      score += own < other ? 1.0 : own == other ? 0.5 : 0.0;
      ++pairs;
    }
  return score / static_cast<double>(pairs);
}

}  // namespace oracle
