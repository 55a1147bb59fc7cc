#pragma once

// Dense linear algebra and statistics shared by all analyses. Storage is
// Eigen; arithmetic is double throughout even though model files hold f32.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "rewardlens/common.hpp"

namespace rewardlens {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline void require_finite(const Vec& v, const char* what) {
  require(v.allFinite(), ErrorKind::numeric,
          std::string(what) + ": non-finite entries");
}

inline Vec stable_softmax(const Vec& logits) {
  require(logits.size() > 0, ErrorKind::argument, "softmax: empty input");
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

inline Vec layer_norm(const Vec& x, const Vec& gamma, const Vec& beta,
                      double eps = 1e-5) {
  require(x.size() == gamma.size() && x.size() == beta.size(),
          ErrorKind::shape_mismatch, "layer_norm: parameter shape mismatch");
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double inv = 1.0 / std::sqrt(var + eps);
  return (((x.array() - mean) * inv) * gamma.array() + beta.array()).matrix();
}

inline double cosine(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), ErrorKind::shape_mismatch,
          "cosine: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, ErrorKind::degenerate_input,
          "cosine: zero-norm input");
  return a.dot(b) / (na * nb);
}

inline double pearson(const Vec& x, const Vec& y) {
  require(x.size() == y.size(), ErrorKind::shape_mismatch,
          "pearson: length mismatch");
  require(x.size() >= 2, ErrorKind::argument, "pearson: need at least 2 points");
  const double mx = x.mean();
  const double my = y.mean();
  const Vec dx = x.array() - mx;
  const Vec dy = y.array() - my;
  const double sx = dx.squaredNorm();
  const double sy = dy.squaredNorm();
  if (sx <= 0.0)
    fail(ErrorKind::degenerate_stat, "pearson: x side is constant");
  if (sy <= 0.0)
    fail(ErrorKind::degenerate_stat, "pearson: y side is constant");
  return dx.dot(dy) / std::sqrt(sx * sy);
}

// Average ranks, 1-based; ties share the mean of the ranks they span.
inline Vec average_ranks(const Vec& v) {
  const auto n = static_cast<std::size_t>(v.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[static_cast<Eigen::Index>(a)] < v[static_cast<Eigen::Index>(b)]; });
  Vec ranks(v.size());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n &&
           v[static_cast<Eigen::Index>(order[j + 1])] ==
               v[static_cast<Eigen::Index>(order[i])])
      ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      ranks[static_cast<Eigen::Index>(order[k])] = shared;
    i = j + 1;
  }
  return ranks;
}

namespace detail {

// Regularised incomplete beta via Lentz's continued fraction.
inline double betacf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 3e-15) break;
  }
  return h;
}

inline double incbeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) -
                          std::lgamma(b) + a * std::log(x) +
                          b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// Two-sided p for Student's t with nu degrees of freedom.
inline double t_two_sided_p(double t, double nu) {
  if (!std::isfinite(t)) return 0.0;
  const double x = nu / (nu + t * t);
  return detail::incbeta(0.5 * nu, 0.5, x);
}

struct SpearmanResult {
  double rho = 0.0;
  double p = 1.0;
};

// Pearson on average ranks; p from t = rho*sqrt((n-2)/(1-rho^2)) with n-2 dof.
// The source papers rarely say how their p-values were computed; this
// approximation is the documented choice here.
inline SpearmanResult spearman(const Vec& x, const Vec& y) {
  require(x.size() == y.size(), ErrorKind::shape_mismatch,
          "spearman: length mismatch");
  require(x.size() >= 4, ErrorKind::argument,
          "spearman: need at least 4 points");
  const Vec rx = average_ranks(x);
  const Vec ry = average_ranks(y);
  double rho;
  try {
    rho = pearson(rx, ry);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::degenerate_stat)
      fail(ErrorKind::degenerate_stat, "spearman: all-tied input");
    throw;
  }
  rho = std::clamp(rho, -1.0, 1.0);
  const double n = static_cast<double>(x.size());
  SpearmanResult out;
  out.rho = rho;
  const double denom = 1.0 - rho * rho;
  if (denom <= 0.0) {
    out.p = 0.0;
  } else {
    const double t = rho * std::sqrt((n - 2.0) / denom);
    out.p = t_two_sided_p(t, n - 2.0);
  }
  return out;
}

inline double regression_slope(const Vec& alphas, const Vec& deltas) {
  require(alphas.size() == deltas.size(), ErrorKind::shape_mismatch,
          "regression_slope: length mismatch");
  require(alphas.size() >= 2, ErrorKind::argument,
          "regression_slope: need at least 2 points");
  const double ma = alphas.mean();
  const Vec da = alphas.array() - ma;
  const double var = da.squaredNorm();
  require(var > 0.0, ErrorKind::degenerate_input,
          "regression_slope: constant alphas");
  const Vec dd = deltas.array() - deltas.mean();
  return da.dot(dd) / var;
}

struct GaussianEstimate {
  Vec mean;
  Mat covariance;
  double regularisation = 0.0;
  std::size_t sample_count = 0;

  Eigen::Index dim() const { return mean.size(); }
};

// Shrinkage default: 1e-4 * trace/d with a small absolute floor so that a
// zero-covariance fit (identical samples) still yields a usable estimator.
inline double default_regularisation(const Mat& cov) {
  const double d = static_cast<double>(cov.rows());
  return std::max(1e-4 * cov.trace() / d, 1e-8);
}

// Rows of `samples` are observations.
inline GaussianEstimate fit_gaussian(const Mat& samples, double lambda = -1.0) {
  require(samples.rows() >= 2, ErrorKind::degenerate_input,
          "fit_gaussian: need at least 2 samples");
  GaussianEstimate g;
  g.sample_count = static_cast<std::size_t>(samples.rows());
  g.mean = samples.colwise().mean();
  Mat centered = samples.rowwise() - g.mean.transpose();
  g.covariance = (centered.adjoint() * centered) /
                 static_cast<double>(samples.rows() - 1);
  // symmetrise against accumulation noise
  g.covariance = 0.5 * (g.covariance + g.covariance.transpose()).eval();
  g.regularisation = lambda >= 0.0 ? lambda : default_regularisation(g.covariance);
  return g;
}

inline double mahalanobis(const Vec& a, const GaussianEstimate& g) {
  require(a.size() == g.mean.size(), ErrorKind::shape_mismatch,
          "mahalanobis: dimension mismatch");
  Mat m = g.covariance;
  m.diagonal().array() += g.regularisation;
  Eigen::LLT<Mat> llt(m);
  require(llt.info() == Eigen::Success, ErrorKind::ill_conditioned,
          "mahalanobis: covariance not positive definite after regularisation");
  const Vec diff = a - g.mean;
  const Vec solved = llt.solve(diff);
  const double q = diff.dot(solved);
  return std::sqrt(std::max(q, 0.0));
}

// Indices of the k largest entries, descending by value, ties to lower index.
inline std::vector<std::size_t> topk_indices(const Vec& v, std::size_t k) {
  const auto n = static_cast<std::size_t>(v.size());
  require(k >= 1 && k <= n, ErrorKind::argument, "topk_indices: k out of range");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double va = v[static_cast<Eigen::Index>(a)];
    const double vb = v[static_cast<Eigen::Index>(b)];
    if (va != vb) return va > vb;
    return a < b;
  });
  idx.resize(k);
  return idx;
}

// Connected components over 0..n-1; singletons included. Components are
// sorted internally and ordered by their smallest member.
inline std::vector<std::vector<std::size_t>> union_find_clusters(
    std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const auto& [a, b] : edges) {
    require(a < n && b < n, ErrorKind::argument,
            "union_find_clusters: edge index out of range");
    const std::size_t ra = find(a);
    const std::size_t rb = find(b);
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<std::vector<std::size_t>> by_root(n);
  for (std::size_t i = 0; i < n; ++i) by_root[find(i)].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& c : by_root)
    if (!c.empty()) out.push_back(std::move(c));
  return out;
}

}  // namespace rewardlens
