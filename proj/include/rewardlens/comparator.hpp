#pragma once

// Cross-model comparison: lens differentials normalised to fractional depth,
// interpolated onto a shared grid and correlated pairwise, plus top-k Jaccard
// circuit overlap between dimensions.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rewardlens/attribution.hpp"
#include "rewardlens/lens.hpp"
#include "rewardlens/model.hpp"

namespace rewardlens {

inline constexpr int kComparatorGridPoints = 101;

struct ComparisonResult {
  std::vector<std::string> model_names;
  std::vector<RewardLensResult> lens_results;
  std::vector<ComponentResult> attribution_results;  // optional, may be empty
  std::vector<std::optional<double>> crystallization_layers;
  Vec depth_grid;   // shared fractional grid on (0, 1]
  Mat curves;       // models x grid, interpolated differentials
  Mat formation_correlations;
  std::vector<bool> degenerate_trajectory;
};

namespace detail {

// piecewise-linear with constant extension outside the sampled depths
inline double interp_at(const std::vector<double>& xs,
                        const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  std::size_t hi = 1;
  while (xs[hi] < x) ++hi;
  const double t = (x - xs[hi - 1]) / (xs[hi] - xs[hi - 1]);
  return ys[hi - 1] + t * (ys[hi] - ys[hi - 1]);
}

}  // namespace detail

inline ComparisonResult compare(
    const std::vector<const RewardModelBundle*>& bundles,
    const std::vector<std::string>& names, const PreferencePair& pair,
    bool with_attribution = false) {
  require(bundles.size() >= 2, ErrorKind::argument,
          "compare: need at least 2 models");
  require(names.size() == bundles.size(), ErrorKind::argument,
          "compare: one name per model");

  ComparisonResult r;
  r.model_names = names;
  r.depth_grid = Vec(kComparatorGridPoints);
  for (int i = 0; i < kComparatorGridPoints; ++i)
    r.depth_grid[i] = static_cast<double>(i + 1) /
                      static_cast<double>(kComparatorGridPoints);

  const auto n = static_cast<Eigen::Index>(bundles.size());
  r.curves = Mat::Zero(n, kComparatorGridPoints);
  for (std::size_t b = 0; b < bundles.size(); ++b) {
    const auto lens = trace(*bundles[b], pair);
    const int L = bundles[b]->config.n_layers;
    std::vector<double> depths, values;
    for (int l = -1; l < L; ++l) {
      depths.push_back(static_cast<double>(l + 1) / static_cast<double>(L + 1));
      values.push_back(lens.differential[static_cast<std::size_t>(l + 1)]);
    }
    for (int i = 0; i < kComparatorGridPoints; ++i)
      r.curves(static_cast<Eigen::Index>(b), i) =
          detail::interp_at(depths, values, r.depth_grid[i]);
    r.crystallization_layers.push_back(lens.crystallisation_layer);
    r.lens_results.push_back(std::move(lens));
    if (with_attribution)
      r.attribution_results.push_back(attribute(*bundles[b], pair));
  }

  r.degenerate_trajectory.assign(bundles.size(), false);
  for (Eigen::Index b = 0; b < n; ++b) {
    const Vec row = r.curves.row(b).transpose();
    const double spread = row.maxCoeff() - row.minCoeff();
    r.degenerate_trajectory[static_cast<std::size_t>(b)] = spread == 0.0;
  }

  r.formation_correlations = Mat::Identity(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      double rho = 0.0;
      if (!r.degenerate_trajectory[static_cast<std::size_t>(a)] &&
          !r.degenerate_trajectory[static_cast<std::size_t>(b)])
        rho = pearson(r.curves.row(a).transpose(), r.curves.row(b).transpose());
      r.formation_correlations(a, b) = rho;
      r.formation_correlations(b, a) = rho;
    }
  }
  return r;
}

struct CircuitOverlap {
  std::vector<std::string> dimensions;
  std::vector<std::vector<std::size_t>> top_sets;  // component indices per dim
  Mat jaccard;
};

// Per dimension: the k components with the highest top-k frequency across
// that dimension's results (ties to the lower flat index), then pairwise
// Jaccard overlap between those sets.
inline CircuitOverlap circuit_overlap(
    const std::map<std::string, std::vector<ComponentResult>>& results,
    std::size_t k = 10) {
  require(results.size() >= 2, ErrorKind::argument,
          "circuit_overlap: need at least 2 dimensions");
  CircuitOverlap out;
  for (const auto& [dim, rs] : results) {
    require(!rs.empty(), ErrorKind::argument,
            "circuit_overlap: dimension '" + dim + "' has no results");
    const auto n_components = rs.front().names.size();
    require(k >= 1 && k <= n_components, ErrorKind::argument,
            "circuit_overlap: k exceeds the component count");
    const auto counts = top_k_frequency(rs, k);
    Vec count_vec(static_cast<Eigen::Index>(counts.size()));
    for (std::size_t i = 0; i < counts.size(); ++i)
      count_vec[static_cast<Eigen::Index>(i)] = static_cast<double>(counts[i]);
    out.dimensions.push_back(dim);
    out.top_sets.push_back(topk_indices(count_vec, k));
  }

  const auto n = static_cast<Eigen::Index>(out.dimensions.size());
  out.jaccard = Mat::Identity(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const std::set<std::size_t> sa(out.top_sets[static_cast<std::size_t>(a)].begin(),
                                     out.top_sets[static_cast<std::size_t>(a)].end());
      const std::set<std::size_t> sb(out.top_sets[static_cast<std::size_t>(b)].begin(),
                                     out.top_sets[static_cast<std::size_t>(b)].end());
      std::size_t inter = 0;
      for (std::size_t x : sa) inter += sb.count(x);
      const std::size_t uni = sa.size() + sb.size() - inter;
      const double j = uni == 0 ? 0.0
                                : static_cast<double>(inter) /
                                      static_cast<double>(uni);
      out.jaccard(a, b) = j;
      out.jaccard(b, a) = j;
    }
  }
  return out;
}

// Plain set Jaccard, exposed for report assembly and tests.
inline double jaccard_overlap(const std::vector<std::size_t>& a,
                              const std::vector<std::size_t>& b) {
  const std::set<std::size_t> sa(a.begin(), a.end());
  const std::set<std::size_t> sb(b.begin(), b.end());
  std::size_t inter = 0;
  for (std::size_t x : sa) inter += sb.count(x);
  const std::size_t uni = sa.size() + sb.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace rewardlens
