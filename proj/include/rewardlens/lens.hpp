#pragma once

// Reward lens: the residual stream at every layer projected through the
// reward head (without the final norm), per-layer preference differentials,
// and the crystallisation statistic.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rewardlens/engine.hpp"
#include "rewardlens/model.hpp"

namespace rewardlens {

struct RewardLensResult {
  std::vector<int> layers;  // -1 .. L-1
  std::vector<double> lens_preferred;
  std::vector<double> lens_dispreferred;
  std::vector<double> differential;            // empty for single traces
  std::vector<double> marginal_contributions;  // per block layer, size L
  double reward_preferred = 0.0;
  double reward_dispreferred = 0.0;
  bool has_dispreferred = false;
  std::optional<double> crystallisation_layer;  // fractional (l+1)/(L+1)
};

namespace detail {

inline std::vector<double> lens_values(const RewardModelBundle& m,
                                       const ActivationCache& cache) {
  const int L = m.config.n_layers;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(L) + 1);
  for (int l = -1; l < L; ++l)
    out.push_back(project_onto_reward(m, cache.residual_at(l)));
  return out;
}

}  // namespace detail

// Smallest block layer whose differential has the final sign and at least
// half the final magnitude, as a fraction (l+1)/(L+1). Undefined when the
// final differential is within the zero guard.
inline std::optional<double> crystallisation_depth(const RewardLensResult& r) {
  if (!r.has_dispreferred || r.differential.empty()) return std::nullopt;
  const int L = static_cast<int>(r.differential.size()) - 1;  // layers -1..L-1
  const double final_diff = r.differential.back();
  if (std::fabs(final_diff) < kZeroDifferential) return std::nullopt;
  for (int l = 0; l < L; ++l) {
    const double d = r.differential[static_cast<std::size_t>(l + 1)];
    const bool same_sign = (d > 0.0) == (final_diff > 0.0) && d != 0.0;
    if (same_sign && std::fabs(d) >= 0.5 * std::fabs(final_diff))
      return (static_cast<double>(l) + 1.0) / (static_cast<double>(L) + 1.0);
  }
  return static_cast<double>(L) / (static_cast<double>(L) + 1.0);
}

inline RewardLensResult trace(const RewardModelBundle& m,
                              const PreferencePair& pair) {
  pair.validate();
  const auto cache_pref = forward_with_cache(m, pair.prompt, pair.preferred);
  const auto cache_dis = forward_with_cache(m, pair.prompt, pair.dispreferred);

  RewardLensResult r;
  const int L = m.config.n_layers;
  for (int l = -1; l < L; ++l) r.layers.push_back(l);
  r.lens_preferred = detail::lens_values(m, cache_pref);
  r.lens_dispreferred = detail::lens_values(m, cache_dis);
  r.reward_preferred = cache_pref.reward;
  r.reward_dispreferred = cache_dis.reward;
  r.has_dispreferred = true;
  r.differential.resize(r.lens_preferred.size());
  for (std::size_t i = 0; i < r.differential.size(); ++i)
    r.differential[i] = r.lens_preferred[i] - r.lens_dispreferred[i];
  r.marginal_contributions.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    r.marginal_contributions[static_cast<std::size_t>(l)] =
        r.differential[static_cast<std::size_t>(l + 1)] -
        r.differential[static_cast<std::size_t>(l)];
  r.crystallisation_layer = crystallisation_depth(r);
  return r;
}

inline RewardLensResult trace_single(const RewardModelBundle& m,
                                     const std::string& prompt,
                                     const std::string& response) {
  const auto cache = forward_with_cache(m, prompt, response);
  RewardLensResult r;
  const int L = m.config.n_layers;
  for (int l = -1; l < L; ++l) r.layers.push_back(l);
  r.lens_preferred = detail::lens_values(m, cache);
  r.lens_dispreferred.assign(r.lens_preferred.size(), 0.0);
  r.reward_preferred = cache.reward;
  r.has_dispreferred = false;
  r.marginal_contributions.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    r.marginal_contributions[static_cast<std::size_t>(l)] =
        r.lens_preferred[static_cast<std::size_t>(l + 1)] -
        r.lens_preferred[static_cast<std::size_t>(l)];
  return r;
}

}  // namespace rewardlens
