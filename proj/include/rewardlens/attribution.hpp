#pragma once

// Exact per-component decomposition of the reward along the reward direction:
// embedding plus 2L sublayer contributions, preference differentials, top-k
// and by-type views, and the across-pair top-k frequency statistic.

#include <string>
#include <vector>

#include "rewardlens/engine.hpp"
#include "rewardlens/model.hpp"
#include "rewardlens/numerics.hpp"

namespace rewardlens {

// Shared component schema: index 0 is the embedding, then attn/mlp pairs per
// layer. Patching uses the same schema minus the embedding entry.
inline std::vector<std::string> component_names(int n_layers,
                                                bool include_embed = true) {
  std::vector<std::string> names;
  if (include_embed) names.push_back("embed");
  for (int l = 0; l < n_layers; ++l) {
    names.push_back("attn_L" + std::to_string(l));
    names.push_back("mlp_L" + std::to_string(l));
  }
  return names;
}

inline std::vector<std::string> component_types(int n_layers,
                                                bool include_embed = true) {
  std::vector<std::string> types;
  if (include_embed) types.push_back("embed");
  for (int l = 0; l < n_layers; ++l) {
    types.push_back("attn");
    types.push_back("mlp");
  }
  return types;
}

inline std::vector<int> component_layers(int n_layers,
                                         bool include_embed = true) {
  std::vector<int> layers;
  if (include_embed) layers.push_back(-1);
  for (int l = 0; l < n_layers; ++l) {
    layers.push_back(l);
    layers.push_back(l);
  }
  return layers;
}

struct ComponentResult {
  int n_layers = 0;
  std::vector<std::string> names;   // 2L+1 entries
  std::vector<std::string> types;
  std::vector<int> layer_indices;
  Vec contributions_preferred;
  Vec contributions_dispreferred;
  Vec differential_contributions;
  // head projections of the final pre-norm stream; the decomposition target
  double total_reward_preferred = 0.0;
  double total_reward_dispreferred = 0.0;
  // the model's scored rewards (final norm applied), for reference
  double scored_reward_preferred = 0.0;
  double scored_reward_dispreferred = 0.0;
  double bias = 0.0;  // b_r, recorded separately from the contributions
};

namespace detail {

inline Vec component_projections(const RewardModelBundle& m,
                                 const ActivationCache& cache) {
  const int L = m.config.n_layers;
  const Vec& w = m.reward_direction();
  Vec out(2 * L + 1);
  out[0] = w.dot(cache.residual_embed);
  for (int l = 0; l < L; ++l) {
    out[1 + 2 * l] = w.dot(cache.attn_out[static_cast<std::size_t>(l)]);
    out[2 + 2 * l] = w.dot(cache.mlp_out[static_cast<std::size_t>(l)]);
  }
  return out;
}

}  // namespace detail

inline ComponentResult attribute(const RewardModelBundle& m,
                                 const PreferencePair& pair) {
  pair.validate();
  const auto cache_pref = forward_with_cache(m, pair.prompt, pair.preferred);
  const auto cache_dis = forward_with_cache(m, pair.prompt, pair.dispreferred);

  ComponentResult r;
  r.n_layers = m.config.n_layers;
  r.names = component_names(r.n_layers);
  r.types = component_types(r.n_layers);
  r.layer_indices = component_layers(r.n_layers);
  r.contributions_preferred = detail::component_projections(m, cache_pref);
  r.contributions_dispreferred = detail::component_projections(m, cache_dis);
  r.differential_contributions =
      r.contributions_preferred - r.contributions_dispreferred;
  r.total_reward_preferred = cache_pref.prenorm_projection;
  r.total_reward_dispreferred = cache_dis.prenorm_projection;
  r.scored_reward_preferred = cache_pref.reward;
  r.scored_reward_dispreferred = cache_dis.reward;
  r.bias = m.reward_bias();
  return r;
}

enum class AttributionField { differential, preferred, dispreferred };

inline const Vec& select_field(const ComponentResult& r, AttributionField by) {
  switch (by) {
    case AttributionField::differential: return r.differential_contributions;
    case AttributionField::preferred: return r.contributions_preferred;
    default: return r.contributions_dispreferred;
  }
}

struct RankedComponent {
  std::size_t index = 0;
  std::string name;
  double value = 0.0;
};

inline std::vector<RankedComponent> top_k(
    const ComponentResult& r, std::size_t k,
    AttributionField by = AttributionField::differential) {
  const Vec& field = select_field(r, by);
  const auto order = topk_indices(field.cwiseAbs(), k);
  std::vector<RankedComponent> out;
  out.reserve(k);
  for (std::size_t idx : order)
    out.push_back({idx, r.names[idx], field[static_cast<Eigen::Index>(idx)]});
  return out;
}

// flat indices of all components of one type, schema order preserved
inline std::vector<std::size_t> by_type(const ComponentResult& r,
                                        const std::string& type) {
  require(type == "attn" || type == "mlp" || type == "embed",
          ErrorKind::argument, "by_type: unknown component type");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < r.types.size(); ++i)
    if (r.types[i] == type) out.push_back(i);
  return out;
}

// How often each component lands in a result's top-k by absolute
// differential, across a batch of results.
inline std::vector<std::size_t> top_k_frequency(
    const std::vector<ComponentResult>& results, std::size_t k) {
  require(!results.empty(), ErrorKind::argument,
          "top_k_frequency: empty result list");
  const int L = results.front().n_layers;
  for (const auto& r : results)
    require(r.n_layers == L, ErrorKind::shape_mismatch,
            "top_k_frequency: heterogeneous component schemas");
  std::vector<std::size_t> counts(static_cast<std::size_t>(2 * L + 1), 0);
  for (const auto& r : results)
    for (const auto& c : top_k(r, k, AttributionField::differential))
      counts[c.index] += 1;
  return counts;
}

}  // namespace rewardlens
