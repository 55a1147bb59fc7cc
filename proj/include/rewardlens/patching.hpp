#pragma once

// Causal activation patching. A patch forces one sublayer's full-sequence
// output to a spliced tensor: source-run activations over the shared token
// prefix, the target run's own activations beyond it (zero mode zeroes the
// whole length instead). The readout is the change in the pre-norm head
// projection of the final stream.

#include <optional>
#include <string>
#include <vector>

#include "rewardlens/attribution.hpp"
#include "rewardlens/engine.hpp"
#include "rewardlens/model.hpp"
#include "rewardlens/numerics.hpp"

namespace rewardlens {

enum class PatchMode { noising, denoising, zero };

inline std::string patch_mode_name(PatchMode m) {
  switch (m) {
    case PatchMode::noising: return "noising";
    case PatchMode::denoising: return "denoising";
    default: return "zero";
  }
}

inline PatchMode parse_patch_mode(const std::string& s) {
  if (s == "noising") return PatchMode::noising;
  if (s == "denoising") return PatchMode::denoising;
  if (s == "zero") return PatchMode::zero;
  fail(ErrorKind::argument, "unknown patch mode '" + s + "'");
}

struct PatchingResult {
  int n_layers = 0;
  // sublayer components only (attn_L0, mlp_L0, ...), schema-compatible with
  // ComponentResult minus its embed entry
  std::vector<std::string> names;
  std::vector<std::string> types;
  std::vector<int> layer_indices;
  Vec patch_effects;  // 2L, reward units
  std::string mode;
  double original_differential = 0.0;  // pre-norm readout differential
  std::optional<Vec> normalized_effects;  // absent for a ~0 differential
  bool zero_mode_out_of_distribution = false;
};

namespace detail {

struct PatchSetup {
  std::vector<int> target_tokens;
  ActivationCache target_clean;   // full sequences
  ActivationCache source_clean;   // full sequences; empty tokens in zero mode
  std::size_t shared_prefix = 0;  // longest common token prefix
  PatchMode mode = PatchMode::noising;
};

inline std::size_t common_token_prefix(const std::vector<int>& a,
                                       const std::vector<int>& b) {
  std::size_t n = 0;
  while (n < a.size() && n < b.size() && a[n] == b[n]) ++n;
  return n;
}

inline PatchSetup prepare_patch(const RewardModelBundle& m,
                                const PreferencePair& pair, PatchMode mode) {
  pair.validate();
  PatchSetup s;
  s.mode = mode;
  const auto& tok = m.tokenizer();
  const auto pref_tokens = tok.encode_pair(pair.prompt, pair.preferred);
  const auto dis_tokens = tok.encode_pair(pair.prompt, pair.dispreferred);

  const bool target_is_pref = mode != PatchMode::denoising;
  s.target_tokens = target_is_pref ? pref_tokens : dis_tokens;
  const auto& source_tokens = target_is_pref ? dis_tokens : pref_tokens;

  ForwardOptions full;
  full.full_sequences = true;
  s.target_clean = forward_tokens(m, s.target_tokens, full);
  if (mode != PatchMode::zero) {
    s.source_clean = forward_tokens(m, source_tokens, full);
    s.shared_prefix = common_token_prefix(s.target_tokens, source_tokens);
  }
  return s;
}

inline Mat spliced_replacement(const PatchSetup& s, int layer, bool is_mlp) {
  const auto li = static_cast<std::size_t>(layer);
  const Mat& target_full =
      is_mlp ? s.target_clean.full_mlp_out[li] : s.target_clean.full_attn_out[li];
  if (s.mode == PatchMode::zero)
    return Mat::Zero(target_full.rows(), target_full.cols());
  Mat out = target_full;
  const auto keep = static_cast<Eigen::Index>(
      std::min(s.shared_prefix, static_cast<std::size_t>(target_full.rows())));
  const Mat& source_full =
      is_mlp ? s.source_clean.full_mlp_out[li] : s.source_clean.full_attn_out[li];
  out.topRows(keep) = source_full.topRows(keep);
  return out;
}

struct PatchOutcome {
  double effect = 0.0;
  Vec spliced_final_activation;  // final-token row of the forced tensor
  double patched_prenorm = 0.0;
  double patched_reward = 0.0;
};

// override_final_row, when set, replaces the final-token row of the spliced
// tensor before the forward (used by the constrained patcher).
inline PatchOutcome run_single_patch(
    const RewardModelBundle& m, const PatchSetup& s, int layer, bool is_mlp,
    const std::optional<Vec>& override_final_row = std::nullopt) {
  require(layer >= 0 && layer < m.config.n_layers, ErrorKind::argument,
          "patch: layer out of range");
  PatchDirective directive;
  directive.layer = layer;
  directive.is_mlp = is_mlp;
  directive.replacement = spliced_replacement(s, layer, is_mlp);
  if (override_final_row.has_value())
    directive.replacement.row(directive.replacement.rows() - 1) =
        override_final_row->transpose();

  PatchOutcome out;
  out.spliced_final_activation =
      directive.replacement.row(directive.replacement.rows() - 1).transpose();

  ForwardOptions opt;
  opt.patch = &directive;
  const auto patched = forward_tokens(m, s.target_tokens, opt);
  out.patched_prenorm = patched.prenorm_projection;
  out.patched_reward = patched.reward;
  out.effect = s.target_clean.prenorm_projection - patched.prenorm_projection;
  return out;
}

inline double prenorm_differential(const RewardModelBundle& m,
                                   const PreferencePair& pair) {
  const auto pref = forward_with_cache(m, pair.prompt, pair.preferred);
  const auto dis = forward_with_cache(m, pair.prompt, pair.dispreferred);
  return pref.prenorm_projection - dis.prenorm_projection;
}

}  // namespace detail

inline double patch_single_component(const RewardModelBundle& m,
                                     const PreferencePair& pair, int layer,
                                     const std::string& component,
                                     PatchMode mode) {
  require(component == "attn" || component == "mlp", ErrorKind::argument,
          "patch: component must be 'attn' or 'mlp'");
  const auto setup = detail::prepare_patch(m, pair, mode);
  return detail::run_single_patch(m, setup, layer, component == "mlp").effect;
}

inline PatchingResult patch_all_components(const RewardModelBundle& m,
                                           const PreferencePair& pair,
                                           PatchMode mode) {
  const auto setup = detail::prepare_patch(m, pair, mode);
  const int L = m.config.n_layers;

  PatchingResult r;
  r.n_layers = L;
  r.names = component_names(L, /*include_embed=*/false);
  r.types = component_types(L, false);
  r.layer_indices = component_layers(L, false);
  r.mode = patch_mode_name(mode);
  r.zero_mode_out_of_distribution = mode == PatchMode::zero;
  r.patch_effects = Vec::Zero(2 * L);
  parallel_for(static_cast<std::size_t>(2 * L), [&](std::size_t i) {
    const int layer = static_cast<int>(i / 2);
    const bool is_mlp = (i % 2) == 1;
    r.patch_effects[static_cast<Eigen::Index>(i)] =
        detail::run_single_patch(m, setup, layer, is_mlp).effect;
  });

  r.original_differential = detail::prenorm_differential(m, pair);
  if (std::fabs(r.original_differential) >= kZeroDifferential)
    r.normalized_effects = Vec(r.patch_effects / r.original_differential);
  return r;
}

// Rank agreement between observational attribution and causal patch effects
// over the 2L sublayer components (the embedding is excluded so both sides
// cover the same set).
inline SpearmanResult faithfulness(const ComponentResult& attr,
                                   const PatchingResult& patch) {
  require(attr.n_layers == patch.n_layers, ErrorKind::shape_mismatch,
          "faithfulness: component schemas differ");
  const Eigen::Index n = patch.patch_effects.size();
  Vec a(n), p(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a[i] = std::fabs(attr.differential_contributions[i + 1]);
    p[i] = std::fabs(patch.patch_effects[i]);
  }
  return spearman(a, p);
}

}  // namespace rewardlens
