#pragma once

// Reward-geometry analyses: contrastive term directions with pairwise
// conflict classification, concept vectors with reward alignment and
// hacking-risk flags, and causal dose-response curves under residual-stream
// addition.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rewardlens/engine.hpp"
#include "rewardlens/model.hpp"
#include "rewardlens/numerics.hpp"

namespace rewardlens {

using ContrastivePairs = std::map<std::string, std::vector<PreferencePair>>;

namespace detail {

inline int resolve_layer(const RewardModelBundle& m, std::optional<int> layer) {
  const int l = layer.value_or(m.config.n_layers - 1);
  require(l >= -1 && l < m.config.n_layers, ErrorKind::argument,
          "layer out of range");
  return l;
}

// mean residual-stream delta (preferred minus dispreferred) at the final
// token of the chosen layer; errors out when the mean vanishes
inline Vec mean_contrast_delta(const RewardModelBundle& m,
                               const std::string& name,
                               const std::vector<PreferencePair>& pairs,
                               int layer) {
  require(!pairs.empty(), ErrorKind::argument,
          "term '" + name + "' has no contrastive pairs");
  Vec mean = Vec::Zero(m.config.d_model);
  for (const auto& pair : pairs) {
    pair.validate();
    const auto pref = forward_with_cache(m, pair.prompt, pair.preferred);
    const auto dis = forward_with_cache(m, pair.prompt, pair.dispreferred);
    mean += pref.residual_at(layer) - dis.residual_at(layer);
  }
  mean /= static_cast<double>(pairs.size());
  require(mean.norm() > 0.0, ErrorKind::degenerate_input,
          "term '" + name + "': contrastive deltas average to zero");
  return mean;
}

}  // namespace detail

// ------------------------------------------------------------- conflicts

inline std::map<std::string, Vec> learn_term_directions(
    const RewardModelBundle& m, const ContrastivePairs& term_pairs,
    std::optional<int> layer = std::nullopt) {
  require(!term_pairs.empty(), ErrorKind::argument,
          "learn_term_directions: no terms");
  const int l = detail::resolve_layer(m, layer);
  std::map<std::string, Vec> out;
  for (const auto& [name, pairs] : term_pairs) {
    Vec mean = detail::mean_contrast_delta(m, name, pairs, l);
    out[name] = mean / mean.norm();
  }
  return out;
}

// Thresholds: aligned above 0.5, orthogonal inside (-0.2, 0.2), in-conflict
// below -0.3, the two gaps classified by sign.
inline std::string classify_pair(double cos) {
  require(cos >= -1.0 - 1e-9 && cos <= 1.0 + 1e-9, ErrorKind::argument,
          "classify_pair: cosine outside [-1, 1]");
  if (cos > 0.5) return "aligned";
  if (cos < -0.3) return "in_conflict";
  if (std::fabs(cos) < 0.2) return "orthogonal";
  return cos >= 0.2 ? "weakly_aligned" : "weakly_opposed";
}

struct PairwiseConflict {
  std::string term_a, term_b;
  double cosine = 0.0;
  std::string relationship;
  double severity = 0.0;  // how opposed the pair is; zero unless negative
  std::string recommendation;
};

struct ConflictReport {
  std::vector<std::string> term_names;
  Mat term_directions;  // one unit row per term
  Mat similarity_matrix;
  std::vector<std::vector<std::string>> relationship_matrix;
  std::vector<PairwiseConflict> pairwise_analysis;
  std::vector<std::pair<std::string, std::string>> in_conflict_pairs;
  double overall_conflict_score = 0.0;  // fraction of pairs in conflict
  std::string monitorability_risk;      // heuristic: high iff any conflict
};

inline ConflictReport analyze_conflicts(const std::vector<std::string>& names,
                                        const Mat& directions) {
  require(names.size() >= 2, ErrorKind::argument,
          "analyze_conflicts: need at least 2 terms");
  require(directions.rows() == static_cast<Eigen::Index>(names.size()),
          ErrorKind::shape_mismatch,
          "analyze_conflicts: one direction row per term");
  const auto n = static_cast<Eigen::Index>(names.size());

  ConflictReport r;
  r.term_names = names;
  r.term_directions = directions;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double len = r.term_directions.row(i).norm();
    require(len > 0.0, ErrorKind::degenerate_input,
            "analyze_conflicts: zero-norm direction for " + names[static_cast<std::size_t>(i)]);
    r.term_directions.row(i) /= len;
  }

  r.similarity_matrix = Mat::Identity(n, n);
  r.relationship_matrix.assign(static_cast<std::size_t>(n),
                               std::vector<std::string>(static_cast<std::size_t>(n), "aligned"));
  std::size_t conflicts = 0;
  std::size_t pairs = 0;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const double c =
          cosine(r.term_directions.row(a).transpose(), r.term_directions.row(b).transpose());
      r.similarity_matrix(a, b) = c;
      r.similarity_matrix(b, a) = c;
      PairwiseConflict pc;
      pc.term_a = names[static_cast<std::size_t>(a)];
      pc.term_b = names[static_cast<std::size_t>(b)];
      pc.cosine = c;
      pc.relationship = classify_pair(c);
      pc.severity = std::max(0.0, -c);
      if (pc.relationship == "in_conflict") {
        pc.recommendation =
            "jointly optimising these terms rewards hiding one of them; "
            "monitor or separate the objectives";
        r.in_conflict_pairs.push_back({pc.term_a, pc.term_b});
        ++conflicts;
      } else if (pc.relationship == "orthogonal") {
        pc.recommendation = "independent terms; safe to combine";
      } else {
        pc.recommendation = "no conflict detected";
      }
      r.relationship_matrix[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
          pc.relationship;
      r.relationship_matrix[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] =
          pc.relationship;
      r.pairwise_analysis.push_back(std::move(pc));
      ++pairs;
    }
  }
  r.overall_conflict_score =
      pairs == 0 ? 0.0 : static_cast<double>(conflicts) / static_cast<double>(pairs);
  r.monitorability_risk = conflicts > 0 ? "high" : "low";
  return r;
}

inline ConflictReport analyze_conflicts_from_pairs(
    const RewardModelBundle& m, const ContrastivePairs& term_pairs,
    std::optional<int> layer = std::nullopt) {
  const auto dirs = learn_term_directions(m, term_pairs, layer);
  std::vector<std::string> names;
  Mat rows(static_cast<Eigen::Index>(dirs.size()), m.config.d_model);
  Eigen::Index i = 0;
  for (const auto& [name, v] : dirs) {
    names.push_back(name);
    rows.row(i++) = v.transpose();
  }
  return analyze_conflicts(names, rows);
}

// Per-objective rows of a multi-objective head, normalised and compared.
inline ConflictReport analyze_multi_objective_model(
    const RewardModelBundle& m,
    const std::vector<std::string>& objective_names = {}) {
  const Mat dirs = m.adapter().per_objective_directions(m);
  require(dirs.rows() >= 2, ErrorKind::argument,
          "analyze_multi_objective_model: needs at least 2 objectives");
  std::vector<std::string> names = objective_names;
  if (names.empty())
    for (Eigen::Index i = 0; i < dirs.rows(); ++i)
      names.push_back("objective_" + std::to_string(i));
  require(names.size() == static_cast<std::size_t>(dirs.rows()),
          ErrorKind::argument,
          "analyze_multi_objective_model: name count mismatch");
  return analyze_conflicts(names, dirs);
}

// --------------------------------------------------------------- concepts

struct ConceptInfo {
  std::string name;
  Vec direction;  // unit
  double reward_alignment = 0.0;  // cosine with the reward direction
  double mean_activation_positive = 0.0;
  double mean_activation_negative = 0.0;
  double separability = 0.0;  // norm of the unnormalised mean delta
  bool is_reward_aligned = false;
  std::string hacking_risk;  // high | medium | low | none
};

inline std::vector<ConceptInfo> extract_concepts(
    const RewardModelBundle& m, const ContrastivePairs& concept_pairs,
    std::optional<int> layer = std::nullopt, double alignment_threshold = 0.2,
    const std::set<std::string>& hackable_concepts = {}) {
  require(!concept_pairs.empty(), ErrorKind::argument,
          "extract_concepts: no concepts");
  const int l = detail::resolve_layer(m, layer);
  const Vec w_unit = m.reward_direction() / m.reward_direction().norm();

  std::vector<ConceptInfo> out;
  for (const auto& [name, pairs] : concept_pairs) {
    const Vec mean = detail::mean_contrast_delta(m, name, pairs, l);
    ConceptInfo info;
    info.name = name;
    info.separability = mean.norm();
    info.direction = mean / info.separability;
    info.reward_alignment = info.direction.dot(w_unit);
    info.is_reward_aligned =
        std::fabs(info.reward_alignment) > alignment_threshold;

    double pos = 0.0, neg = 0.0;
    for (const auto& pair : pairs) {
      const auto pref = forward_with_cache(m, pair.prompt, pair.preferred);
      const auto dis = forward_with_cache(m, pair.prompt, pair.dispreferred);
      pos += info.direction.dot(pref.residual_at(l));
      neg += info.direction.dot(dis.residual_at(l));
    }
    info.mean_activation_positive = pos / static_cast<double>(pairs.size());
    info.mean_activation_negative = neg / static_cast<double>(pairs.size());

    const bool hackable = hackable_concepts.count(name) > 0;
    if (hackable && info.is_reward_aligned)
      info.hacking_risk = "high";
    else if (hackable)
      info.hacking_risk = "medium";
    else if (info.is_reward_aligned)
      info.hacking_risk = "low";
    else
      info.hacking_risk = "none";
    out.push_back(std::move(info));
  }
  return out;
}

// ----------------------------------------------------------- dose response

inline const std::vector<double>& default_alpha_grid() {
  static const std::vector<double> grid{-2.0, -1.0, -0.5, 0.5, 1.0, 2.0};
  return grid;
}

struct DoseResponse {
  std::string concept_name;
  int layer = 0;
  Vec alphas;
  // scored readout (final norm in the path, as production scoring does)
  Vec rewards;
  Vec deltas;
  double causal_slope = 0.0;
  double linearity_residual = 0.0;
  double baseline_reward = 0.0;
  // lens-convention readout (no final norm); exactly linear at the last layer
  Vec lens_rewards;
  Vec lens_deltas;
  double lens_slope = 0.0;
  double lens_linearity_residual = 0.0;
  double lens_baseline = 0.0;
};

namespace detail {

inline ActivationCache intervened_forward(const RewardModelBundle& m,
                                          const std::string& prompt,
                                          const std::string& response,
                                          const Vec& direction, double strength,
                                          int layer) {
  InterventionDirective directive;
  directive.layer = layer;
  directive.direction = direction;
  directive.strength = strength;
  ForwardOptions opt;
  opt.intervene = &directive;
  return forward_tokens(m, m.tokenizer().encode_pair(prompt, response), opt);
}

}  // namespace detail

inline double intervene_on_concept(const RewardModelBundle& m,
                                   const std::string& prompt,
                                   const std::string& response,
                                   const Vec& direction, double strength,
                                   int layer) {
  require(layer >= 0 && layer < m.config.n_layers, ErrorKind::argument,
          "intervene_on_concept: layer out of range");
  return detail::intervened_forward(m, prompt, response, direction, strength,
                                    layer)
      .reward;
}

inline DoseResponse dose_response(
    const RewardModelBundle& m, const std::string& prompt,
    const std::string& response, const std::string& concept_name,
    const Vec& direction, std::optional<int> layer = std::nullopt,
    const std::vector<double>& alphas = default_alpha_grid()) {
  const int l = detail::resolve_layer(m, layer);
  require(l >= 0, ErrorKind::argument,
          "dose_response: intervention layer must be a block layer");
  require(!alphas.empty(), ErrorKind::argument, "dose_response: empty grid");

  DoseResponse r;
  r.concept_name = concept_name;
  r.layer = l;
  r.alphas = Vec(static_cast<Eigen::Index>(alphas.size()));
  for (std::size_t i = 0; i < alphas.size(); ++i)
    r.alphas[static_cast<Eigen::Index>(i)] = alphas[i];

  const auto baseline = forward_with_cache(m, prompt, response);
  r.baseline_reward = baseline.reward;
  r.lens_baseline = baseline.prenorm_projection;

  const auto n = static_cast<Eigen::Index>(alphas.size());
  r.rewards = Vec::Zero(n);
  r.lens_rewards = Vec::Zero(n);
  parallel_for(alphas.size(), [&](std::size_t i) {
    const auto cache = detail::intervened_forward(m, prompt, response,
                                                  direction, alphas[i], l);
    r.rewards[static_cast<Eigen::Index>(i)] = cache.reward;
    r.lens_rewards[static_cast<Eigen::Index>(i)] = cache.prenorm_projection;
  });
  r.deltas = r.rewards.array() - r.baseline_reward;
  r.lens_deltas = r.lens_rewards.array() - r.lens_baseline;

  r.causal_slope = regression_slope(r.alphas, r.deltas);
  r.lens_slope = regression_slope(r.alphas, r.lens_deltas);
  r.linearity_residual =
      (r.deltas - r.causal_slope * r.alphas).cwiseAbs().maxCoeff();
  r.lens_linearity_residual =
      (r.lens_deltas - r.lens_slope * r.alphas).cwiseAbs().maxCoeff();
  return r;
}

}  // namespace rewardlens
