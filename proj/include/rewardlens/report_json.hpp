#pragma once

// Report serialisation (ordered JSON so byte output is reproducible) and a
// small schema checker covering the subset of JSON Schema the shipped
// schema files use: type, required, properties, items, enum.

#include <json.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rewardlens/attribution.hpp"
#include "rewardlens/comparator.hpp"
#include "rewardlens/divergence.hpp"
#include "rewardlens/geometry.hpp"
#include "rewardlens/lens.hpp"
#include "rewardlens/patching.hpp"
#include "rewardlens/probes.hpp"
#include "rewardlens/sae.hpp"

namespace rewardlens {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline ordered_json vec_to_json(const Vec& v) {
  ordered_json arr = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline ordered_json mat_to_json(const Mat& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    rows.push_back(vec_to_json(m.row(r).transpose()));
  return rows;
}

inline ordered_json finite_or_null(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

}  // namespace detail

inline ordered_json lens_to_json(const RewardLensResult& r) {
  ordered_json j;
  j["layers"] = r.layers;
  j["lens_preferred"] = r.lens_preferred;
  j["lens_dispreferred"] = r.lens_dispreferred;
  j["differential"] = r.differential;
  j["marginal_contributions"] = r.marginal_contributions;
  j["reward_preferred"] = r.reward_preferred;
  j["reward_dispreferred"] = r.reward_dispreferred;
  j["has_dispreferred"] = r.has_dispreferred;
  j["crystallisation_depth"] =
      r.crystallisation_layer.has_value() ? ordered_json(*r.crystallisation_layer)
                                          : ordered_json(nullptr);
  return j;
}

inline ordered_json attribution_to_json(const ComponentResult& r) {
  ordered_json j;
  j["component_names"] = r.names;
  j["component_types"] = r.types;
  j["layer_indices"] = r.layer_indices;
  j["contributions_preferred"] = detail::vec_to_json(r.contributions_preferred);
  j["contributions_dispreferred"] =
      detail::vec_to_json(r.contributions_dispreferred);
  j["differential_contributions"] =
      detail::vec_to_json(r.differential_contributions);
  j["total_reward_preferred"] = r.total_reward_preferred;
  j["total_reward_dispreferred"] = r.total_reward_dispreferred;
  j["scored_reward_preferred"] = r.scored_reward_preferred;
  j["scored_reward_dispreferred"] = r.scored_reward_dispreferred;
  j["bias"] = r.bias;
  // contributions are projections of the pre-final-norm stream
  j["readout"] = "pre_final_norm";
  // 2 x (L+1) heat-map: row 0 embed then attention, row 1 MLPs
  Mat heat = Mat::Zero(2, r.n_layers + 1);
  heat(0, 0) = r.differential_contributions[0];
  for (int l = 0; l < r.n_layers; ++l) {
    heat(0, l + 1) = r.differential_contributions[1 + 2 * l];
    heat(1, l + 1) = r.differential_contributions[2 + 2 * l];
  }
  j["heatmap_differential"] = detail::mat_to_json(heat);
  return j;
}

inline ordered_json patching_to_json(const PatchingResult& r) {
  ordered_json j;
  j["mode"] = r.mode;
  j["component_names"] = r.names;
  j["component_types"] = r.types;
  j["layer_indices"] = r.layer_indices;
  j["patch_effects"] = detail::vec_to_json(r.patch_effects);
  j["original_differential"] = r.original_differential;
  j["normalized_effects"] = r.normalized_effects.has_value()
                                ? detail::vec_to_json(*r.normalized_effects)
                                : ordered_json(nullptr);
  j["zero_mode_out_of_distribution"] = r.zero_mode_out_of_distribution;
  return j;
}

inline ordered_json divergence_to_json(const DivergenceAwarePatchingResult& r) {
  ordered_json j = patching_to_json(r.patching);
  ordered_json infos = ordered_json::array();
  for (const auto& info : r.divergence_info) {
    ordered_json e;
    e["component"] = info.component;
    e["divergence_score"] = info.divergence_score;
    e["is_divergent"] = info.is_divergent;
    e["divergence_type"] = info.divergence_type;
    e["confidence"] = info.confidence;
    infos.push_back(std::move(e));
  }
  j["divergence_info"] = std::move(infos);
  j["divergent_components"] = r.divergent_components;
  j["has_pernicious_divergence"] = r.has_pernicious_divergence;
  j["reliability_score"] = r.reliability_score;
  j["flagged_low_reliability"] = r.flagged_low_reliability;
  j["threshold"] = r.threshold;
  j["degenerate_differential"] = r.degenerate_differential;
  j["constrained_components"] = r.constrained_components;
  return j;
}

inline ordered_json hacking_to_json(const HackingReport& r) {
  ordered_json j;
  j["note"] = r.note;
  j["used_shipped_defaults"] = r.used_shipped_defaults;
  ordered_json results = ordered_json::array();
  for (const auto& b : r.results) {
    ordered_json e;
    e["dimension"] = b.dimension;
    e["reward_deltas"] = b.reward_deltas;
    e["mean_delta"] = b.mean_delta;
    e["std_delta"] = b.std_delta;
    e["effect_size"] = detail::finite_or_null(b.effect_size);
    e["effect_size_infinite"] =
        b.infinite_artefact
            ? ordered_json(b.effect_size > 0 ? "+inf" : "-inf")
            : ordered_json(nullptr);
    e["infinite_artefact"] = b.infinite_artefact;
    e["undefined"] = b.undefined;
    e["pairs_tested"] = b.pairs_tested;
    e["verdict"] = b.verdict;
    results.push_back(std::move(e));
  }
  j["results"] = std::move(results);
  return j;
}

inline ordered_json cascade_to_json(const CascadeReport& r) {
  ordered_json j;
  j["dimensions_tested"] = r.dimensions_tested;
  j["per_dimension_scores"] = r.per_dimension_scores;
  j["per_dimension_deltas"] = r.per_dimension_deltas;
  j["correlation_matrix"] = detail::mat_to_json(r.correlation_matrix);
  ordered_json degen = ordered_json::array();
  for (const auto& [a, b] : r.degenerate_pairs)
    degen.push_back(ordered_json::array({a, b}));
  j["degenerate_pairs"] = std::move(degen);
  j["cascade_risk_score"] = r.cascade_risk_score;
  ordered_json corr = ordered_json::array();
  for (const auto& [a, b] : r.correlated_pairs)
    corr.push_back(ordered_json::array({a, b}));
  j["correlated_pairs"] = std::move(corr);
  j["cascade_clusters"] = r.cascade_clusters;
  j["primary_failure_mode"] = r.primary_failure_mode;
  j["recommendations"] = r.recommendations;
  j["corr_threshold"] = r.corr_threshold;
  j["truncated_to_common_length"] = r.truncated_to_common_length;
  return j;
}

inline ordered_json cross_validation_to_json(const CrossValidationTable& t) {
  ordered_json j;
  ordered_json entries = ordered_json::array();
  for (const auto& e : t.entries) {
    ordered_json row;
    row["cascade_dimension"] = e.cascade_dimension;
    row["hacking_dimension"] = e.hacking_dimension;
    row["correlation"] = e.correlation;
    row["degenerate"] = e.degenerate;
    row["overlap"] = e.overlap;
    entries.push_back(std::move(row));
  }
  j["entries"] = std::move(entries);
  j["warning_no_overlap"] = t.warning_no_overlap;
  return j;
}

inline ordered_json distortion_to_json(const DistortionReport& r) {
  ordered_json j;
  j["quality_dimensions"] = r.quality_dimensions;
  j["probe_names"] = r.probe_names;
  j["coverage_matrix"] = detail::mat_to_json(r.coverage_matrix);
  j["effective_coverage"] = detail::vec_to_json(r.effective_coverage);
  j["per_dimension_distortion"] = detail::vec_to_json(r.per_dimension_distortion);
  j["under_covered_dimensions"] = r.under_covered_dimensions;
  j["predicted_hacking_severity"] = r.predicted_hacking_severity;
  j["recommendations"] = r.recommendations;
  j["flat_normalisation"] = r.flat_normalisation;
  j["amplification_tool_count"] = r.amplification_tool_count;
  return j;
}

inline ordered_json conflict_to_json(const ConflictReport& r) {
  ordered_json j;
  j["term_names"] = r.term_names;
  j["term_directions"] = detail::mat_to_json(r.term_directions);
  j["similarity_matrix"] = detail::mat_to_json(r.similarity_matrix);
  j["relationship_matrix"] = r.relationship_matrix;
  ordered_json pairs = ordered_json::array();
  for (const auto& pc : r.pairwise_analysis) {
    ordered_json e;
    e["term_a"] = pc.term_a;
    e["term_b"] = pc.term_b;
    e["cosine"] = pc.cosine;
    e["relationship"] = pc.relationship;
    e["severity"] = pc.severity;
    e["recommendation"] = pc.recommendation;
    pairs.push_back(std::move(e));
  }
  j["pairwise_analysis"] = std::move(pairs);
  ordered_json conflicts = ordered_json::array();
  for (const auto& [a, b] : r.in_conflict_pairs)
    conflicts.push_back(ordered_json::array({a, b}));
  j["in_conflict_pairs"] = std::move(conflicts);
  j["overall_conflict_score"] = r.overall_conflict_score;
  j["monitorability_risk"] = r.monitorability_risk;
  return j;
}

inline ordered_json concepts_to_json(const std::vector<ConceptInfo>& infos,
                                     double alignment_threshold) {
  ordered_json j;
  j["alignment_threshold"] = alignment_threshold;
  ordered_json list = ordered_json::array();
  std::vector<std::string> aligned, anti, high_risk;
  for (const auto& c : infos) {
    ordered_json e;
    e["name"] = c.name;
    e["direction"] = detail::vec_to_json(c.direction);
    e["reward_alignment"] = c.reward_alignment;
    e["mean_activation_positive"] = c.mean_activation_positive;
    e["mean_activation_negative"] = c.mean_activation_negative;
    e["separability"] = c.separability;
    e["is_reward_aligned"] = c.is_reward_aligned;
    e["hacking_risk"] = c.hacking_risk;
    list.push_back(std::move(e));
    if (c.is_reward_aligned && c.reward_alignment > 0) aligned.push_back(c.name);
    if (c.is_reward_aligned && c.reward_alignment < 0) anti.push_back(c.name);
    if (c.hacking_risk == "high") high_risk.push_back(c.name);
  }
  j["concepts"] = std::move(list);
  j["reward_aligned_concepts"] = aligned;
  j["anti_reward_concepts"] = anti;
  j["high_risk_concepts"] = high_risk;
  j["overall_hacking_risk"] = high_risk.empty() ? "low" : "high";
  return j;
}

inline ordered_json dose_response_to_json(const DoseResponse& r) {
  ordered_json j;
  j["concept"] = r.concept_name;
  j["layer"] = r.layer;
  j["alphas"] = detail::vec_to_json(r.alphas);
  j["rewards"] = detail::vec_to_json(r.rewards);
  j["deltas"] = detail::vec_to_json(r.deltas);
  j["causal_slope"] = r.causal_slope;
  j["linearity_residual"] = r.linearity_residual;
  j["baseline_reward"] = r.baseline_reward;
  j["lens_rewards"] = detail::vec_to_json(r.lens_rewards);
  j["lens_deltas"] = detail::vec_to_json(r.lens_deltas);
  j["lens_slope"] = r.lens_slope;
  j["lens_linearity_residual"] = r.lens_linearity_residual;
  j["lens_baseline"] = r.lens_baseline;
  return j;
}

inline ordered_json comparison_to_json(const ComparisonResult& r) {
  ordered_json j;
  j["model_names"] = r.model_names;
  ordered_json cryst = ordered_json::array();
  for (const auto& c : r.crystallization_layers)
    cryst.push_back(c.has_value() ? ordered_json(*c) : ordered_json(nullptr));
  j["crystallization_layers"] = std::move(cryst);
  j["depth_grid"] = detail::vec_to_json(r.depth_grid);
  j["curves"] = detail::mat_to_json(r.curves);
  j["formation_correlations"] = detail::mat_to_json(r.formation_correlations);
  j["degenerate_trajectory"] = r.degenerate_trajectory;
  ordered_json lenses = ordered_json::array();
  for (const auto& lens : r.lens_results) lenses.push_back(lens_to_json(lens));
  j["lens_results"] = std::move(lenses);
  if (!r.attribution_results.empty()) {
    ordered_json attrs = ordered_json::array();
    for (const auto& a : r.attribution_results)
      attrs.push_back(attribution_to_json(a));
    j["attribution_results"] = std::move(attrs);
  }
  return j;
}

inline ordered_json sae_features_to_json(const std::vector<FeatureInfo>& infos,
                                         const TopKSAEState& s, int layer) {
  ordered_json j;
  j["layer"] = layer;
  j["d"] = s.d;
  j["n_features"] = s.n_features;
  j["k"] = s.k;
  j["training_steps"] = s.step;
  ordered_json feats = ordered_json::array();
  for (const auto& f : infos) {
    ordered_json e;
    e["index"] = f.index;
    e["reward_alignment"] = f.reward_alignment;
    e["mean_activation"] = f.mean_activation;
    e["activation_frequency"] = f.activation_frequency;
    e["top_activating_indices"] = f.top_activating_indices;
    e["top_activating_values"] = f.top_activating_values;
    feats.push_back(std::move(e));
  }
  j["features"] = std::move(feats);
  return j;
}

// ---------------------------------------------------------------- schema

// Minimal JSON-schema checker: type / required / properties / items / enum.
inline bool validate_against_schema(const ordered_json& doc,
                                    const ordered_json& schema,
                                    std::string* error = nullptr,
                                    const std::string& where = "$") {
  auto set_error = [&](const std::string& msg) {
    if (error) *error = where + ": " + msg;
    return false;
  };

  if (schema.contains("type")) {
    const auto matches = [&](const std::string& t) {
      if (t == "object") return doc.is_object();
      if (t == "array") return doc.is_array();
      if (t == "string") return doc.is_string();
      if (t == "number") return doc.is_number();
      if (t == "integer") return doc.is_number_integer();
      if (t == "boolean") return doc.is_boolean();
      if (t == "null") return doc.is_null();
      return false;
    };
    bool ok = false;
    if (schema["type"].is_array()) {
      for (const auto& t : schema["type"]) ok = ok || matches(t.get<std::string>());
    } else {
      ok = matches(schema["type"].get<std::string>());
    }
    if (!ok) return set_error("type mismatch");
  }

  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& v : schema["enum"]) ok = ok || v == doc;
    if (!ok) return set_error("value not in enum");
  }

  if (schema.contains("required") && doc.is_object()) {
    for (const auto& key : schema["required"])
      if (!doc.contains(key.get<std::string>()))
        return set_error("missing required field " + key.get<std::string>());
  }

  if (schema.contains("properties") && doc.is_object()) {
    for (auto it = schema["properties"].begin(); it != schema["properties"].end();
         ++it)
      if (doc.contains(it.key()))
        if (!validate_against_schema(doc[it.key()], it.value(), error,
                                     where + "." + it.key()))
          return false;
  }

  if (schema.contains("items") && doc.is_array()) {
    std::size_t i = 0;
    for (const auto& item : doc) {
      if (!validate_against_schema(item, schema["items"], error,
                                   where + "[" + std::to_string(i) + "]"))
        return false;
      ++i;
    }
  }
  return true;
}

}  // namespace rewardlens
