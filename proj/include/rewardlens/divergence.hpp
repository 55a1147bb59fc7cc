#pragma once

// Divergence-aware patching: per-component Gaussians fitted over clean
// final-token sublayer outputs, Mahalanobis screening of spliced activations,
// harmless/pernicious classification and a reliability score.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rewardlens/engine.hpp"
#include "rewardlens/model.hpp"
#include "rewardlens/numerics.hpp"
#include "rewardlens/patching.hpp"
#include "rewardlens/tensor_file.hpp"

namespace rewardlens {

struct DistributionEstimator {
  int n_layers = 0;
  int d = 0;
  std::size_t corpus_size = 0;
  // sublayer schema order: attn_L0, mlp_L0, attn_L1, ...
  std::vector<GaussianEstimate> estimates;

  const GaussianEstimate& component(std::size_t index) const {
    require(index < estimates.size(), ErrorKind::argument,
            "estimator: component index out of range");
    return estimates[index];
  }

  void save(const std::filesystem::path& path) const {
    TensorFile tf;
    Vec meta(3);
    meta << static_cast<double>(n_layers), static_cast<double>(d),
        static_cast<double>(corpus_size);
    tf.add_vector("meta", meta);
    for (std::size_t i = 0; i < estimates.size(); ++i) {
      const std::string p = "comp" + std::to_string(i);
      tf.add_vector(p + ".mean", estimates[i].mean);
      tf.add_matrix(p + ".cov", estimates[i].covariance);
      tf.add_scalar(p + ".reg", estimates[i].regularisation);
      tf.add_scalar(p + ".count",
                    static_cast<double>(estimates[i].sample_count));
    }
    tf.save(path);
  }

  static DistributionEstimator load(const std::filesystem::path& path) {
    const TensorFile tf = TensorFile::load(path);
    DistributionEstimator est;
    const Vec meta = tf.vector("meta");
    require(meta.size() == 3, ErrorKind::corrupt_blob, "estimator: bad meta");
    est.n_layers = static_cast<int>(meta[0]);
    est.d = static_cast<int>(meta[1]);
    est.corpus_size = static_cast<std::size_t>(meta[2]);
    require(est.n_layers >= 1 && est.d >= 1, ErrorKind::corrupt_blob,
            "estimator: bad meta values");
    const std::size_t n = static_cast<std::size_t>(2 * est.n_layers);
    est.estimates.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string p = "comp" + std::to_string(i);
      auto& g = est.estimates[i];
      g.mean = tf.vector(p + ".mean");
      g.covariance = tf.matrix(p + ".cov");
      g.regularisation = tf.scalar(p + ".reg");
      g.sample_count = static_cast<std::size_t>(tf.scalar(p + ".count"));
      require(g.mean.size() == est.d && g.covariance.rows() == est.d &&
                  g.covariance.cols() == est.d,
              ErrorKind::shape_mismatch, "estimator: component shape mismatch");
    }
    return est;
  }
};

// Clean-forward activation statistics per patchable component. The corpus
// must hold at least max(2, d/4) inputs.
inline DistributionEstimator fit_distribution(
    const RewardModelBundle& m,
    const std::vector<std::pair<std::string, std::string>>& corpus) {
  const int d = m.config.d_model;
  const std::size_t min_size =
      std::max<std::size_t>(2, static_cast<std::size_t>(d / 4));
  require(corpus.size() >= min_size, ErrorKind::degenerate_input,
          "fit_distribution: corpus too small (need at least " +
              std::to_string(min_size) + " inputs)");

  const int L = m.config.n_layers;
  std::vector<Mat> samples(static_cast<std::size_t>(2 * L),
                           Mat(static_cast<Eigen::Index>(corpus.size()), d));
  std::vector<ActivationCache> caches(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t i) {
    caches[i] = forward_with_cache(m, corpus[i].first, corpus[i].second);
  });
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (int l = 0; l < L; ++l) {
      samples[static_cast<std::size_t>(2 * l)].row(static_cast<Eigen::Index>(i)) =
          caches[i].attn_out[static_cast<std::size_t>(l)].transpose();
      samples[static_cast<std::size_t>(2 * l + 1)].row(static_cast<Eigen::Index>(i)) =
          caches[i].mlp_out[static_cast<std::size_t>(l)].transpose();
    }
  }

  DistributionEstimator est;
  est.n_layers = L;
  est.d = d;
  est.corpus_size = corpus.size();
  est.estimates.reserve(samples.size());
  for (const auto& s : samples) est.estimates.push_back(fit_gaussian(s));
  return est;
}

struct DivergenceInfo {
  std::string component;
  double divergence_score = 0.0;  // sigma units
  bool is_divergent = false;
  std::string divergence_type = "none";  // none | harmless | pernicious
  double confidence = 0.0;
};

// Off-manifold with a small effect reads as null-space; with a large effect
// it reads as a spurious circuit activation. The relative rule falls back to
// an absolute cutoff when the pair has no usable differential.
inline std::string classify_divergence(bool is_divergent, double effect,
                                       double original_differential) {
  if (!is_divergent) return "none";
  const double scale = std::fabs(original_differential) >= kZeroDifferential
                           ? 0.1 * std::fabs(original_differential)
                           : 0.1 * kZeroDifferential;
  return std::fabs(effect) < scale ? "harmless" : "pernicious";
}

// Heuristic confidence: grows with the score once divergent, shrinks toward
// the threshold otherwise.
inline double divergence_confidence(double score, double threshold,
                                    bool is_divergent) {
  if (is_divergent) return std::min(1.0, score / (2.0 * threshold));
  return 1.0 - score / threshold;
}

struct DivergenceAwarePatchingResult {
  PatchingResult patching;
  std::vector<DivergenceInfo> divergence_info;
  std::vector<std::string> divergent_components;
  bool has_pernicious_divergence = false;
  double reliability_score = 1.0;
  bool flagged_low_reliability = false;
  double threshold = 2.0;
  bool degenerate_differential = false;  // absolute classification fallback
  std::vector<bool> constrained_components;  // set by constrained_patch
};

// Shrink a toward the estimator mean until its Mahalanobis score equals the
// threshold. Radial in the metric: a' = mu + (a - mu) * (threshold / score).
inline Vec shrink_to_threshold(const Vec& a, const GaussianEstimate& g,
                               double threshold, double score) {
  return g.mean + (a - g.mean) * (threshold / score);
}

namespace detail {

inline DivergenceAwarePatchingResult divergence_patch_impl(
    const RewardModelBundle& m, const DistributionEstimator& est,
    const PreferencePair& pair, PatchMode mode, double threshold,
    bool constrain) {
  require(threshold > 0.0, ErrorKind::argument,
          "divergence patch: threshold must be positive");
  require(est.n_layers == m.config.n_layers && est.d == m.config.d_model,
          ErrorKind::argument,
          "divergence patch: estimator does not cover this model");

  const auto setup = prepare_patch(m, pair, mode);
  const int L = m.config.n_layers;
  const auto n = static_cast<std::size_t>(2 * L);

  DivergenceAwarePatchingResult r;
  r.threshold = threshold;
  r.patching.n_layers = L;
  r.patching.names = component_names(L, false);
  r.patching.types = component_types(L, false);
  r.patching.layer_indices = component_layers(L, false);
  r.patching.mode = patch_mode_name(mode);
  r.patching.zero_mode_out_of_distribution = mode == PatchMode::zero;
  r.patching.patch_effects = Vec::Zero(2 * L);
  r.divergence_info.resize(n);
  r.constrained_components.assign(n, false);

  parallel_for(n, [&](std::size_t i) {
    const int layer = static_cast<int>(i / 2);
    const bool is_mlp = (i % 2) == 1;
    auto outcome = run_single_patch(m, setup, layer, is_mlp);
    const GaussianEstimate& g = est.component(i);
    const double score = mahalanobis(outcome.spliced_final_activation, g);
    const bool divergent = score > threshold;
    if (constrain && divergent) {
      const Vec shrunk = shrink_to_threshold(outcome.spliced_final_activation,
                                             g, threshold, score);
      outcome = run_single_patch(m, setup, layer, is_mlp, shrunk);
      r.constrained_components[i] = true;
    }
    r.patching.patch_effects[static_cast<Eigen::Index>(i)] = outcome.effect;
    DivergenceInfo& info = r.divergence_info[i];
    info.component = r.patching.names[i];
    info.divergence_score = score;
    info.is_divergent = divergent;
    info.confidence = divergence_confidence(score, threshold, divergent);
  });

  r.patching.original_differential = prenorm_differential(m, pair);
  r.degenerate_differential =
      std::fabs(r.patching.original_differential) < kZeroDifferential;
  if (!r.degenerate_differential)
    r.patching.normalized_effects =
        Vec(r.patching.patch_effects / r.patching.original_differential);

  std::size_t n_pernicious = 0;
  for (std::size_t i = 0; i < n; ++i) {
    DivergenceInfo& info = r.divergence_info[i];
    info.divergence_type = classify_divergence(
        info.is_divergent, r.patching.patch_effects[static_cast<Eigen::Index>(i)],
        r.patching.original_differential);
    if (info.is_divergent) r.divergent_components.push_back(info.component);
    if (info.divergence_type == "pernicious") ++n_pernicious;
  }
  r.has_pernicious_divergence = n_pernicious > 0;
  r.reliability_score =
      1.0 - static_cast<double>(n_pernicious) / static_cast<double>(n);
  r.flagged_low_reliability = r.reliability_score < 0.7;
  return r;
}

}  // namespace detail

inline DivergenceAwarePatchingResult patch_with_divergence_check(
    const RewardModelBundle& m, const DistributionEstimator& est,
    const PreferencePair& pair, PatchMode mode, double threshold = 2.0) {
  return detail::divergence_patch_impl(m, est, pair, mode, threshold, false);
}

// As patch_with_divergence_check, but spliced activations beyond the
// threshold are radially shrunk onto the threshold shell before the forward
// continues.
inline DivergenceAwarePatchingResult constrained_patch(
    const RewardModelBundle& m, const DistributionEstimator& est,
    const PreferencePair& pair, PatchMode mode, double threshold = 2.0) {
  return detail::divergence_patch_impl(m, est, pair, mode, threshold, true);
}

}  // namespace rewardlens
