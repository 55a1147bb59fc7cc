#pragma once

// Forward passes. Pre-norm residual blocks with causal attention (RoPE on
// q/k), ReLU MLPs, and a linear reward head behind the final norm. The
// residual stream is additive by construction, which is what every
// decomposition downstream relies on.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rewardlens/common.hpp"
#include "rewardlens/model.hpp"
#include "rewardlens/numerics.hpp"

namespace rewardlens {

namespace detail {

// Replaces one sublayer's full-sequence output during a forward.
struct PatchDirective {
  int layer = 0;
  bool is_mlp = true;
  Mat replacement;  // T x d
};

// Adds strength * direction to the final-token residual after a block.
struct InterventionDirective {
  int layer = 0;
  Vec direction;
  double strength = 0.0;
};

struct ForwardOptions {
  bool full_sequences = false;
  const PatchDirective* patch = nullptr;
  const InterventionDirective* intervene = nullptr;
};

inline Mat rows_normed(const Mat& x, NormKind kind, const Vec& gamma,
                       const Vec& beta) {
  if (kind == NormKind::identity) return x;
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    out.row(r) = layer_norm(x.row(r).transpose(), gamma, beta).transpose();
  return out;
}

inline void apply_rope(Mat& qk, int n_heads) {
  const Eigen::Index t_len = qk.rows();
  const int d = static_cast<int>(qk.cols());
  const int dh = d / n_heads;
  const int pairs = dh / 2;
  if (pairs == 0) return;
  for (Eigen::Index pos = 0; pos < t_len; ++pos) {
    for (int h = 0; h < n_heads; ++h) {
      const int base = h * dh;
      for (int i = 0; i < pairs; ++i) {
        const double theta =
            static_cast<double>(pos) *
            std::pow(10000.0, -2.0 * static_cast<double>(i) / dh);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        const double a = qk(pos, base + 2 * i);
        const double b = qk(pos, base + 2 * i + 1);
        qk(pos, base + 2 * i) = a * c - b * s;
        qk(pos, base + 2 * i + 1) = a * s + b * c;
      }
    }
  }
}

inline Mat causal_attention(const Mat& a_in, const AttentionWeights& w,
                            int n_heads) {
  const Eigen::Index t_len = a_in.rows();
  const int d = static_cast<int>(a_in.cols());
  const int dh = d / n_heads;
  Mat q = a_in * w.Wq;
  Mat k = a_in * w.Wk;
  const Mat v = a_in * w.Wv;
  apply_rope(q, n_heads);
  apply_rope(k, n_heads);

  Mat ctx = Mat::Zero(t_len, d);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int h = 0; h < n_heads; ++h) {
    const int base = h * dh;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      Vec scores(t + 1);
      for (Eigen::Index s = 0; s <= t; ++s)
        scores[s] = q.row(t).segment(base, dh)
                        .dot(k.row(s).segment(base, dh)) * inv_sqrt;
      const Vec alpha = stable_softmax(scores);
      for (Eigen::Index s = 0; s <= t; ++s)
        ctx.row(t).segment(base, dh) += alpha[s] * v.row(s).segment(base, dh);
    }
  }
  return ctx * w.Wo;
}

inline ActivationCache forward_tokens(const RewardModelBundle& m,
                                      const std::vector<int>& tokens,
                                      const ForwardOptions& opt = {}) {
  const auto& cfg = m.config;
  const int t_len = static_cast<int>(tokens.size());
  require(t_len >= 1, ErrorKind::argument, "forward: empty token sequence");
  require(t_len <= cfg.max_seq, ErrorKind::argument,
          "forward: sequence longer than max_seq");

  ActivationCache cache;
  cache.tokens = tokens;
  cache.final_token_position = t_len - 1;

  Mat x(t_len, cfg.d_model);
  for (int t = 0; t < t_len; ++t) {
    require(tokens[static_cast<std::size_t>(t)] >= 0 &&
                tokens[static_cast<std::size_t>(t)] < cfg.vocab_size(),
            ErrorKind::argument, "forward: token id out of range");
    x.row(t) = m.embedding.row(tokens[static_cast<std::size_t>(t)]);
  }
  cache.residual_embed = x.row(t_len - 1).transpose();
  if (opt.full_sequences) {
    cache.has_full_sequences = true;
    cache.full_embed = x;
  }

  const std::size_t n_layers = m.layers.size();
  cache.residual.reserve(n_layers);
  cache.attn_out.reserve(n_layers);
  cache.mlp_out.reserve(n_layers);

  if (opt.patch) {
    require(opt.patch->layer >= 0 &&
                opt.patch->layer < static_cast<int>(n_layers),
            ErrorKind::argument, "patch: layer out of range");
    require(opt.patch->replacement.rows() == t_len &&
                opt.patch->replacement.cols() == cfg.d_model,
            ErrorKind::shape_mismatch, "patch: replacement shape mismatch");
  }
  if (opt.intervene) {
    require(opt.intervene->layer >= 0 &&
                opt.intervene->layer < static_cast<int>(n_layers),
            ErrorKind::argument, "intervention: layer out of range");
    require(opt.intervene->direction.size() == cfg.d_model,
            ErrorKind::shape_mismatch, "intervention: direction length");
  }

  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = m.layers[l];
    const int li = static_cast<int>(l);

    Mat attn_mat;
    if (opt.patch && opt.patch->layer == li && !opt.patch->is_mlp) {
      attn_mat = opt.patch->replacement;
    } else {
      const Mat a_in =
          rows_normed(x, cfg.norm_kind, layer.ln1_gamma, layer.ln1_beta);
      attn_mat = causal_attention(a_in, layer.attn, cfg.n_heads);
    }
    x += attn_mat;

    Mat mlp_mat;
    if (opt.patch && opt.patch->layer == li && opt.patch->is_mlp) {
      mlp_mat = opt.patch->replacement;
    } else {
      const Mat m_in =
          rows_normed(x, cfg.norm_kind, layer.ln2_gamma, layer.ln2_beta);
      Mat hidden = (m_in * layer.mlp.W_in).rowwise() +
                   layer.mlp.b_in.transpose();
      hidden = hidden.cwiseMax(0.0);
      mlp_mat = (hidden * layer.mlp.W_out).rowwise() +
                layer.mlp.b_out.transpose();
    }
    x += mlp_mat;

    if (opt.intervene && opt.intervene->layer == li)
      x.row(t_len - 1) +=
          opt.intervene->strength * opt.intervene->direction.transpose();

    cache.attn_out.push_back(attn_mat.row(t_len - 1).transpose());
    cache.mlp_out.push_back(mlp_mat.row(t_len - 1).transpose());
    cache.residual.push_back(x.row(t_len - 1).transpose());
    if (opt.full_sequences) {
      cache.full_attn_out.push_back(attn_mat);
      cache.full_mlp_out.push_back(mlp_mat);
      cache.full_residual.push_back(x);
    }
  }

  const Vec h_final = x.row(t_len - 1).transpose();
  Vec normed = h_final;
  if (cfg.norm_kind == NormKind::layernorm)
    normed = layer_norm(h_final, m.ln_f_gamma, m.ln_f_beta);
  cache.objective_rewards = m.head_weight * normed + m.head_bias;
  cache.reward = cfg.head_kind == HeadKind::scalar
                     ? cache.objective_rewards[0]
                     : cache.objective_rewards.mean();
  cache.prenorm_projection = m.reward_direction().dot(h_final) + m.reward_bias();
  return cache;
}

}  // namespace detail

inline ActivationCache forward_with_cache(const RewardModelBundle& m,
                                          const std::string& prompt,
                                          const std::string& response,
                                          bool cache_full_sequences = false) {
  detail::ForwardOptions opt;
  opt.full_sequences = cache_full_sequences;
  return detail::forward_tokens(m, m.tokenizer().encode_pair(prompt, response),
                                opt);
}

inline double score(const RewardModelBundle& m, const std::string& prompt,
                    const std::string& response) {
  return detail::forward_tokens(m, m.tokenizer().encode_pair(prompt, response))
      .reward;
}

struct PairScore {
  double preferred = 0.0;
  double dispreferred = 0.0;
  double differential = 0.0;
};

inline PairScore score_pair(const RewardModelBundle& m,
                            const std::string& prompt,
                            const std::string& preferred,
                            const std::string& dispreferred) {
  PairScore out;
  out.preferred = score(m, prompt, preferred);
  out.dispreferred = score(m, prompt, dispreferred);
  out.differential = out.preferred - out.dispreferred;
  return out;
}

// Lens-convention readout: the head applied to a raw residual-stream vector,
// skipping the final norm.
inline double project_onto_reward(const RewardModelBundle& m, const Vec& h) {
  require(h.size() == m.config.d_model, ErrorKind::shape_mismatch,
          "project_onto_reward: dimension mismatch");
  return m.reward_direction().dot(h) + m.reward_bias();
}

}  // namespace rewardlens
