#pragma once

// TopK sparse autoencoder on residual-stream activations: shard collection,
// training with hand-derived gradients (straight-through on the TopK mask,
// exact for the active set) under cosine-annealed Adam, decoder-row
// renormalisation, and reward-aligned feature analysis.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rewardlens/common.hpp"
#include "rewardlens/engine.hpp"
#include "rewardlens/model.hpp"
#include "rewardlens/numerics.hpp"
#include "rewardlens/tensor_file.hpp"

namespace rewardlens {

// ------------------------------------------------------------------ shards

inline constexpr char kShardMagic[5] = {'R', 'L', 'S', 'H', '1'};

// Header: magic, i32 layer, u32 count, u32 d; then count*d f32 rows.
inline void write_shard(const std::filesystem::path& path, int layer,
                        const Mat& rows) {
  std::string out(kShardMagic, sizeof(kShardMagic));
  detail::put_u32(out, static_cast<std::uint32_t>(layer));
  detail::put_u32(out, static_cast<std::uint32_t>(rows.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(rows.cols()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c)
      detail::put_f32(out, static_cast<float>(rows(r, c)));
  atomic_write_file(path, out);
}

struct ShardData {
  int layer = 0;
  Mat rows;
};

inline ShardData read_shard(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  require(bytes.size() >= sizeof(kShardMagic) &&
              std::memcmp(bytes.data(), kShardMagic, sizeof(kShardMagic)) == 0,
          ErrorKind::corrupt_blob, path.string() + ": bad shard magic");
  detail::ByteReader reader(bytes, path.string());
  reader.str(sizeof(kShardMagic));
  ShardData s;
  s.layer = static_cast<std::int32_t>(reader.u32());
  const std::uint32_t count = reader.u32();
  const std::uint32_t d = reader.u32();
  require(d >= 1 && count < (1u << 26), ErrorKind::corrupt_blob,
          path.string() + ": implausible shard header");
  std::vector<float> data;
  reader.f32_block(static_cast<std::size_t>(count) * d, data);
  require(reader.at_end(), ErrorKind::corrupt_blob,
          path.string() + ": trailing bytes after payload");
  s.rows.resize(count, d);
  std::size_t k = 0;
  for (std::uint32_t r = 0; r < count; ++r)
    for (std::uint32_t c = 0; c < d; ++c)
      s.rows(r, c) = static_cast<double>(data[k++]);
  return s;
}

inline std::vector<std::filesystem::path> list_shards(
    const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(dir))
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.path().extension() == ".bin" &&
          entry.path().filename().string().rfind("shard_", 0) == 0)
        files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

// Final-token residual stream at one layer for every corpus item, appended
// to shards of bounded row count.
inline std::vector<std::filesystem::path> collect_activations(
    const RewardModelBundle& m,
    const std::vector<std::pair<std::string, std::string>>& corpus, int layer,
    const std::filesystem::path& dir, std::size_t max_rows_per_shard = 4096) {
  require(layer >= -1 && layer < m.config.n_layers, ErrorKind::argument,
          "collect_activations: layer out of range");
  require(!corpus.empty(), ErrorKind::argument,
          "collect_activations: empty corpus");
  require(max_rows_per_shard >= 1, ErrorKind::argument,
          "collect_activations: shard size must be positive");
  std::filesystem::create_directories(dir);

  Mat all(static_cast<Eigen::Index>(corpus.size()), m.config.d_model);
  parallel_for(corpus.size(), [&](std::size_t i) {
    const auto cache = forward_with_cache(m, corpus[i].first, corpus[i].second);
    all.row(static_cast<Eigen::Index>(i)) = cache.residual_at(layer).transpose();
  });

  std::vector<std::filesystem::path> out;
  std::size_t written = 0;
  std::size_t shard_idx = 0;
  while (written < corpus.size()) {
    const std::size_t n =
        std::min(max_rows_per_shard, corpus.size() - written);
    char name[32];
    std::snprintf(name, sizeof(name), "shard_%05zu.bin", shard_idx);
    const auto path = dir / name;
    write_shard(path, layer,
                all.middleRows(static_cast<Eigen::Index>(written),
                               static_cast<Eigen::Index>(n)));
    out.push_back(path);
    written += n;
    ++shard_idx;
  }
  return out;
}

inline ShardData load_shards(const std::filesystem::path& dir) {
  const auto files = list_shards(dir);
  require(!files.empty(), ErrorKind::io,
          "no shards found in " + dir.string());
  ShardData first = read_shard(files[0]);
  std::vector<Mat> blocks{first.rows};
  Eigen::Index total = first.rows.rows();
  for (std::size_t i = 1; i < files.size(); ++i) {
    ShardData s = read_shard(files[i]);
    require(s.layer == first.layer && s.rows.cols() == first.rows.cols(),
            ErrorKind::data_format, "shards disagree on layer or width");
    total += s.rows.rows();
    blocks.push_back(std::move(s.rows));
  }
  ShardData out;
  out.layer = first.layer;
  out.rows.resize(total, blocks[0].cols());
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.rows.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return out;
}

// --------------------------------------------------------------- SAE state

struct TopKSAEState {
  int d = 0;
  int n_features = 0;
  int k = 0;
  Mat W_enc;  // d x F
  Vec b_enc;  // F
  Mat W_dec;  // F x d, rows are the feature directions
  Vec b_dec;  // d

  // Adam moments
  Mat m_W_enc, v_W_enc, m_W_dec, v_W_dec;
  Vec m_b_enc, v_b_enc, m_b_dec, v_b_dec;
  long step = 0;

  void save(const std::filesystem::path& path) const {
    TensorFile tf;
    Vec meta(4);
    meta << static_cast<double>(d), static_cast<double>(n_features),
        static_cast<double>(k), static_cast<double>(step);
    tf.add_vector("meta", meta);
    tf.add_matrix("W_enc", W_enc);
    tf.add_vector("b_enc", b_enc);
    tf.add_matrix("W_dec", W_dec);
    tf.add_vector("b_dec", b_dec);
    tf.add_matrix("adam.m_W_enc", m_W_enc);
    tf.add_matrix("adam.v_W_enc", v_W_enc);
    tf.add_matrix("adam.m_W_dec", m_W_dec);
    tf.add_matrix("adam.v_W_dec", v_W_dec);
    tf.add_vector("adam.m_b_enc", m_b_enc);
    tf.add_vector("adam.v_b_enc", v_b_enc);
    tf.add_vector("adam.m_b_dec", m_b_dec);
    tf.add_vector("adam.v_b_dec", v_b_dec);
    tf.save(path);
  }

  static TopKSAEState load(const std::filesystem::path& path) {
    const TensorFile tf = TensorFile::load(path);
    TopKSAEState s;
    const Vec meta = tf.vector("meta");
    require(meta.size() == 4, ErrorKind::corrupt_blob, "sae: bad meta");
    s.d = static_cast<int>(meta[0]);
    s.n_features = static_cast<int>(meta[1]);
    s.k = static_cast<int>(meta[2]);
    s.step = static_cast<long>(meta[3]);
    require(s.d >= 1 && s.n_features >= 1 && s.k >= 1 && s.k <= s.n_features,
            ErrorKind::corrupt_blob, "sae: bad meta values");
    s.W_enc = tf.matrix("W_enc");
    s.b_enc = tf.vector("b_enc");
    s.W_dec = tf.matrix("W_dec");
    s.b_dec = tf.vector("b_dec");
    s.m_W_enc = tf.matrix("adam.m_W_enc");
    s.v_W_enc = tf.matrix("adam.v_W_enc");
    s.m_W_dec = tf.matrix("adam.m_W_dec");
    s.v_W_dec = tf.matrix("adam.v_W_dec");
    s.m_b_enc = tf.vector("adam.m_b_enc");
    s.v_b_enc = tf.vector("adam.v_b_enc");
    s.m_b_dec = tf.vector("adam.m_b_dec");
    s.v_b_dec = tf.vector("adam.v_b_dec");
    require(s.W_enc.rows() == s.d && s.W_enc.cols() == s.n_features &&
                s.W_dec.rows() == s.n_features && s.W_dec.cols() == s.d,
            ErrorKind::shape_mismatch, "sae: weight shape mismatch");
    return s;
  }
};

inline void renormalize_decoder_rows(TopKSAEState& s) {
  for (Eigen::Index i = 0; i < s.W_dec.rows(); ++i) {
    const double n = s.W_dec.row(i).norm();
    if (n > 0.0) s.W_dec.row(i) /= n;
  }
}

inline TopKSAEState init_topk_sae(int d, int n_features, int k,
                                  std::uint64_t seed) {
  require(d >= 1 && n_features >= 1, ErrorKind::argument,
          "sae: dimensions must be positive");
  require(k >= 1 && k <= n_features, ErrorKind::argument,
          "sae: k must lie in [1, n_features]");
  TopKSAEState s;
  s.d = d;
  s.n_features = n_features;
  s.k = k;
  Rng rng(seed);
  s.W_dec.resize(n_features, d);
  for (Eigen::Index i = 0; i < s.W_dec.rows(); ++i)
    for (Eigen::Index j = 0; j < s.W_dec.cols(); ++j)
      s.W_dec(i, j) = rng.gaussian();
  renormalize_decoder_rows(s);
  s.W_enc = s.W_dec.transpose();  // tied init, untied training
  s.b_enc = Vec::Zero(n_features);
  s.b_dec = Vec::Zero(d);
  s.m_W_enc = Mat::Zero(d, n_features);
  s.v_W_enc = Mat::Zero(d, n_features);
  s.m_W_dec = Mat::Zero(n_features, d);
  s.v_W_dec = Mat::Zero(n_features, d);
  s.m_b_enc = Vec::Zero(n_features);
  s.v_b_enc = Vec::Zero(n_features);
  s.m_b_dec = Vec::Zero(d);
  s.v_b_dec = Vec::Zero(d);
  return s;
}

struct SaeForward {
  Vec f;     // F, at most k nonzero
  Vec xhat;  // d
  std::vector<std::size_t> active;  // TopK indices (pre-ReLU selection)
};

// z = W_enc^T (x - b_dec) + b_enc; keep the k largest pre-activations
// (ties to the lower index), zero the rest, then ReLU; xhat = W_dec^T f + b_dec.
inline SaeForward sae_forward(const TopKSAEState& s, const Vec& x) {
  require(x.size() == s.d, ErrorKind::shape_mismatch,
          "sae_forward: input dimension mismatch");
  const Vec z = s.W_enc.transpose() * (x - s.b_dec) + s.b_enc;
  SaeForward out;
  out.active = topk_indices(z, static_cast<std::size_t>(s.k));
  out.f = Vec::Zero(s.n_features);
  for (std::size_t i : out.active) {
    const auto idx = static_cast<Eigen::Index>(i);
    out.f[idx] = std::max(z[idx], 0.0);
  }
  out.xhat = s.W_dec.transpose() * out.f + s.b_dec;
  return out;
}

struct SaeGradients {
  double loss = 0.0;
  double reconstruction_loss = 0.0;
  Mat gW_enc, gW_dec;
  Vec gb_enc, gb_dec;
};

// Loss: mean_b ||x_b - xhat_b||^2 + 0.01 * sum_i (||W_dec row i|| - 1)^2.
// Gradients flow only through the active features; b_dec contributes through
// both the decoder output and the encoder centering.
inline SaeGradients sae_loss_and_gradients(const TopKSAEState& s,
                                           const Mat& batch) {
  require(batch.cols() == s.d, ErrorKind::shape_mismatch,
          "sae gradients: batch width mismatch");
  require(batch.rows() >= 1, ErrorKind::argument, "sae gradients: empty batch");
  SaeGradients g;
  g.gW_enc = Mat::Zero(s.d, s.n_features);
  g.gW_dec = Mat::Zero(s.n_features, s.d);
  g.gb_enc = Vec::Zero(s.n_features);
  g.gb_dec = Vec::Zero(s.d);

  const double inv_b = 1.0 / static_cast<double>(batch.rows());
  for (Eigen::Index r = 0; r < batch.rows(); ++r) {
    const Vec x = batch.row(r).transpose();
    const auto fw = sae_forward(s, x);
    const Vec err = fw.xhat - x;
    g.reconstruction_loss += inv_b * err.squaredNorm();

    const Vec dxhat = 2.0 * inv_b * err;  // dL/dxhat
    g.gb_dec += dxhat;                    // decoder bias path
    for (std::size_t ai : fw.active) {
      const auto i = static_cast<Eigen::Index>(ai);
      if (fw.f[i] <= 0.0) continue;  // ReLU closed
      const double dz = dxhat.dot(s.W_dec.row(i));  // dL/dz_i
      g.gW_dec.row(i) += fw.f[i] * dxhat.transpose();
      g.gb_enc[i] += dz;
      g.gW_enc.col(i) += dz * (x - s.b_dec);
      g.gb_dec -= dz * s.W_enc.col(i);  // encoder centering path
    }
  }

  double penalty = 0.0;
  for (Eigen::Index i = 0; i < s.W_dec.rows(); ++i) {
    const double n = s.W_dec.row(i).norm();
    penalty += 0.01 * (n - 1.0) * (n - 1.0);
    if (n > 0.0)
      g.gW_dec.row(i) += 0.02 * (n - 1.0) * (s.W_dec.row(i) / n);
  }
  g.loss = g.reconstruction_loss + penalty;
  return g;
}

struct SaeTrainOptions {
  int epochs = 10;
  double lr0 = 1e-3;
  int batch_size = 256;
  std::uint64_t shuffle_seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {

inline void adam_update(Mat& theta, Mat& m, Mat& v, const Mat& g, double lr,
                        double b1, double b2, double eps, double t) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v.array().matrix() + (1.0 - b2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  theta -= (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
}

inline void adam_update(Vec& theta, Vec& m, Vec& v, const Vec& g, double lr,
                        double b1, double b2, double eps, double t) {
  m = b1 * m + (1.0 - b1) * g;
  v = b2 * v.array().matrix() + (1.0 - b2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  theta -= (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
}

// Fisher-Yates with the library RNG; std::shuffle is implementation-defined
// and would break cross-platform reproducibility of the loss trace.
inline void shuffle_indices(std::vector<Eigen::Index>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace detail

// Minibatch Adam on the TopK SAE loss with the cosine schedule
// lr_t = 0.5 * lr0 * (1 + cos(pi * t / T_total)); decoder rows are
// renormalised to unit norm after every step. Returns the per-step loss
// trace (logged, not asserted against).
inline std::vector<double> train_sae(TopKSAEState& s, const Mat& data,
                                     const SaeTrainOptions& opt = {}) {
  require(data.cols() == s.d, ErrorKind::shape_mismatch,
          "train_sae: data width mismatch");
  require(data.rows() >= 1, ErrorKind::argument, "train_sae: empty data");
  require(opt.epochs >= 1 && opt.batch_size >= 1 && opt.lr0 > 0.0,
          ErrorKind::argument, "train_sae: bad options");

  const Eigen::Index n = data.rows();
  const long batches_per_epoch =
      (n + opt.batch_size - 1) / opt.batch_size;
  const long t_total = static_cast<long>(opt.epochs) * batches_per_epoch;

  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(t_total));
  Rng rng(opt.shuffle_seed);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);

  long t = 0;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    detail::shuffle_indices(idx, rng);
    for (Eigen::Index start = 0; start < n; start += opt.batch_size) {
      const Eigen::Index b =
          std::min<Eigen::Index>(opt.batch_size, n - start);
      Mat batch(b, s.d);
      for (Eigen::Index r = 0; r < b; ++r)
        batch.row(r) = data.row(idx[static_cast<std::size_t>(start + r)]);

      const auto g = sae_loss_and_gradients(s, batch);
      if (!std::isfinite(g.loss))
        fail(ErrorKind::numeric,
             "train_sae: non-finite loss at step " + std::to_string(t));
      trace.push_back(g.loss);

      const double lr =
          0.5 * opt.lr0 *
          (1.0 + std::cos(M_PI * static_cast<double>(t) /
                          static_cast<double>(t_total)));
      const double tb = static_cast<double>(s.step + 1);
      detail::adam_update(s.W_enc, s.m_W_enc, s.v_W_enc, g.gW_enc, lr,
                          opt.beta1, opt.beta2, opt.eps, tb);
      detail::adam_update(s.W_dec, s.m_W_dec, s.v_W_dec, g.gW_dec, lr,
                          opt.beta1, opt.beta2, opt.eps, tb);
      detail::adam_update(s.b_enc, s.m_b_enc, s.v_b_enc, g.gb_enc, lr,
                          opt.beta1, opt.beta2, opt.eps, tb);
      detail::adam_update(s.b_dec, s.m_b_dec, s.v_b_dec, g.gb_dec, lr,
                          opt.beta1, opt.beta2, opt.eps, tb);
      renormalize_decoder_rows(s);
      ++s.step;
      ++t;
    }
  }
  return trace;
}

// ----------------------------------------------------------- analysis

struct FeatureInfo {
  int index = 0;
  double reward_alignment = 0.0;  // w_r . d_i
  double mean_activation = 0.0;
  double activation_frequency = 0.0;
  std::vector<std::size_t> top_activating_indices;
  std::vector<double> top_activating_values;
};

inline std::vector<FeatureInfo> analyze_features(const TopKSAEState& s,
                                                 const Mat& data,
                                                 const Vec& w_r,
                                                 std::size_t top_m = 10) {
  require(data.rows() >= 1, ErrorKind::argument, "analyze_features: no data");
  require(w_r.size() == s.d, ErrorKind::shape_mismatch,
          "analyze_features: reward direction dimension mismatch");
  const Eigen::Index n = data.rows();
  Mat acts(n, s.n_features);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t r) {
    acts.row(static_cast<Eigen::Index>(r)) =
        sae_forward(s, data.row(static_cast<Eigen::Index>(r)).transpose())
            .f.transpose();
  });

  const Vec alignment = s.W_dec * w_r;
  std::vector<FeatureInfo> out(static_cast<std::size_t>(s.n_features));
  for (int i = 0; i < s.n_features; ++i) {
    auto& info = out[static_cast<std::size_t>(i)];
    info.index = i;
    info.reward_alignment = alignment[i];
    const Vec col = acts.col(i);
    info.mean_activation = col.mean();
    Eigen::Index active = 0;
    for (Eigen::Index r = 0; r < n; ++r)
      if (col[r] > 0.0) ++active;
    info.activation_frequency =
        static_cast<double>(active) / static_cast<double>(n);
    if (active > 0) {
      const auto order = topk_indices(
          col, std::min<std::size_t>(top_m, static_cast<std::size_t>(n)));
      for (std::size_t idx : order) {
        const double v = col[static_cast<Eigen::Index>(idx)];
        if (v <= 0.0) break;  // sorted descending, rest are inactive
        info.top_activating_indices.push_back(idx);
        info.top_activating_values.push_back(v);
      }
    }
  }
  return out;
}

struct RewardDecomposition {
  Vec feature_terms;                      // f_i * (w_r . d_i)
  double decoder_bias_term = 0.0;         // w_r . b_dec
  double head_bias = 0.0;                 // b_r
  double reconstruction_error_term = 0.0; // w_r . (x - xhat)
  double total = 0.0;                     // sum of everything above
  double direct = 0.0;                    // w_r . x + b_r
};

// Exact by algebra: sum_i f_i (w_r.d_i) + w_r.b_dec + b_r + w_r.(x - xhat)
// equals w_r.x + b_r for any state, trained or not.
inline RewardDecomposition decompose_reward_for_input(const TopKSAEState& s,
                                                      const Vec& x,
                                                      const Vec& w_r,
                                                      double b_r) {
  require(x.size() == s.d && w_r.size() == s.d, ErrorKind::shape_mismatch,
          "decompose_reward_for_input: dimension mismatch");
  const auto fw = sae_forward(s, x);
  RewardDecomposition out;
  const Vec alignment = s.W_dec * w_r;
  out.feature_terms = fw.f.cwiseProduct(alignment);
  out.decoder_bias_term = w_r.dot(s.b_dec);
  out.head_bias = b_r;
  out.reconstruction_error_term = w_r.dot(x - fw.xhat);
  out.total = out.feature_terms.sum() + out.decoder_bias_term + out.head_bias +
              out.reconstruction_error_term;
  out.direct = w_r.dot(x) + b_r;
  return out;
}

}  // namespace rewardlens
