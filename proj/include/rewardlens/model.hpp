#pragma once

// Reward-model bundle: weights + config + tokenizer + adapter. Also the
// activation cache layout, the deterministic toy-model builders, and the
// model-directory persistence.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rewardlens/common.hpp"
#include "rewardlens/config.hpp"
#include "rewardlens/numerics.hpp"
#include "rewardlens/tensor_file.hpp"
#include "rewardlens/tokenizer.hpp"

namespace rewardlens {

struct PreferencePair {
  std::string prompt;
  std::string preferred;
  std::string dispreferred;
  std::string dimension;  // optional tag

  void validate() const {
    require(!prompt.empty(), ErrorKind::data_format,
            "preference pair: empty prompt");
  }
};

struct AttentionWeights {
  Mat Wq, Wk, Wv, Wo;  // each d_model x d_model, heads packed along columns
};

struct MlpWeights {
  Mat W_in;   // d_model x d_mlp
  Vec b_in;   // d_mlp
  Mat W_out;  // d_mlp x d_model
  Vec b_out;  // d_model
};

struct LayerWeights {
  AttentionWeights attn;
  MlpWeights mlp;
  Vec ln1_gamma, ln1_beta;  // pre-attention norm
  Vec ln2_gamma, ln2_beta;  // pre-MLP norm
};

// Final-token slices from one forward pass; full-sequence tensors retained
// only when requested (patching needs them, the lens does not).
struct ActivationCache {
  std::vector<int> tokens;
  int final_token_position = 0;

  Vec residual_embed;             // stream right after embedding
  std::vector<Vec> residual;      // post-block stream, one per layer
  std::vector<Vec> attn_out;      // attention sublayer contribution
  std::vector<Vec> mlp_out;       // MLP sublayer contribution

  bool has_full_sequences = false;
  Mat full_embed;                      // T x d
  std::vector<Mat> full_residual;      // per layer, T x d
  std::vector<Mat> full_attn_out;      // per layer, T x d
  std::vector<Mat> full_mlp_out;       // per layer, T x d

  double reward = 0.0;            // scored output, final norm applied
  Vec objective_rewards;          // length K (1 for scalar heads)
  double prenorm_projection = 0.0;  // w_r . h_final + b_r, no final norm

  // layer in [-1, L-1]; -1 is the post-embedding stream
  const Vec& residual_at(int layer) const {
    if (layer == -1) return residual_embed;
    require(layer >= 0 && layer < static_cast<int>(residual.size()),
            ErrorKind::argument, "cache: layer out of range");
    return residual[static_cast<std::size_t>(layer)];
  }
};

class RewardModelBundle;

// Desk-scale realisation of the adapter contract: one accessor per
// family-specific detail a production wrapper would have to locate.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;

  virtual std::pair<Vec, double> reward_head_params(
      const RewardModelBundle& m) const = 0;
  virtual Mat per_objective_directions(const RewardModelBundle& m) const = 0;

  const std::vector<LayerWeights>& layers(const RewardModelBundle& m) const;
  int n_layers(const RewardModelBundle& m) const;
  int n_heads(const RewardModelBundle& m) const;
  const AttentionWeights& attn_module(const RewardModelBundle& m, int layer) const;
  const MlpWeights& mlp_module(const RewardModelBundle& m, int layer) const;
  const Mat& embedding(const RewardModelBundle& m) const;

  Vec extract_layer_output(const ActivationCache& c, int layer) const {
    return c.residual_at(layer);
  }
  Vec extract_attn_output(const ActivationCache& c, int layer) const {
    require(layer >= 0 && layer < static_cast<int>(c.attn_out.size()),
            ErrorKind::argument, "adapter: layer out of range");
    return c.attn_out[static_cast<std::size_t>(layer)];
  }
  Vec extract_mlp_output(const ActivationCache& c, int layer) const {
    require(layer >= 0 && layer < static_cast<int>(c.mlp_out.size()),
            ErrorKind::argument, "adapter: layer out of range");
    return c.mlp_out[static_cast<std::size_t>(layer)];
  }
  double extract_reward(const ActivationCache& c) const { return c.reward; }
};

class ScalarHeadAdapter final : public ModelAdapter {
 public:
  std::pair<Vec, double> reward_head_params(const RewardModelBundle& m) const override;
  Mat per_objective_directions(const RewardModelBundle& m) const override;
};

// Multi-objective heads expose the K x d direction matrix; the aggregate
// reward direction is the column-mean of its rows.
class MultiObjectiveAdapter final : public ModelAdapter {
 public:
  std::pair<Vec, double> reward_head_params(const RewardModelBundle& m) const override;
  Mat per_objective_directions(const RewardModelBundle& m) const override;
};

inline std::shared_ptr<const ModelAdapter> make_adapter(HeadKind kind) {
  static const auto scalar = std::make_shared<const ScalarHeadAdapter>();
  static const auto multi = std::make_shared<const MultiObjectiveAdapter>();
  if (kind == HeadKind::scalar) return scalar;
  return multi;
}

class RewardModelBundle {
 public:
  TransformerConfig config;
  Mat embedding;  // V x d
  std::vector<LayerWeights> layers;
  Vec ln_f_gamma, ln_f_beta;
  Mat head_weight;  // K x d
  Vec head_bias;    // K

  RewardModelBundle(TransformerConfig cfg)
      : config(std::move(cfg)), tokenizer_(config.vocab) {}

  const Tokenizer& tokenizer() const { return tokenizer_; }
  const ModelAdapter& adapter() const { return *adapter_; }

  const Vec& reward_direction() const { return reward_direction_; }
  double reward_bias() const { return reward_bias_; }

  // Shape validation plus derived quantities; call after the weights are set.
  void finalize() {
    config.validate();
    const int d = config.d_model;
    const int v = config.vocab_size();
    const int k = config.n_objectives;
    auto check_mat = [&](const Mat& m, int r, int c, const std::string& what) {
      require(m.rows() == r && m.cols() == c, ErrorKind::shape_mismatch,
              what + ": bad shape");
      require(m.allFinite(), ErrorKind::numeric, what + ": non-finite values");
    };
    auto check_vec = [&](const Vec& x, int n, const std::string& what) {
      require(x.size() == n, ErrorKind::shape_mismatch, what + ": bad shape");
      require(x.allFinite(), ErrorKind::numeric, what + ": non-finite values");
    };
    check_mat(embedding, v, d, "embed");
    require(static_cast<int>(layers.size()) == config.n_layers,
            ErrorKind::shape_mismatch, "layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "L" + std::to_string(l);
      check_mat(layers[l].attn.Wq, d, d, p + ".attn.Wq");
      check_mat(layers[l].attn.Wk, d, d, p + ".attn.Wk");
      check_mat(layers[l].attn.Wv, d, d, p + ".attn.Wv");
      check_mat(layers[l].attn.Wo, d, d, p + ".attn.Wo");
      check_mat(layers[l].mlp.W_in, d, config.d_mlp, p + ".mlp.W_in");
      check_vec(layers[l].mlp.b_in, config.d_mlp, p + ".mlp.b_in");
      check_mat(layers[l].mlp.W_out, config.d_mlp, d, p + ".mlp.W_out");
      check_vec(layers[l].mlp.b_out, d, p + ".mlp.b_out");
      check_vec(layers[l].ln1_gamma, d, p + ".ln1.gamma");
      check_vec(layers[l].ln1_beta, d, p + ".ln1.beta");
      check_vec(layers[l].ln2_gamma, d, p + ".ln2.gamma");
      check_vec(layers[l].ln2_beta, d, p + ".ln2.beta");
    }
    check_vec(ln_f_gamma, d, "ln_f.gamma");
    check_vec(ln_f_beta, d, "ln_f.beta");
    check_mat(head_weight, k, d, "head.weight");
    check_vec(head_bias, k, "head.bias");
    require(config.head_kind != HeadKind::scalar || k == 1,
            ErrorKind::shape_mismatch, "scalar head must have one row");

    adapter_ = make_adapter(config.head_kind);
    auto [w, b] = adapter_->reward_head_params(*this);
    reward_direction_ = std::move(w);
    reward_bias_ = b;
  }

 private:
  Tokenizer tokenizer_;
  std::shared_ptr<const ModelAdapter> adapter_;
  Vec reward_direction_;
  double reward_bias_ = 0.0;
};

inline const std::vector<LayerWeights>& ModelAdapter::layers(
    const RewardModelBundle& m) const {
  return m.layers;
}
inline int ModelAdapter::n_layers(const RewardModelBundle& m) const {
  return m.config.n_layers;
}
inline int ModelAdapter::n_heads(const RewardModelBundle& m) const {
  return m.config.n_heads;
}
inline const AttentionWeights& ModelAdapter::attn_module(
    const RewardModelBundle& m, int layer) const {
  require(layer >= 0 && layer < m.config.n_layers, ErrorKind::argument,
          "adapter: layer out of range");
  return m.layers[static_cast<std::size_t>(layer)].attn;
}
inline const MlpWeights& ModelAdapter::mlp_module(const RewardModelBundle& m,
                                                  int layer) const {
  require(layer >= 0 && layer < m.config.n_layers, ErrorKind::argument,
          "adapter: layer out of range");
  return m.layers[static_cast<std::size_t>(layer)].mlp;
}
inline const Mat& ModelAdapter::embedding(const RewardModelBundle& m) const {
  return m.embedding;
}

inline std::pair<Vec, double> ScalarHeadAdapter::reward_head_params(
    const RewardModelBundle& m) const {
  return {m.head_weight.row(0).transpose(), m.head_bias[0]};
}
inline Mat ScalarHeadAdapter::per_objective_directions(
    const RewardModelBundle& m) const {
  return m.head_weight;
}

inline std::pair<Vec, double> MultiObjectiveAdapter::reward_head_params(
    const RewardModelBundle& m) const {
  const double k = static_cast<double>(m.head_weight.rows());
  Vec w = m.head_weight.colwise().sum().transpose() / k;
  const double b = m.head_bias.sum() / k;
  return {w, b};
}
inline Mat MultiObjectiveAdapter::per_objective_directions(
    const RewardModelBundle& m) const {
  return m.head_weight;
}

// ---------------------------------------------------------------------------
// Builders

namespace detail {

// Tensors are filled row-major in declaration order from a single stream, so
// the whole bundle is a pure function of (config, seed).
inline Mat gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                           double scale) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = quantize_f32(scale * rng.gaussian());
  return m;
}

inline Vec gaussian_vector(Rng& rng, Eigen::Index n, double scale) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = quantize_f32(scale * rng.gaussian());
  return v;
}

}  // namespace detail

// Deterministic pseudo-random weights at scale 0.02/sqrt(d_model); biases
// zero, norm gains one. Same (config, seed) gives an identical bundle.
inline RewardModelBundle build_seeded_model(const TransformerConfig& config,
                                            std::uint64_t seed) {
  config.validate();
  RewardModelBundle m(config);
  Rng rng(seed);
  const int d = config.d_model;
  const double scale = 0.02 / std::sqrt(static_cast<double>(d));

  m.embedding = detail::gaussian_matrix(rng, config.vocab_size(), d, scale);
  m.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& layer : m.layers) {
    layer.attn.Wq = detail::gaussian_matrix(rng, d, d, scale);
    layer.attn.Wk = detail::gaussian_matrix(rng, d, d, scale);
    layer.attn.Wv = detail::gaussian_matrix(rng, d, d, scale);
    layer.attn.Wo = detail::gaussian_matrix(rng, d, d, scale);
    layer.mlp.W_in = detail::gaussian_matrix(rng, d, config.d_mlp, scale);
    layer.mlp.b_in = Vec::Zero(config.d_mlp);
    layer.mlp.W_out = detail::gaussian_matrix(rng, config.d_mlp, d, scale);
    layer.mlp.b_out = Vec::Zero(d);
    layer.ln1_gamma = Vec::Ones(d);
    layer.ln1_beta = Vec::Zero(d);
    layer.ln2_gamma = Vec::Ones(d);
    layer.ln2_beta = Vec::Zero(d);
  }
  m.ln_f_gamma = Vec::Ones(d);
  m.ln_f_beta = Vec::Zero(d);
  m.head_weight = detail::gaussian_matrix(rng, config.n_objectives, d, scale);
  m.head_bias = detail::gaussian_vector(rng, config.n_objectives, scale);
  m.finalize();
  return m;
}

struct PlantSpec {
  int layer = 0;
  std::string component = "mlp";
  Vec direction;              // length d_model, the vector written on trigger
  std::string trigger_token;
  double gain = 1.0;
  // head defaults to seeded random; tests can pin it to get specific geometry
  std::optional<Vec> head_weight;
  std::optional<double> head_bias;
  std::uint64_t head_seed = 0;
};

// A model whose only nonzero circuit is known in closed form: orthonormal
// (standard-basis) embeddings, identity norms, every output projection zero
// except one MLP that writes gain * direction at positions holding the
// trigger token. Reward is therefore
//   w_r . (E[final] + gain * direction * [final == trigger]) + b_r.
inline RewardModelBundle build_planted_model(const TransformerConfig& config_in,
                                             const PlantSpec& plant) {
  TransformerConfig config = config_in;
  config.norm_kind = NormKind::identity;  // keeps the closed form exact
  config.validate();
  const int d = config.d_model;
  require(config.vocab_size() <= d, ErrorKind::argument,
          "planted model: vocab_size must not exceed d_model "
          "(embeddings are orthonormal basis rows)");
  require(plant.component == "mlp", ErrorKind::argument,
          "planted model: only MLP plants have an exact closed form "
          "(softmax attention cannot gate on the trigger exactly)");
  require(plant.layer >= 0 && plant.layer < config.n_layers,
          ErrorKind::argument, "planted model: layer out of range");
  require(plant.direction.size() == d, ErrorKind::shape_mismatch,
          "planted model: direction length != d_model");

  RewardModelBundle m(config);
  require(m.tokenizer().knows(plant.trigger_token), ErrorKind::argument,
          "planted model: trigger token outside vocabulary");
  const int trigger_id = m.tokenizer().id_of(plant.trigger_token);

  m.embedding = Mat::Zero(config.vocab_size(), d);
  for (int v = 0; v < config.vocab_size(); ++v) m.embedding(v, v) = 1.0;

  m.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& layer : m.layers) {
    layer.attn.Wq = Mat::Zero(d, d);
    layer.attn.Wk = Mat::Zero(d, d);
    layer.attn.Wv = Mat::Zero(d, d);
    layer.attn.Wo = Mat::Zero(d, d);
    layer.mlp.W_in = Mat::Zero(d, config.d_mlp);
    layer.mlp.b_in = Vec::Zero(config.d_mlp);
    layer.mlp.W_out = Mat::Zero(config.d_mlp, d);
    layer.mlp.b_out = Vec::Zero(d);
    layer.ln1_gamma = Vec::Ones(d);
    layer.ln1_beta = Vec::Zero(d);
    layer.ln2_gamma = Vec::Ones(d);
    layer.ln2_beta = Vec::Zero(d);
  }

  // Detector unit: fires 0.5 exactly on the trigger embedding, 0 elsewhere;
  // the output row rescales that to gain * direction.
  auto& mlp = m.layers[static_cast<std::size_t>(plant.layer)].mlp;
  mlp.W_in.col(0) = m.embedding.row(trigger_id).transpose();
  mlp.b_in[0] = -0.5;
  for (Eigen::Index c = 0; c < d; ++c)
    mlp.W_out(0, c) = quantize_f32(2.0 * plant.gain * plant.direction[c]);

  m.ln_f_gamma = Vec::Ones(d);
  m.ln_f_beta = Vec::Zero(d);
  m.head_weight = Mat::Zero(config.n_objectives, d);
  if (plant.head_weight.has_value()) {
    require(plant.head_weight->size() == d, ErrorKind::shape_mismatch,
            "planted model: head_weight length != d_model");
    for (Eigen::Index c = 0; c < d; ++c)
      m.head_weight(0, c) = quantize_f32((*plant.head_weight)[c]);
  } else {
    Rng rng(plant.head_seed);
    const double scale = 0.02 / std::sqrt(static_cast<double>(d));
    m.head_weight = detail::gaussian_matrix(rng, config.n_objectives, d, scale);
  }
  m.head_bias = Vec::Zero(config.n_objectives);
  if (plant.head_bias.has_value())
    m.head_bias[0] = quantize_f32(*plant.head_bias);
  m.finalize();
  return m;
}

// The write actually stored in the planted MLP (after f32 rounding); the
// exact closed forms in tests are computed from this, not from the request.
inline Vec planted_write_vector(const RewardModelBundle& m, int layer) {
  require(layer >= 0 && layer < m.config.n_layers, ErrorKind::argument,
          "planted_write_vector: layer out of range");
  return 0.5 * m.layers[static_cast<std::size_t>(layer)].mlp.W_out.row(0).transpose();
}

// ---------------------------------------------------------------------------
// Persistence: a model directory holds config.txt and tensors.bin.

namespace detail {

inline std::vector<std::pair<std::string, std::pair<int, int>>> expected_tensors(
    const TransformerConfig& c) {
  std::vector<std::pair<std::string, std::pair<int, int>>> out;
  const int d = c.d_model;
  out.push_back({"embed", {c.vocab_size(), d}});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "L" + std::to_string(l);
    out.push_back({p + ".attn.Wq", {d, d}});
    out.push_back({p + ".attn.Wk", {d, d}});
    out.push_back({p + ".attn.Wv", {d, d}});
    out.push_back({p + ".attn.Wo", {d, d}});
    out.push_back({p + ".mlp.W_in", {d, c.d_mlp}});
    out.push_back({p + ".mlp.b_in", {c.d_mlp, -1}});
    out.push_back({p + ".mlp.W_out", {c.d_mlp, d}});
    out.push_back({p + ".mlp.b_out", {d, -1}});
    out.push_back({p + ".ln1.gamma", {d, -1}});
    out.push_back({p + ".ln1.beta", {d, -1}});
    out.push_back({p + ".ln2.gamma", {d, -1}});
    out.push_back({p + ".ln2.beta", {d, -1}});
  }
  out.push_back({"ln_f.gamma", {d, -1}});
  out.push_back({"ln_f.beta", {d, -1}});
  out.push_back({"head.weight", {c.n_objectives, d}});
  out.push_back({"head.bias", {c.n_objectives, -1}});
  return out;
}

}  // namespace detail

inline void save_model(const RewardModelBundle& m,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  atomic_write_file(dir / "config.txt", serialize_config(m.config));

  TensorFile tf;
  tf.add_matrix("embed", m.embedding);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const std::string p = "L" + std::to_string(l);
    const auto& layer = m.layers[l];
    tf.add_matrix(p + ".attn.Wq", layer.attn.Wq);
    tf.add_matrix(p + ".attn.Wk", layer.attn.Wk);
    tf.add_matrix(p + ".attn.Wv", layer.attn.Wv);
    tf.add_matrix(p + ".attn.Wo", layer.attn.Wo);
    tf.add_matrix(p + ".mlp.W_in", layer.mlp.W_in);
    tf.add_vector(p + ".mlp.b_in", layer.mlp.b_in);
    tf.add_matrix(p + ".mlp.W_out", layer.mlp.W_out);
    tf.add_vector(p + ".mlp.b_out", layer.mlp.b_out);
    tf.add_vector(p + ".ln1.gamma", layer.ln1_gamma);
    tf.add_vector(p + ".ln1.beta", layer.ln1_beta);
    tf.add_vector(p + ".ln2.gamma", layer.ln2_gamma);
    tf.add_vector(p + ".ln2.beta", layer.ln2_beta);
  }
  tf.add_vector("ln_f.gamma", m.ln_f_gamma);
  tf.add_vector("ln_f.beta", m.ln_f_beta);
  tf.add_matrix("head.weight", m.head_weight);
  tf.add_vector("head.bias", m.head_bias);
  tf.save(dir / "tensors.bin");
}

inline RewardModelBundle load_model(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir / "config.txt"), ErrorKind::io,
          "model directory missing config.txt: " + dir.string());
  require(std::filesystem::exists(dir / "tensors.bin"), ErrorKind::io,
          "model directory missing tensors.bin: " + dir.string());
  const TransformerConfig config =
      parse_config(read_file_bytes(dir / "config.txt"));
  const TensorFile tf = TensorFile::load(dir / "tensors.bin");

  const auto expected = detail::expected_tensors(config);
  require(expected.size() == tf.tensors().size(), ErrorKind::corrupt_blob,
          "tensors.bin: unexpected tensor count");
  for (const auto& [name, shape] : expected) {
    const NamedTensor& t = tf.get(name);
    if (shape.second < 0)
      require(t.dims.size() == 1 && static_cast<int>(t.dims[0]) == shape.first,
              ErrorKind::shape_mismatch, "tensor " + name + ": bad shape");
    else
      require(t.dims.size() == 2 && static_cast<int>(t.dims[0]) == shape.first &&
                  static_cast<int>(t.dims[1]) == shape.second,
              ErrorKind::shape_mismatch, "tensor " + name + ": bad shape");
  }

  RewardModelBundle m(config);
  m.embedding = tf.matrix("embed");
  m.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string p = "L" + std::to_string(l);
    auto& layer = m.layers[static_cast<std::size_t>(l)];
    layer.attn.Wq = tf.matrix(p + ".attn.Wq");
    layer.attn.Wk = tf.matrix(p + ".attn.Wk");
    layer.attn.Wv = tf.matrix(p + ".attn.Wv");
    layer.attn.Wo = tf.matrix(p + ".attn.Wo");
    layer.mlp.W_in = tf.matrix(p + ".mlp.W_in");
    layer.mlp.b_in = tf.vector(p + ".mlp.b_in");
    layer.mlp.W_out = tf.matrix(p + ".mlp.W_out");
    layer.mlp.b_out = tf.vector(p + ".mlp.b_out");
    layer.ln1_gamma = tf.vector(p + ".ln1.gamma");
    layer.ln1_beta = tf.vector(p + ".ln1.beta");
    layer.ln2_gamma = tf.vector(p + ".ln2.gamma");
    layer.ln2_beta = tf.vector(p + ".ln2.beta");
  }
  m.ln_f_gamma = tf.vector("ln_f.gamma");
  m.ln_f_beta = tf.vector("ln_f.beta");
  m.head_weight = tf.matrix("head.weight");
  m.head_bias = tf.vector("head.bias");
  m.finalize();
  return m;
}

// FNV-1a over config text and tensor bytes; pins a model identity in reports.
inline std::string model_config_hash(const std::filesystem::path& dir) {
  const std::string cfg = read_file_bytes(dir / "config.txt");
  const std::string bin = read_file_bytes(dir / "tensors.bin");
  std::uint64_t h = fnv1a64(cfg.data(), cfg.size());
  h = fnv1a64(bin.data(), bin.size(), h);
  return to_hex(h);
}

}  // namespace rewardlens
