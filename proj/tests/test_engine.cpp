#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "rewardlens/engine.hpp"
#include "rewardlens/model.hpp"

using namespace rewardlens;

namespace {

TransformerConfig small_config() {
  TransformerConfig cfg;
  cfg.n_layers = 3;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_mlp = 8;
  cfg.max_seq = 32;
  cfg.vocab = {"<bos>", "<sep>", "a", "b", "c", "t", "u", "v"};
  return cfg;
}

TransformerConfig smoke_config() {
  TransformerConfig cfg;
  cfg.n_layers = 4;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_mlp = 64;
  cfg.max_seq = 64;
  cfg.vocab = {"<bos>", "<sep>"};
  for (int i = 0; i < 62; ++i) cfg.vocab.push_back("t" + std::to_string(i));
  return cfg;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("rl_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

bool same_matrix(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

TEST_CASE("config round trip and validation") {
  const auto cfg = small_config();
  const auto parsed = parse_config(serialize_config(cfg));
  CHECK(parsed.n_layers == cfg.n_layers);
  CHECK(parsed.vocab == cfg.vocab);
  CHECK(parsed.head_kind == HeadKind::scalar);

  auto bad = cfg;
  bad.d_model = 17;  // not divisible by n_heads
  bool caught = false;
  try {
    bad.validate();
  } catch (const Error& e) {
    caught = true;
    CHECK(e.kind() == ErrorKind::shape_mismatch);
  }
  CHECK(caught);

  std::string text = serialize_config(cfg);
  const auto pos = text.find("head_kind = scalar");
  text.replace(pos, std::string("head_kind = scalar").size(),
               "head_kind = wibble");
  bool caught_head = false;
  try {
    parse_config(text);
  } catch (const Error& e) {
    caught_head = true;
    CHECK(e.kind() == ErrorKind::unknown_head_kind);
  }
  CHECK(caught_head);
}

TEST_CASE("tokenizer") {
  Tokenizer tok(small_config().vocab);
  const auto ids = tok.encode_pair("a b", "c t");
  REQUIRE(ids.size() == 6);
  CHECK(ids[0] == tok.bos_id());
  CHECK(ids[3] == tok.sep_id());
  CHECK_THROWS_AS(tok.split_encode("a zebra"), Error);

  CHECK(final_token_positions({{1, 1, 1, 0, 0}}) == std::vector<int>{2});
  CHECK(final_token_positions({{0, 0, 0, 0}}) == std::vector<int>{0});
  CHECK(final_token_positions({{1, 1, 1, 1, 1, 1, 1, 1}}) ==
        std::vector<int>{7});
}

TEST_CASE("tensor file round trip and corruption checks") {
  TensorFile tf;
  tf.add_matrix("m", Mat::Identity(2, 3));
  tf.add_vector("v", Vec::Ones(4));
  const std::string bytes = tf.serialize();
  const TensorFile back = TensorFile::parse(bytes, "test");
  CHECK(same_matrix(back.matrix("m"), Mat::Identity(2, 3)));
  CHECK(back.vector("v") == Vec::Ones(4));
  CHECK(back.serialize() == bytes);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(TensorFile::parse(bad_magic, "test"), Error);
  CHECK_THROWS_AS(TensorFile::parse(bytes.substr(0, bytes.size() - 3), "test"),
                  Error);
}

TEST_CASE("seeded model determinism") {
  const auto cfg = smoke_config();
  const auto m0 = build_seeded_model(cfg, 0);
  const auto m0b = build_seeded_model(cfg, 0);
  const auto m1 = build_seeded_model(cfg, 1);

  const double r0 = score(m0, "t0 t1", "t2 t3");
  const double r0b = score(m0b, "t0 t1", "t2 t3");
  const double r1 = score(m1, "t0 t1", "t2 t3");
  CHECK(r0 == r0b);  // bitwise
  CHECK(r0 != r1);
  CHECK(std::isfinite(score(m0, "t0", "t1 t2 t3")));
}

TEST_CASE("seeded score matches pinned golden value") {
  // frozen from the first run of this configuration; guards against
  // accidental changes to the generator or the forward pass
  const auto m = build_seeded_model(smoke_config(), 0);
  const double got = score(m, "t0 t1 t2", "t3 t4");
  CHECK(got == Catch::Approx(-0.017662318936134475).margin(1e-9));
}

TEST_CASE("model directory round trip") {
  const auto m = build_seeded_model(smoke_config(), 7);
  const auto dir = temp_dir("roundtrip");
  save_model(m, dir);
  const auto back = load_model(dir);

  CHECK(same_matrix(back.embedding, m.embedding));
  CHECK(same_matrix(back.head_weight, m.head_weight));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    CHECK(same_matrix(back.layers[l].attn.Wq, m.layers[l].attn.Wq));
    CHECK(same_matrix(back.layers[l].mlp.W_out, m.layers[l].mlp.W_out));
  }

  // a second save must be byte-identical
  const auto dir2 = temp_dir("roundtrip2");
  save_model(back, dir2);
  CHECK(read_file_bytes(dir / "tensors.bin") ==
        read_file_bytes(dir2 / "tensors.bin"));
  CHECK(read_file_bytes(dir / "config.txt") ==
        read_file_bytes(dir2 / "config.txt"));
  CHECK(model_config_hash(dir) == model_config_hash(dir2));
}

TEST_CASE("load rejects mismatched shapes") {
  const auto m = build_seeded_model(smoke_config(), 3);
  const auto dir = temp_dir("badshape");
  save_model(m, dir);
  // shrink d_model in the config only
  auto cfg = m.config;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  atomic_write_file(dir / "config.txt", serialize_config(cfg));
  bool caught = false;
  try {
    load_model(dir);
  } catch (const Error& e) {
    caught = true;
    CHECK(e.kind() == ErrorKind::shape_mismatch);
  }
  CHECK(caught);
}

TEST_CASE("multi objective head") {
  auto cfg = smoke_config();
  cfg.head_kind = HeadKind::multi_objective;
  cfg.n_objectives = 19;
  const auto m = build_seeded_model(cfg, 11);

  const Mat dirs = m.adapter().per_objective_directions(m);
  CHECK(dirs.rows() == 19);
  CHECK(dirs.cols() == 32);

  // aggregate direction is exactly the arithmetic mean of the rows
  Vec mean = dirs.colwise().sum().transpose() / 19.0;
  CHECK(m.reward_direction() == mean);

  const auto cache = forward_with_cache(m, "t0", "t1 t2");
  CHECK(cache.objective_rewards.size() == 19);
  CHECK(cache.reward == Catch::Approx(cache.objective_rewards.mean()).margin(1e-15));

  const auto dir = temp_dir("multi");
  save_model(m, dir);
  const auto back = load_model(dir);
  CHECK(back.adapter().per_objective_directions(back).rows() == 19);
}

TEST_CASE("cache additivity identity") {
  for (std::uint64_t seed : {0ull, 5ull}) {
    const auto m = build_seeded_model(smoke_config(), seed);
    const auto cache = forward_with_cache(m, "t0 t1 t2 t3", "t4 t5 t6");
    const int L = m.config.n_layers;
    Vec prev = cache.residual_embed;
    for (int l = 0; l < L; ++l) {
      const Vec recomposed = prev + cache.attn_out[static_cast<std::size_t>(l)] +
                             cache.mlp_out[static_cast<std::size_t>(l)];
      CHECK((cache.residual_at(l) - recomposed).cwiseAbs().maxCoeff() < 1e-9);
      prev = cache.residual_at(l);
    }
    // full recomposition from the embedding stream
    Vec total = cache.residual_embed;
    for (int l = 0; l < L; ++l)
      total += cache.attn_out[static_cast<std::size_t>(l)] +
               cache.mlp_out[static_cast<std::size_t>(l)];
    CHECK((cache.residual_at(L - 1) - total).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("score and cache agree") {
  const auto m = build_seeded_model(smoke_config(), 2);
  const double direct = score(m, "t0 t1", "t2");
  const auto cache = forward_with_cache(m, "t0 t1", "t2");
  CHECK(cache.reward == direct);  // same pure computation
  CHECK(score_pair(m, "t0 t1", "t2", "t2").preferred == direct);
  CHECK(cache.prenorm_projection ==
        project_onto_reward(m, cache.residual_at(m.config.n_layers - 1)));
}

TEST_CASE("full sequence tensors have token-count rows") {
  const auto m = build_seeded_model(smoke_config(), 2);
  const auto cache = forward_with_cache(m, "t0 t1", "t2 t3 t4", true);
  const int t_len = static_cast<int>(cache.tokens.size());
  REQUIRE(cache.has_full_sequences);
  CHECK(cache.full_embed.rows() == t_len);
  for (const auto& mtx : cache.full_residual) CHECK(mtx.rows() == t_len);
  for (const auto& mtx : cache.full_attn_out) CHECK(mtx.rows() == t_len);
  for (const auto& mtx : cache.full_mlp_out) CHECK(mtx.rows() == t_len);
  const auto lean = forward_with_cache(m, "t0 t1", "t2 t3 t4", false);
  CHECK_FALSE(lean.has_full_sequences);
  CHECK(lean.full_residual.empty());
}

TEST_CASE("sequence length and unknown token errors") {
  auto cfg = small_config();
  cfg.max_seq = 4;
  const auto m = build_seeded_model(cfg, 0);
  CHECK_THROWS_AS(score(m, "a b c", "a b c"), Error);
  bool caught = false;
  try {
    score(m, "a", "zebra");
  } catch (const Error& e) {
    caught = true;
    CHECK(e.kind() == ErrorKind::data_format);
  }
  CHECK(caught);
}

TEST_CASE("project_onto_reward") {
  const auto m = build_seeded_model(small_config(), 4);
  const int d = m.config.d_model;
  CHECK(project_onto_reward(m, Vec::Zero(d)) ==
        Catch::Approx(m.reward_bias()).margin(1e-15));
  const Vec w = m.reward_direction();
  CHECK(project_onto_reward(m, Vec(w / w.squaredNorm())) ==
        Catch::Approx(m.reward_bias() + 1.0).margin(1e-12));
  CHECK_THROWS_AS(project_onto_reward(m, Vec::Zero(d + 1)), Error);
}

TEST_CASE("planted model closed form over the whole vocabulary") {
  auto cfg = small_config();
  PlantSpec plant;
  plant.layer = 1;
  plant.trigger_token = "t";
  plant.gain = 2.5;
  Rng rng(5);
  plant.direction = Vec(cfg.d_model);
  for (int i = 0; i < cfg.d_model; ++i) plant.direction[i] = rng.gaussian();
  const auto m = build_planted_model(cfg, plant);
  CHECK(m.config.norm_kind == NormKind::identity);

  const Vec w = m.reward_direction();
  const double b = m.reward_bias();
  const Vec write = planted_write_vector(m, plant.layer);
  const int trigger_id = m.tokenizer().id_of("t");

  for (const auto& tok : cfg.vocab) {
    const double got = score(m, "a", tok);
    const int id = m.tokenizer().id_of(tok);
    double expect = w.dot(m.embedding.row(id).transpose()) + b;
    if (id == trigger_id) expect += w.dot(write);
    CHECK(got == Catch::Approx(expect).margin(1e-9));
  }

  // trigger earlier in the sequence does not reach the final token
  // (attention is zero everywhere by construction)
  const double with_early_trigger = score(m, "a t", "b");
  const double without = score(m, "a c", "b");
  CHECK(with_early_trigger == Catch::Approx(without).margin(1e-12));
}

TEST_CASE("planted model aligned with the reward direction") {
  auto cfg = small_config();
  PlantSpec probe_plant;
  probe_plant.layer = 0;
  probe_plant.trigger_token = "t";
  probe_plant.direction = Vec::Unit(cfg.d_model, 0);
  const auto probe = build_planted_model(cfg, probe_plant);
  const Vec w = probe.reward_direction();

  PlantSpec plant;
  plant.layer = 2;
  plant.trigger_token = "t";
  plant.gain = 5.0;
  plant.direction = w / w.norm();
  const auto m = build_planted_model(cfg, plant);
  CHECK(m.reward_direction() == w);  // same head seed, same head

  const double triggered = score(m, "a", "b t");
  const int tid = m.tokenizer().id_of("t");
  const double base = w.dot(m.embedding.row(tid).transpose()) + m.reward_bias();
  CHECK(triggered - base == Catch::Approx(5.0 * w.norm()).epsilon(1e-6));
}

TEST_CASE("planted model rejects bad plants") {
  auto cfg = small_config();
  PlantSpec plant;
  plant.layer = 0;
  plant.trigger_token = "zebra";  // not in vocab
  plant.direction = Vec::Ones(cfg.d_model);
  CHECK_THROWS_AS(build_planted_model(cfg, plant), Error);

  plant.trigger_token = "t";
  plant.component = "attn";
  CHECK_THROWS_AS(build_planted_model(cfg, plant), Error);

  plant.component = "mlp";
  plant.layer = 99;
  CHECK_THROWS_AS(build_planted_model(cfg, plant), Error);
}

TEST_CASE("adapter surface") {
  const auto m = build_seeded_model(small_config(), 8);
  const auto& adapter = m.adapter();
  auto [w, b] = adapter.reward_head_params(m);
  CHECK(w == m.head_weight.row(0).transpose());
  CHECK(b == m.head_bias[0]);
  CHECK(adapter.n_layers(m) == 3);
  CHECK(adapter.n_heads(m) == 2);
  CHECK(&adapter.attn_module(m, 1) == &m.layers[1].attn);
  CHECK(&adapter.mlp_module(m, 2) == &m.layers[2].mlp);
  CHECK(&adapter.embedding(m) == &m.embedding);

  const auto cache = forward_with_cache(m, "a", "b c");
  CHECK(adapter.extract_layer_output(cache, 1) == cache.residual_at(1));
  CHECK(adapter.extract_attn_output(cache, 0) == cache.attn_out[0]);
  CHECK(adapter.extract_mlp_output(cache, 2) == cache.mlp_out[2]);
  CHECK(adapter.extract_reward(cache) == cache.reward);
}
