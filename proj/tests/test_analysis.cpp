#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "rewardlens/attribution.hpp"
#include "rewardlens/lens.hpp"
#include "rewardlens/patching.hpp"

using namespace rewardlens;

namespace {

TransformerConfig toy_config(int layers = 3) {
  TransformerConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_mlp = 8;
  cfg.max_seq = 32;
  cfg.vocab = {"<bos>", "<sep>", "a", "b", "c", "t", "u", "v"};
  return cfg;
}

TransformerConfig seeded_config(int layers = 4) {
  TransformerConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_mlp = 64;
  cfg.max_seq = 64;
  cfg.vocab = {"<bos>", "<sep>"};
  for (int i = 0; i < 30; ++i) cfg.vocab.push_back("t" + std::to_string(i));
  return cfg;
}

// Planted model whose head ignores the trigger and non-trigger embeddings,
// so the whole preference differential flows through the planted MLP.
RewardModelBundle isolated_planted_model(int plant_layer, double gain) {
  auto cfg = toy_config();
  PlantSpec plant;
  plant.layer = plant_layer;
  plant.trigger_token = "t";
  plant.gain = gain;
  plant.direction = Vec::Unit(cfg.d_model, 9);
  Vec head = Vec::Zero(cfg.d_model);
  head[2] = 0.3;   // token "a" coordinate, exercised by prompts
  head[9] = 1.5;   // the plant direction coordinate
  head[12] = -0.4; // outside the vocabulary span
  plant.head_weight = head;
  return build_planted_model(cfg, plant);
}

PreferencePair trigger_pair() {
  // trigger only in the preferred completion, at the final token
  return {"a b", "c t", "c v", ""};
}

}  // namespace

// ---------------------------------------------------------------- lens

TEST_CASE("lens: identical completions give a flat zero differential") {
  const auto m = build_seeded_model(seeded_config(), 0);
  const auto r = trace(m, {"t0 t1", "t2 t3", "t2 t3", ""});
  for (double d : r.differential) CHECK(d == 0.0);
  CHECK_FALSE(r.crystallisation_layer.has_value());
}

TEST_CASE("lens: planted step differential") {
  const int plant_layer = 1;
  const double gain = 2.0;
  const auto m = isolated_planted_model(plant_layer, gain);
  const Vec write = planted_write_vector(m, plant_layer);
  const double step = m.reward_direction().dot(write);
  REQUIRE(std::fabs(step) > 1.0);

  const auto r = trace(m, trigger_pair());
  const int L = m.config.n_layers;
  REQUIRE(r.differential.size() == static_cast<std::size_t>(L) + 1);
  for (int l = -1; l < L; ++l) {
    const double d = r.differential[static_cast<std::size_t>(l + 1)];
    if (l < plant_layer)
      CHECK(d == Catch::Approx(0.0).margin(1e-12));
    else
      CHECK(d == Catch::Approx(step).margin(1e-9));
  }
  REQUIRE(r.crystallisation_layer.has_value());
  CHECK(*r.crystallisation_layer ==
        Catch::Approx((plant_layer + 1.0) / (L + 1.0)).margin(1e-12));
}

TEST_CASE("lens: final layer equals the pre-norm projection") {
  const auto m = build_seeded_model(seeded_config(), 3);
  const PreferencePair pair{"t0 t1", "t2", "t3", ""};
  const auto r = trace(m, pair);
  const auto cache = forward_with_cache(m, pair.prompt, pair.preferred);
  CHECK(r.lens_preferred.back() ==
        project_onto_reward(m, cache.residual_at(m.config.n_layers - 1)));
}

TEST_CASE("lens: marginal contributions telescope") {
  const auto m = build_seeded_model(seeded_config(), 5);
  const auto r = trace(m, {"t0", "t1 t2", "t3 t4", ""});
  double sum = 0.0;
  for (double v : r.marginal_contributions) sum += v;
  CHECK(sum ==
        Catch::Approx(r.differential.back() - r.differential.front()).margin(1e-12));
}

TEST_CASE("lens: trace_single matches the preferred half of trace") {
  const auto m = build_seeded_model(seeded_config(), 1);
  const auto single = trace_single(m, "t0 t1", "t2 t3");
  const auto full = trace(m, {"t0 t1", "t2 t3", "t5", ""});
  REQUIRE(single.lens_preferred.size() == full.lens_preferred.size());
  for (std::size_t i = 0; i < single.lens_preferred.size(); ++i)
    CHECK(single.lens_preferred[i] == full.lens_preferred[i]);
  CHECK_FALSE(single.has_dispreferred);
  CHECK(single.differential.empty());
}

TEST_CASE("lens: single-layer model has exactly two lens points") {
  const auto m = build_seeded_model(seeded_config(1), 0);
  const auto r = trace_single(m, "t0", "t1");
  CHECK(r.layers == std::vector<int>{-1, 0});
  CHECK(r.lens_preferred.size() == 2);
}

TEST_CASE("crystallisation: linear ramp against a scan oracle") {
  const int L = 8;
  RewardLensResult r;
  r.has_dispreferred = true;
  for (int l = -1; l < L; ++l) {
    r.layers.push_back(l);
    r.differential.push_back(0.1 * static_cast<double>(l + 1));
  }
  const auto depth = crystallisation_depth(r);
  // oracle: first block layer with value >= half the final, same sign
  const double final_diff = r.differential.back();
  int expect = -1;
  for (int l = 0; l < L; ++l) {
    const double d = r.differential[static_cast<std::size_t>(l + 1)];
    if (d > 0.0 && d >= 0.5 * final_diff) {
      expect = l;
      break;
    }
  }
  REQUIRE(depth.has_value());
  CHECK(*depth == Catch::Approx((expect + 1.0) / (L + 1.0)).margin(1e-12));

  // a ~0 final differential leaves crystallisation undefined
  RewardLensResult flat = r;
  for (auto& d : flat.differential) d *= 1e-9;
  CHECK_FALSE(crystallisation_depth(flat).has_value());
}

TEST_CASE("crystallisation depth lies in (0, 1] when defined") {
  const auto m = build_seeded_model(seeded_config(), 9);
  for (int i = 0; i < 8; ++i) {
    const auto r = trace(m, {"t0", "t" + std::to_string(i + 1),
                             "t" + std::to_string(i + 10), ""});
    if (r.crystallisation_layer.has_value()) {
      CHECK(*r.crystallisation_layer > 0.0);
      CHECK(*r.crystallisation_layer <= 1.0);
    }
  }
}

// ---------------------------------------------------------- attribution

TEST_CASE("attribution: planted differential is isolated") {
  const int plant_layer = 1;
  const auto m = isolated_planted_model(plant_layer, 2.5);
  const auto r = attribute(m, trigger_pair());
  const double step = m.reward_direction().dot(planted_write_vector(m, plant_layer));

  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const double d = r.differential_contributions[static_cast<Eigen::Index>(i)];
    if (r.names[i] == "mlp_L" + std::to_string(plant_layer))
      CHECK(d == Catch::Approx(step).margin(1e-9));
    else
      CHECK(d == Catch::Approx(0.0).margin(1e-12));
  }
}

TEST_CASE("attribution: identical completions decompose to zero") {
  const auto m = build_seeded_model(seeded_config(), 2);
  const auto r = attribute(m, {"t0", "t1 t2", "t1 t2", ""});
  CHECK(r.differential_contributions.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attribution: decomposition identity") {
  const auto m = build_seeded_model(seeded_config(), 4);
  const PreferencePair pair{"t0 t1 t2", "t3 t4", "t5", ""};
  const auto r = attribute(m, pair);
  CHECK(r.contributions_preferred.sum() + r.bias ==
        Catch::Approx(r.total_reward_preferred).margin(1e-9));
  CHECK(r.contributions_dispreferred.sum() + r.bias ==
        Catch::Approx(r.total_reward_dispreferred).margin(1e-9));
  const auto cache = forward_with_cache(m, pair.prompt, pair.preferred);
  CHECK(r.total_reward_preferred ==
        project_onto_reward(m, cache.residual_at(m.config.n_layers - 1)));
}

TEST_CASE("attribution: top_k") {
  const auto m = isolated_planted_model(1, 2.5);
  const auto r = attribute(m, trigger_pair());

  const auto top1 = top_k(r, 1, AttributionField::differential);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].name == "mlp_L1");

  const auto all = top_k(r, r.names.size());
  std::set<std::size_t> seen;
  for (const auto& c : all) seen.insert(c.index);
  CHECK(seen.size() == r.names.size());

  CHECK_THROWS_AS(top_k(r, 0), Error);
  CHECK_THROWS_AS(top_k(r, r.names.size() + 1), Error);
}

TEST_CASE("attribution: top_k order matches a full-sort oracle and scales") {
  const auto m = build_seeded_model(seeded_config(), 6);
  auto r = attribute(m, {"t0 t1", "t2 t3", "t4 t5", ""});
  const auto got = top_k(r, r.names.size());

  std::vector<std::size_t> order(r.names.size());
  std::iota(order.begin(), order.end(), 0);
  const Vec mag = r.differential_contributions.cwiseAbs();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mag[static_cast<Eigen::Index>(a)] > mag[static_cast<Eigen::Index>(b)];
  });
  for (std::size_t i = 0; i < order.size(); ++i) CHECK(got[i].index == order[i]);

  // argsort invariance under positive rescaling
  auto scaled = r;
  scaled.contributions_preferred *= 17.0;
  scaled.contributions_dispreferred *= 17.0;
  scaled.differential_contributions *= 17.0;
  const auto got_scaled = top_k(scaled, scaled.names.size());
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got_scaled[i].index == got[i].index);
}

TEST_CASE("attribution: by_type partitions the schema") {
  const auto m = build_seeded_model(seeded_config(), 6);
  const auto r = attribute(m, {"t0", "t1", "t2", ""});
  const auto attn = by_type(r, "attn");
  const auto mlp = by_type(r, "mlp");
  const auto embed = by_type(r, "embed");
  std::set<std::size_t> all;
  all.insert(attn.begin(), attn.end());
  all.insert(mlp.begin(), mlp.end());
  all.insert(embed.begin(), embed.end());
  CHECK(all.size() == attn.size() + mlp.size() + embed.size());
  CHECK(all.size() == r.names.size());
  CHECK_THROWS_AS(by_type(r, "norm"), Error);
}

TEST_CASE("attribution: top_k_frequency") {
  const auto m = build_seeded_model(seeded_config(), 7);
  const auto one = attribute(m, {"t0", "t1", "t2", ""});

  const auto single = top_k_frequency({one}, 3);
  std::size_t hits = 0;
  for (auto c : single) {
    CHECK((c == 0 || c == 1));
    hits += c;
  }
  CHECK(hits == 3);

  const std::vector<ComponentResult> copies(5, one);
  for (auto c : top_k_frequency(copies, 3)) CHECK((c == 0 || c == 5));

  // 20 seeded pairs against a per-pair recount oracle
  const auto deep = build_seeded_model(seeded_config(5), 7);
  std::vector<ComponentResult> results;
  for (int i = 0; i < 20; ++i)
    results.push_back(attribute(
        deep, {"t0", "t" + std::to_string(1 + i % 8), "t" + std::to_string(9 + i % 8), ""}));
  const auto freq = top_k_frequency(results, 10);
  std::vector<std::size_t> oracle(results.front().names.size(), 0);
  for (const auto& r : results)
    for (const auto& c : top_k(r, 10)) oracle[c.index] += 1;
  CHECK(freq == oracle);

  auto other = attribute(build_seeded_model(seeded_config(2), 0),
                         {"t0", "t1", "t2", ""});
  CHECK_THROWS_AS(top_k_frequency({one, other}, 2), Error);
}

// ------------------------------------------------------------- patching

TEST_CASE("patching: self patch is null in every mode") {
  const auto m = build_seeded_model(seeded_config(), 1);
  const PreferencePair same{"t0 t1", "t2 t3", "t2 t3", ""};
  for (auto mode : {PatchMode::noising, PatchMode::denoising}) {
    const auto r = patch_all_components(m, same, mode);
    CHECK(r.patch_effects.cwiseAbs().maxCoeff() < 1e-9);
    CHECK_FALSE(r.normalized_effects.has_value());  // degenerate differential
  }
}

TEST_CASE("patching: splice keeps target activations beyond the shared prefix") {
  // trigger sits at the final (non-shared) token, so a noising patch leaves
  // the planted write intact
  const auto m = isolated_planted_model(1, 2.0);
  const double effect =
      patch_single_component(m, trigger_pair(), 1, "mlp", PatchMode::noising);
  CHECK(effect == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("patching: zero mode removes the planted write exactly") {
  const int plant_layer = 1;
  const auto m = isolated_planted_model(plant_layer, 2.0);
  const double step = m.reward_direction().dot(planted_write_vector(m, plant_layer));

  const auto r = patch_all_components(m, trigger_pair(), PatchMode::zero);
  CHECK(r.zero_mode_out_of_distribution);
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    const double e = r.patch_effects[static_cast<Eigen::Index>(i)];
    if (r.names[i] == "mlp_L" + std::to_string(plant_layer))
      CHECK(e == Catch::Approx(step).epsilon(1e-9));
    else
      CHECK(std::fabs(e) < 1e-9);  // output projections are all zero
  }

  // the entire differential flows through the planted component, and the
  // differing token is inside the zeroed region, so the normalised effect
  // is exactly one
  REQUIRE(r.normalized_effects.has_value());
  const auto plant_idx =
      static_cast<Eigen::Index>(2 * plant_layer + 1);  // mlp slot
  CHECK((*r.normalized_effects)[plant_idx] == 1.0);
}

TEST_CASE("patching: all-components agrees with single calls bitwise") {
  const auto m = build_seeded_model(seeded_config(), 8);
  const PreferencePair pair{"t0 t1", "t2 t3 t4", "t5", ""};
  for (auto mode : {PatchMode::noising, PatchMode::zero}) {
    const auto r = patch_all_components(m, pair, mode);
    REQUIRE(r.patch_effects.size() == 8);
    for (std::size_t i = 0; i < r.names.size(); ++i) {
      const int layer = r.layer_indices[i];
      const auto effect =
          patch_single_component(m, pair, layer, r.types[i], mode);
      CHECK(r.patch_effects[static_cast<Eigen::Index>(i)] == effect);
    }
  }
}

TEST_CASE("patching: mode symmetry on a shared-length pair") {
  const auto m = build_seeded_model(seeded_config(), 10);
  const PreferencePair pair{"t0", "t1 t2", "t3 t4", ""};
  const PreferencePair swapped{"t0", "t3 t4", "t1 t2", ""};
  const auto noise = patch_all_components(m, pair, PatchMode::noising);
  const auto denoise = patch_all_components(m, swapped, PatchMode::denoising);
  for (Eigen::Index i = 0; i < noise.patch_effects.size(); ++i)
    CHECK(noise.patch_effects[i] == -denoise.patch_effects[i]);
}

TEST_CASE("patching: invalid component and layer are rejected") {
  const auto m = build_seeded_model(seeded_config(), 0);
  const PreferencePair pair{"t0", "t1", "t2", ""};
  CHECK_THROWS_AS(patch_single_component(m, pair, 0, "norm", PatchMode::zero),
                  Error);
  CHECK_THROWS_AS(patch_single_component(m, pair, 99, "mlp", PatchMode::zero),
                  Error);
}

TEST_CASE("faithfulness: constructed extremes and a rank oracle") {
  const auto m = build_seeded_model(seeded_config(), 12);
  const PreferencePair pair{"t0 t1", "t2 t3", "t4", ""};
  const auto attr = attribute(m, pair);

  PatchingResult proportional;
  proportional.n_layers = attr.n_layers;
  proportional.names = component_names(attr.n_layers, false);
  proportional.types = component_types(attr.n_layers, false);
  proportional.layer_indices = component_layers(attr.n_layers, false);
  proportional.patch_effects =
      3.0 * attr.differential_contributions.tail(2 * attr.n_layers);
  CHECK(faithfulness(attr, proportional).rho == 1.0);

  // anti-ranked construction: effects ordered opposite to |attribution|
  PatchingResult anti = proportional;
  const auto order = topk_indices(
      attr.differential_contributions.tail(2 * attr.n_layers).cwiseAbs(),
      static_cast<std::size_t>(2 * attr.n_layers));
  for (std::size_t rank = 0; rank < order.size(); ++rank)
    anti.patch_effects[static_cast<Eigen::Index>(order[rank])] =
        static_cast<double>(rank + 1);
  CHECK(faithfulness(attr, anti).rho == -1.0);

  // real zero-mode effects against an independent rank computation
  const auto patch = patch_all_components(m, pair, PatchMode::zero);
  const auto got = faithfulness(attr, patch);
  Vec a(patch.patch_effects.size()), p(patch.patch_effects.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    a[i] = std::fabs(attr.differential_contributions[i + 1]);
    p[i] = std::fabs(patch.patch_effects[i]);
  }
  const auto oracle = spearman(a, p);
  CHECK(got.rho == Catch::Approx(oracle.rho).margin(1e-12));

  auto mismatched = attribute(build_seeded_model(seeded_config(2), 0),
                              {"t0", "t1", "t2", ""});
  CHECK_THROWS_AS(faithfulness(mismatched, patch), Error);
}
