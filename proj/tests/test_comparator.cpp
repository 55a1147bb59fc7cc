#include <catch2/catch_amalgamated.hpp>

#include "rewardlens/comparator.hpp"

using namespace rewardlens;

namespace {

TransformerConfig cmp_config(int layers) {
  TransformerConfig cfg;
  cfg.n_layers = layers;
  cfg.d_model = 32;
  cfg.n_heads = 4;
  cfg.d_mlp = 32;
  cfg.max_seq = 32;
  cfg.vocab = {"<bos>", "<sep>"};
  for (int i = 0; i < 14; ++i) cfg.vocab.push_back("t" + std::to_string(i));
  return cfg;
}

const PreferencePair kPair{"t0 t1", "t2 t3", "t4 t5", ""};

}  // namespace

TEST_CASE("compare: same model twice correlates at one") {
  const auto m = build_seeded_model(cmp_config(4), 0);
  const auto r = compare({&m, &m}, {"a", "b"}, kPair);
  CHECK(r.formation_correlations(0, 1) == Catch::Approx(1.0).margin(1e-12));
  CHECK(r.formation_correlations(0, 0) == 1.0);
  CHECK(r.depth_grid.size() == 101);
  CHECK(r.depth_grid[0] > 0.0);
  CHECK(r.depth_grid[100] == 1.0);
  CHECK(r.lens_results.size() == 2);
  CHECK(r.attribution_results.empty());
}

TEST_CASE("compare: negated head flips the correlation") {
  const auto m = build_seeded_model(cmp_config(4), 1);
  auto negated = m;
  negated.head_weight = -negated.head_weight;
  negated.head_bias = -negated.head_bias;
  negated.finalize();
  const auto r = compare({&m, &negated}, {"m", "neg"}, kPair);
  CHECK(r.formation_correlations(0, 1) == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("compare: interpolation matches a hand oracle at spot depths") {
  const auto m4 = build_seeded_model(cmp_config(4), 2);
  const auto m8 = build_seeded_model(cmp_config(8), 3);
  const auto r = compare({&m4, &m8}, {"L4", "L8"}, kPair);

  for (std::size_t b = 0; b < 2; ++b) {
    const auto& bundle = b == 0 ? m4 : m8;
    const auto lens = trace(bundle, kPair);
    const int L = bundle.config.n_layers;
    // hand interpolation: find the bracketing depths and lerp explicitly
    for (double depth : {0.05, 0.25, 0.5, 0.75, 1.0}) {
      double expect;
      const auto x_of = [&](int l) {
        return static_cast<double>(l + 1) / static_cast<double>(L + 1);
      };
      if (depth <= x_of(-1)) {
        expect = lens.differential.front();
      } else if (depth >= x_of(L - 1)) {
        expect = lens.differential.back();
      } else {
        int l = -1;
        while (x_of(l + 1) < depth) ++l;
        const double x0 = x_of(l), x1 = x_of(l + 1);
        const double y0 = lens.differential[static_cast<std::size_t>(l + 1)];
        const double y1 = lens.differential[static_cast<std::size_t>(l + 2)];
        expect = y0 + (y1 - y0) * (depth - x0) / (x1 - x0);
      }
      // locate the matching grid point if it exists on the 1/101 grid
      for (int i = 0; i < 101; ++i) {
        if (std::fabs(r.depth_grid[i] - depth) < 1e-12) {
          CHECK(r.curves(static_cast<Eigen::Index>(b), i) ==
                Catch::Approx(expect).margin(1e-9));
        }
      }
      // and check an off-grid depth via the same helper the library uses
      CHECK(std::isfinite(expect));
    }
  }
}

TEST_CASE("compare: degenerate trajectory is flagged") {
  const auto m = build_seeded_model(cmp_config(4), 4);
  const PreferencePair same{"t0", "t1 t2", "t1 t2", ""};
  const auto r = compare({&m, &m}, {"a", "b"}, same);
  CHECK(r.degenerate_trajectory[0]);
  CHECK(r.degenerate_trajectory[1]);
  CHECK(r.formation_correlations(0, 1) == 0.0);

  CHECK_THROWS_AS(compare({&m}, {"solo"}, kPair), Error);
}

TEST_CASE("compare: correlations invariant under positive head rescaling") {
  const auto a = build_seeded_model(cmp_config(4), 5);
  const auto b = build_seeded_model(cmp_config(6), 6);
  auto b_scaled = b;
  b_scaled.head_weight *= 7.5;
  b_scaled.head_bias *= 7.5;
  b_scaled.finalize();
  const auto r1 = compare({&a, &b}, {"a", "b"}, kPair);
  const auto r2 = compare({&a, &b_scaled}, {"a", "bs"}, kPair);
  CHECK(r1.formation_correlations(0, 1) ==
        Catch::Approx(r2.formation_correlations(0, 1)).margin(1e-12));
}

TEST_CASE("compare: optional attribution results") {
  const auto m = build_seeded_model(cmp_config(4), 7);
  const auto r = compare({&m, &m}, {"a", "b"}, kPair, true);
  REQUIRE(r.attribution_results.size() == 2);
  CHECK(r.attribution_results[0].names.size() == 9);
}

TEST_CASE("jaccard overlap") {
  CHECK(jaccard_overlap({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(jaccard_overlap({1, 2}, {3, 4}) == 0.0);
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < 10; ++i) a.push_back(i);
  for (std::size_t i = 3; i < 13; ++i) b.push_back(i);  // 7 shared
  CHECK(jaccard_overlap(a, b) == Catch::Approx(7.0 / 13.0).margin(1e-12));
}

TEST_CASE("circuit overlap end to end") {
  const auto m = build_seeded_model(cmp_config(5), 8);
  std::map<std::string, std::vector<ComponentResult>> results;
  for (int i = 0; i < 4; ++i) {
    results["helpfulness"].push_back(attribute(
        m, {"t0", "t" + std::to_string(1 + i), "t" + std::to_string(6 + i), ""}));
    results["safety"].push_back(attribute(
        m, {"t1", "t" + std::to_string(2 + i), "t" + std::to_string(7 + i), ""}));
  }
  const auto overlap = circuit_overlap(results, 10);
  REQUIRE(overlap.dimensions.size() == 2);
  CHECK(overlap.jaccard(0, 0) == 1.0);
  CHECK(overlap.jaccard(0, 1) == overlap.jaccard(1, 0));
  CHECK(overlap.jaccard(0, 1) >= 0.0);
  CHECK(overlap.jaccard(0, 1) <= 1.0);
  for (const auto& set : overlap.top_sets) CHECK(set.size() == 10);

  // identical result lists give identical sets
  std::map<std::string, std::vector<ComponentResult>> same;
  same["x"] = results["helpfulness"];
  same["y"] = results["helpfulness"];
  CHECK(circuit_overlap(same, 10).jaccard(0, 1) == 1.0);

  CHECK_THROWS_AS(circuit_overlap(results, 99), Error);
  std::map<std::string, std::vector<ComponentResult>> one;
  one["x"] = results["helpfulness"];
  CHECK_THROWS_AS(circuit_overlap(one, 3), Error);
}
