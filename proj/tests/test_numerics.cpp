#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "rewardlens/numerics.hpp"

using namespace rewardlens;

namespace {

Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Independent rank oracle: O(n^2) counting, average rank for ties.
Vec rank_oracle(const Vec& v) {
  Vec r(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double less = 0.0;
    double equal = 0.0;
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) less += 1.0;
      if (v[j] == v[i]) equal += 1.0;
    }
    r[i] = less + 0.5 * (equal + 1.0);
  }
  return r;
}

double pearson_oracle(const Vec& x, const Vec& y) {
  const double mx = x.mean(), my = y.mean();
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("cosine basics") {
  Vec e1 = make_vec({1, 0, 0});
  CHECK(cosine(e1, e1) == Catch::Approx(1.0).margin(1e-15));
  CHECK(cosine(e1, Vec(-e1)) == Catch::Approx(-1.0).margin(1e-15));
  CHECK(cosine(make_vec({1, 1, 0}), make_vec({1, 0, 0})) ==
        Catch::Approx(0.70710678).margin(1e-8));
  Vec zero = Vec::Zero(3);
  CHECK_THROWS_MATCHES(cosine(zero, e1), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.kind() == ErrorKind::degenerate_input;
                       }));
}

TEST_CASE("pearson basics") {
  Vec x = make_vec({1, 2, 3, 4, 5});
  Vec y = 2.0 * x.array() + 3.0;
  CHECK(pearson(x, y) == Catch::Approx(1.0).margin(1e-12));
  CHECK(pearson(make_vec({1, 2, 3}), make_vec({3, 2, 1})) ==
        Catch::Approx(-1.0).margin(1e-12));
  CHECK(pearson(make_vec({1, 2, 3, 4}), make_vec({1, 2, 4, 3})) ==
        Catch::Approx(0.8).margin(1e-12));

  bool caught = false;
  try {
    pearson(make_vec({1, 1, 1}), make_vec({1, 2, 3}));
  } catch (const Error& e) {
    caught = true;
    CHECK(e.kind() == ErrorKind::degenerate_stat);
    CHECK(std::string(e.what()).find("x side") != std::string::npos);
  }
  CHECK(caught);
}

TEST_CASE("spearman monotone and reversed") {
  Vec x = make_vec({-2, -1, 0.5, 1, 3});
  Vec x3 = x.array().cube();
  CHECK(spearman(x, x3).rho == Catch::Approx(1.0).margin(1e-15));
  CHECK(spearman(make_vec({1, 2, 3, 4}), make_vec({4, 3, 2, 1})).rho ==
        Catch::Approx(-1.0).margin(1e-15));
  CHECK_THROWS_AS(spearman(make_vec({1, 1, 1, 1}), make_vec({1, 2, 3, 4})),
                  Error);
}

TEST_CASE("spearman matches exact-rank oracle on 64 points") {
  Rng rng(42);
  Vec x(64), y(64);
  for (int i = 0; i < 64; ++i) {
    x[i] = rng.gaussian();
    y[i] = 0.3 * x[i] + rng.gaussian();
  }
  // inject ties on both sides to exercise average ranks
  x[10] = x[20];
  y[5] = y[50];

  const auto got = spearman(x, y);
  const double expect_rho = pearson_oracle(rank_oracle(x), rank_oracle(y));
  CHECK(got.rho == Catch::Approx(expect_rho).margin(1e-10));

  const double n = 64.0;
  const double t = expect_rho * std::sqrt((n - 2.0) / (1.0 - expect_rho * expect_rho));
  const double expect_p = t_two_sided_p(t, n - 2.0);
  CHECK(got.p == Catch::Approx(expect_p).margin(1e-10));
}

TEST_CASE("spearman invariant under strictly monotone transforms") {
  Rng rng(7);
  Vec x(32), y(32);
  for (int i = 0; i < 32; ++i) {
    x[i] = rng.gaussian();
    y[i] = rng.gaussian();
  }
  const double base = spearman(x, y).rho;
  Vec ex = x.array().exp();
  Vec y3 = y.array().cube();
  CHECK(spearman(ex, y).rho == base);
  CHECK(spearman(x, y3).rho == base);
  CHECK(spearman(ex, y3).rho == base);
}

TEST_CASE("t distribution two-sided p sanity") {
  // reference values from an independent statistics package
  CHECK(t_two_sided_p(2.0, 10.0) == Catch::Approx(0.0733880348).margin(1e-8));
  CHECK(t_two_sided_p(0.0, 5.0) == Catch::Approx(1.0).margin(1e-12));
  CHECK(t_two_sided_p(-2.0, 10.0) == t_two_sided_p(2.0, 10.0));
}

TEST_CASE("regression slope") {
  Vec a = make_vec({-2, -1, -0.5, 0.5, 1, 2});
  Vec d2 = 2.0 * a;
  CHECK(regression_slope(a, d2) == Catch::Approx(2.0).margin(1e-12));
  Vec dc = Vec::Constant(6, 1.25);
  CHECK(regression_slope(a, dc) == Catch::Approx(0.0).margin(1e-12));

  Rng rng(0);
  Vec noisy(6);
  for (int i = 0; i < 6; ++i) noisy[i] = a[i] + 1e-3 * rng.gaussian();
  CHECK(regression_slope(a, noisy) == Catch::Approx(1.0).margin(1e-2));

  CHECK_THROWS_AS(regression_slope(Vec::Constant(4, 1.0), Vec::Zero(4)), Error);
}

TEST_CASE("mahalanobis trivial cases") {
  GaussianEstimate g;
  g.mean = make_vec({1, 2, 3});
  g.covariance = Mat::Identity(3, 3);
  g.regularisation = 0.0;
  g.sample_count = 10;
  CHECK(mahalanobis(g.mean, g) == Catch::Approx(0.0).margin(1e-12));
  Vec a = g.mean;
  a[0] += 3.0;
  CHECK(mahalanobis(a, g) == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("mahalanobis matches dense-inverse oracle on seeded SPD cases") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 2 + static_cast<int>(rng.next_u64() % 6);
    Mat b(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) b(i, j) = rng.gaussian();
    GaussianEstimate g;
    g.covariance = b * b.transpose() + 0.5 * Mat::Identity(d, d);
    g.mean = Vec::Zero(d);
    for (int i = 0; i < d; ++i) g.mean[i] = rng.gaussian();
    g.regularisation = 1e-3;
    g.sample_count = 2;
    Vec a(d);
    for (int i = 0; i < d; ++i) a[i] = 2.0 * rng.gaussian();

    Mat m = g.covariance;
    m.diagonal().array() += g.regularisation;
    const Vec diff = a - g.mean;
    const double oracle = std::sqrt(diff.dot(m.inverse() * diff));
    const double got = mahalanobis(a, g);
    CHECK(got == Catch::Approx(oracle).epsilon(1e-8));
  }
}

TEST_CASE("mahalanobis rejects indefinite estimate") {
  GaussianEstimate g;
  g.mean = Vec::Zero(2);
  g.covariance = -Mat::Identity(2, 2);
  g.regularisation = 0.0;
  g.sample_count = 2;
  bool caught = false;
  try {
    mahalanobis(Vec::Ones(2), g);
  } catch (const Error& e) {
    caught = true;
    CHECK(e.kind() == ErrorKind::ill_conditioned);
  }
  CHECK(caught);
}

TEST_CASE("fit_gaussian basics") {
  // identical samples: zero covariance, floor regularisation keeps it usable
  Mat same(5, 3);
  for (int i = 0; i < 5; ++i) same.row(i) = make_vec({1, 2, 3}).transpose();
  const auto g = fit_gaussian(same);
  CHECK(g.regularisation > 0.0);
  CHECK(mahalanobis(make_vec({1, 2, 3}), g) == Catch::Approx(0.0).margin(1e-9));
  CHECK(mahalanobis(make_vec({1, 2, 4}), g) > 100.0);

  CHECK_THROWS_AS(fit_gaussian(Mat::Zero(1, 3)), Error);

  // seeded synthetic normal: recovered mean within 3 sigma / sqrt(N)
  Rng rng(4);
  const int n = 400, d = 4;
  Mat samples(n, d);
  Vec true_mean = make_vec({0.5, -1.0, 2.0, 0.0});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      samples(i, j) = true_mean[j] + rng.gaussian();
  const auto fitted = fit_gaussian(samples);
  for (int j = 0; j < d; ++j)
    CHECK(std::fabs(fitted.mean[j] - true_mean[j]) <
          3.0 / std::sqrt(static_cast<double>(n)));
  CHECK((fitted.covariance - fitted.covariance.transpose()).norm() <
        1e-12);
}

TEST_CASE("topk_indices") {
  CHECK(topk_indices(make_vec({5, 1, 9}), 2) ==
        std::vector<std::size_t>{2, 0});
  CHECK(topk_indices(Vec::Constant(4, 7.0), 2) ==
        std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(topk_indices(make_vec({1, 2}), 3), Error);
  CHECK_THROWS_AS(topk_indices(make_vec({1, 2}), 0), Error);

  Rng rng(2);
  Vec v(20);
  for (int i = 0; i < 20; ++i) v[i] = rng.gaussian();
  const auto got = topk_indices(v, 7);
  // full-sort oracle
  std::vector<std::size_t> order(20);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return v[static_cast<Eigen::Index>(a)] > v[static_cast<Eigen::Index>(b)];
  });
  order.resize(7);
  CHECK(got == order);
}

TEST_CASE("topk full length is a descending permutation") {
  Rng rng(9);
  Vec v(16);
  for (int i = 0; i < 16; ++i) v[i] = rng.gaussian();
  v[3] = v[11];  // tie
  const auto perm = topk_indices(v, 16);
  std::set<std::size_t> seen(perm.begin(), perm.end());
  CHECK(seen.size() == 16);
  for (std::size_t i = 0; i + 1 < perm.size(); ++i) {
    const double a = v[static_cast<Eigen::Index>(perm[i])];
    const double b = v[static_cast<Eigen::Index>(perm[i + 1])];
    CHECK(a >= b);
    if (a == b) CHECK(perm[i] < perm[i + 1]);
  }
}

TEST_CASE("union_find_clusters") {
  const auto singletons = union_find_clusters(3, {});
  REQUIRE(singletons.size() == 3);
  CHECK(singletons[0] == std::vector<std::size_t>{0});

  const auto chained = union_find_clusters(4, {{0, 1}, {1, 2}});
  REQUIRE(chained.size() == 2);
  CHECK(chained[0] == std::vector<std::size_t>({0, 1, 2}));
  CHECK(chained[1] == std::vector<std::size_t>{3});

  CHECK_THROWS_AS(union_find_clusters(2, {{0, 5}}), Error);
}

TEST_CASE("union_find matches BFS oracle on a seeded graph") {
  Rng rng(3);
  const std::size_t n = 50;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (int e = 0; e < 40; ++e)
    edges.emplace_back(rng.next_u64() % n, rng.next_u64() % n);

  // BFS oracle
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<int> label(n, -1);
  int next_label = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    std::vector<std::size_t> queue{s};
    label[s] = next_label;
    while (!queue.empty()) {
      const std::size_t u = queue.back();
      queue.pop_back();
      for (std::size_t v : adj[u])
        if (label[v] < 0) {
          label[v] = next_label;
          queue.push_back(v);
        }
    }
    ++next_label;
  }

  const auto got = union_find_clusters(n, edges);
  CHECK(got.size() == static_cast<std::size_t>(next_label));
  for (const auto& cluster : got) {
    REQUIRE(!cluster.empty());
    for (std::size_t v : cluster) CHECK(label[v] == label[cluster[0]]);
  }
}

TEST_CASE("correlations stay within [-1, 1]") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Vec x(12), y(12);
    for (int i = 0; i < 12; ++i) {
      x[i] = rng.gaussian() * 1e3;
      y[i] = rng.gaussian() * 1e-3;
    }
    const double c = cosine(x, y);
    const double p = pearson(x, y);
    const double s = spearman(x, y).rho;
    CHECK(std::fabs(c) <= 1.0 + 1e-12);
    CHECK(std::fabs(p) <= 1.0 + 1e-12);
    CHECK(std::fabs(s) <= 1.0 + 1e-12);
  }
}

TEST_CASE("softmax and layer norm") {
  Vec logits = make_vec({1000.0, 1001.0, 999.0});
  const Vec p = stable_softmax(logits);
  CHECK(p.sum() == Catch::Approx(1.0).margin(1e-12));
  CHECK(p[1] > p[0]);
  CHECK(p[0] > p[2]);

  Vec x = make_vec({1, 2, 3, 4});
  Vec gamma = Vec::Ones(4), beta = Vec::Zero(4);
  const Vec ln = layer_norm(x, gamma, beta);
  CHECK(ln.mean() == Catch::Approx(0.0).margin(1e-12));
  const double var = (ln.array() - ln.mean()).square().mean();
  CHECK(var == Catch::Approx(1.0).epsilon(1e-4));
}
