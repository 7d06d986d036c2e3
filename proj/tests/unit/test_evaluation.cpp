#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "waferscope/error.hpp"
#include "waferscope/evaluation.hpp"

using namespace waferscope;

namespace {

// AUC matrix of the published open-set comparison: rows are held-out classes,
// columns SoftMax, PreSoftMax, OpenMax, SME, IFOR, CI, GMM.
const Rows kTable2{
    {.3697, .3234, .3455, .3191, .9812, .4009, .9894},  // BasketBall
    {.7022, .8272, .7216, .6776, .9541, .6195, .9543},  // ClusterBig
    {.8672, .9003, .8775, .8813, .7694, .8169, .8227},  // ClusterSmall
    {.4692, .8508, .6614, .4270, .9596, .4916, .9515},  // Donut
    {.8418, .9222, .8556, .8234, .8710, .8214, .9249},  // Fingerprints
    {.6377, .7282, .6699, .6177, .7997, .8557, .8562},  // GeoScratch
    {.6716, .5297, .5454, .6438, .8933, .4989, .8907},  // Grid
    {.7465, .8566, .7918, .7375, .8234, .8641, .8873},  // HalfMoon
    {.8162, .8438, .8319, .8258, .5752, .7672, .7244},  // Incomplete
    {.4898, .4928, .5211, .4626, .8590, .7376, .9196},  // Ring
    {.8313, .6944, .7772, .7723, .8887, .7969, .9050},  // Slice
    {.6448, .7251, .6647, .6269, .8802, .8865, .9149},  // ZigZag
};

const std::vector<double> kTable2Ranks{4.8333, 3.7500, 4.2500, 5.7500, 3.0833, 4.4167, 1.9167};

std::vector<double> random_scores(std::mt19937_64& g, std::size_t n, int levels) {
  std::uniform_int_distribution<int> d(0, levels - 1);
  std::vector<double> s(n);
  for (auto& v : s) v = d(g);
  return s;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("auc trivial cases") {
    const std::vector<int> y{1, 1, 0, 0};
    CHECK(roc_auc(std::vector<double>{4, 3, 2, 1}, y) == 1.0);
    CHECK(roc_auc(std::vector<double>{1, 1, 1, 1}, y) == 0.5);
    CHECK(roc_auc(std::vector<double>{3, 1, 2}, std::vector<int>{1, 1, 0}) == 0.5);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), DataError);
  }

  TEST_CASE("auc equals brute-force pair counting") {
    std::mt19937_64 g(1);
    std::uniform_int_distribution<int> nd(2, 60);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = static_cast<std::size_t>(nd(g));
      const auto s = random_scores(g, n, trial % 2 ? 5 : 1000000);
      std::vector<int> y(n);
      for (std::size_t k = 0; k < n; ++k) y[k] = static_cast<int>(g() % 2);
      y[0] = 1;
      y[1] = 0;
      CHECK(roc_auc(s, y) == oracle::pair_auc(s, y));
    }
  }

  TEST_CASE("auc is invariant under increasing transforms") {
    std::mt19937_64 g(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> s(40), t(40);
      std::vector<int> y(40);
      for (std::size_t k = 0; k < 40; ++k) {
        s[k] = n(g);
        t[k] = std::exp(3.0 * s[k]) + 2.0;
        y[k] = k % 3 == 0;
      }
      CHECK(roc_auc(s, y) == roc_auc(t, y));
    }
  }

  TEST_CASE("roc curve spans the unit square") {
    const std::vector<double> s{0.9, 0.8, 0.8, 0.3, 0.1};
    const std::vector<int> y{1, 0, 1, 0, 0};
    const auto c = roc_curve(s, y);
    CHECK(c.front().fpr == 0.0);
    CHECK(c.front().tpr == 0.0);
    CHECK(c.back().fpr == 1.0);
    CHECK(c.back().tpr == 1.0);
    CHECK(c.size() == 5);
    double area = 0.0;
    for (std::size_t k = 1; k < c.size(); ++k) area += (c[k].fpr - c[k - 1].fpr) * 0.5 * (c[k].tpr + c[k - 1].tpr);
    CHECK(area == doctest::Approx(roc_auc(s, y)));
  }

  TEST_CASE("multiclass auc of a perfect classifier") {
    const Rows s{{0.9, 0.05, 0.05}, {0.1, 0.8, 0.1}, {0.2, 0.2, 0.6}, {0.7, 0.2, 0.1}};
    const std::vector<int> y{0, 1, 2, 0};
    CHECK(auc_1vsrest(s, y) == 1.0);
    CHECK(auc_1vs1(s, y) == 1.0);
  }

  TEST_CASE("1vs1 with two classes is the mean of both directed AUCs") {
    std::mt19937_64 g(3);
    std::normal_distribution<double> n(0.0, 1.0);
    Rows s;
    std::vector<int> y;
    std::vector<double> c0, c1;
    for (int k = 0; k < 50; ++k) {
      s.push_back({n(g), n(g)});
      y.push_back(k % 2);
    }
    std::vector<int> pos0, pos1;
    for (std::size_t k = 0; k < s.size(); ++k) {
      c0.push_back(s[k][0]);
      c1.push_back(s[k][1]);
      pos0.push_back(y[k] == 0);
      pos1.push_back(y[k] == 1);
    }
    CHECK(auc_1vs1(s, y) == doctest::Approx(0.5 * (roc_auc(c0, pos0) + roc_auc(c1, pos1))));
  }

  TEST_CASE("random scores give chance-level 1vsRest") {
    std::mt19937_64 g(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Rows s;
    std::vector<int> y;
    for (int k = 0; k < 3000; ++k) {
      s.push_back({u(g), u(g), u(g)});
      y.push_back(k % 3);
    }
    CHECK(std::fabs(auc_1vsrest(s, y) - 0.5) < 0.03);
  }

  TEST_CASE("1vs1 is invariant to per-class duplication and 1vsRest is not") {
    const Rows s{{0.6, 0.3, 0.1}, {0.5, 0.1, 0.4}, {0.4, 0.5, 0.1}, {0.3, 0.35, 0.35}, {0.45, 0.2, 0.35}, {0.2, 0.3, 0.5}};
    const std::vector<int> y{0, 0, 1, 1, 2, 2};
    Rows s2 = s;
    std::vector<int> y2 = y;
    for (int rep = 0; rep < 4; ++rep)
      for (std::size_t k = 0; k < s.size(); ++k)
        if (y[k] == 1) {
          s2.push_back(s[k]);
          y2.push_back(1);
        }
    CHECK(auc_1vs1(s2, y2) == doctest::Approx(auc_1vs1(s, y)).epsilon(1e-12));
    CHECK(std::fabs(auc_1vsrest(s2, y2) - auc_1vsrest(s, y)) > 1e-3);
  }

  TEST_CASE("1vsRest with explicit frequencies weights the per-class AUCs") {
    const Rows s{{0.9, 0.1}, {0.4, 0.6}, {0.6, 0.4}, {0.2, 0.8}};
    const std::vector<int> y{0, 0, 1, 1};
    const std::vector<double> f{3.0, 1.0};
    std::vector<double> c0, c1;
    std::vector<int> p0, p1;
    for (std::size_t k = 0; k < 4; ++k) {
      c0.push_back(s[k][0]);
      c1.push_back(s[k][1]);
      p0.push_back(y[k] == 0);
      p1.push_back(y[k] == 1);
    }
    CHECK(auc_1vsrest(s, y, f) == doctest::Approx((3.0 * roc_auc(c0, p0) + roc_auc(c1, p1)) / 4.0));
  }

  TEST_CASE("mann-whitney on separated triples") {
    const std::vector<double> a{4, 5, 6}, b{1, 2, 3};
    const auto r = mann_whitney_test(a, b);
    CHECK(r.statistic == 9.0);
    CHECK(r.exact);
    CHECK(r.p_value == doctest::Approx(1.0 / oracle::binom(6, 3)));
    CHECK(r.p_value == doctest::Approx(0.05));
  }

  TEST_CASE("mann-whitney of identical samples is near one half") {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{1, 2, 3, 4, 5};
    const auto r = mann_whitney_test(a, b);
    CHECK(r.statistic == 12.5);
    CHECK(r.p_value > 0.45);
    CHECK(r.p_value < 0.65);
  }

  TEST_CASE("mann-whitney exact p matches enumeration") {
    std::mt19937_64 g(5);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t na = 1 + g() % 8;
      const std::size_t nb = 1 + g() % (12 - na);
      const auto a = random_scores(g, na, trial % 3 ? 1000 : 4);
      const auto b = random_scores(g, nb, trial % 3 ? 1000 : 4);
      const auto r = mann_whitney_test(a, b);
      CHECK(r.exact);
      CHECK(r.statistic == oracle::mw_u(a, b));
      CHECK(r.p_value == doctest::Approx(oracle::mw_enumerated_p(a, b)).epsilon(1e-12));
    }
  }

  TEST_CASE("mann-whitney swap maps p to 1 - p plus the point mass") {
    std::mt19937_64 g(6);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> a(4 + trial % 4), b(8 - trial % 4);
      for (auto& v : a) v = n(g);
      for (auto& v : b) v = n(g);
      const auto ab = mann_whitney_test(a, b), ba = mann_whitney_test(b, a);
      // P(U >= u) + P(U <= u) = 1 + P(U = u); by symmetry P(U' >= n_a n_b - u) = P(U <= u).
      std::vector<double> pool(a);
      pool.insert(pool.end(), b.begin(), b.end());
      const double u = ab.statistic;
      std::vector<int> pick(pool.size(), 0);
      std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(a.size()), 1);
      std::sort(pick.begin(), pick.end());
      long eq = 0, total = 0;
      do {
        std::vector<double> ga, gb;
        for (std::size_t k = 0; k < pool.size(); ++k) (pick[k] ? ga : gb).push_back(pool[k]);
        ++total;
        eq += std::fabs(oracle::mw_u(ga, gb) - u) < 1e-9;
      } while (std::next_permutation(pick.begin(), pick.end()));
      CHECK(ab.p_value + ba.p_value == doctest::Approx(1.0 + static_cast<double>(eq) / static_cast<double>(total)));
    }
  }

  TEST_CASE("mann-whitney normal approximation near the exact boundary") {
    std::mt19937_64 g(7);
    std::normal_distribution<double> n(0.0, 1.0);
    auto worst_at = [&](std::size_t na, std::size_t nb) {
      double worst = 0.0;
      for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(na), b(nb);
        for (auto& v : a) v = n(g) + 0.4 * (trial % 4);
        for (auto& v : b) v = n(g);
        worst = std::max(worst, std::fabs(mann_whitney_test(a, b, PMethod::Exact).p_value -
                                          mann_whitney_test(a, b, PMethod::Normal).p_value));
      }
      return worst;
    };
    double small = 0.0, large = 0.0;
    for (std::size_t t = 13; t <= 17; ++t) small = std::max(small, worst_at(t / 2, t - t / 2));
    for (std::size_t t = 18; t <= 20; ++t) large = std::max(large, worst_at(t / 2, t - t / 2));
    MESSAGE("max |exact - normal| for Mann-Whitney, n 13..17: " << small << ", n 18..20: " << large);
    CHECK(small <= 0.008);
    CHECK(large <= 0.005);
  }

  TEST_CASE("wilcoxon all-positive diffs") {
    std::vector<double> d12, d10;
    for (int k = 1; k <= 12; ++k) d12.push_back(0.1 * k);
    for (int k = 1; k <= 10; ++k) d10.push_back(k);
    CHECK(wilcoxon_signed_rank(d12).p_value == 1.0 / 4096.0);
    CHECK(wilcoxon_signed_rank(d10).p_value == 1.0 / 1024.0);
    CHECK(wilcoxon_signed_rank(d12).statistic == 78.0);
  }

  TEST_CASE("wilcoxon symmetric diffs are near one half") {
    const std::vector<double> d{1, -1, 2, -2, 3, -3, 4, -4};
    const auto r = wilcoxon_signed_rank(d);
    CHECK(r.p_value > 0.45);
    CHECK(r.p_value < 0.6);
  }

  TEST_CASE("wilcoxon drops zeros and rejects all-zero input") {
    const std::vector<double> d{0.0, 1.0, 2.0, 0.0};
    CHECK(wilcoxon_signed_rank(d).p_value == 0.25);
    CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{0.0, 0.0}), DataError);
  }

  TEST_CASE("wilcoxon exact p matches sign enumeration") {
    std::mt19937_64 g(8);
    std::uniform_int_distribution<int> lv(-6, 6);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> d(static_cast<std::size_t>(1 + trial % 16));
      for (auto& v : d) v = trial % 2 ? lv(g) : lv(g) + 0.001 * static_cast<double>(g() % 997);
      if (std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; })) d[0] = 1.0;
      const auto r = wilcoxon_signed_rank(d);
      CHECK(r.exact);
      CHECK(r.p_value == doctest::Approx(oracle::wilcoxon_enumerated_p(d)).epsilon(1e-12));
    }
  }

  TEST_CASE("wilcoxon normal approximation near the exact boundary") {
    std::mt19937_64 g(9);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (int size = 18; size <= 22; ++size)
      for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> d(static_cast<std::size_t>(size));
        for (auto& v : d) v = n(g) + 0.2 * (trial % 4);
        worst = std::max(worst, std::fabs(wilcoxon_signed_rank(d, PMethod::Exact).p_value -
                                          wilcoxon_signed_rank(d, PMethod::Normal).p_value));
      }
    MESSAGE("max |exact - normal| for Wilcoxon, n 18..22: " << worst);
    CHECK(worst <= 0.005);
    std::vector<double> d21;
    for (int k = 1; k <= 21; ++k) d21.push_back(k % 5 ? k : -k);
    CHECK_FALSE(wilcoxon_signed_rank(d21).exact);
    std::vector<double> d20(d21.begin(), d21.end() - 1);
    CHECK(wilcoxon_signed_rank(d20).exact);
  }

  TEST_CASE("rank averaging") {
    const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
    CHECK(rank_average(v) == oracle::average_ranks(v));
    CHECK(rank_average(v) == std::vector<double>{3.5, 1.0, 3.5, 2.0});
  }

  TEST_CASE("average rank conventions") {
    const Rows best{{0.9, 0.5, 0.1}, {0.8, 0.7, 0.6}};
    CHECK(average_rank(best)[0] == 1.0);
    const Rows tied{{0.5, 0.5, 0.1}, {0.7, 0.7, 0.6}};
    const auto r = average_rank(tied);
    CHECK(r[0] == 1.5);
    CHECK(r[1] == 1.5);
    CHECK(r[2] == 3.0);
  }

  TEST_CASE("published AUC matrix yields the published average ranks") {
    const auto r = average_rank(kTable2);
    REQUIRE(r.size() == 7);
    for (std::size_t k = 0; k < 7; ++k) CHECK(std::fabs(r[k] - kTable2Ranks[k]) < 5e-5);
    CHECK(std::fabs(r[6] - 1.9167) < 5e-5);
    CHECK(std::min_element(r.begin(), r.end()) - r.begin() == 6);
  }

  TEST_CASE("confusion matrix") {
    const std::vector<int> t{0, 0, 1, 1, 2}, p{0, 1, 1, 1, 0};
    const auto c = confusion_matrix(t, p, 3);
    CHECK(c.counts[0][0] == 1);
    CHECK(c.counts[0][1] == 1);
    CHECK(c.counts[1][1] == 2);
    CHECK(c.counts[2][0] == 1);
    CHECK(c.total() == 5);
    CHECK(c.row_sum(1) == 2);
    CHECK(c.accuracy() == doctest::Approx(0.6));
    CHECK(c.class_accuracy(2) == 0.0);
    const auto e = confusion_matrix(std::vector<int>{0}, std::vector<int>{0}, 2);
    CHECK(std::isnan(e.class_accuracy(1)));
  }
}
