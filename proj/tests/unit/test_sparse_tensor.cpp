#include <doctest.h>

#include <chrono>
#include <random>
#include <set>

#include "waferscope/error.hpp"
#include "waferscope/sparse_tensor.hpp"

using namespace waferscope;

namespace {

std::vector<Coord> random_points(std::mt19937_64& g, int grid, int n) {
  std::uniform_int_distribution<int> d(0, grid - 1);
  std::vector<Coord> out;
  for (int k = 0; k < n; ++k) out.push_back({d(g), d(g)});
  return out;
}

}  // namespace

TEST_SUITE("sparse_tensor") {
  TEST_CASE("from_points singleton") {
    const std::vector<Coord> p{{0, 0}};
    const auto t = from_points(p, 4);
    CHECK(t.num_sites() == 1);
    CHECK(t.channels() == 1);
    CHECK(t.at(0, 0) == 1.0);
  }

  TEST_CASE("from_points collapses duplicates") {
    const std::vector<Coord> p{{1, 1}, {1, 1}};
    const auto t = from_points(p, 4);
    CHECK(t.num_sites() == 1);
    CHECK(t.at(0, 0) == 1.0);
  }

  TEST_CASE("from_points conserves count through to_dense") {
    const std::vector<Coord> p{{0, 0}, {3, 3}};
    const auto d = to_dense(from_points(p, 4));
    double s = 0.0;
    for (double v : d.values) s += v;
    CHECK(s == 2.0);
  }

  TEST_CASE("from_points rejects out-of-range coordinates by name") {
    const std::vector<Coord> p{{0, 0}, {4, 1}};
    CHECK_THROWS_AS(from_points(p, 4), DataError);
    try {
      from_points(p, 4);
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("(4,1)") != std::string::npos);
    }
    const std::vector<Coord> neg{{-1, 0}};
    CHECK_THROWS_AS(from_points(neg, 4), DataError);
  }

  TEST_CASE("to_dense of empty tensor is zero") {
    const auto d = to_dense(from_points(std::vector<Coord>{}, 2));
    CHECK(d.values.size() == 4);
    for (double v : d.values) CHECK(v == 0.0);
  }

  TEST_CASE("to_dense places a single value") {
    const auto t = SparseTensor(2, 1, make_support({{0, 1}}), {5.0});
    const auto d = to_dense(t);
    CHECK(d.at(0, 1, 0) == 5.0);
    CHECK(d.at(0, 0, 0) == 0.0);
    CHECK(d.at(1, 0, 0) == 0.0);
    CHECK(d.at(1, 1, 0) == 0.0);
  }

  TEST_CASE("to_dense round trip recovers the support") {
    std::mt19937_64 g(3);
    const auto pts = random_points(g, 32, 60);
    const auto t = from_points(pts, 32);
    const auto d = to_dense(t);
    std::vector<Coord> back;
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j)
        if (d.at(i, j, 0) != 0.0) back.push_back({i, j});
    CHECK(back == std::vector<Coord>(t.support().coords().begin(), t.support().coords().end()));
  }

  TEST_CASE("to_dense refuses huge grids") {
    const auto t = from_points(std::vector<Coord>{{0, 0}}, kMaxDenseGrid + 1);
    CHECK_THROWS_AS(to_dense(t), ContractError);
  }

  TEST_CASE("zero-valued sites remain active") {
    const auto t = SparseTensor(4, 2, make_support({{1, 2}}), {0.0, 0.0});
    CHECK(t.num_sites() == 1);
    CHECK(t.support().contains({1, 2}));
  }

  TEST_CASE("support is sorted by i then j") {
    const auto s = make_support({{3, 1}, {0, 2}, {3, 0}, {0, 2}});
    const std::vector<Coord> want{{0, 2}, {3, 0}, {3, 1}};
    CHECK(std::vector<Coord>(s->coords().begin(), s->coords().end()) == want);
    CHECK(s->find({3, 0}) == 1);
    CHECK(s->find({2, 2}) == Support::npos);
  }

  TEST_CASE("submanifold rulebook for an isolated site has only the centre rule") {
    const auto rb = build_submanifold_rulebook(make_support({{5, 5}}), 3, 16);
    REQUIRE(rb->rules.size() == 1);
    CHECK(rb->rules[0].offset == 4);
    CHECK(rb->rules[0].input == 0);
    CHECK(rb->rules[0].output == 0);
  }

  TEST_CASE("submanifold rulebook for two neighbours has four rules") {
    const auto rb = build_submanifold_rulebook(make_support({{0, 0}, {0, 1}}), 3, 8);
    CHECK(rb->rules.size() == 4);
    std::set<std::tuple<Coord, Coord>> pairs;
    for (const auto& r : rb->rules) pairs.insert({rb->output_coord(r), rb->input_coord(r)});
    CHECK(pairs.count({Coord{0, 0}, Coord{0, 0}}));
    CHECK(pairs.count({Coord{0, 0}, Coord{0, 1}}));
    CHECK(pairs.count({Coord{0, 1}, Coord{0, 0}}));
    CHECK(pairs.count({Coord{0, 1}, Coord{0, 1}}));
  }

  TEST_CASE("submanifold rulebook matches brute-force pair counts") {
    std::mt19937_64 g(11);
    for (int trial = 0; trial < 50; ++trial) {
      const int k = (trial % 3) * 2 + 1;
      const auto pts = random_points(g, 8, 1 + trial % 30);
      const auto t = from_points(pts, 8);
      const auto rb = build_submanifold_rulebook(t.support_ptr(), k, 8);
      std::set<Coord> s(t.support().coords().begin(), t.support().coords().end());
      std::size_t expect = 0;
      const int h = k / 2;
      for (Coord u : s)
        for (int di = -h; di <= h; ++di)
          for (int dj = -h; dj <= h; ++dj)
            if (s.count({u.i + di, u.j + dj})) ++expect;
      CHECK(rb->rules.size() == expect);
      CHECK(*rb->output_support == t.support());
      for (const auto& r : rb->rules) {
        const Coord in = rb->input_coord(r), out = rb->output_coord(r);
        const int di = static_cast<int>(r.offset) / k - h, dj = static_cast<int>(r.offset) % k - h;
        CHECK(in.i == out.i + di);
        CHECK(in.j == out.j + dj);
      }
      CHECK(std::is_sorted(rb->rules.begin(), rb->rules.end(), [](const Rule& a, const Rule& b) {
        return std::tie(a.output, a.offset, a.input) < std::tie(b.output, b.offset, b.input);
      }));
    }
  }

  TEST_CASE("submanifold rulebook rejects even kernels") {
    CHECK_THROWS_AS(build_submanifold_rulebook(make_support({{0, 0}}), 2, 4), ContractError);
    CHECK_THROWS_AS(build_submanifold_rulebook(make_support({{0, 0}}), 0, 4), ContractError);
  }

  TEST_CASE("submanifold rulebook produces no rules across the grid edge") {
    const auto rb = build_submanifold_rulebook(make_support({{0, 0}}), 5, 1);
    CHECK(rb->rules.size() == 1);
  }

  TEST_CASE("pool rulebook merges a 2x2 window") {
    const auto rb = build_pool_rulebook(make_support({{0, 0}, {1, 1}}), 4);
    CHECK(rb->output_support->size() == 1);
    CHECK((*rb->output_support)[0] == Coord{0, 0});
    CHECK(rb->rules.size() == 2);
    CHECK(rb->output_grid == 2);
  }

  TEST_CASE("pool rulebook halves coordinates") {
    const auto rb = build_pool_rulebook(make_support({{2, 3}}), 8);
    REQUIRE(rb->output_support->size() == 1);
    CHECK((*rb->output_support)[0] == Coord{1, 1});
    CHECK(rb->rules[0].offset == 1);
  }

  TEST_CASE("pool rulebook properties over random supports") {
    std::mt19937_64 g(5);
    for (int trial = 0; trial < 200; ++trial) {
      const auto t = from_points(random_points(g, 64, 1 + trial), 64);
      const auto rb = build_pool_rulebook(t.support_ptr(), 64);
      CHECK(rb->output_support->size() <= t.num_sites());
      std::vector<int> fed(rb->output_support->size(), 0);
      for (const auto& r : rb->rules) {
        ++fed[r.output];
        const Coord in = rb->input_coord(r), out = rb->output_coord(r);
        CHECK(out == Coord{in.i / 2, in.j / 2});
      }
      CHECK(rb->rules.size() == t.num_sites());
      for (int f : fed) CHECK(f >= 1);
    }
  }

  TEST_CASE("repeated pooling maps (i, j) to (i >> d, j >> d)") {
    std::mt19937_64 g(8);
    const auto pts = random_points(g, 1000, 300);
    auto s = from_points(pts, 1000).support_ptr();
    int grid = 1000;
    for (int d = 1; d <= 6; ++d) {
      const auto rb = build_pool_rulebook(s, grid);
      grid = pooled_grid(grid);
      s = rb->output_support;
      std::set<Coord> want;
      for (Coord c : pts) want.insert({c.i >> d, c.j >> d});
      CHECK(std::vector<Coord>(s->coords().begin(), s->coords().end()) == std::vector<Coord>(want.begin(), want.end()));
    }
  }

  TEST_CASE("rulebook construction cost does not depend on grid size") {
    std::mt19937_64 g(21);
    const auto pts = random_points(g, 1000, 5000);
    auto time_build = [&](int grid) {
      const auto s = from_points(pts, grid).support_ptr();
      const auto t0 = std::chrono::steady_clock::now();
      for (int rep = 0; rep < 5; ++rep) {
        auto rb = build_submanifold_rulebook(s, 3, grid);
        auto pb = build_pool_rulebook(s, grid);
        (void)rb;
        (void)pb;
      }
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    time_build(1000);
    const double small = time_build(1000);
    const double large = time_build(20000);
    CHECK(large < 2.0 * small + 0.01);
  }

  TEST_CASE("support sharing is by identity") {
    const auto t = from_points(std::vector<Coord>{{1, 1}}, 4);
    const auto u = t.with_features(3, {1, 2, 3});
    CHECK(same_support(t.support_ptr(), u.support_ptr()));
    CHECK_THROWS_AS(SparseTensor(4, 2, t.support_ptr(), {1.0}), ContractError);
  }
}
