#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>
#include <type_traits>

#include "waferscope/augmentation.hpp"
#include "waferscope/error.hpp"

using namespace waferscope;

namespace {

Wdm full_disk(int k) {
  Wdm w;
  w.id = "disk";
  w.grid_size = k;
  w.radius = 0.48 * k;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (w.in_disk({i, j})) w.defects.push_back({i, j});
  w.normalize();
  return w;
}

Wdm random_in_disk(Rng& rng, int k, int n, ClassLabel label) {
  Wdm w;
  w.id = "r" + std::to_string(rng.next() % 1000000);
  w.grid_size = k;
  w.radius = 0.48 * k;
  w.label = label;
  while (static_cast<int>(w.defects.size()) < n) {
    const Coord c{rng.uniform_int(0, k - 1), rng.uniform_int(0, k - 1)};
    if (w.in_disk(c)) w.defects.push_back(c);
  }
  w.normalize();
  return w;
}

// Every (rotation, flip, direction, distance, order) on a fine lattice.
std::vector<GeoParams> lattice(const std::vector<int>& rotations, bool flip, double nu) {
  std::vector<GeoParams> out;
  for (int r : rotations)
    for (bool f : {false, true}) {
      if (f && !flip) continue;
      for (int a = 0; a < 24; ++a)
        for (int d = 0; d <= 6; ++d)
          for (GeoOrder o : {GeoOrder::RotateFlipTranslate, GeoOrder::TranslateFlipRotate})
            out.push_back(GeoParams{r, f, a * std::numbers::pi / 12.0, nu * d / 6.0, o});
    }
  return out;
}

}  // namespace

TEST_SUITE("augmentation") {
  TEST_CASE("identity parameters leave the map unchanged") {
    Rng rng(1);
    const auto w = random_in_disk(rng, 64, 80, ClassLabel::Ring);
    CHECK(apply_geometric(w, GeoParams{}) == w);
  }

  TEST_CASE("a quarter turn maps (i, j) to (j, K-1-i)") {
    Wdm w;
    w.grid_size = 9;
    w.radius = 4.5;
    w.defects = {{2, 3}};
    const auto r = apply_geometric(w, GeoParams{90, false, 0.0, 0.0, GeoOrder::RotateFlipTranslate});
    CHECK(r.defects == std::vector<Coord>{{3, 6}});
    const auto f = apply_geometric(w, GeoParams{0, true, 0.0, 0.0, GeoOrder::RotateFlipTranslate});
    CHECK(f.defects == std::vector<Coord>{{2, 5}});
  }

  TEST_CASE("inverse parameters") {
    const auto a = inverse_geometric(GeoParams{90, false, 0.0, 0.0, GeoOrder::RotateFlipTranslate});
    CHECK(a.rotation_deg == 270);
    CHECK(inverse_geometric(GeoParams{0, true, 0.0, 0.0, GeoOrder::RotateFlipTranslate}).flip);
    const auto t = inverse_geometric(GeoParams{0, false, 0.5, 3.0, GeoOrder::RotateFlipTranslate});
    CHECK(t.direction == doctest::Approx(0.5 + std::numbers::pi));
    CHECK(t.distance == 3.0);
    CHECK(t.order == GeoOrder::TranslateFlipRotate);
    const auto off = translation_offset(GeoParams{0, false, 0.5, 3.0, GeoOrder::RotateFlipTranslate});
    const auto back = translation_offset(t);
    CHECK(back.i == -off.i);
    CHECK(back.j == -off.j);
    CHECK(std::hypot(off.i, off.j) <= 3.0);
  }

  TEST_CASE("every element of the test-time lattice has its inverse in the set") {
    TestTransformSet T;
    T.max_translation = 10.0;
    std::size_t n = 0;
    for (const auto& g : lattice(T.rotations, T.flip, T.max_translation)) {
      REQUIRE(T.contains(g));
      const auto inv = inverse_geometric(g);
      CHECK(T.contains(inv));
      const auto back = inverse_geometric(inv);
      CHECK(back.rotation_deg == g.rotation_deg);
      CHECK(back.flip == g.flip);
      CHECK(back.order == g.order);
      CHECK(back.distance == g.distance);
      CHECK(translation_offset(back) == translation_offset(g));
      ++n;
    }
    CHECK(n == 4 * 2 * 24 * 7 * 2);

    TestTransformSet half;
    half.rotations = {0, 180};
    half.flip = false;
    for (const auto& g : lattice(half.rotations, half.flip, 0.0)) CHECK(half.contains(inverse_geometric(g)));
  }

  TEST_CASE("class transform sets are inverse closed as well") {
    ClassTransformSet theta;
    theta.max_translation = 4.0;
    for (const auto& g : lattice(theta.rotations, theta.flip, theta.max_translation)) CHECK(theta.contains(inverse_geometric(g)));
    ClassTransformSet bad;
    bad.rotations = {0, 90};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("without translation the round trip is exact over the lattice") {
    const auto disk = full_disk(33);
    Rng rng(3);
    const auto sparse = random_in_disk(rng, 64, 150, ClassLabel::Ring);
    for (const auto& g : lattice({0, 90, 180, 270}, true, 0.0)) {
      for (const Wdm* w : {&disk, &sparse}) {
        const auto fwd = apply_geometric(*w, g);
        CHECK(fwd.defects.size() == w->defects.size());
        CHECK(apply_geometric(fwd, inverse_geometric(g)).defects == w->defects);
      }
    }
  }

  TEST_CASE("with translation the round trip keeps surviving points fixed") {
    Rng rng(4);
    const auto w = random_in_disk(rng, 128, 200, ClassLabel::Ring);
    for (const auto& g : lattice({0, 90, 180, 270}, true, 6.0)) {
      const auto back = apply_geometric(apply_geometric(w, g), inverse_geometric(g));
      const std::set<Coord> orig(w.defects.begin(), w.defects.end());
      for (Coord c : back.defects) CHECK(orig.count(c));
    }
  }

  TEST_CASE("the test-time set has no mixing member") {
    CHECK_FALSE(std::is_same_v<TestTransformSet, ClassTransformSet>);
    AugmentationPolicy pol;
    pol.mixing_classes = {ClassLabel::Ring, ClassLabel::Normal};
    const std::vector<ClassLabel> known{ClassLabel::Ring, ClassLabel::Normal};
    const auto T = pol.test_set(known, 64);
    CHECK(pol.for_class(ClassLabel::Ring, 64).mixing);
    Rng rng(5);
    const auto w = random_in_disk(rng, 64, 60, ClassLabel::Ring);
    const auto batch = make_test_batch(w, 50, T, nullptr, rng);
    for (const auto& a : batch) {
      CHECK_FALSE(a.label.has_value());
      CHECK(a.defects.size() <= w.defects.size());
    }
  }

  TEST_CASE("common transform set is the intersection") {
    ClassTransformSet a, b;
    a.max_translation = 5.0;
    b.max_translation = 2.0;
    b.flip = false;
    b.rotations = {0, 180};
    b.noise = false;
    const std::vector<ClassTransformSet> sets{a, b};
    const auto T = common_transform_set(sets);
    CHECK(T.max_translation == 2.0);
    CHECK_FALSE(T.flip);
    CHECK_FALSE(T.noise);
    CHECK(std::set<int>(T.rotations.begin(), T.rotations.end()) == std::set<int>{0, 180});
  }

  TEST_CASE("zero noise leaves the map unchanged") {
    Rng rng(6);
    const auto w = random_in_disk(rng, 64, 40, ClassLabel::Ring);
    CHECK(noise_inject(w, NoiseDist({0}), rng) == w);
  }

  TEST_CASE("noise injection is bounded, in the disk and never removes defects") {
    Wdm empty;
    empty.grid_size = 64;
    empty.radius = 0.48 * 64;
    Rng rng(7);
    for (int t = 0; t < 50; ++t) {
      const auto out = noise_inject(empty, NoiseDist({10}), rng);
      CHECK(out.defects.size() <= 10);
      for (Coord c : out.defects) CHECK(out.in_disk(c));
    }
    const auto w = random_in_disk(rng, 64, 30, ClassLabel::Ring);
    const auto out = noise_inject(w, NoiseDist({5, 20}), rng);
    const std::set<Coord> after(out.defects.begin(), out.defects.end());
    for (Coord c : w.defects) CHECK(after.count(c));
  }

  TEST_CASE("noise distribution comes from the normals") {
    std::vector<Wdm> d(3);
    d[0].label = ClassLabel::Normal;
    d[0].defects = {{0, 0}, {1, 1}};
    d[1].label = ClassLabel::Ring;
    d[1].defects = {{0, 0}};
    d[2].label = ClassLabel::Normal;
    const auto n = NoiseDist::from_normals(d);
    CHECK(std::vector<int>(n.counts().begin(), n.counts().end()) == std::vector<int>{0, 2});
    CHECK_THROWS_AS(NoiseDist::from_normals(std::span<const Wdm>(d).subspan(1, 1)), DataError);
  }

  TEST_CASE("mixing two identical sources with a full crop returns the source") {
    Rng rng(8);
    const auto w = random_in_disk(rng, 64, 70, ClassLabel::Slice);
    const std::vector<Wdm> src{w, w};
    const std::vector<SectorCrop> crops{{0.0, 2.0 * std::numbers::pi}, {0.0, 0.0}};
    CHECK(random_mix(src, crops).defects == w.defects);
    CHECK(random_mix(src, rng).defects == w.defects);
  }

  TEST_CASE("mixing disjoint crops of disjoint sources adds their counts") {
    Rng rng(9);
    auto a = random_in_disk(rng, 64, 80, ClassLabel::Slice);
    auto b = random_in_disk(rng, 64, 80, ClassLabel::Slice);
    const std::set<Coord> sa(a.defects.begin(), a.defects.end());
    std::erase_if(b.defects, [&](Coord c) { return sa.count(c) > 0; });
    const std::vector<SectorCrop> crops{{0.0, 2.0}, {2.0, 4.0}};
    std::size_t expect = 0;
    for (Coord c : a.defects) expect += crops[0].contains(a, c);
    for (Coord c : b.defects) expect += crops[1].contains(b, c);
    const std::vector<Wdm> src{a, b};
    const auto m = random_mix(src, crops);
    CHECK(m.defects.size() == expect);
    const std::set<Coord> sb(b.defects.begin(), b.defects.end());
    for (Coord c : m.defects) CHECK((sa.count(c) || sb.count(c)));
  }

  TEST_CASE("mixing rejects mixed labels") {
    Rng rng(10);
    const std::vector<Wdm> src{random_in_disk(rng, 64, 10, ClassLabel::Slice), random_in_disk(rng, 64, 10, ClassLabel::Ring)};
    CHECK_THROWS_AS(random_mix(src, rng), ContractError);
  }

  TEST_CASE("augment_for_training keeps labels and respects nu") {
    Rng pool_rng(11);
    std::vector<Wdm> pool;
    for (int k = 0; k < 4; ++k) pool.push_back(random_in_disk(pool_rng, 128, 50, ClassLabel::Slice));
    ClassTransformSet theta;
    theta.max_translation = 3.0;
    theta.mixing = true;
    theta.mix_probability = 1.0;
    const NoiseDist noise({2, 4});
    for (std::uint64_t s = 0; s < 3; ++s) {
      Rng a(s), b(s);
      AugmentTrace tr;
      const auto wa = augment_for_training(pool[0], ClassLabel::Slice, theta, &noise, pool, a, &tr);
      const auto wb = augment_for_training(pool[0], ClassLabel::Slice, theta, &noise, pool, b);
      CHECK(wa == wb);
      CHECK(wa.label == ClassLabel::Slice);
      CHECK(tr.mixed);
      CHECK(tr.geometric.distance <= 3.0);
      CHECK(std::hypot(translation_offset(tr.geometric).i, translation_offset(tr.geometric).j) <= 3.0);
      for (Coord c : wa.defects) CHECK(wa.in_disk(c));
    }
    theta.mixing = false;
    Rng r(1);
    AugmentTrace tr;
    augment_for_training(pool[0], ClassLabel::Slice, theta, &noise, pool, r, &tr);
    CHECK_FALSE(tr.mixed);
    CHECK_THROWS_AS(augment_for_training(pool[0], ClassLabel::Ring, theta, &noise, pool, r), ContractError);
  }

  TEST_CASE("mixing only fires for mixing-enabled classes in an epoch") {
    Rng rng(12);
    std::vector<Wdm> train;
    for (int k = 0; k < 6; ++k) train.push_back(random_in_disk(rng, 64, 30, ClassLabel::Slice));
    for (int k = 0; k < 20; ++k) train.push_back(random_in_disk(rng, 64, 30, ClassLabel::Normal));
    for (auto& w : train) w.id += std::to_string(&w - train.data());
    AugmentationPolicy pol;
    const Augmenter aug(pol, NoiseDist::from_normals(train));
    std::vector<AugmentTrace> traces;
    const auto ep = aug.epoch(train, 3, 0, &traces);
    std::size_t slices = 0, mixed = 0;
    for (std::size_t k = 0; k < ep.size(); ++k) {
      if (traces[k].mixed) {
        ++mixed;
        CHECK(ep[k].label == ClassLabel::Slice);
      }
      slices += ep[k].label == ClassLabel::Slice;
    }
    CHECK(mixed > 0);
    CHECK(slices >= 6);
    CHECK(aug.epoch(train, 3, 0) == ep);
    CHECK(aug.epoch(train, 3, 1) != ep);
  }

  TEST_CASE("identity test batch of one is the record itself") {
    Rng rng(13);
    auto w = random_in_disk(rng, 64, 40, ClassLabel::Ring);
    const auto batch = make_test_batch(w, 1, TestTransformSet::identity(), nullptr, rng);
    REQUIRE(batch.size() == 1);
    w.label.reset();
    CHECK(batch[0] == w);
    CHECK_THROWS_AS(make_test_batch(w, 0, TestTransformSet::identity(), nullptr, rng), ContractError);
  }

  TEST_CASE("test batches are reproducible and keep every interior defect") {
    Rng rng(14);
    auto w = random_in_disk(rng, 128, 60, ClassLabel::Ring);
    std::erase_if(w.defects, [&](Coord c) { return w.radius_of(c) > w.radius - 3.0; });
    TestTransformSet T;
    T.max_translation = 2.0;
    const NoiseDist noise({3});
    Rng a(1), b(1);
    const auto ba = make_test_batch(w, 10, T, &noise, a);
    CHECK(ba == make_test_batch(w, 10, T, &noise, b));
    for (const auto& x : ba) CHECK(x.defects.size() >= w.defects.size());
  }

  TEST_CASE("policy presets") {
    const auto off = AugmentationPolicy::disabled();
    CHECK_FALSE(off.enabled);
    const auto geo = AugmentationPolicy::geometric_only();
    CHECK(geo.mixing_classes.empty());
    CHECK_FALSE(geo.noise);
    const AugmentationPolicy def;
    CHECK(def.mixing_enabled(ClassLabel::BasketBall));
    CHECK(def.mixing_enabled(ClassLabel::Slice));
    CHECK_FALSE(def.mixing_enabled(ClassLabel::Ring));
    CHECK(def.for_class(ClassLabel::Ring, 500).max_translation == doctest::Approx(10.0));
  }
}
