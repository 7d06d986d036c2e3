#include "waferscope/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "waferscope/error.hpp"

namespace waferscope {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  return a < 0.0 ? a + kTwoPi : a;
}

// Truncation toward zero, with values within 1e-9 of an integer snapped to it.
std::int32_t trunc_snapped(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) < 1e-9) x = r;
  return static_cast<std::int32_t>(std::trunc(x));
}

Coord rotate(Coord c, int degrees, int k) {
  for (int q = 0; q < (degrees / 90) % 4; ++q) c = Coord{c.j, k - 1 - c.i};
  return c;
}

Coord flip_h(Coord c, int k) { return Coord{c.i, k - 1 - c.j}; }

bool valid_rotation(int r) { return r == 0 || r == 90 || r == 180 || r == 270; }

void validate_rotations(const std::vector<int>& rotations) {
  if (rotations.empty()) throw ConfigError("rotation set must not be empty");
  for (int r : rotations) {
    if (!valid_rotation(r)) throw ConfigError("rotation " + std::to_string(r) + " not in {0, 90, 180, 270}");
    const int inv = (360 - r) % 360;
    if (std::find(rotations.begin(), rotations.end(), inv) == rotations.end()) {
      throw ConfigError("rotation set must contain the inverse of " + std::to_string(r));
    }
  }
}

bool contains_geo(const std::vector<int>& rotations, bool flip, double nu, const GeoParams& g) {
  return std::find(rotations.begin(), rotations.end(), g.rotation_deg) != rotations.end() && (flip || !g.flip) &&
         g.distance >= 0.0 && g.distance <= nu + 1e-12;
}

GeoParams sample_geo(const std::vector<int>& rotations, bool flip, double nu, Rng& rng) {
  GeoParams g;
  g.rotation_deg = rotations[rng.index(rotations.size())];
  g.flip = flip && rng.bernoulli(0.5);
  g.direction = rng.uniform(0.0, kTwoPi);
  g.distance = nu > 0.0 ? rng.uniform(0.0, nu) : 0.0;
  return g;
}

}  // namespace

Coord translation_offset(const GeoParams& g) {
  return Coord{trunc_snapped(g.distance * std::cos(g.direction)), trunc_snapped(g.distance * std::sin(g.direction))};
}

Wdm apply_geometric(const Wdm& w, const GeoParams& g) {
  Wdm out = w;
  out.defects.clear();
  out.defects.reserve(w.defects.size());
  const Coord off = translation_offset(g);
  const int k = w.grid_size;
  for (Coord c : w.defects) {
    if (g.order == GeoOrder::RotateFlipTranslate) {
      c = rotate(c, g.rotation_deg, k);
      if (g.flip) c = flip_h(c, k);
      c = Coord{c.i + off.i, c.j + off.j};
    } else {
      c = Coord{c.i + off.i, c.j + off.j};
      if (g.flip) c = flip_h(c, k);
      c = rotate(c, g.rotation_deg, k);
    }
    if (out.in_grid(c) && out.in_disk(c)) out.defects.push_back(c);
  }
  out.normalize();
  return out;
}

GeoParams inverse_geometric(const GeoParams& g) {
  GeoParams inv;
  inv.rotation_deg = (360 - g.rotation_deg) % 360;
  inv.flip = g.flip;
  inv.direction = wrap_angle(g.direction + std::numbers::pi);
  inv.distance = g.distance;
  inv.order = g.order == GeoOrder::RotateFlipTranslate ? GeoOrder::TranslateFlipRotate : GeoOrder::RotateFlipTranslate;
  return inv;
}

void ClassTransformSet::validate() const {
  validate_rotations(rotations);
  if (!(max_translation >= 0.0)) throw ConfigError("max translation must be non-negative");
  if (!(mix_probability >= 0.0 && mix_probability <= 1.0)) throw ConfigError("mix probability must be in [0, 1]");
  if (mix_sources < 2) throw ConfigError("random mixing needs at least 2 sources");
}

bool ClassTransformSet::contains(const GeoParams& g) const { return contains_geo(rotations, flip, max_translation, g); }

GeoParams ClassTransformSet::sample(Rng& rng) const { return sample_geo(rotations, flip, max_translation, rng); }

TestTransformSet TestTransformSet::identity() {
  TestTransformSet t;
  t.rotations = {0};
  t.flip = false;
  t.max_translation = 0.0;
  t.noise = false;
  return t;
}

bool TestTransformSet::contains(const GeoParams& g) const { return contains_geo(rotations, flip, max_translation, g); }

GeoParams TestTransformSet::sample(Rng& rng) const { return sample_geo(rotations, flip, max_translation, rng); }

TestTransformSet common_transform_set(std::span<const ClassTransformSet> sets) {
  if (sets.empty()) throw ContractError("common transform set of zero classes");
  TestTransformSet t;
  t.rotations = sets[0].rotations;
  t.flip = true;
  t.max_translation = sets[0].max_translation;
  t.noise = true;
  for (const auto& s : sets) {
    std::erase_if(t.rotations, [&](int r) { return std::find(s.rotations.begin(), s.rotations.end(), r) == s.rotations.end(); });
    t.flip = t.flip && s.flip;
    t.max_translation = std::min(t.max_translation, s.max_translation);
    t.noise = t.noise && s.noise;
  }
  if (t.rotations.empty()) t.rotations = {0};
  std::sort(t.rotations.begin(), t.rotations.end());
  return t;
}

NoiseDist::NoiseDist(std::vector<int> counts) : counts_(std::move(counts)) {
  if (counts_.empty()) throw ContractError("noise distribution needs at least one count");
  for (int c : counts_)
    if (c < 0) throw ContractError("noise counts must be non-negative");
  std::sort(counts_.begin(), counts_.end());
}

NoiseDist NoiseDist::from_normals(std::span<const Wdm> dataset) {
  std::vector<int> counts;
  for (const auto& w : dataset)
    if (w.label == ClassLabel::Normal) counts.push_back(static_cast<int>(w.defects.size()));
  if (counts.empty()) throw DataError("no Normal records to build the noise distribution from");
  return NoiseDist(std::move(counts));
}

Wdm noise_inject(const Wdm& w, const NoiseDist& noise, Rng& rng) {
  Wdm out = w;
  const int d = noise.sample(rng);
  const double c = w.center();
  for (int k = 0; k < d; ++k) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double t = rng.uniform(0.0, kTwoPi);
      const double r = rng.uniform(0.0, w.radius);
      const Coord p{static_cast<std::int32_t>(std::lround(c + r * std::cos(t))),
                    static_cast<std::int32_t>(std::lround(c + r * std::sin(t)))};
      if (out.in_grid(p) && out.in_disk(p)) {
        out.defects.push_back(p);
        break;
      }
    }
  }
  out.normalize();
  return out;
}

bool SectorCrop::contains(const Wdm& w, Coord c) const {
  if (span >= kTwoPi) return true;
  const double a = std::atan2(c.j - w.center(), c.i - w.center());
  return wrap_angle(a - start) < span;
}

namespace {

void check_mix_sources(std::span<const Wdm> sources) {
  if (sources.size() < 2) throw ContractError("random mixing needs at least 2 sources");
  for (const auto& s : sources) {
    if (s.label != sources[0].label) throw ContractError("random mixing sources must share a label");
    if (s.grid_size != sources[0].grid_size || s.radius != sources[0].radius) {
      throw ContractError("random mixing sources must share grid size and radius");
    }
  }
}

}  // namespace

Wdm random_mix(std::span<const Wdm> sources, std::span<const SectorCrop> crops) {
  check_mix_sources(sources);
  if (crops.size() != sources.size()) throw ContractError("one crop per mixing source required");
  Wdm out;
  out.id = sources[0].id + "~mix";
  out.grid_size = sources[0].grid_size;
  out.radius = sources[0].radius;
  out.label = sources[0].label;
  for (std::size_t s = 0; s < sources.size(); ++s)
    for (Coord c : sources[s].defects)
      if (crops[s].contains(sources[s], c)) out.defects.push_back(c);
  out.normalize();
  return out;
}

Wdm random_mix(std::span<const Wdm> sources, Rng& rng) {
  check_mix_sources(sources);
  const std::size_t n = sources.size();
  std::vector<double> cuts{0.0};
  for (std::size_t k = 1; k < n; ++k) cuts.push_back(rng.uniform(0.0, kTwoPi));
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(kTwoPi);
  const double origin = rng.uniform(0.0, kTwoPi);
  std::vector<SectorCrop> crops(n);
  for (std::size_t k = 0; k < n; ++k) crops[k] = SectorCrop{wrap_angle(origin + cuts[k]), cuts[k + 1] - cuts[k]};
  return random_mix(sources, crops);
}

Wdm augment_for_training(const Wdm& w, ClassLabel label, const ClassTransformSet& theta, const NoiseDist* noise,
                         std::span<const Wdm> mix_pool, Rng& rng, AugmentTrace* trace) {
  if (w.label != label) {
    throw ContractError("augmentation for class " + std::string(label_name(label)) + " applied to record \"" + w.id +
                        "\" with a different label");
  }
  AugmentTrace local;
  Wdm cur = w;
  if (theta.mixing && rng.bernoulli(theta.mix_probability)) {
    std::vector<const Wdm*> partners;
    for (const auto& p : mix_pool)
      if (p.label == label && p.id != w.id) partners.push_back(&p);
    if (!partners.empty()) {
      std::vector<Wdm> sources{w};
      for (int s = 1; s < theta.mix_sources; ++s) sources.push_back(*partners[rng.index(partners.size())]);
      cur = random_mix(sources, rng);
      cur.id = w.id;
      local.mixed = true;
    }
  }
  local.geometric = theta.sample(rng);
  cur = apply_geometric(cur, local.geometric);
  if (theta.noise && noise) {
    const std::size_t before = cur.defects.size();
    cur = noise_inject(cur, *noise, rng);
    local.injected = cur.defects.size() - before;
  }
  cur.label = label;
  if (trace) *trace = local;
  return cur;
}

std::vector<Wdm> make_test_batch(const Wdm& w, int n, const TestTransformSet& set, const NoiseDist* noise, Rng& rng) {
  if (n < 1) throw ContractError("test batch size must be at least 1");
  std::vector<Wdm> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    Wdm a = apply_geometric(w, set.sample(rng));
    if (set.noise && noise) a = noise_inject(a, *noise, rng);
    a.label.reset();
    out.push_back(std::move(a));
  }
  return out;
}

AugmentationPolicy AugmentationPolicy::disabled() {
  AugmentationPolicy p;
  p.enabled = false;
  p.noise = false;
  p.mixing_classes.clear();
  p.mix_resample_fraction = 0.0;
  p.fit_versions = 1;
  return p;
}

AugmentationPolicy AugmentationPolicy::geometric_only() {
  AugmentationPolicy p;
  p.noise = false;
  p.mixing_classes.clear();
  p.mix_resample_fraction = 0.0;
  return p;
}

void AugmentationPolicy::validate() const {
  validate_rotations(rotations);
  if (!(translation_fraction >= 0.0 && translation_fraction < 0.5)) {
    throw ConfigError("translation_fraction must be in [0, 0.5)");
  }
  if (!(mix_probability >= 0.0 && mix_probability <= 1.0)) throw ConfigError("mix_probability must be in [0, 1]");
  if (mix_sources < 2) throw ConfigError("mix_sources must be at least 2");
  if (!(mix_resample_fraction >= 0.0 && mix_resample_fraction <= 1.0)) {
    throw ConfigError("mix_resample_fraction must be in [0, 1]");
  }
  if (fit_versions < 1) throw ConfigError("fit_versions must be at least 1");
  for (const auto& [l, s] : overrides) s.validate();
}

bool AugmentationPolicy::mixing_enabled(ClassLabel l) const {
  if (auto it = overrides.find(l); it != overrides.end()) return enabled && it->second.mixing;
  return enabled && std::find(mixing_classes.begin(), mixing_classes.end(), l) != mixing_classes.end();
}

ClassTransformSet AugmentationPolicy::for_class(ClassLabel l, int grid_size) const {
  ClassTransformSet s;
  if (!enabled) {
    s.rotations = {0};
    s.flip = false;
    s.max_translation = 0.0;
    s.noise = false;
    s.mixing = false;
    return s;
  }
  if (auto it = overrides.find(l); it != overrides.end()) return it->second;
  s.rotations = rotations;
  s.flip = flip;
  s.max_translation = translation_fraction * grid_size;
  s.noise = noise;
  s.mixing = mixing_enabled(l);
  s.mix_probability = mix_probability;
  s.mix_sources = mix_sources;
  return s;
}

TestTransformSet AugmentationPolicy::test_set(std::span<const ClassLabel> known, int grid_size) const {
  if (!enabled || known.empty()) return TestTransformSet::identity();
  std::vector<ClassTransformSet> sets;
  for (ClassLabel l : known) sets.push_back(for_class(l, grid_size));
  return common_transform_set(sets);
}

Augmenter::Augmenter(AugmentationPolicy policy, std::optional<NoiseDist> noise)
    : policy_(std::move(policy)), noise_(std::move(noise)) {
  policy_.validate();
}

std::vector<Wdm> Augmenter::epoch(std::span<const Wdm> train, std::uint64_t seed, int epoch,
                                  std::vector<AugmentTrace>* traces) const {
  std::vector<Wdm> out;
  if (traces) traces->clear();
  if (!policy_.enabled) {
    out.assign(train.begin(), train.end());
    if (traces) traces->resize(out.size());
    return out;
  }
  std::map<ClassLabel, std::vector<Wdm>> pools;
  for (const auto& w : train) {
    if (!w.label) throw ContractError("training record \"" + w.id + "\" has no label");
    pools[*w.label].push_back(w);
  }
  const auto stream = static_cast<std::uint64_t>(epoch) + 1;
  out.reserve(train.size());
  for (std::size_t k = 0; k < train.size(); ++k) {
    const ClassLabel l = *train[k].label;
    Rng rng = Rng::stream(seed, stream, k);
    AugmentTrace t;
    out.push_back(augment_for_training(train[k], l, policy_.for_class(l, train[k].grid_size), noise(), pools[l], rng, &t));
    if (traces) traces->push_back(t);
  }

  std::size_t modal = 0;
  for (const auto& [l, pool] : pools) modal = std::max(modal, pool.size());
  std::size_t extra_index = train.size();
  for (const auto& [l, pool] : pools) {
    if (!policy_.mixing_enabled(l) || policy_.mix_resample_fraction <= 0.0) continue;
    const auto target = static_cast<std::size_t>(std::llround(policy_.mix_resample_fraction * static_cast<double>(modal)));
    for (std::size_t e = pool.size(); e < target; ++e, ++extra_index) {
      Rng rng = Rng::stream(seed, stream, extra_index);
      const Wdm& src = pool[rng.index(pool.size())];
      ClassTransformSet theta = policy_.for_class(l, src.grid_size);
      theta.mix_probability = 1.0;
      AugmentTrace t;
      Wdm w = augment_for_training(src, l, theta, noise(), pool, rng, &t);
      w.id = src.id + "~extra" + std::to_string(e - pool.size());
      out.push_back(std::move(w));
      if (traces) traces->push_back(t);
    }
  }
  return out;
}

std::vector<Wdm> Augmenter::versions(std::span<const Wdm> records, int versions, std::uint64_t seed) const {
  if (versions < 1) throw ContractError("versions must be at least 1");
  std::map<ClassLabel, std::vector<Wdm>> pools;
  for (const auto& w : records)
    if (w.label) pools[*w.label].push_back(w);
  std::vector<Wdm> out;
  out.reserve(records.size() * static_cast<std::size_t>(versions));
  for (std::size_t k = 0; k < records.size(); ++k) {
    const Wdm& w = records[k];
    for (int r = 0; r < versions; ++r) {
      if (!policy_.enabled || !w.label) {
        out.push_back(w);
        continue;
      }
      Rng rng = Rng::stream(seed, k + 1, static_cast<std::uint64_t>(r) + 0xf17);
      out.push_back(augment_for_training(w, *w.label, policy_.for_class(*w.label, w.grid_size), noise(), pools[*w.label], rng));
    }
  }
  return out;
}

}  // namespace waferscope
