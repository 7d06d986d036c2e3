#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "waferscope/rng.hpp"
#include "waferscope/wdm.hpp"

namespace waferscope {

// The order in which a GeoParams composes its three parts. Sampled transforms
// use RotateFlipTranslate; inverses use the reversed order.
enum class GeoOrder { RotateFlipTranslate, TranslateFlipRotate };

struct GeoParams {
  int rotation_deg = 0;    // 0, 90, 180 or 270; each quarter turn maps (i, j) -> (j, K-1-i)
  bool flip = false;       // horizontal: j -> K-1-j
  double direction = 0.0;  // radians
  double distance = 0.0;   // grid units
  GeoOrder order = GeoOrder::RotateFlipTranslate;

  bool operator==(const GeoParams&) const = default;
};

// Integer offset realized by the translation part. Truncation toward zero
// keeps its norm <= distance and makes (direction + pi) the exact negation.
Coord translation_offset(const GeoParams& g);

Wdm apply_geometric(const Wdm& w, const GeoParams& g);
GeoParams inverse_geometric(const GeoParams& g);

// Theta_l: the transformations that preserve class l.
struct ClassTransformSet {
  std::vector<int> rotations{0, 90, 180, 270};
  bool flip = true;
  double max_translation = 0.0;  // nu, grid units
  bool noise = true;
  bool mixing = false;
  double mix_probability = 0.5;
  int mix_sources = 2;

  void validate() const;  // throws ConfigError
  bool contains(const GeoParams& g) const;
  GeoParams sample(Rng& rng) const;
};

// T: the transformations shared by every class. It has no mixing field, so
// random mixing cannot be part of it.
struct TestTransformSet {
  std::vector<int> rotations{0, 90, 180, 270};
  bool flip = true;
  double max_translation = 0.0;
  bool noise = true;

  static TestTransformSet identity();

  bool contains(const GeoParams& g) const;
  GeoParams sample(Rng& rng) const;
};

// Intersection of the geometric and noise parts of every Theta_l.
TestTransformSet common_transform_set(std::span<const ClassTransformSet> sets);

// Empirical distribution of defect counts (psi-hat).
class NoiseDist {
 public:
  explicit NoiseDist(std::vector<int> counts);
  // From the Normal-labelled records of `dataset`.
  static NoiseDist from_normals(std::span<const Wdm> dataset);

  int sample(Rng& rng) const { return counts_[rng.index(counts_.size())]; }
  std::span<const int> counts() const { return counts_; }

 private:
  std::vector<int> counts_;  // sorted
};

// Adds D ~ psi-hat defects at uniformly sampled polar coordinates.
Wdm noise_inject(const Wdm& w, const NoiseDist& noise, Rng& rng);

// Angular sector [start, start + span) measured with atan2(j - c, i - c).
struct SectorCrop {
  double start = 0.0;
  double span = 0.0;

  bool contains(const Wdm& w, Coord c) const;
};

// Union over sources of defects inside that source's crop.
Wdm random_mix(std::span<const Wdm> sources, std::span<const SectorCrop> crops);
// Crops are a random partition of the full circle into one contiguous sector
// per source.
Wdm random_mix(std::span<const Wdm> sources, Rng& rng);

struct AugmentTrace {
  bool mixed = false;
  GeoParams geometric;
  std::size_t injected = 0;
};

// Optional random mixing with same-label partners from `mix_pool`, then a
// geometric transform drawn from theta, then noise injection.
Wdm augment_for_training(const Wdm& w, ClassLabel label, const ClassTransformSet& theta, const NoiseDist* noise,
                         std::span<const Wdm> mix_pool, Rng& rng, AugmentTrace* trace = nullptr);

// A_w: n independent draws from the test-time set. Labels are cleared.
std::vector<Wdm> make_test_batch(const Wdm& w, int n, const TestTransformSet& set, const NoiseDist* noise, Rng& rng);

inline constexpr int kDefaultTestBatch = 250;

// Per-class transformation policy as read from the augmentation policy file.
struct AugmentationPolicy {
  bool enabled = true;
  std::vector<int> rotations{0, 90, 180, 270};
  bool flip = true;
  double translation_fraction = 0.02;  // nu = translation_fraction * K
  bool noise = true;
  std::vector<ClassLabel> mixing_classes{ClassLabel::BasketBall, ClassLabel::Slice};
  double mix_probability = 0.5;
  int mix_sources = 2;
  // Each epoch, mixing-enabled classes are topped up with extra mixed samples
  // until they reach this fraction of the largest class.
  double mix_resample_fraction = 0.25;
  // Augmented copies of every record used when fitting the novelty scorer.
  int fit_versions = 4;
  std::map<ClassLabel, ClassTransformSet> overrides;

  static AugmentationPolicy disabled();
  static AugmentationPolicy geometric_only();

  void validate() const;
  bool mixing_enabled(ClassLabel l) const;
  ClassTransformSet for_class(ClassLabel l, int grid_size) const;
  TestTransformSet test_set(std::span<const ClassLabel> known, int grid_size) const;
};

// Per-epoch training-set augmentation with per-sample RNG streams.
class Augmenter {
 public:
  Augmenter(AugmentationPolicy policy, std::optional<NoiseDist> noise);

  const AugmentationPolicy& policy() const { return policy_; }
  const NoiseDist* noise() const { return noise_ ? &*noise_ : nullptr; }

  std::vector<Wdm> epoch(std::span<const Wdm> train, std::uint64_t seed, int epoch,
                         std::vector<AugmentTrace>* traces = nullptr) const;

  // `versions` augmented copies of every record, for scorer fitting.
  std::vector<Wdm> versions(std::span<const Wdm> records, int versions, std::uint64_t seed) const;

 private:
  AugmentationPolicy policy_;
  std::optional<NoiseDist> noise_;
};

}  // namespace waferscope
