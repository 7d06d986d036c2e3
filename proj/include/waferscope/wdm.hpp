#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "waferscope/rng.hpp"
#include "waferscope/sparse_tensor.hpp"

namespace waferscope {

enum class ClassLabel {
  BasketBall,
  ClusterBig,
  ClusterSmall,
  Donut,
  Fingerprints,
  GeoScratch,
  Grid,
  HalfMoon,
  Incomplete,
  Normal,
  Ring,
  Slice,
  ZigZag,
};

inline constexpr std::array<ClassLabel, 13> kAllLabels{
    ClassLabel::BasketBall, ClassLabel::ClusterBig, ClassLabel::ClusterSmall, ClassLabel::Donut, ClassLabel::Fingerprints,
    ClassLabel::GeoScratch, ClassLabel::Grid,       ClassLabel::HalfMoon,     ClassLabel::Incomplete, ClassLabel::Normal,
    ClassLabel::Ring,       ClassLabel::Slice,      ClassLabel::ZigZag,
};

std::string_view label_name(ClassLabel l);
std::optional<ClassLabel> parse_label(std::string_view name);
// Throws DataError listing the valid names.
ClassLabel label_from_name(std::string_view name);

// Class counts of the production dataset the generator priors mimic.
const std::map<ClassLabel, int>& reference_class_counts();

// A Wafer Defect Map: defect coordinates on a K x K grid. The wafer is the
// disk of radius `radius` around the grid center ((K-1)/2, (K-1)/2).
struct Wdm {
  std::string id;
  int grid_size = 512;
  double radius = 0.48 * 512;
  std::vector<Coord> defects;  // sorted, deduplicated
  std::optional<ClassLabel> label;

  double center() const { return 0.5 * (grid_size - 1); }
  bool in_grid(Coord c) const { return c.i >= 0 && c.j >= 0 && c.i < grid_size && c.j < grid_size; }
  bool in_disk(Coord c) const;
  double radius_of(Coord c) const;

  void normalize();  // sort + dedup
  bool operator==(const Wdm&) const = default;
};

inline constexpr double kDefaultRadiusFraction = 0.48;

SparseTensor to_tensor(const Wdm& w);

// JSON-Lines codec. One record per line:
// {"id":str,"k":int,"radius":float,"label":str|null,"defects":[[i,j],...]}
std::string encode_wdm(const Wdm& w);
// `line_no` is 1-based and only used in error messages.
Wdm decode_wdm(std::string_view line, std::size_t line_no = 1);
void write_jsonl(std::ostream& os, std::span<const Wdm> records);
std::vector<Wdm> read_jsonl(std::istream& is);
void write_jsonl_file(const std::string& path, std::span<const Wdm> records);
std::vector<Wdm> read_jsonl_file(const std::string& path);

// Stratified train / GMM-fit / threshold split (indices into the dataset).
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> gmm_fit;
  std::vector<std::size_t> threshold;
  std::uint64_t seed = 0;
};

inline constexpr std::array<double, 3> kDefaultSplitFractions{0.90, 0.05, 0.05};

// Classes with fewer than 3 samples go entirely to train (with a warning).
// Unlabeled records are stratified as their own group.
DatasetSplit split_dataset(std::span<const Wdm> dataset, std::array<double, 3> fractions, std::uint64_t seed);

// Two-way stratified split: returns (rest, held) index lists with roughly
// `held_fraction` of each class in `held`.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(std::span<const Wdm> dataset,
                                                                               double held_fraction,
                                                                               std::uint64_t seed);

// Optional overrides for the synthetic pattern generators. Fractions are
// relative to the wafer radius R; unset fields are drawn from class defaults.
struct SynthParams {
  std::optional<double> noise_lambda;     // background defects ~ Poisson(lambda)
  std::optional<int> count;               // pattern defects (Normal: ignored, uses noise_lambda)
  std::optional<double> radius_fraction;  // ring / donut / half-moon centre radius
  std::optional<double> width_fraction;   // half-width of annular bands
  std::optional<double> angle_span;       // radians, sector / arc extent
};

// Synthetic, class-characteristic WDM. All defects lie inside the disk.
Wdm synth_generate(ClassLabel label, const SynthParams& params, int grid_size, double radius, Rng& rng);

// counts[label] samples per class; each sample has its own RNG stream, so
// the output does not depend on generation order.
std::vector<Wdm> synth_dataset(const std::map<ClassLabel, int>& counts, int grid_size, double radius,
                               std::uint64_t seed, const SynthParams& params = {});

}  // namespace waferscope
