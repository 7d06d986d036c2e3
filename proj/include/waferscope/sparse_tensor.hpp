#pragma once

#include <compare>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace waferscope {

struct Coord {
  std::int32_t i = 0;
  std::int32_t j = 0;

  auto operator<=>(const Coord&) const = default;
};

std::string to_string(Coord c);

inline std::uint64_t pack_coord(Coord c) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.i)) << 32) |
         static_cast<std::uint32_t>(c.j);
}

// Sorted, deduplicated set of active sites with O(1) lookup by coordinate.
// Rows are indices into the sorted coordinate list; every tensor that shares
// a Support stores its features in that row order.
class Support {
 public:
  static constexpr std::int64_t npos = -1;

  Support() = default;
  explicit Support(std::vector<Coord> coords);

  std::size_t size() const { return coords_.size(); }
  bool empty() const { return coords_.empty(); }
  std::span<const Coord> coords() const { return coords_; }
  Coord operator[](std::size_t row) const { return coords_[row]; }

  // Row of `c`, or npos when inactive.
  std::int64_t find(Coord c) const {
    auto it = index_.find(pack_coord(c));
    return it == index_.end() ? npos : static_cast<std::int64_t>(it->second);
  }
  bool contains(Coord c) const { return index_.count(pack_coord(c)) != 0; }

  bool operator==(const Support& other) const { return coords_ == other.coords_; }

 private:
  std::vector<Coord> coords_;
  std::unordered_map<std::uint64_t, std::uint32_t> index_;
};

using SupportPtr = std::shared_ptr<const Support>;

SupportPtr make_support(std::vector<Coord> coords);
bool same_support(const SupportPtr& a, const SupportPtr& b);

// Channels-per-active-site map over a grid_size x grid_size grid. Activity is
// coordinate membership; a site whose features are all zero stays active.
// Immutable after construction.
class SparseTensor {
 public:
  SparseTensor() : SparseTensor(1, 1, make_support({}), {}) {}
  SparseTensor(int grid_size, int channels, SupportPtr support, std::vector<double> features);

  static SparseTensor zeros(int grid_size, int channels, SupportPtr support);

  int grid_size() const { return grid_size_; }
  int channels() const { return channels_; }
  std::size_t num_sites() const { return support_->size(); }
  const Support& support() const { return *support_; }
  const SupportPtr& support_ptr() const { return support_; }

  std::span<const double> features() const { return features_; }
  std::span<const double> site(std::size_t row) const {
    return {features_.data() + row * static_cast<std::size_t>(channels_), static_cast<std::size_t>(channels_)};
  }
  double at(std::size_t row, int channel) const {
    return features_[row * static_cast<std::size_t>(channels_) + static_cast<std::size_t>(channel)];
  }

  // New tensor on the same support.
  SparseTensor with_features(int channels, std::vector<double> features) const {
    return SparseTensor(grid_size_, channels, support_, std::move(features));
  }

 private:
  int grid_size_;
  int channels_;
  SupportPtr support_;
  std::vector<double> features_;
};

// Binary map: each listed coordinate becomes an active site with feature 1.0.
// Duplicates collapse. Throws DataError naming the first out-of-range coord.
SparseTensor from_points(std::span<const Coord> coords, int grid_size);

struct DenseArray {
  int grid_size = 0;
  int channels = 0;
  std::vector<double> values;  // [i][j][c]

  double at(int i, int j, int c) const {
    return values[(static_cast<std::size_t>(i) * grid_size + j) * channels + c];
  }
  double& at(int i, int j, int c) { return values[(static_cast<std::size_t>(i) * grid_size + j) * channels + c]; }
};

inline constexpr int kMaxDenseGrid = 1024;

// Test oracle helper. Refuses grids above kMaxDenseGrid.
DenseArray to_dense(const SparseTensor& t);

enum class RuleMode { Submanifold, Pool2 };

// One gather-scatter step: rows index the input and output supports.
struct Rule {
  std::uint32_t input = 0;
  std::uint32_t offset = 0;
  std::uint32_t output = 0;

  auto operator<=>(const Rule&) const = default;
};

// Precomputed (input site, kernel offset, output site) triples. Rules are
// sorted by (output, offset, input).
//
// Submanifold: offset index (di + h) * k + (dj + h) for delta (di, dj) in
// [-h, h]^2, h = k / 2; the rule reads input u + delta for output u
// (cross-correlation). Pool2: offset index (i % 2) * 2 + (j % 2).
struct RuleBook {
  RuleMode mode = RuleMode::Submanifold;
  int kernel_size = 1;
  int input_grid = 0;
  int output_grid = 0;
  SupportPtr input_support;
  SupportPtr output_support;
  std::vector<Rule> rules;

  Coord input_coord(const Rule& r) const { return (*input_support)[r.input]; }
  Coord output_coord(const Rule& r) const { return (*output_support)[r.output]; }
};

using RuleBookPtr = std::shared_ptr<const RuleBook>;

RuleBookPtr build_submanifold_rulebook(const SupportPtr& support, int kernel_size, int grid_size);
RuleBookPtr build_pool_rulebook(const SupportPtr& support, int grid_size);

inline int pooled_grid(int grid_size) { return (grid_size + 1) / 2; }

}  // namespace waferscope
