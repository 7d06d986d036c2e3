#include "waferscope/sparse_tensor.hpp"

#include <algorithm>

#include "waferscope/error.hpp"

namespace waferscope {

std::string to_string(Coord c) { return "(" + std::to_string(c.i) + "," + std::to_string(c.j) + ")"; }

Support::Support(std::vector<Coord> coords) : coords_(std::move(coords)) {
  std::sort(coords_.begin(), coords_.end());
  coords_.erase(std::unique(coords_.begin(), coords_.end()), coords_.end());
  index_.reserve(coords_.size() * 2);
  for (std::size_t r = 0; r < coords_.size(); ++r) index_.emplace(pack_coord(coords_[r]), static_cast<std::uint32_t>(r));
}

SupportPtr make_support(std::vector<Coord> coords) { return std::make_shared<const Support>(std::move(coords)); }

bool same_support(const SupportPtr& a, const SupportPtr& b) {
  if (a == b) return true;
  if (!a || !b) return false;
  return *a == *b;
}

SparseTensor::SparseTensor(int grid_size, int channels, SupportPtr support, std::vector<double> features)
    : grid_size_(grid_size), channels_(channels), support_(std::move(support)), features_(std::move(features)) {
  if (grid_size_ < 1) throw ContractError("grid_size must be >= 1");
  if (channels_ < 1) throw ContractError("channels must be >= 1");
  if (!support_) throw ContractError("null support");
  if (features_.size() != support_->size() * static_cast<std::size_t>(channels_)) {
    throw ContractError("feature buffer has " + std::to_string(features_.size()) + " entries, expected " +
                        std::to_string(support_->size() * static_cast<std::size_t>(channels_)));
  }
  for (Coord c : support_->coords()) {
    if (c.i < 0 || c.j < 0 || c.i >= grid_size_ || c.j >= grid_size_) {
      throw DataError("coordinate " + to_string(c) + " outside grid of size " + std::to_string(grid_size_));
    }
  }
}

SparseTensor SparseTensor::zeros(int grid_size, int channels, SupportPtr support) {
  const std::size_t n = support->size() * static_cast<std::size_t>(channels);
  return SparseTensor(grid_size, channels, std::move(support), std::vector<double>(n, 0.0));
}

SparseTensor from_points(std::span<const Coord> coords, int grid_size) {
  if (grid_size < 1) throw ContractError("grid_size must be >= 1");
  for (Coord c : coords) {
    if (c.i < 0 || c.j < 0 || c.i >= grid_size || c.j >= grid_size) {
      throw DataError("coordinate " + to_string(c) + " outside grid of size " + std::to_string(grid_size));
    }
  }
  auto support = make_support(std::vector<Coord>(coords.begin(), coords.end()));
  std::vector<double> ones(support->size(), 1.0);
  return SparseTensor(grid_size, 1, std::move(support), std::move(ones));
}

DenseArray to_dense(const SparseTensor& t) {
  if (t.grid_size() > kMaxDenseGrid) {
    throw ContractError("to_dense refused: grid " + std::to_string(t.grid_size()) + " exceeds limit " +
                        std::to_string(kMaxDenseGrid));
  }
  DenseArray d;
  d.grid_size = t.grid_size();
  d.channels = t.channels();
  d.values.assign(static_cast<std::size_t>(d.grid_size) * d.grid_size * d.channels, 0.0);
  for (std::size_t r = 0; r < t.num_sites(); ++r) {
    const Coord c = t.support()[r];
    for (int ch = 0; ch < t.channels(); ++ch) d.at(c.i, c.j, ch) = t.at(r, ch);
  }
  return d;
}

RuleBookPtr build_submanifold_rulebook(const SupportPtr& support, int kernel_size, int grid_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ContractError("submanifold kernel size must be odd and >= 1, got " + std::to_string(kernel_size));
  }
  auto rb = std::make_shared<RuleBook>();
  rb->mode = RuleMode::Submanifold;
  rb->kernel_size = kernel_size;
  rb->input_grid = grid_size;
  rb->output_grid = grid_size;
  rb->input_support = support;
  rb->output_support = support;

  const int h = kernel_size / 2;
  const auto coords = support->coords();
  rb->rules.reserve(coords.size() * 2);
  for (std::size_t out = 0; out < coords.size(); ++out) {
    const Coord u = coords[out];
    for (int di = -h; di <= h; ++di) {
      const int ii = u.i + di;
      if (ii < 0 || ii >= grid_size) continue;
      for (int dj = -h; dj <= h; ++dj) {
        const int jj = u.j + dj;
        if (jj < 0 || jj >= grid_size) continue;
        const std::int64_t in = support->find({ii, jj});
        if (in == Support::npos) continue;
        rb->rules.push_back({static_cast<std::uint32_t>(in), static_cast<std::uint32_t>((di + h) * kernel_size + (dj + h)),
                             static_cast<std::uint32_t>(out)});
      }
    }
  }
  return rb;
}

RuleBookPtr build_pool_rulebook(const SupportPtr& support, int grid_size) {
  auto rb = std::make_shared<RuleBook>();
  rb->mode = RuleMode::Pool2;
  rb->kernel_size = 2;
  rb->input_grid = grid_size;
  rb->output_grid = pooled_grid(grid_size);
  rb->input_support = support;

  const auto coords = support->coords();
  std::vector<Coord> halved;
  halved.reserve(coords.size());
  for (Coord c : coords) halved.push_back({c.i / 2, c.j / 2});
  rb->output_support = make_support(std::move(halved));

  rb->rules.reserve(coords.size());
  for (std::size_t in = 0; in < coords.size(); ++in) {
    const Coord c = coords[in];
    const auto out = rb->output_support->find({c.i / 2, c.j / 2});
    rb->rules.push_back({static_cast<std::uint32_t>(in), static_cast<std::uint32_t>((c.i % 2) * 2 + (c.j % 2)),
                         static_cast<std::uint32_t>(out)});
  }
  std::sort(rb->rules.begin(), rb->rules.end(), [](const Rule& a, const Rule& b) {
    if (a.output != b.output) return a.output < b.output;
    if (a.offset != b.offset) return a.offset < b.offset;
    return a.input < b.input;
  });
  return rb;
}

}  // namespace waferscope
