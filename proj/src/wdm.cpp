#include "waferscope/wdm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "waferscope/error.hpp"

namespace waferscope {

namespace {
constexpr std::array<std::string_view, 13> kNames{
    "BasketBall", "ClusterBig", "ClusterSmall", "Donut",  "Fingerprints", "GeoScratch", "Grid",
    "HalfMoon",   "Incomplete", "Normal",       "Ring",   "Slice",        "ZigZag",
};
constexpr double kPi = std::numbers::pi;
}  // namespace

std::string_view label_name(ClassLabel l) { return kNames[static_cast<std::size_t>(l)]; }

std::optional<ClassLabel> parse_label(std::string_view name) {
  for (std::size_t k = 0; k < kNames.size(); ++k)
    if (kNames[k] == name) return static_cast<ClassLabel>(k);
  return std::nullopt;
}

ClassLabel label_from_name(std::string_view name) {
  if (auto l = parse_label(name)) return *l;
  std::string valid;
  for (auto n : kNames) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw DataError("unknown class label \"" + std::string(name) + "\"; valid labels: " + valid);
}

const std::map<ClassLabel, int>& reference_class_counts() {
  static const std::map<ClassLabel, int> counts{
      {ClassLabel::BasketBall, 74},   {ClassLabel::ClusterBig, 537}, {ClassLabel::ClusterSmall, 4393},
      {ClassLabel::Donut, 418},       {ClassLabel::Fingerprints, 371}, {ClassLabel::GeoScratch, 642},
      {ClassLabel::Grid, 283},        {ClassLabel::HalfMoon, 568},   {ClassLabel::Incomplete, 2946},
      {ClassLabel::Normal, 20309},    {ClassLabel::Ring, 798},       {ClassLabel::Slice, 71},
      {ClassLabel::ZigZag, 483},
  };
  return counts;
}

double Wdm::radius_of(Coord c) const {
  const double di = c.i - center();
  const double dj = c.j - center();
  return std::sqrt(di * di + dj * dj);
}

bool Wdm::in_disk(Coord c) const {
  const double di = c.i - center();
  const double dj = c.j - center();
  return di * di + dj * dj <= radius * radius;
}

void Wdm::normalize() {
  std::sort(defects.begin(), defects.end());
  defects.erase(std::unique(defects.begin(), defects.end()), defects.end());
}

SparseTensor to_tensor(const Wdm& w) { return from_points(w.defects, w.grid_size); }

std::string encode_wdm(const Wdm& w) {
  nlohmann::ordered_json j;
  j["id"] = w.id;
  j["k"] = w.grid_size;
  j["radius"] = w.radius;
  if (w.label) {
    j["label"] = std::string(label_name(*w.label));
  } else {
    j["label"] = nullptr;
  }
  auto defects = nlohmann::ordered_json::array();
  std::vector<Coord> sorted = w.defects;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (Coord c : sorted) defects.push_back({c.i, c.j});
  j["defects"] = std::move(defects);
  return j.dump();
}

Wdm decode_wdm(std::string_view line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw DataError(where + "record must be a JSON object");
  static const std::array<std::string_view, 5> kKeys{"id", "k", "radius", "label", "defects"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end()) {
      throw DataError(where + "unknown field \"" + it.key() + "\"");
    }
  }
  Wdm w;
  try {
    if (!j.contains("id") || !j["id"].is_string()) throw DataError(where + "\"id\" must be a string");
    if (!j.contains("k") || !j["k"].is_number_integer()) throw DataError(where + "\"k\" must be an integer");
    if (!j.contains("radius") || !j["radius"].is_number()) throw DataError(where + "\"radius\" must be a number");
    if (!j.contains("defects") || !j["defects"].is_array()) throw DataError(where + "\"defects\" must be an array");
    w.id = j["id"].get<std::string>();
    w.grid_size = j["k"].get<int>();
    w.radius = j["radius"].get<double>();
    if (w.grid_size < 1) throw DataError(where + "\"k\" must be >= 1");
    if (!(w.radius > 0.0)) throw DataError(where + "\"radius\" must be positive");
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_string()) throw DataError(where + "\"label\" must be a string or null");
      try {
        w.label = label_from_name(j["label"].get<std::string>());
      } catch (const DataError& e) {
        throw DataError(where + e.what());
      }
    }
    w.defects.reserve(j["defects"].size());
    for (const auto& p : j["defects"]) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() || !p[1].is_number_integer()) {
        throw DataError(where + "each defect must be an [i,j] integer pair");
      }
      const Coord c{p[0].get<std::int32_t>(), p[1].get<std::int32_t>()};
      if (!w.in_grid(c)) {
        throw DataError(where + "defect " + to_string(c) + " outside grid of size " + std::to_string(w.grid_size));
      }
      w.defects.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + e.what());
  }
  w.normalize();
  const auto outside = std::count_if(w.defects.begin(), w.defects.end(), [&](Coord c) { return !w.in_disk(c); });
  if (outside > 0) warn(where + std::to_string(outside) + " defect(s) of \"" + w.id + "\" lie outside the wafer disk");
  return w;
}

void write_jsonl(std::ostream& os, std::span<const Wdm> records) {
  for (const auto& w : records) os << encode_wdm(w) << '\n';
}

std::vector<Wdm> read_jsonl(std::istream& is) {
  std::vector<Wdm> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(decode_wdm(line, line_no));
  }
  return out;
}

void write_jsonl_file(const std::string& path, std::span<const Wdm> records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_jsonl(os, records);
}

std::vector<Wdm> read_jsonl_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_jsonl(is);
}

namespace {

int group_key(const Wdm& w) { return w.label ? static_cast<int>(*w.label) : -1; }

std::map<int, std::vector<std::size_t>> group_by_label(std::span<const Wdm> dataset) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t k = 0; k < dataset.size(); ++k) groups[group_key(dataset[k])].push_back(k);
  return groups;
}

std::string group_name(int key) {
  return key < 0 ? std::string("<unlabeled>") : std::string(label_name(static_cast<ClassLabel>(key)));
}

}  // namespace

DatasetSplit split_dataset(std::span<const Wdm> dataset, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("split fractions must be non-negative");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  DatasetSplit split;
  split.seed = seed;
  for (auto& [key, idx] : group_by_label(dataset)) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(key + 1), 0x5917);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const std::size_t n = idx.size();
    if (n < 3) {
      warn("class " + group_name(key) + " has " + std::to_string(n) + " sample(s); all assigned to train");
      split.train.insert(split.train.end(), idx.begin(), idx.end());
      continue;
    }
    auto portion = [&](double f) {
      if (f <= 0.0) return std::size_t{0};
      return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
    };
    const std::size_t n_fit = portion(fractions[1]);
    const std::size_t n_thr = std::min(portion(fractions[2]), n - n_fit);
    split.gmm_fit.insert(split.gmm_fit.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_fit));
    split.threshold.insert(split.threshold.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_fit),
                           idx.begin() + static_cast<std::ptrdiff_t>(n_fit + n_thr));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_fit + n_thr), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.gmm_fit.begin(), split.gmm_fit.end());
  std::sort(split.threshold.begin(), split.threshold.end());
  return split;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(std::span<const Wdm> dataset,
                                                                               double held_fraction,
                                                                               std::uint64_t seed) {
  if (!(held_fraction >= 0.0 && held_fraction < 1.0)) throw ConfigError("held-out fraction must be in [0,1)");
  std::vector<std::size_t> rest, held;
  for (auto& [key, idx] : group_by_label(dataset)) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(key + 1), 0x7e57);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const auto n_held = static_cast<std::size_t>(std::llround(held_fraction * static_cast<double>(idx.size())));
    held.insert(held.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_held));
    rest.insert(rest.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_held), idx.end());
  }
  std::sort(rest.begin(), rest.end());
  std::sort(held.begin(), held.end());
  return {std::move(rest), std::move(held)};
}

// ---------------------------------------------------------------------------
// Synthetic generators

namespace {

class PointSink {
 public:
  explicit PointSink(Wdm& w) : w_(w) {}

  // Rounds (i, j) to the grid; keeps it when inside the disk.
  template <class Pred>
  bool add(double i, double j, Pred&& pred) {
    const Coord c{static_cast<std::int32_t>(std::lround(i)), static_cast<std::int32_t>(std::lround(j))};
    if (!w_.in_grid(c) || !w_.in_disk(c) || !pred(c)) return false;
    w_.defects.push_back(c);
    return true;
  }
  bool add(double i, double j) {
    return add(i, j, [](Coord) { return true; });
  }

  double ci() const { return w_.center(); }
  double R() const { return w_.radius; }
  const Wdm& wdm() const { return w_; }

 private:
  Wdm& w_;
};

// Uniform in (angle, radius) on [0, 2pi] x [0, R]: denser toward the center.
void add_polar_noise(PointSink& sink, int n, Rng& rng) {
  for (int k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double t = rng.uniform(0.0, 2.0 * kPi);
      const double r = rng.uniform(0.0, sink.R());
      if (sink.add(sink.ci() + r * std::cos(t), sink.ci() + r * std::sin(t))) break;
    }
  }
}

double pick(const std::optional<double>& v, Rng& rng, double lo, double hi) { return v ? *v : rng.uniform(lo, hi); }
int pick(const std::optional<int>& v, Rng& rng, int lo, int hi) { return v ? *v : rng.uniform_int(lo, hi); }

template <class Sampler>
void fill(int count, Sampler&& sampler) {
  const int max_attempts = 40 * std::max(count, 1);
  int accepted = 0;
  for (int attempt = 0; attempt < max_attempts && accepted < count; ++attempt)
    if (sampler()) ++accepted;
}

void annulus(PointSink& s, Rng& rng, int count, double r0, double w, double theta0, double span) {
  fill(count, [&] {
    const double r = rng.uniform(r0 - w, r0 + w);
    const double t = theta0 + rng.uniform(0.0, span);
    return s.add(s.ci() + r * std::cos(t), s.ci() + r * std::sin(t), [&](Coord c) {
      return std::abs(s.wdm().radius_of(c) - r0) <= w;
    });
  });
}

struct Segment {
  double i0, j0, i1, j1;
};

void polyline(PointSink& s, Rng& rng, const std::vector<Segment>& segs, double density, double jitter) {
  double total = 0.0;
  for (const auto& g : segs) total += std::hypot(g.i1 - g.i0, g.j1 - g.j0);
  const int count = std::max(1, static_cast<int>(total * density));
  fill(count, [&] {
    double u = rng.uniform(0.0, total);
    for (const auto& g : segs) {
      const double len = std::hypot(g.i1 - g.i0, g.j1 - g.j0);
      if (u <= len || &g == &segs.back()) {
        const double t = len > 0.0 ? std::min(u / len, 1.0) : 0.0;
        return s.add(g.i0 + t * (g.i1 - g.i0) + rng.normal(0.0, jitter), g.j0 + t * (g.j1 - g.j0) + rng.normal(0.0, jitter));
      }
      u -= len;
    }
    return false;
  });
}

void arc(PointSink& s, Rng& rng, int count, double ci, double cj, double r, double theta0, double span, double jitter) {
  fill(count, [&] {
    const double t = theta0 + rng.uniform(0.0, span);
    const double rr = r + rng.normal(0.0, jitter);
    return s.add(ci + rr * std::cos(t), cj + rr * std::sin(t));
  });
}

void blob(PointSink& s, Rng& rng, int count, double ci, double cj, double sigma) {
  fill(count, [&] { return s.add(ci + rng.normal(0.0, sigma), cj + rng.normal(0.0, sigma)); });
}

}  // namespace

Wdm synth_generate(ClassLabel label, const SynthParams& p, int grid_size, double radius, Rng& rng) {
  if (grid_size < 4) throw ConfigError("synthetic grid must be at least 4");
  if (!(radius > 0.0)) throw ConfigError("wafer radius must be positive");
  Wdm w;
  w.grid_size = grid_size;
  w.radius = radius;
  w.label = label;
  PointSink s(w);
  const double R = radius;
  const double c = w.center();

  if (label == ClassLabel::Normal) {
    const double lambda = pick(p.noise_lambda, rng, 20.0, 80.0);
    add_polar_noise(s, rng.poisson(lambda), rng);
    w.normalize();
    return w;
  }

  switch (label) {
    case ClassLabel::Ring: {
      const double r0 = pick(p.radius_fraction, rng, 0.72, 0.90) * R;
      const double hw = pick(p.width_fraction, rng, 0.025, 0.05) * R;
      annulus(s, rng, pick(p.count, rng, 250, 500), r0, hw, 0.0, 2.0 * kPi);
      break;
    }
    case ClassLabel::Donut: {
      const double r0 = pick(p.radius_fraction, rng, 0.30, 0.50) * R;
      const double hw = pick(p.width_fraction, rng, 0.05, 0.09) * R;
      annulus(s, rng, pick(p.count, rng, 250, 500), r0, hw, 0.0, 2.0 * kPi);
      break;
    }
    case ClassLabel::HalfMoon: {
      const double r0 = pick(p.radius_fraction, rng, 0.80, 0.92) * R;
      const double hw = pick(p.width_fraction, rng, 0.03, 0.06) * R;
      const double span = pick(p.angle_span, rng, 0.7 * kPi, 1.2 * kPi);
      annulus(s, rng, pick(p.count, rng, 150, 350), r0, hw, rng.uniform(0.0, 2.0 * kPi), span);
      break;
    }
    case ClassLabel::Incomplete: {
      const double r0 = pick(p.radius_fraction, rng, 0.85, 0.95) * R;
      const double hw = pick(p.width_fraction, rng, 0.02, 0.05) * R;
      const double span = pick(p.angle_span, rng, 0.3 * kPi, 0.8 * kPi);
      annulus(s, rng, pick(p.count, rng, 40, 120), r0, hw, rng.uniform(0.0, 2.0 * kPi), span);
      break;
    }
    case ClassLabel::Slice: {
      const double span = pick(p.angle_span, rng, 0.3, 0.8);
      const double t0 = rng.uniform(0.0, 2.0 * kPi);
      fill(pick(p.count, rng, 250, 500), [&] {
        const double r = R * std::sqrt(rng.uniform());
        const double t = t0 + rng.uniform(0.0, span);
        return s.add(c + r * std::cos(t), c + r * std::sin(t));
      });
      break;
    }
    case ClassLabel::GeoScratch: {
      const double r = 0.7 * R * std::sqrt(rng.uniform());
      const double t = rng.uniform(0.0, 2.0 * kPi);
      double i = c + r * std::cos(t), j = c + r * std::sin(t);
      double dir = rng.uniform(0.0, 2.0 * kPi);
      std::vector<Segment> segs;
      const int n = rng.uniform_int(2, 3);
      for (int k = 0; k < n; ++k) {
        const double len = rng.uniform(0.25, 0.5) * R;
        const double i1 = i + len * std::cos(dir), j1 = j + len * std::sin(dir);
        segs.push_back({i, j, i1, j1});
        i = i1;
        j = j1;
        dir += rng.uniform(-0.5, 0.5);
      }
      polyline(s, rng, segs, rng.uniform(0.4, 0.8), 1.0);
      break;
    }
    case ClassLabel::ZigZag: {
      const double r = 0.5 * R * std::sqrt(rng.uniform());
      const double t = rng.uniform(0.0, 2.0 * kPi);
      double i = c + r * std::cos(t), j = c + r * std::sin(t);
      const double base = rng.uniform(0.0, 2.0 * kPi);
      const double turn = rng.uniform(0.8, 1.4);
      std::vector<Segment> segs;
      const int n = rng.uniform_int(5, 9);
      for (int k = 0; k < n; ++k) {
        const double len = rng.uniform(0.08, 0.15) * R;
        const double dir = base + (k % 2 == 0 ? turn / 2 : -turn / 2);
        const double i1 = i + len * std::cos(dir), j1 = j + len * std::sin(dir);
        segs.push_back({i, j, i1, j1});
        i = i1;
        j = j1;
      }
      polyline(s, rng, segs, rng.uniform(0.5, 0.9), 1.0);
      break;
    }
    case ClassLabel::Grid: {
      const double r = 0.5 * R * std::sqrt(rng.uniform());
      const double t = rng.uniform(0.0, 2.0 * kPi);
      const double pi0 = c + r * std::cos(t), pj0 = c + r * std::sin(t);
      const double half = rng.uniform(0.15, 0.3) * R;
      const double spacing = rng.uniform(8.0, 16.0);
      const int lines = std::max(1, static_cast<int>(2.0 * half / spacing));
      fill(pick(p.count, rng, 200, 400), [&] {
        const int line = rng.uniform_int(0, lines);
        const double along = rng.uniform(-half, half);
        const double across = -half + line * spacing + rng.normal(0.0, 0.5);
        if (rng.bernoulli(0.5)) return s.add(pi0 + across, pj0 + along);
        return s.add(pi0 + along, pj0 + across);
      });
      break;
    }
    case ClassLabel::ClusterBig: {
      const double r = 0.6 * R * std::sqrt(rng.uniform());
      const double t = rng.uniform(0.0, 2.0 * kPi);
      blob(s, rng, pick(p.count, rng, 250, 500), c + r * std::cos(t), c + r * std::sin(t),
           rng.uniform(0.07, 0.12) * R);
      break;
    }
    case ClassLabel::ClusterSmall: {
      const double r = 0.8 * R * std::sqrt(rng.uniform());
      const double t = rng.uniform(0.0, 2.0 * kPi);
      blob(s, rng, pick(p.count, rng, 40, 120), c + r * std::cos(t), c + r * std::sin(t),
           rng.uniform(0.015, 0.035) * R);
      break;
    }
    case ClassLabel::Fingerprints: {
      const double fr = rng.uniform(0.6, 0.9) * R;
      const double ft = rng.uniform(0.0, 2.0 * kPi);
      const double fi = c + fr * std::cos(ft), fj = c + fr * std::sin(ft);
      const int arcs = rng.uniform_int(3, 6);
      const double gap = rng.uniform(6.0, 12.0);
      const double r_start = rng.uniform(0.05, 0.15) * R;
      const double span = pick(p.angle_span, rng, 0.8, 1.6);
      const double facing = ft + kPi;  // arcs open toward the wafer centre
      const int total = pick(p.count, rng, 150, 300);
      for (int k = 0; k < arcs; ++k) {
        arc(s, rng, total / arcs, fi, fj, r_start + k * gap, facing - span / 2, span, 0.7);
      }
      break;
    }
    case ClassLabel::BasketBall: {
      const int arcs = rng.uniform_int(2, 3);
      const int total = pick(p.count, rng, 200, 400);
      const double t0 = rng.uniform(0.0, 2.0 * kPi);
      for (int k = 0; k < arcs; ++k) {
        const double t = t0 + k * 2.0 * kPi / arcs + rng.uniform(-0.3, 0.3);
        const double dist = rng.uniform(1.3, 1.8) * R;
        const double ai = c + dist * std::cos(t), aj = c + dist * std::sin(t);
        const double ar = dist - rng.uniform(0.2, 0.8) * R;
        // Visible part of the circle lies around the direction to the wafer centre.
        const double half_span = std::min(kPi, std::asin(std::min(1.0, R / dist)) + 0.2);
        arc(s, rng, total / arcs, ai, aj, ar, t + kPi - half_span, 2.0 * half_span, 0.8);
      }
      break;
    }
    case ClassLabel::Normal:
      break;
  }
  const double lambda = pick(p.noise_lambda, rng, 10.0, 40.0);
  add_polar_noise(s, rng.poisson(lambda), rng);
  w.normalize();
  return w;
}

std::vector<Wdm> synth_dataset(const std::map<ClassLabel, int>& counts, int grid_size, double radius,
                               std::uint64_t seed, const SynthParams& params) {
  std::vector<Wdm> out;
  for (const auto& [label, n] : counts) {
    for (int k = 0; k < n; ++k) {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(label) + 1, static_cast<std::uint64_t>(k));
      Wdm w = synth_generate(label, params, grid_size, radius, rng);
      std::ostringstream id;
      id << "synth-" << label_name(label) << '-' << std::setw(5) << std::setfill('0') << k;
      w.id = id.str();
      out.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace waferscope
