#include "waferscope/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>

#include "waferscope/error.hpp"

namespace waferscope {

namespace {

double upper_normal_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (std::isnan(x)) throw DataError(std::string(what) + ": NaN value");
}

}  // namespace

long ConfusionMatrix::total() const {
  long t = 0;
  for (const auto& r : counts) t += std::accumulate(r.begin(), r.end(), 0L);
  return t;
}

long ConfusionMatrix::row_sum(int true_class) const {
  const auto& r = counts.at(static_cast<std::size_t>(true_class));
  return std::accumulate(r.begin(), r.end(), 0L);
}

double ConfusionMatrix::accuracy() const {
  long diag = 0;
  for (int k = 0; k < num_classes; ++k) diag += counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)];
  const long t = total();
  return t == 0 ? std::nan("") : static_cast<double>(diag) / static_cast<double>(t);
}

double ConfusionMatrix::class_accuracy(int true_class) const {
  const long r = row_sum(true_class);
  if (r == 0) return std::nan("");
  return static_cast<double>(counts[static_cast<std::size_t>(true_class)][static_cast<std::size_t>(true_class)]) /
         static_cast<double>(r);
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int num_classes) {
  if (truth.size() != predicted.size()) throw ContractError("confusion matrix: length mismatch");
  if (num_classes < 1) throw ContractError("confusion matrix: need at least one class");
  ConfusionMatrix m;
  m.num_classes = num_classes;
  m.counts.assign(static_cast<std::size_t>(num_classes), std::vector<long>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes) {
      throw ContractError("confusion matrix: class index out of range");
    }
    ++m.counts[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

std::vector<double> rank_average(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("roc_auc: length mismatch");
  check_finite(scores, "roc_auc");
  std::size_t pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ContractError("roc_auc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(l);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw DataError("roc_auc needs both positive and negative samples");
  const auto ranks = rank_average(scores);
  double sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    if (labels[i] == 1) sum += ranks[i];
  const double p = static_cast<double>(pos);
  return (sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ContractError("roc_curve: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double pos = 0.0, neg = 0.0;
  for (int l : labels) (l == 1 ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) throw DataError("roc_curve needs both positive and negative samples");
  std::vector<RocPoint> pts{{0.0, 0.0}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    pts.push_back({fp / neg, tp / pos});
    i = j;
  }
  return pts;
}

namespace {

void check_matrix(const Rows& m, std::span<const int> labels, int& classes) {
  if (m.size() != labels.size()) throw ContractError("score matrix and labels differ in length");
  if (m.empty()) throw DataError("empty score matrix");
  classes = static_cast<int>(m[0].size());
  if (classes < 2) throw DataError("multiclass AUC needs at least 2 classes");
  for (const auto& r : m)
    if (static_cast<int>(r.size()) != classes) throw ContractError("ragged score matrix");
  std::vector<bool> seen(static_cast<std::size_t>(classes), false);
  for (int l : labels) {
    if (l < 0 || l >= classes) throw ContractError("label out of range");
    seen[static_cast<std::size_t>(l)] = true;
  }
  for (int c = 0; c < classes; ++c)
    if (!seen[static_cast<std::size_t>(c)]) throw DataError("class " + std::to_string(c) + " missing from labels");
}

}  // namespace

double auc_1vsrest(const Rows& score_matrix, std::span<const int> labels, std::span<const double> class_freqs) {
  int c = 0;
  check_matrix(score_matrix, labels, c);
  std::vector<double> freqs(class_freqs.begin(), class_freqs.end());
  if (freqs.empty()) {
    freqs.assign(static_cast<std::size_t>(c), 0.0);
    for (int l : labels) freqs[static_cast<std::size_t>(l)] += 1.0;
  }
  if (static_cast<int>(freqs.size()) != c) throw ContractError("class_freqs length must equal the class count");
  double total = 0.0, acc = 0.0;
  for (int k = 0; k < c; ++k) {
    std::vector<double> col(score_matrix.size());
    std::vector<int> bin(score_matrix.size());
    for (std::size_t i = 0; i < score_matrix.size(); ++i) {
      col[i] = score_matrix[i][static_cast<std::size_t>(k)];
      bin[i] = labels[i] == k ? 1 : 0;
    }
    acc += freqs[static_cast<std::size_t>(k)] * roc_auc(col, bin);
    total += freqs[static_cast<std::size_t>(k)];
  }
  if (!(total > 0.0)) throw DataError("class frequencies sum to zero");
  return acc / total;
}

double auc_1vs1(const Rows& score_matrix, std::span<const int> labels) {
  int c = 0;
  check_matrix(score_matrix, labels, c);
  auto a_given = [&](int i, int j) {
    std::vector<double> s;
    std::vector<int> bin;
    for (std::size_t n = 0; n < labels.size(); ++n) {
      if (labels[n] != i && labels[n] != j) continue;
      s.push_back(score_matrix[n][static_cast<std::size_t>(i)]);
      bin.push_back(labels[n] == i ? 1 : 0);
    }
    return roc_auc(s, bin);
  };
  double sum = 0.0;
  for (int i = 0; i < c; ++i)
    for (int j = i + 1; j < c; ++j) sum += 0.5 * (a_given(i, j) + a_given(j, i));
  return 2.0 * sum / (static_cast<double>(c) * (c - 1));
}

namespace {

double mw_u(std::span<const double> a, std::span<const double> b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

}  // namespace

TestResult mann_whitney_test(std::span<const double> a, std::span<const double> b, PMethod method) {
  if (a.empty() || b.empty()) throw DataError("Mann-Whitney test needs two non-empty samples");
  check_finite(a, "Mann-Whitney");
  check_finite(b, "Mann-Whitney");
  TestResult r;
  r.statistic = mw_u(a, b);
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  const bool exact = method == PMethod::Exact || (method == PMethod::Auto && n <= 12);
  if (exact) {
    if (n > 24) throw ContractError("exact Mann-Whitney enumeration limited to 24 samples");
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    // cmp[x][y]: contribution of pooled x in group a against pooled y in group b.
    std::vector<double> cmp(n * n);
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t y = 0; y < n; ++y)
        cmp[x * n + y] = pooled[x] > pooled[y] ? 1.0 : (pooled[x] == pooled[y] ? 0.5 : 0.0);
    std::size_t total = 0, hits = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != na) continue;
      double u = 0.0;
      for (std::size_t x = 0; x < n; ++x) {
        if (!(mask >> x & 1u)) continue;
        for (std::size_t y = 0; y < n; ++y)
          if (!(mask >> y & 1u)) u += cmp[x * n + y];
      }
      ++total;
      if (u >= r.statistic - 1e-9) ++hits;
    }
    r.p_value = static_cast<double>(hits) / static_cast<double>(total);
    r.exact = true;
    return r;
  }
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  double tie = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j] == pooled[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie += t * t * t - t;
    i = j;
  }
  const double dn = static_cast<double>(n);
  const double mean = static_cast<double>(na * nb) / 2.0;
  const double var = static_cast<double>(na * nb) / 12.0 * ((dn + 1.0) - tie / (dn * (dn - 1.0)));
  if (var <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  r.p_value = upper_normal_tail((r.statistic - mean - 0.5) / std::sqrt(var));
  return r;
}

TestResult wilcoxon_signed_rank(std::span<const double> diffs, PMethod method) {
  check_finite(diffs, "Wilcoxon");
  std::vector<double> nz;
  for (double d : diffs)
    if (d != 0.0) nz.push_back(d);
  if (nz.empty()) throw DataError("Wilcoxon signed-rank test undefined: every difference is zero");
  const std::size_t n = nz.size();
  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(nz[i]);
  const auto ranks = rank_average(mag);
  TestResult r;
  for (std::size_t i = 0; i < n; ++i)
    if (nz[i] > 0.0) r.statistic += ranks[i];
  const bool exact = method == PMethod::Exact || (method == PMethod::Auto && n <= 20);
  if (exact) {
    if (n > 60) throw ContractError("exact Wilcoxon distribution limited to 60 differences");
    // Doubled ranks are integers even with ties.
    std::vector<int> r2(n);
    int max_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      max_sum += r2[i];
    }
    std::vector<double> ways(static_cast<std::size_t>(max_sum) + 1, 0.0);
    ways[0] = 1.0;
    for (int v : r2)
      for (int s = max_sum; s >= v; --s) ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - v)];
    const int w2 = static_cast<int>(std::lround(2.0 * r.statistic));
    double hits = 0.0;
    for (int s = w2; s <= max_sum; ++s) hits += ways[static_cast<std::size_t>(s)];
    r.p_value = hits / std::ldexp(1.0, static_cast<int>(n));
    r.exact = true;
    return r;
  }
  double tie = 0.0;
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie += t * t * t - t;
    i = j;
  }
  const double dn = static_cast<double>(n);
  const double mean = dn * (dn + 1.0) / 4.0;
  const double var = dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - tie / 48.0;
  r.p_value = upper_normal_tail((r.statistic - mean - 0.5) / std::sqrt(var));
  return r;
}

std::vector<double> average_rank(const Rows& table) {
  if (table.empty() || table[0].empty()) throw DataError("average_rank needs a non-empty table");
  const std::size_t m = table[0].size();
  std::vector<double> mean(m, 0.0);
  for (const auto& row : table) {
    if (row.size() != m) throw ContractError("average_rank: ragged table");
    std::vector<double> neg(m);
    for (std::size_t k = 0; k < m; ++k) neg[k] = -row[k];
    const auto r = rank_average(neg);
    for (std::size_t k = 0; k < m; ++k) mean[k] += r[k];
  }
  for (double& v : mean) v /= static_cast<double>(table.size());
  return mean;
}

}  // namespace waferscope
