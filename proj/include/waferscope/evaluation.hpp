#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace waferscope {

using Rows = std::vector<std::vector<double>>;

// Row = true class, column = predicted class.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::vector<long>> counts;

  long total() const;
  long row_sum(int true_class) const;
  double accuracy() const;
  double class_accuracy(int true_class) const;  // recall; NaN for an empty row
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int num_classes);

// Rank-based AUC: P(score_pos > score_neg) + P(equal) / 2. labels: 1 = positive.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
// Empirical ROC curve, one point per distinct threshold, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

// sum_i freq(i) * AUC(column i; class i vs rest) / sum_i freq(i). An empty
// `class_freqs` uses the class proportions of `labels`.
double auc_1vsrest(const Rows& score_matrix, std::span<const int> labels, std::span<const double> class_freqs = {});

// Hand-Till: mean over class pairs of (A(i|j) + A(j|i)) / 2 where A(i|j) is
// the AUC of column i separating class i from class j.
double auc_1vs1(const Rows& score_matrix, std::span<const int> labels);

enum class PMethod { Auto, Exact, Normal };

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  bool exact = false;
};

// U = #{a > b} + #{a == b} / 2; one-sided p = P(U >= u) under exchangeability.
// Auto enumerates when |a| + |b| <= 12 and otherwise uses the normal
// approximation with tie and continuity corrections.
TestResult mann_whitney_test(std::span<const double> a, std::span<const double> b, PMethod method = PMethod::Auto);

// W+ over non-zero diffs (average ranks for ties); one-sided p = P(W+ >= w).
// Auto is exact for n <= 20. Throws DataError when every diff is zero.
TestResult wilcoxon_signed_rank(std::span<const double> diffs, PMethod method = PMethod::Auto);

// Average ranks with ties sharing the mean rank; ascending order of value.
std::vector<double> rank_average(std::span<const double> values);

// table[trial][method]. Per trial the largest metric gets rank 1; returns the
// mean rank of every method.
std::vector<double> average_rank(const Rows& table);

}  // namespace waferscope
