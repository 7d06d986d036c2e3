#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "waferscope/pipeline.hpp"

namespace waferscope {

struct LooConfig {
  SscnConfig network;  // num_classes is set per fold
  TrainConfig train;
  AugmentationPolicy augmentation;
  ScorerOptions scorer;
  std::vector<ScorerKind> scorers{kAllScorers.begin(), kAllScorers.end()};
  double test_fraction = 0.2;
  std::array<double, 3> split = kDefaultSplitFractions;
  int tta = kDefaultTestBatch;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::vector<ClassLabel> held_out;  // empty: every class except Normal
  int workers = 1;                   // held-out folds run concurrently; 0 = hardware threads

  void validate() const;
};

struct LooRow {
  ClassLabel held_out = ClassLabel::Normal;
  std::vector<ClassLabel> known;
  std::size_t n_novel = 0;
  std::size_t n_known = 0;
  std::vector<double> auc;          // per scorer: novel (positive) vs known test
  std::vector<double> mw_p;         // one-sided Mann-Whitney, novel scores > known scores
  std::vector<double> eta;          // per scorer, calibrated on the threshold split
  std::vector<double> known_fpr;    // fraction of known test records with score > eta
  std::vector<double> novel_tpr;    // fraction of novel records with score > eta
  double closed_accuracy = 0.0;     // known test, argmax of mean probabilities
  // Ids that reached each fitting split, kept for leakage audits.
  std::vector<std::string> train_ids, gmm_fit_ids, threshold_ids;
  // Scored test records: known test first, then the novel records.
  std::vector<std::string> sample_ids;
  std::vector<int> sample_novel;
  Rows sample_scores;  // [sample][scorer]
};

struct LooReport {
  std::vector<ScorerKind> scorers;
  std::vector<LooRow> rows;
  std::vector<double> average_ranks;
  std::size_t best = 0;
  // Best scorer against each other scorer over the held-out classes;
  // empty for the best itself or when every difference is zero.
  std::vector<std::optional<TestResult>> wilcoxon_vs_best;
};

// Normal is always known. For every other held-out class c the network is
// trained on the development split without c, scorers are fitted, and the
// class-c records are scored against the known test records.
LooReport leave_one_out_protocol(std::span<const Wdm> dataset, const LooConfig& cfg, const LogFn& log = {});

}  // namespace waferscope
