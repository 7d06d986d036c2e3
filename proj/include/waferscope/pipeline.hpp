#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "waferscope/augmentation.hpp"
#include "waferscope/evaluation.hpp"
#include "waferscope/network.hpp"
#include "waferscope/openset.hpp"
#include "waferscope/wdm.hpp"

namespace waferscope {

using LogFn = std::function<void(const std::string&)>;

// Index of `label` in `classes`, or -1.
int class_index(std::span<const ClassLabel> classes, ClassLabel label);
// Sorted distinct labels of the labelled records.
std::vector<ClassLabel> labels_present(std::span<const Wdm> records);
std::vector<Wdm> select(std::span<const Wdm> records, std::span<const std::size_t> indices);

struct FitReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;  // train-mode accuracy over the epoch's batches
};

// Cross-entropy training with Adam. Every epoch draws a fresh augmented copy
// of the training set (when an augmenter is supplied), shuffles it and steps
// through mini-batches; BN running statistics are committed after each step.
FitReport fit(Sscn& model, std::span<const Wdm> train, std::span<const ClassLabel> classes, const TrainConfig& cfg,
              const Augmenter* augmenter, const LogFn& log = {});

struct Embedding {
  Rows latents;
  Rows scores;
};

// Eval-mode forward of every record.
Embedding embed(const Sscn& model, std::span<const Wdm> records);

// Test-time averaging: for record r, N draws from the test-time set; returns
// the mean novelty score under each scorer and mean softmax probabilities.
struct TtaResult {
  std::vector<double> novelty;  // one per scorer
  std::vector<double> probabilities;
};

std::vector<TtaResult> tta_evaluate(const Sscn& model, std::span<const Wdm> records,
                                    std::span<const NoveltyScorer> scorers, int n, const TestTransformSet& set,
                                    const NoiseDist* noise, std::uint64_t seed);

// The trained open-set classifier K(w).
struct OpenSetModel {
  Sscn network;
  std::vector<ClassLabel> classes;
  NoveltyScorer scorer;
  CalibratedThreshold threshold;
  TestTransformSet test_set;
  std::optional<NoiseDist> noise;
};

struct ClosedSetReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double auc_1vsrest = 0.0;
  double auc_1vs1 = 0.0;
};

// Records whose label is not among `classes` are rejected.
ClosedSetReport evaluate_closed(const Sscn& model, std::span<const ClassLabel> classes, std::span<const Wdm> test,
                                int n, const TestTransformSet& set, const NoiseDist* noise, std::uint64_t seed);

}  // namespace waferscope
