#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "waferscope/augmentation.hpp"
#include "waferscope/network.hpp"

namespace waferscope {

using Rows = std::vector<std::vector<double>>;

// ---------------------------------------------------------------------------
// Gaussian mixture

struct Gmm {
  int dim = 0;
  bool diagonal = false;
  std::vector<double> weights;
  Rows means;
  Rows covariances;  // dim x dim, row-major

  // Derived by prepare(): lower Cholesky factors and log-determinants.
  Rows chol;
  std::vector<double> log_det;

  std::size_t components() const { return weights.size(); }
  // Throws ContractError when a covariance is not positive definite.
  void prepare();
  // log of the weighted density of component k at x (needs prepare()).
  double component_log_density(std::size_t k, std::span<const double> x) const;
};

enum class GmmInit { Labels, KMeansPlusPlus };

struct GmmFitOptions {
  int components = 1;
  GmmInit init = GmmInit::Labels;
  double tol = 1e-9;
  int max_iter = 500;
  double ridge_scale = 1e-6;      // epsilon = ridge_scale * mean diagonal variance
  double max_condition = 1e12;    // above this, covariances are diagonal
  std::uint64_t seed = 0;
};

struct GmmFitResult {
  Gmm gmm;
  // Objective after initialization and after every EM iteration: the
  // log-likelihood plus the ridge prior term. Non-decreasing.
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;
  double ridge = 0.0;
};

// `labels` initializes one component per class (Labels init) and may be
// empty for KMeansPlusPlus. Latents are used as given.
GmmFitResult gmm_fit_em(const Rows& x, std::span<const int> labels, const GmmFitOptions& opts);

// S = -log sum_i a_i N(x; mu_i, Sigma_i), via log-sum-exp.
double gmm_score(const Gmm& g, std::span<const double> x);
double gmm_log_likelihood(const Gmm& g, const Rows& x);

// ---------------------------------------------------------------------------
// Threshold

struct CalibratedThreshold {
  double eta = 0.0;
  double alpha = 0.05;
  std::size_t n_cal = 0;
};

// eta = smallest calibration score q with |{s >= q}| / n <= alpha, else the
// largest score. alpha in (0, 1].
CalibratedThreshold calibrate_threshold(std::span<const double> scores, double alpha);

// ---------------------------------------------------------------------------
// Baselines. Every score is oriented so that larger means more novel.

struct BaselineScores {
  double softmax = 0.0;     // -max p
  double presoftmax = 0.0;  // -max v
  double sme = 0.0;         // entropy of p
};

BaselineScores baseline_scores(std::span<const double> v);

struct Weibull {
  double shape = 1.0;
  double scale = 1.0;
  double shift = 0.0;

  double cdf(double x) const;
};

inline constexpr double kWeibullMaxShape = 1000.0;
inline constexpr double kWeibullScaleFloor = 1e-12;

// Two-parameter maximum-likelihood fit (shift 0).
Weibull fit_weibull(std::span<const double> data);

struct OpenMaxModel {
  int num_classes = 0;
  int tail_size = 20;
  Rows mav;
  std::vector<Weibull> weibull;
  std::vector<bool> fitted;
};

OpenMaxModel openmax_fit(const Rows& scores, std::span<const int> labels, std::span<const int> predictions,
                         int tail_size = 20);
// Weibull CDF of the distance to the MAV of the argmax class. When that class
// had no correct training samples, the nearest fitted MAV is used.
double openmax_score(const OpenMaxModel& m, std::span<const double> v);

struct CiModel {
  std::vector<double> mean;
  std::vector<double> stddev;
  double lambda = 2.0;
};

inline constexpr double kCiStddevFloor = 1e-12;

CiModel ci_fit(const Rows& x, double lambda = 2.0);
int ci_score(const CiModel& m, std::span<const double> x);

struct IsolationTree {
  struct Node {
    int feature = -1;  // -1 for a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
    int size = 0;
  };
  std::vector<Node> nodes;
};

struct IsolationForest {
  int dim = 0;
  int subsample = 256;
  double normalizer = 1.0;  // c(subsample)
  std::vector<IsolationTree> trees;
};

// c(n) = 2 H(n-1) - 2 (n-1) / n with H(m) = ln m + 0.5772156649; c(n <= 1) = 0.
double iforest_c(double n);
IsolationForest iforest_fit(const Rows& x, int trees = 100, int subsample = 256, std::uint64_t seed = 0);
double iforest_path_length(const IsolationTree& t, std::span<const double> x);
double iforest_score(const IsolationForest& f, std::span<const double> x);

// ---------------------------------------------------------------------------
// Scorer selection

enum class ScorerKind { Gmm, SoftMax, PreSoftMax, OpenMax, Sme, IForest, Ci };

inline constexpr std::array<ScorerKind, 7> kAllScorers{ScorerKind::SoftMax, ScorerKind::PreSoftMax, ScorerKind::OpenMax,
                                                       ScorerKind::Sme,     ScorerKind::IForest,    ScorerKind::Ci,
                                                       ScorerKind::Gmm};

std::string_view scorer_name(ScorerKind k);
ScorerKind parse_scorer(std::string_view name);  // throws ConfigError listing valid names

struct ScorerOptions {
  int openmax_tail = 20;
  double ci_lambda = 2.0;
  int iforest_trees = 100;
  int iforest_subsample = 256;
  GmmFitOptions gmm;
  std::uint64_t seed = 0;
};

// Inputs for fitting any scorer. GMM, CI and IFOR use the held-out fit
// latents; OpenMax uses the score vectors of the network's training set.
struct ScorerFitData {
  int num_classes = 0;
  Rows fit_latents;
  std::vector<int> fit_labels;
  Rows train_scores;
  std::vector<int> train_labels;
};

class NoveltyScorer {
 public:
  NoveltyScorer() = default;

  static NoveltyScorer fit(ScorerKind kind, const ScorerFitData& data, const ScorerOptions& opts);

  ScorerKind kind() const { return kind_; }
  double score(std::span<const double> latent, std::span<const double> class_scores) const;

  const Gmm* gmm() const { return gmm_.get(); }
  const OpenMaxModel* openmax() const { return openmax_.get(); }
  const CiModel* ci() const { return ci_.get(); }
  const IsolationForest* iforest() const { return iforest_.get(); }

  std::string to_json() const;
  static NoveltyScorer from_json(std::string_view text);

 private:
  ScorerKind kind_ = ScorerKind::SoftMax;
  std::shared_ptr<const Gmm> gmm_;
  std::shared_ptr<const OpenMaxModel> openmax_;
  std::shared_ptr<const CiModel> ci_;
  std::shared_ptr<const IsolationForest> iforest_;
};

// ---------------------------------------------------------------------------
// Open-set decision

struct OpenDecision {
  bool novel = false;
  int class_index = -1;  // -1 when novel
  double mean_novelty = 0.0;
  std::vector<double> mean_probabilities;
};

// Novel iff mean_novelty > eta; otherwise argmax with ties to the lowest index.
OpenDecision decide_open(double mean_novelty, std::vector<double> mean_probabilities, double eta);

// Scores the n test-time augmentations of w and averages novelty scores and
// softmax probabilities.
OpenDecision open_classify(const Sscn& model, const NoveltyScorer& scorer, double eta, const Wdm& w, int n,
                           const TestTransformSet& theta, const NoiseDist* noise, Rng& rng);

}  // namespace waferscope
