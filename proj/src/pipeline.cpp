#include "waferscope/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "waferscope/error.hpp"

namespace waferscope {

int class_index(std::span<const ClassLabel> classes, ClassLabel label) {
  const auto it = std::find(classes.begin(), classes.end(), label);
  return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

std::vector<ClassLabel> labels_present(std::span<const Wdm> records) {
  std::vector<ClassLabel> out;
  for (const auto& w : records)
    if (w.label && std::find(out.begin(), out.end(), *w.label) == out.end()) out.push_back(*w.label);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Wdm> select(std::span<const Wdm> records, std::span<const std::size_t> indices) {
  std::vector<Wdm> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records[i]);
  return out;
}

namespace {

std::vector<int> label_indices(std::span<const Wdm> records, std::span<const ClassLabel> classes) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& w : records) {
    const int k = w.label ? class_index(classes, *w.label) : -1;
    if (k < 0) {
      throw ContractError("record \"" + w.id + "\" has label " +
                          (w.label ? std::string(label_name(*w.label)) : std::string("<none>")) +
                          " outside the known classes");
    }
    out.push_back(k);
  }
  return out;
}

}  // namespace

FitReport fit(Sscn& model, std::span<const Wdm> train, std::span<const ClassLabel> classes, const TrainConfig& cfg,
              const Augmenter* augmenter, const LogFn& log) {
  cfg.validate();
  if (train.empty()) throw DataError("training set is empty");
  if (static_cast<int>(classes.size()) != model.config.num_classes) {
    throw ContractError("model has " + std::to_string(model.config.num_classes) + " outputs but " +
                        std::to_string(classes.size()) + " classes were given");
  }
  label_indices(train, classes);

  FitReport report;
  AdamState adam;
  std::vector<double> params = flatten_parameters(model);
  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<Wdm> data = augmenter ? augmenter->epoch(train, cfg.seed, e) : std::vector<Wdm>(train.begin(), train.end());
    const std::vector<int> y = label_indices(data, classes);
    std::vector<std::size_t> order(data.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    Rng rng = Rng::stream(cfg.seed, 0x5eed, static_cast<std::uint64_t>(e));
    std::shuffle(order.begin(), order.end(), rng.engine());

    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<SparseTensor> xs;
      std::vector<int> ys;
      std::size_t sites = 0;
      for (std::size_t k = start; k < end; ++k) {
        xs.push_back(to_tensor(data[order[k]]));
        ys.push_back(y[order[k]]);
        sites += xs.back().num_sites();
      }
      if (sites == 0) continue;
      LossAndGrads lg = loss_and_grads(model, xs, ys, NormMode::Train);
      adam_step(params, lg.grads, adam, cfg);
      assign_parameters(model, params);
      for (std::size_t b = 0; b < model.norms.size(); ++b) commit_running_stats(model.norms[b], lg.bn_stats[b]);
      loss_sum += lg.loss * static_cast<double>(xs.size());
      seen += xs.size();
      correct += lg.correct;
    }
    const double mean_loss = seen ? loss_sum / static_cast<double>(seen) : std::nan("");
    const double acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : std::nan("");
    report.epoch_loss.push_back(mean_loss);
    report.epoch_accuracy.push_back(acc);
    if (log) {
      std::ostringstream os;
      os << "epoch " << (e + 1) << "/" << cfg.epochs << " loss " << mean_loss << " acc " << acc;
      log(os.str());
    }
  }
  model.set_mode(NormMode::Eval);
  return report;
}

Embedding embed(const Sscn& model, std::span<const Wdm> records) {
  Embedding e;
  e.latents.reserve(records.size());
  e.scores.reserve(records.size());
  for (const auto& w : records) {
    auto out = forward(model, to_tensor(w), NormMode::Eval);
    e.latents.push_back(std::move(out.latent));
    e.scores.push_back(std::move(out.scores));
  }
  return e;
}

std::vector<TtaResult> tta_evaluate(const Sscn& model, std::span<const Wdm> records,
                                    std::span<const NoveltyScorer> scorers, int n, const TestTransformSet& set,
                                    const NoiseDist* noise, std::uint64_t seed) {
  if (n < 1) throw ContractError("test-time batch size must be at least 1");
  const auto classes = static_cast<std::size_t>(model.config.num_classes);
  std::vector<TtaResult> out;
  out.reserve(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    Rng rng = Rng::stream(seed, r, 0x77a);
    const auto batch = make_test_batch(records[r], n, set, noise, rng);
    TtaResult res;
    res.novelty.assign(scorers.size(), 0.0);
    res.probabilities.assign(classes, 0.0);
    for (const auto& a : batch) {
      const auto fo = forward(model, to_tensor(a), NormMode::Eval);
      for (std::size_t s = 0; s < scorers.size(); ++s) res.novelty[s] += scorers[s].score(fo.latent, fo.scores);
      const auto p = softmax(fo.scores);
      for (std::size_t k = 0; k < classes; ++k) res.probabilities[k] += p[k];
    }
    for (double& v : res.novelty) v /= n;
    for (double& v : res.probabilities) v /= n;
    out.push_back(std::move(res));
  }
  return out;
}

ClosedSetReport evaluate_closed(const Sscn& model, std::span<const ClassLabel> classes, std::span<const Wdm> test,
                                int n, const TestTransformSet& set, const NoiseDist* noise, std::uint64_t seed) {
  if (test.empty()) throw DataError("closed-set evaluation needs at least one test record");
  const std::vector<int> truth = label_indices(test, classes);
  const auto tta = tta_evaluate(model, test, {}, n, set, noise, seed);
  std::vector<int> pred;
  Rows probs;
  for (const auto& t : tta) {
    pred.push_back(static_cast<int>(std::max_element(t.probabilities.begin(), t.probabilities.end()) -
                                    t.probabilities.begin()));
    probs.push_back(t.probabilities);
  }
  ClosedSetReport rep;
  rep.confusion = confusion_matrix(truth, pred, static_cast<int>(classes.size()));
  rep.accuracy = rep.confusion.accuracy();
  try {
    rep.auc_1vsrest = auc_1vsrest(probs, truth);
    rep.auc_1vs1 = auc_1vs1(probs, truth);
  } catch (const DataError& e) {
    warn(std::string("closed-set AUC undefined: ") + e.what());
    rep.auc_1vsrest = std::nan("");
    rep.auc_1vs1 = std::nan("");
  }
  return rep;
}

}  // namespace waferscope
