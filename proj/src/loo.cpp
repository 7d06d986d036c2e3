#include "waferscope/loo.hpp"

#include <algorithm>
#include <cmath>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "waferscope/error.hpp"

namespace waferscope {

void LooConfig::validate() const {
  network.validate();
  train.validate();
  augmentation.validate();
  if (scorers.empty()) throw ConfigError("leave-one-out needs at least one scorer");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");
  if (tta < 1) throw ConfigError("N must be at least 1");
  if (workers < 0) throw ConfigError("workers must be non-negative");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0, 1]");
  for (ClassLabel l : held_out)
    if (l == ClassLabel::Normal) throw ConfigError("Normal is always known and cannot be held out");
}

namespace {

double fraction_above(std::span<const double> s, double eta) {
  if (s.empty()) return std::nan("");
  std::size_t n = 0;
  for (double v : s)
    if (v > eta) ++n;
  return static_cast<double>(n) / static_cast<double>(s.size());
}

struct FoldInputs {
  const LooConfig& cfg;
  std::span<const Wdm> dataset;
  const std::vector<Wdm>& dev;
  const std::vector<Wdm>& test;
  const std::set<std::string>& test_ids;
};

LooRow run_fold(const FoldInputs& in, ClassLabel c, const LogFn& log) {
  const LooConfig& cfg = in.cfg;
  const auto& dataset = in.dataset;
  const auto& dev = in.dev;
  const auto& test = in.test;
  const auto& test_ids = in.test_ids;
  const std::uint64_t fold_seed = splitmix64(cfg.seed ^ (0x100 + static_cast<std::uint64_t>(c)));
  if (log) log("leave-one-out: holding out " + std::string(label_name(c)));
  std::vector<Wdm> known_dev;
  for (const auto& w : dev)
    if (w.label != c) known_dev.push_back(w);
  const auto classes = labels_present(known_dev);
  const auto split = split_dataset(known_dev, cfg.split, fold_seed);
  const auto train = select(known_dev, split.train);
  const auto fit_set = select(known_dev, split.gmm_fit);
  const auto thr_set = select(known_dev, split.threshold);

  // Leakage audit: the held-out class and the test records never reach
  // training, scorer fitting or calibration.
  for (const auto* part : {&train, &fit_set, &thr_set}) {
    for (const auto& w : *part) {
      if (w.label == c || test_ids.count(w.id)) {
        throw ContractError("leave-one-out leakage: record \"" + w.id + "\" in a fitting split");
      }
    }
  }

  SscnConfig net_cfg = cfg.network;
  net_cfg.num_classes = static_cast<int>(classes.size());
  Sscn model = build_network(net_cfg, fold_seed);
  std::optional<NoiseDist> noise;
  if (cfg.augmentation.enabled && cfg.augmentation.noise) noise = NoiseDist::from_normals(train);
  const Augmenter augmenter(cfg.augmentation, noise);
  TrainConfig tc = cfg.train;
  tc.seed = fold_seed;
  fit(model, train, classes, tc, &augmenter, log);

  const std::vector<Wdm> fit_aug =
      cfg.augmentation.enabled ? augmenter.versions(fit_set, cfg.augmentation.fit_versions, fold_seed) : fit_set;
  const Embedding fit_emb = embed(model, fit_aug);
  const Embedding train_emb = embed(model, train);
  ScorerFitData fd;
  fd.num_classes = static_cast<int>(classes.size());
  fd.fit_latents = fit_emb.latents;
  for (const auto& w : fit_aug) fd.fit_labels.push_back(class_index(classes, *w.label));
  fd.train_scores = train_emb.scores;
  for (const auto& w : train) fd.train_labels.push_back(class_index(classes, *w.label));
  ScorerOptions so = cfg.scorer;
  so.seed = fold_seed;
  std::vector<NoveltyScorer> scorers;
  for (ScorerKind k : cfg.scorers) scorers.push_back(NoveltyScorer::fit(k, fd, so));

  std::vector<Wdm> known_test, novel;
  for (const auto& w : test)
    if (w.label != c) known_test.push_back(w);
  for (const auto& w : dataset)
    if (w.label == c) novel.push_back(w);
  const TestTransformSet tset = cfg.augmentation.test_set(classes, net_cfg.grid_size);
  const NoiseDist* np = noise ? &*noise : nullptr;
  const auto thr_tta = tta_evaluate(model, thr_set, scorers, cfg.tta, tset, np, fold_seed ^ 0x1);
  const auto known_tta = tta_evaluate(model, known_test, scorers, cfg.tta, tset, np, fold_seed ^ 0x2);
  const auto novel_tta = tta_evaluate(model, novel, scorers, cfg.tta, tset, np, fold_seed ^ 0x3);

  LooRow row;
  row.held_out = c;
  row.known = classes;
  row.n_novel = novel.size();
  row.n_known = known_test.size();
  for (const auto& w : train) row.train_ids.push_back(w.id);
  for (const auto& w : fit_set) row.gmm_fit_ids.push_back(w.id);
  for (const auto& w : thr_set) row.threshold_ids.push_back(w.id);
  for (std::size_t i = 0; i < known_test.size(); ++i) {
    row.sample_ids.push_back(known_test[i].id);
    row.sample_novel.push_back(0);
    row.sample_scores.push_back(known_tta[i].novelty);
  }
  for (std::size_t i = 0; i < novel.size(); ++i) {
    row.sample_ids.push_back(novel[i].id);
    row.sample_novel.push_back(1);
    row.sample_scores.push_back(novel_tta[i].novelty);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < known_test.size(); ++i) {
    const auto& p = known_tta[i].probabilities;
    const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (pred == class_index(classes, *known_test[i].label)) ++correct;
  }
  row.closed_accuracy = known_test.empty() ? std::nan("") : static_cast<double>(correct) / static_cast<double>(known_test.size());
  for (std::size_t s = 0; s < scorers.size(); ++s) {
    std::vector<double> scores, known_scores, novel_scores, thr_scores;
    std::vector<int> labels;
    for (const auto& t : known_tta) {
      scores.push_back(t.novelty[s]);
      known_scores.push_back(t.novelty[s]);
      labels.push_back(0);
    }
    for (const auto& t : novel_tta) {
      scores.push_back(t.novelty[s]);
      novel_scores.push_back(t.novelty[s]);
      labels.push_back(1);
    }
    for (const auto& t : thr_tta) thr_scores.push_back(t.novelty[s]);
    row.auc.push_back(roc_auc(scores, labels));
    row.mw_p.push_back(mann_whitney_test(novel_scores, known_scores).p_value);
    const double eta = thr_scores.empty() ? std::nan("") : calibrate_threshold(thr_scores, cfg.alpha).eta;
    row.eta.push_back(eta);
    row.known_fpr.push_back(fraction_above(known_scores, eta));
    row.novel_tpr.push_back(fraction_above(novel_scores, eta));
  }
  if (log) {
    std::string msg = "  AUC";
    for (std::size_t s = 0; s < scorers.size(); ++s)
      msg += " " + std::string(scorer_name(cfg.scorers[s])) + "=" + std::to_string(row.auc[s]);
    log(msg);
  }
  return row;
}

}  // namespace

LooReport leave_one_out_protocol(std::span<const Wdm> dataset, const LooConfig& cfg, const LogFn& log) {
  cfg.validate();
  const auto present = labels_present(dataset);
  if (present.size() < 3) throw DataError("leave-one-out needs at least 3 classes");
  if (class_index(present, ClassLabel::Normal) < 0) throw DataError("leave-one-out needs the Normal class");
  for (const auto& w : dataset)
    if (!w.label) throw DataError("leave-one-out needs labelled records; \"" + w.id + "\" has none");
  for (ClassLabel l : present) {
    const auto n = std::count_if(dataset.begin(), dataset.end(), [&](const Wdm& w) { return w.label == l; });
    if (n < 3) throw DataError("class " + std::string(label_name(l)) + " has " + std::to_string(n) + " records; too small to split");
  }
  std::vector<ClassLabel> held = cfg.held_out;
  if (held.empty()) {
    for (ClassLabel l : present)
      if (l != ClassLabel::Normal) held.push_back(l);
  }
  for (ClassLabel l : held)
    if (class_index(present, l) < 0) throw DataError("held-out class " + std::string(label_name(l)) + " not in dataset");

  const auto [dev_idx, test_idx] = stratified_holdout(dataset, cfg.test_fraction, cfg.seed);
  const std::vector<Wdm> dev = select(dataset, dev_idx);
  const std::vector<Wdm> test = select(dataset, test_idx);
  std::set<std::string> test_ids;
  for (const auto& w : test) test_ids.insert(w.id);

  LooReport report;
  report.scorers = cfg.scorers;
  report.rows.resize(held.size());
  const FoldInputs in{cfg, dataset, dev, test, test_ids};
  std::mutex log_mutex;
  const LogFn safe_log = log ? LogFn([&](const std::string& m) {
    std::lock_guard lock(log_mutex);
    log(m);
  })
                             : LogFn{};
  std::size_t workers = cfg.workers ? static_cast<std::size_t>(cfg.workers) : std::thread::hardware_concurrency();
  workers = std::clamp<std::size_t>(workers, 1, held.size());
  std::vector<std::exception_ptr> errors(held.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t f; (f = next.fetch_add(1)) < held.size();) {
      try {
        report.rows[f] = run_fold(in, held[f], safe_log);
      } catch (...) {
        errors[f] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Rows table;
  for (const auto& r : report.rows) table.push_back(r.auc);
  report.average_ranks = average_rank(table);
  report.best = static_cast<std::size_t>(std::min_element(report.average_ranks.begin(), report.average_ranks.end()) -
                                         report.average_ranks.begin());
  report.wilcoxon_vs_best.assign(cfg.scorers.size(), std::nullopt);
  for (std::size_t s = 0; s < cfg.scorers.size(); ++s) {
    if (s == report.best) continue;
    std::vector<double> diffs;
    for (const auto& r : report.rows) diffs.push_back(r.auc[report.best] - r.auc[s]);
    try {
      report.wilcoxon_vs_best[s] = wilcoxon_signed_rank(diffs);
    } catch (const DataError&) {
      report.wilcoxon_vs_best[s] = std::nullopt;
    }
  }
  return report;
}

}  // namespace waferscope
