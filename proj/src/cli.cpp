#include "waferscope/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "waferscope/checkpoint.hpp"
#include "waferscope/error.hpp"

namespace waferscope {
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
  if (!f) throw DataError("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Minimal CSV reader for the files this tool writes: '#' lines are kept as
// provenance, the first other line is the header.
struct Csv {
  std::string provenance;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("CSV is missing column \"" + name + "\"");
    return static_cast<std::size_t>(it - header.begin());
  }
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Csv read_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  Csv csv;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (csv.provenance.empty()) csv.provenance = line.substr(1);
      continue;
    }
    auto cells = split_csv_line(line);
    if (csv.header.empty()) {
      csv.header = std::move(cells);
    } else {
      if (cells.size() != csv.header.size())
        throw DataError(path.string() + ": row has " + std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(csv.header.size()));
      csv.rows.push_back(std::move(cells));
    }
  }
  if (csv.header.empty()) throw DataError(path.string() + ": no header");
  return csv;
}

double parse_double(const std::string& s, const std::string& what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError(what + ": \"" + s + "\" is not a number");
  return v;
}

AugmentationPolicy effective_policy(const ExperimentConfig& cfg, const std::optional<NoiseDist>& noise) {
  AugmentationPolicy p = cfg.augmentation;
  if (p.noise && !noise) p.noise = false;
  return p;
}

void check_grid(std::span<const Wdm> records, int grid_size) {
  for (const auto& w : records) {
    if (w.grid_size != grid_size) {
      throw DataError("record \"" + w.id + "\" has K=" + std::to_string(w.grid_size) + " but the network expects K=" +
                      std::to_string(grid_size));
    }
  }
}

std::vector<Wdm> load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw DataError("dataset " + path + " does not exist");
  return read_jsonl_file(path);
}

std::string class_list(std::span<const ClassLabel> classes) {
  std::string s;
  for (ClassLabel l : classes) s += (s.empty() ? "" : ",") + std::string(label_name(l));
  return s;
}

struct Options {
  std::string config;
  std::string dataset, checkpoint, scorer_file, reports;
  std::string out, input, eta;
  std::string loo_scores, confusion;
  bool quiet = false;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.config.empty()) cfg.validate();
  if (!o.dataset.empty()) cfg.paths.dataset = o.dataset;
  if (!o.checkpoint.empty()) cfg.paths.checkpoint = o.checkpoint;
  if (!o.scorer_file.empty()) cfg.paths.scorer = o.scorer_file;
  if (!o.reports.empty()) cfg.paths.reports = o.reports;
  return cfg;
}

class Commands {
 public:
  Commands(const Options& o, std::ostream& out, std::ostream& err) : o_(o), out_(out), err_(err) {}

  void synth() {
    const auto cfg = resolve(o_);
    const int k = cfg.network.grid_size;
    const auto data = synth_dataset(cfg.synth.counts, k, cfg.synth.radius_fraction * k, cfg.seeds.data, cfg.synth.params);
    const std::string path = o_.out.empty() ? cfg.paths.dataset : o_.out;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    write_jsonl_file(path, data);

    const Partition part = partition_dataset(data, cfg);
    Json m;
    m["config_hash"] = config_hash(cfg);
    m["seed"] = cfg.seeds.data;
    m["split_seed"] = cfg.seeds.split;
    m["grid_size"] = k;
    m["radius"] = cfg.synth.radius_fraction * k;
    Json counts = Json::object();
    for (const auto& [l, n] : cfg.synth.counts) counts[std::string(label_name(l))] = n;
    m["counts"] = counts;
    auto ids = [](const std::vector<Wdm>& v) {
      Json a = Json::array();
      for (const auto& w : v) a.push_back(w.id);
      return a;
    };
    m["splits"] = {{"train", ids(part.train)},
                   {"gmm_fit", ids(part.gmm_fit)},
                   {"threshold", ids(part.threshold)},
                   {"test", ids(part.test)}};
    write_text(path + ".manifest.json", m.dump(1) + "\n");
    out_ << "wrote " << data.size() << " records to " << path << "\n";
  }

  void train() {
    const auto cfg = resolve(o_);
    const auto data = load_dataset(cfg.paths.dataset);
    const Partition part = partition_dataset(data, cfg);
    for (const auto& w : data)
      if (!w.label) throw DataError("training needs labelled records; \"" + w.id + "\" has none");
    const auto classes = labels_present(data);
    if (classes.size() < 2) throw DataError("training needs at least 2 classes");
    SscnConfig net = cfg.network;
    net.num_classes = static_cast<int>(classes.size());
    check_grid(data, net.grid_size);

    std::optional<NoiseDist> noise;
    if (cfg.augmentation.enabled && cfg.augmentation.noise) {
      if (std::any_of(part.train.begin(), part.train.end(), [](const Wdm& w) { return w.label == ClassLabel::Normal; })) {
        noise = NoiseDist::from_normals(part.train);
      } else {
        warn("no Normal records in the training split; noise injection disabled");
      }
    }
    const AugmentationPolicy policy = effective_policy(cfg, noise);
    const Augmenter augmenter(policy, noise);
    Sscn model = build_network(net, cfg.seeds.train);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seeds.train;
    const FitReport rep = fit(model, part.train, classes, tc, &augmenter, logger());

    Checkpoint ck{std::move(model), classes, noise, Json::object()};
    ck.provenance["config_hash"] = config_hash(cfg);
    ck.provenance["seed"] = cfg.seeds.train;
    ck.provenance["command"] = "train";
    if (fs::path(cfg.paths.checkpoint).has_parent_path()) fs::create_directories(fs::path(cfg.paths.checkpoint).parent_path());
    save_checkpoint(cfg.paths.checkpoint, ck);

    std::string csv = provenance_line(cfg, cfg.seeds.train) + "epoch,loss,accuracy\n";
    for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e)
      csv += std::to_string(e + 1) + "," + num(rep.epoch_loss[e]) + "," + num(rep.epoch_accuracy[e]) + "\n";
    write_text(fs::path(cfg.paths.reports) / "train_loss.csv", csv);
    out_ << "trained " << ck.model.parameter_count() << " parameters on " << part.train.size() << " records ("
         << class_list(classes) << "); checkpoint " << cfg.paths.checkpoint << "\n";
  }

  void calibrate() {
    const auto cfg = resolve(o_);
    const Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
    const auto data = load_dataset(cfg.paths.dataset);
    check_grid(data, ck.model.config.grid_size);
    const Partition part = partition_dataset(data, cfg);
    const AugmentationPolicy policy = effective_policy(cfg, ck.noise);
    const Augmenter augmenter(policy, ck.noise);

    const auto fit_aug =
        policy.enabled ? augmenter.versions(part.gmm_fit, policy.fit_versions, cfg.seeds.eval) : part.gmm_fit;
    const Embedding fe = embed(ck.model, fit_aug);
    const Embedding te = embed(ck.model, part.train);
    ScorerFitData fd;
    fd.num_classes = ck.model.config.num_classes;
    fd.fit_latents = fe.latents;
    fd.train_scores = te.scores;
    for (const auto& w : fit_aug) fd.fit_labels.push_back(known_index(ck.classes, w));
    for (const auto& w : part.train) fd.train_labels.push_back(known_index(ck.classes, w));
    ScorerOptions so = cfg.scorer_options;
    so.seed = cfg.seeds.eval;
    const NoveltyScorer scorer = NoveltyScorer::fit(cfg.scorer, fd, so);

    const TestTransformSet tset = policy.test_set(ck.classes, ck.model.config.grid_size);
    const NoiseDist* np = ck.noise ? &*ck.noise : nullptr;
    const std::vector<NoveltyScorer> one{scorer};
    const auto tta = tta_evaluate(ck.model, part.threshold, one, cfg.tta, tset, np, cfg.seeds.eval);
    std::vector<double> scores;
    for (const auto& t : tta) scores.push_back(t.novelty[0]);
    if (scores.empty()) throw DataError("threshold split is empty");
    const CalibratedThreshold thr = calibrate_threshold(scores, cfg.alpha);

    Json j;
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seeds.eval;
    j["alpha"] = thr.alpha;
    j["eta"] = thr.eta;
    j["n_cal"] = thr.n_cal;
    j["scorer"] = Json::parse(scorer.to_json());
    if (fs::path(cfg.paths.scorer).has_parent_path()) fs::create_directories(fs::path(cfg.paths.scorer).parent_path());
    write_text(cfg.paths.scorer, j.dump() + "\n");
    write_text(fs::path(cfg.paths.reports) / "calibration.csv",
               provenance_line(cfg, cfg.seeds.eval) + "scorer,alpha,eta,n_cal\n" + std::string(scorer_name(cfg.scorer)) +
                   "," + num(thr.alpha) + "," + num(thr.eta) + "," + std::to_string(thr.n_cal) + "\n");
    out_ << "scorer " << scorer_name(cfg.scorer) << " eta " << num(thr.eta) << " (alpha " << thr.alpha << ", n "
         << thr.n_cal << ")\n";
  }

  void eval_closed() {
    const auto cfg = resolve(o_);
    const Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
    const auto data = load_dataset(cfg.paths.dataset);
    check_grid(data, ck.model.config.grid_size);
    const Partition part = partition_dataset(data, cfg);
    const AugmentationPolicy policy = effective_policy(cfg, ck.noise);
    const TestTransformSet tset = policy.test_set(ck.classes, ck.model.config.grid_size);
    const NoiseDist* np = ck.noise ? &*ck.noise : nullptr;
    const ClosedSetReport rep = evaluate_closed(ck.model, ck.classes, part.test, cfg.tta, tset, np, cfg.seeds.eval);

    const std::string prov = provenance_line(cfg, cfg.seeds.eval);
    std::string cm = prov + "truth";
    for (ClassLabel l : ck.classes) cm += "," + std::string(label_name(l));
    cm += "\n";
    for (std::size_t r = 0; r < ck.classes.size(); ++r) {
      cm += std::string(label_name(ck.classes[r]));
      for (long c : rep.confusion.counts[r]) cm += "," + std::to_string(c);
      cm += "\n";
    }
    write_text(fs::path(cfg.paths.reports) / "confusion.csv", cm);
    std::string m = prov + "metric,value\n";
    m += "accuracy," + num(rep.accuracy) + "\n";
    m += "auc_1vsrest," + num(rep.auc_1vsrest) + "\n";
    m += "auc_1vs1," + num(rep.auc_1vs1) + "\n";
    for (std::size_t r = 0; r < ck.classes.size(); ++r)
      m += "accuracy_" + std::string(label_name(ck.classes[r])) + "," + num(rep.confusion.class_accuracy(static_cast<int>(r))) + "\n";
    write_text(fs::path(cfg.paths.reports) / "closed_metrics.csv", m);
    out_ << "test records " << part.test.size() << " accuracy " << fixed(rep.accuracy, 4) << " 1vsRest-AUC "
         << fixed(rep.auc_1vsrest, 4) << " 1vs1-AUC " << fixed(rep.auc_1vs1, 4) << "\n";
  }

  void eval_open() {
    const auto cfg = resolve(o_);
    const auto data = load_dataset(cfg.paths.dataset);
    check_grid(data, cfg.network.grid_size);
    const LooConfig loo = cfg.loo();
    const LooReport rep = leave_one_out_protocol(data, loo, logger());
    const std::string prov = provenance_line(cfg, loo.seed);

    std::string rows = prov + "held_out,scorer,auc,mw_p,eta,known_fpr,novel_tpr,n_novel,n_known,closed_accuracy\n";
    std::string scores = prov + "held_out,scorer,id,novel,score\n";
    for (const auto& r : rep.rows) {
      const std::string c(label_name(r.held_out));
      for (std::size_t s = 0; s < rep.scorers.size(); ++s) {
        rows += c + "," + std::string(scorer_name(rep.scorers[s])) + "," + num(r.auc[s]) + "," + num(r.mw_p[s]) + "," +
                num(r.eta[s]) + "," + num(r.known_fpr[s]) + "," + num(r.novel_tpr[s]) + "," +
                std::to_string(r.n_novel) + "," + std::to_string(r.n_known) + "," + num(r.closed_accuracy) + "\n";
        for (std::size_t i = 0; i < r.sample_ids.size(); ++i)
          scores += c + "," + std::string(scorer_name(rep.scorers[s])) + "," + r.sample_ids[i] + "," +
                    std::to_string(r.sample_novel[i]) + "," + num(r.sample_scores[i][s]) + "\n";
      }
    }
    std::string summary = prov + "class";
    for (ScorerKind k : rep.scorers) summary += "," + std::string(scorer_name(k));
    summary += "\n";
    for (const auto& r : rep.rows) {
      summary += std::string(label_name(r.held_out));
      for (double a : r.auc) summary += "," + num(a);
      summary += "\n";
    }
    summary += "avg_rank";
    for (double a : rep.average_ranks) summary += "," + num(a);
    summary += "\nwilcoxon_p_vs_best";
    for (std::size_t s = 0; s < rep.scorers.size(); ++s)
      summary += "," + (rep.wilcoxon_vs_best[s] ? num(rep.wilcoxon_vs_best[s]->p_value) : std::string());
    summary += "\n";
    const fs::path dir(cfg.paths.reports);
    write_text(dir / "loo.csv", rows);
    write_text(dir / "loo_summary.csv", summary);
    write_text(dir / "loo_scores.csv", scores);
    out_ << "leave-one-out over " << rep.rows.size() << " held-out classes; best scorer "
         << scorer_name(rep.scorers[rep.best]) << " (average rank " << fixed(rep.average_ranks[rep.best], 4) << ")\n";
  }

  void classify() {
    const auto cfg = resolve(o_);
    if (o_.input.empty()) throw ConfigError("classify needs --input");
    const Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
    const Json sj = [&] {
      try {
        return Json::parse(read_text(cfg.paths.scorer));
      } catch (const nlohmann::json::exception& e) {
        throw DataError("scorer file " + cfg.paths.scorer + " is malformed: " + e.what());
      }
    }();
    if (!sj.contains("scorer") || !sj.contains("eta")) throw DataError("scorer file lacks \"scorer\" or \"eta\"");
    const NoveltyScorer scorer = NoveltyScorer::from_json(sj.at("scorer").dump());
    double eta = sj.at("eta").get<double>();
    if (!o_.eta.empty()) eta = parse_double(o_.eta, "--eta");
    const auto records = read_jsonl_file(o_.input);
    check_grid(records, ck.model.config.grid_size);
    const AugmentationPolicy policy = effective_policy(cfg, ck.noise);
    const TestTransformSet tset = policy.test_set(ck.classes, ck.model.config.grid_size);
    const NoiseDist* np = ck.noise ? &*ck.noise : nullptr;

    std::string csv = provenance_line(cfg, cfg.seeds.eval) + "id,decision,mean_novelty,eta";
    for (ClassLabel l : ck.classes) csv += ",p_" + std::string(label_name(l));
    csv += "\n";
    for (std::size_t r = 0; r < records.size(); ++r) {
      Rng rng = Rng::stream(cfg.seeds.eval, r, 0xc1a5);
      const OpenDecision d = open_classify(ck.model, scorer, eta, records[r], cfg.tta, tset, np, rng);
      csv += records[r].id + "," + (d.novel ? std::string("Novel") : std::string(label_name(ck.classes[d.class_index]))) +
             "," + num(d.mean_novelty) + "," + num(eta);
      for (double p : d.mean_probabilities) csv += "," + num(p);
      csv += "\n";
    }
    if (o_.out.empty()) {
      out_ << csv;
    } else {
      write_text(o_.out, csv);
    }
  }

  void report() {
    const auto cfg = resolve(o_);
    const fs::path dir(cfg.paths.reports);
    const fs::path loo_path = o_.loo_scores.empty() ? dir / "loo_scores.csv" : fs::path(o_.loo_scores);
    const fs::path cm_path = o_.confusion.empty() ? dir / "confusion.csv" : fs::path(o_.confusion);
    int written = 0;
    if (fs::exists(loo_path)) {
      const Csv csv = read_csv(loo_path);
      const auto ch = csv.column("held_out"), cs = csv.column("scorer"), cn = csv.column("novel"), cv = csv.column("score");
      std::map<std::string, std::map<std::string, std::pair<std::vector<double>, std::vector<int>>>> groups;
      std::map<std::string, std::vector<std::string>> scorer_order;
      for (const auto& row : csv.rows) {
        auto& per = groups[row[ch]];
        if (!per.count(row[cs])) scorer_order[row[ch]].push_back(row[cs]);
        auto& [s, y] = per[row[cs]];
        s.push_back(parse_double(row[cv], "score"));
        y.push_back(row[cn] == "1" ? 1 : 0);
      }
      for (const auto& [cls, per] : groups) {
        std::vector<RocSeries> series;
        for (const auto& name : scorer_order[cls]) {
          const auto& [s, y] = per.at(name);
          series.push_back({name, roc_curve(s, y), roc_auc(s, y)});
        }
        write_text(dir / ("roc_" + cls + ".svg"), roc_svg("Novel = " + cls, series, csv.provenance));
        ++written;
      }
    }
    if (fs::exists(cm_path)) {
      const Csv csv = read_csv(cm_path);
      std::vector<std::string> classes(csv.header.begin() + 1, csv.header.end());
      std::vector<std::vector<long>> counts;
      for (const auto& row : csv.rows) {
        std::vector<long> r;
        for (std::size_t k = 1; k < row.size(); ++k) r.push_back(std::stol(row[k]));
        counts.push_back(std::move(r));
      }
      if (counts.size() != classes.size()) throw DataError(cm_path.string() + ": confusion matrix is not square");
      write_text(dir / "confusion.svg", confusion_svg(classes, counts, csv.provenance));
      ++written;
    }
    if (written == 0)
      throw DataError("no report inputs: expected " + loo_path.string() + " or " + cm_path.string());
    out_ << "wrote " << written << " SVG file(s) to " << dir.string() << "\n";
  }

 private:
  LogFn logger() const {
    if (o_.quiet) return {};
    return [this](const std::string& m) { err_ << m << "\n"; };
  }

  static int known_index(std::span<const ClassLabel> classes, const Wdm& w) {
    const int k = w.label ? class_index(classes, *w.label) : -1;
    if (k < 0) throw DataError("record \"" + w.id + "\" is not labelled with a class the checkpoint knows");
    return k;
  }

  const Options& o_;
  std::ostream& out_;
  std::ostream& err_;
};

void error_record(std::ostream& err, const char* kind, const std::string& message, int code) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  err << j.dump() << "\n";
}

}  // namespace

Partition partition_dataset(std::span<const Wdm> dataset, const ExperimentConfig& cfg) {
  const auto [rest_idx, test_idx] = stratified_holdout(dataset, cfg.test_fraction, cfg.seeds.split);
  const auto rest = select(dataset, rest_idx);
  const auto split = split_dataset(rest, cfg.split, cfg.seeds.split);
  return {select(rest, split.train), select(rest, split.gmm_fit), select(rest, split.threshold),
          select(dataset, test_idx)};
}

std::string provenance_line(const ExperimentConfig& cfg, std::uint64_t seed) {
  return "# config_hash=" + config_hash(cfg) + ",seed=" + std::to_string(seed) + "\n";
}

std::string roc_svg(const std::string& title, std::span<const RocSeries> series, const std::string& provenance) {
  static constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                             "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  constexpr double x0 = 60, y0 = 40, side = 360;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"460\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<!--" << xml_escape(provenance) << " -->\n";
  s << "<rect width=\"600\" height=\"460\" fill=\"white\"/>\n";
  s << "<text x=\"" << x0 + side / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
  s << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << side << "\" height=\"" << side
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double f = t / 4.0;
    s << "<text x=\"" << fixed(x0 + f * side, 1) << "\" y=\"" << y0 + side + 16 << "\" text-anchor=\"middle\">"
      << fixed(f, 2) << "</text>\n";
    s << "<text x=\"" << x0 - 6 << "\" y=\"" << fixed(y0 + side - f * side + 4, 1) << "\" text-anchor=\"end\">"
      << fixed(f, 2) << "</text>\n";
  }
  s << "<text x=\"" << x0 + side / 2 << "\" y=\"" << y0 + side + 34 << "\" text-anchor=\"middle\">false positive rate</text>\n";
  s << "<text x=\"16\" y=\"" << y0 + side / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << y0 + side / 2
    << ")\">true positive rate</text>\n";
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 + side << "\" x2=\"" << x0 + side << "\" y2=\"" << y0
    << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : series[k].points)
      s << fixed(x0 + p.fpr * side, 2) << "," << fixed(y0 + side - p.tpr * side, 2) << " ";
    s << "\"/>\n";
    const double ly = y0 + 14 + 18 * static_cast<double>(k);
    s << "<line x1=\"" << x0 + side + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << x0 + side + 32 << "\" y2=\"" << ly - 4
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << x0 + side + 38 << "\" y=\"" << ly << "\">" << xml_escape(series[k].name) << " "
      << fixed(series[k].auc, 4) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string confusion_svg(std::span<const std::string> classes, const std::vector<std::vector<long>>& counts,
                          const std::string& provenance) {
  const double cell = 48, x0 = 110, y0 = 40;
  const double n = static_cast<double>(classes.size());
  std::ostringstream s;
  const double w = x0 + n * cell + 20, h = y0 + n * cell + 90;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<!--" << xml_escape(provenance) << " -->\n";
  s << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << x0 + n * cell / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">confusion matrix (rows: truth)</text>\n";
  for (std::size_t r = 0; r < classes.size(); ++r) {
    long total = 0;
    for (long c : counts[r]) total += c;
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const double f = total ? static_cast<double>(counts[r][c]) / static_cast<double>(total) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - f)));
      char color[8];
      std::snprintf(color, sizeof color, "#%02x%02xff", shade, shade);
      const double x = x0 + static_cast<double>(c) * cell, y = y0 + static_cast<double>(r) * cell;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << color
        << "\" stroke=\"white\"/>\n";
      s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
        << (f > 0.5 ? "white" : "black") << "\">" << counts[r][c] << "</text>\n";
    }
    s << "<text x=\"" << x0 - 6 << "\" y=\"" << y0 + static_cast<double>(r) * cell + cell / 2 + 4
      << "\" text-anchor=\"end\">" << xml_escape(classes[r]) << "</text>\n";
    const double tx = x0 + static_cast<double>(r) * cell + cell / 2, ty = y0 + n * cell + 8;
    s << "<text x=\"" << tx << "\" y=\"" << ty << "\" text-anchor=\"end\" transform=\"rotate(-45 " << tx << " " << ty
      << ")\">" << xml_escape(classes[r]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Wafer defect map classification and novelty detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "waferscope 0.1.0");

  auto common = [&](CLI::App* c) {
    c->add_option("-c,--config", o.config, "experiment config (JSON)");
    c->add_option("--dataset", o.dataset, "dataset JSONL (overrides paths.dataset)");
    c->add_option("--checkpoint", o.checkpoint, "network checkpoint (overrides paths.checkpoint)");
    c->add_option("--scorer-file", o.scorer_file, "scorer artifact (overrides paths.scorer)");
    c->add_option("--reports", o.reports, "report directory (overrides paths.reports)");
    c->add_flag("-q,--quiet", o.quiet, "no progress output");
  };
  auto* synth = app.add_subcommand("synth", "generate a synthetic labelled dataset and its split manifest");
  common(synth);
  synth->add_option("-o,--out", o.out, "output JSONL (default paths.dataset)");
  auto* train = app.add_subcommand("train", "train the SSCN; writes the checkpoint and train_loss.csv");
  common(train);
  auto* calibrate = app.add_subcommand("calibrate", "fit the novelty scorer and calibrate eta");
  common(calibrate);
  auto* closed = app.add_subcommand("eval-closed", "closed-set test metrics: confusion.csv, closed_metrics.csv");
  common(closed);
  auto* open = app.add_subcommand("eval-open", "leave-one-out open-set evaluation: loo*.csv");
  common(open);
  auto* classify = app.add_subcommand("classify", "label each WDM or flag it Novel");
  common(classify);
  classify->add_option("-i,--input", o.input, "WDM records (JSONL)")->required();
  classify->add_option("--eta", o.eta, "override the calibrated threshold (accepts inf)");
  classify->add_option("-o,--out", o.out, "output CSV (default stdout)");
  auto* report = app.add_subcommand("report", "SVG ROC curves and confusion heatmap from report CSVs");
  common(report);
  report->add_option("--loo-scores", o.loo_scores, "per-sample LOO scores CSV");
  report->add_option("--confusion", o.confusion, "confusion matrix CSV");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    error_record(err, "config_error", e.what(), kExitConfig);
    return kExitConfig;
  }

  Commands cmd(o, out, err);
  try {
    if (synth->parsed()) cmd.synth();
    else if (train->parsed()) cmd.train();
    else if (calibrate->parsed()) cmd.calibrate();
    else if (closed->parsed()) cmd.eval_closed();
    else if (open->parsed()) cmd.eval_open();
    else if (classify->parsed()) cmd.classify();
    else if (report->parsed()) cmd.report();
  } catch (const ConfigError& e) {
    error_record(err, "config_error", e.what(), kExitConfig);
    return kExitConfig;
  } catch (const DataError& e) {
    error_record(err, "data_error", e.what(), kExitData);
    return kExitData;
  } catch (const ContractError& e) {
    error_record(err, "contract_violation", e.what(), kExitContract);
    return kExitContract;
  } catch (const fs::filesystem_error& e) {
    error_record(err, "data_error", e.what(), kExitData);
    return kExitData;
  }
  return kExitOk;
}

}  // namespace waferscope
