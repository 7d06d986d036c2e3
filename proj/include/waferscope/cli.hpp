#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "waferscope/config.hpp"
#include "waferscope/evaluation.hpp"

namespace waferscope {

// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitContract = 4;

// Runs one subcommand (`args` excludes the program name). Progress goes to
// `err`; failures are reported there as a single JSON line
// {"error":...,"message":...,"exit_code":...}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// The fixed partition every subcommand uses: a stratified test holdout, then
// train / GMM-fit / threshold splits of the rest.
struct Partition {
  std::vector<Wdm> train, gmm_fit, threshold, test;
};
Partition partition_dataset(std::span<const Wdm> dataset, const ExperimentConfig& cfg);

// First line of every CSV artifact.
std::string provenance_line(const ExperimentConfig& cfg, std::uint64_t seed);

struct RocSeries {
  std::string name;
  std::vector<RocPoint> points;
  double auc = 0.0;
};
std::string roc_svg(const std::string& title, std::span<const RocSeries> series, const std::string& provenance);
std::string confusion_svg(std::span<const std::string> classes, const std::vector<std::vector<long>>& counts,
                          const std::string& provenance);

}  // namespace waferscope
