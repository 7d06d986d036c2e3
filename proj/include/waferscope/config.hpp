#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "waferscope/loo.hpp"

namespace waferscope {

using Json = nlohmann::ordered_json;

struct ExperimentPaths {
  std::string dataset = "dataset.jsonl";
  std::string checkpoint = "model.wsck";
  std::string scorer = "scorer.json";
  std::string reports = "reports";
};

struct ExperimentSeeds {
  std::uint64_t data = 1;   // synthetic generation
  std::uint64_t split = 2;  // train / fit / threshold / test partition
  std::uint64_t train = 3;  // weight init, shuffling, augmentation
  std::uint64_t eval = 4;   // test-time draws, scorer randomness
};

struct SynthSettings {
  std::map<ClassLabel, int> counts{{ClassLabel::Normal, 200}, {ClassLabel::Ring, 200},
                                   {ClassLabel::Slice, 200}, {ClassLabel::GeoScratch, 200}};
  double radius_fraction = 0.48;  // R = radius_fraction * K
  SynthParams params;
};

struct ExperimentConfig {
  ExperimentPaths paths;
  SscnConfig network;
  TrainConfig train;
  AugmentationPolicy augmentation;
  ScorerKind scorer = ScorerKind::Gmm;
  ScorerOptions scorer_options;
  double alpha = 0.05;
  int tta = kDefaultTestBatch;
  ExperimentSeeds seeds;
  SynthSettings synth;
  std::array<double, 3> split = kDefaultSplitFractions;
  double test_fraction = 0.2;
  std::vector<ScorerKind> loo_scorers{kAllScorers.begin(), kAllScorers.end()};
  std::vector<ClassLabel> held_out;
  int workers = 1;

  void validate() const;
  LooConfig loo() const;
};

// Unknown keys anywhere in the document are a ConfigError; missing keys keep
// their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig parse_config(const std::string& text);
// Relative paths in the file are resolved against the file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);
Json to_json(const ExperimentConfig& cfg);

Json to_json(const SscnConfig& c);
SscnConfig sscn_config_from_json(const nlohmann::json& j);
Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
Json to_json(const AugmentationPolicy& p);
AugmentationPolicy augmentation_from_json(const nlohmann::json& j);
Json to_json(const ScorerOptions& o);
ScorerOptions scorer_options_from_json(const nlohmann::json& j);

// 16 hex digits of FNV-1a over the compact canonical JSON. The experiment
// overload leaves out the paths block.
std::string config_hash(const Json& canonical);
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace waferscope
