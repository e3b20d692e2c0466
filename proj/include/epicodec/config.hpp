#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "epicodec/networks.hpp"
#include "epicodec/quantizer.hpp"
#include "epicodec/training.hpp"

namespace epicodec {

struct DatasetConfig {
  std::string kind = "synthetic";  // "synthetic" | "manifest"
  std::string manifest;            // path, when kind == "manifest"
  SyntheticSceneSpec synthetic;
};

struct EpiParams {
  int L = 3;
  int strip_width = 8;
};

struct QuantizerConfig {
  int T = 90000;
  double lo = -1.0, hi = 1.0;
  int W = 9;
  double sigma_spacing_sq = 50.0;  // used when sigma == 0
  double sigma = 0.0;              // explicit sigma wins when > 0
  QuantizerSpec to_spec() const;
};

struct OperatingPoint {
  std::string label;
  nlohmann::json overrides;  // dotted config paths -> values
};

struct EvalParams {
  double psnr_cap = 99.0;
  bool count_reference_bits = false;
  std::vector<OperatingPoint> operating_points;
};

// One JSON document drives every pipeline stage.
struct ExperimentConfig {
  uint64_t seed = 1;
  DatasetConfig dataset;
  EpiParams epi;
  QuantizerConfig quantizer;
  NetworkConfig networks;
  TrainConfig train;
  LossWeights loss;
  EvalParams evaluate;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);

  // provenance hashes over the config sections that determine each artifact
  uint64_t dataset_hash() const;  // dataset + epi
  uint64_t model_hash() const;    // dataset + epi + quantizer + networks + train + loss + seed
};

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& set_overrides = {});

// dotted-path override, value parsed as JSON when possible ("loss.beta=1e-5")
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace epicodec
