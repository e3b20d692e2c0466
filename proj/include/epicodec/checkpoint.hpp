#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "epicodec/adam.hpp"
#include "epicodec/graph.hpp"

namespace epicodec {

// Binary training checkpoint. Parameters, batch-norm statistics and Adam
// moments are stored as named 32-bit little-endian blobs together with the
// RNG state, so a run can resume bit-exactly.
struct CheckpointBlob {
  std::string name;
  uint8_t kind = 0;  // 0 parameter, 1 state (batch-norm statistics)
  Shape shape;
  std::vector<float> data;
};

struct CheckpointAdamGroup {
  std::string name;
  int64_t step = 0;
  int epoch = 0;
  double base_lr = 0, decay_rate = 0, beta1 = 0, beta2 = 0, epsilon = 0;
  std::vector<std::string> param_names;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

struct Checkpoint {
  static constexpr uint8_t kVersion = 1;
  uint64_t model_hash = 0;
  uint64_t seed = 0;
  std::array<uint64_t, 4> rng_state{};
  uint32_t epoch = 0;
  uint64_t step = 0;
  std::vector<CheckpointBlob> blobs;
  std::vector<CheckpointAdamGroup> adam_groups;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Snapshot / restore the float training graph.
Checkpoint snapshot_graph(Graph<float>& g,
                          const std::vector<std::pair<std::string, AdamState<float>*>>& groups,
                          const std::vector<std::vector<int>>& group_param_ids);
void restore_graph(Graph<float>& g, const Checkpoint& ck,
                   const std::vector<std::pair<std::string, AdamState<float>*>>& groups,
                   const std::vector<std::vector<int>>& group_param_ids);

}  // namespace epicodec
