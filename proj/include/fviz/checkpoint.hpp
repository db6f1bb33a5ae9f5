#pragma once

#include "fviz/model.hpp"

#include <string>

namespace fviz {

struct CheckpointMeta {
  std::string arch;
  int in_c = 3, in_h = 32, in_w = 32;
  std::uint64_t init_seed = 0;
  std::string role = "initial";  // initial | attacked
  int epochs = 0;
  std::uint64_t train_seed = 0;
  double final_accuracy = -1.0;  // fraction on the held-out split, -1 when not measured
  std::uint64_t config_hash = 0;
};

// Binary parameter blob plus a plain-text metadata sidecar at <path>.meta.json.
void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path);
std::pair<Model, CheckpointMeta> load_checkpoint(const std::string& path);

}  // namespace fviz
