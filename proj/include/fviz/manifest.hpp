#pragma once

#include "fviz/attack.hpp"
#include "fviz/synthviz.hpp"

#include <string>

namespace fviz {

// Flat sectioned text manifest; one file fully determines a run. Unknown keys
// are errors so stale configs fail fast.
struct RunManifest {
  // [run]
  std::string name = "run";
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  bool deterministic = true;

  // [data]
  std::string data_kind = "synthetic";  // synthetic | disk
  std::string data_name = "synth10";
  std::string data_root;  // disk datasets
  int data_count = 8000;
  int data_size = 24;
  double split_ratio = 0.75;
  bool bias = false;
  double bias_p_corr = 0.9;

  // [arch]
  std::string arch = "conv:16,relu,pool,conv:32,relu,pool,conv:64,relu,pool,conv:96,relu,fc:128,relu,fc:10";

  // [train]
  int train_epochs = 12;
  double train_lr = 1e-3;
  int train_batch = 128;

  // [attack]
  bool attack_enabled = true;
  std::string attack_kind = "push_down";
  std::string attack_layer = "conv4";
  int attack_channel = -1;
  int attack_k = 10;
  double alpha_init = 0.1;
  double alpha_min = 1e-4;
  double alpha_max = 0.2;
  double drop_hi = 0.5;
  double drop_lo = 0.1;
  bool alpha_fixed = false;
  int attack_epochs = 2;
  int steps_per_epoch = 0;
  double attack_lr = 1e-5;
  int attack_batch_size = 256;
  int attack_pairs = 0;
  int probe_every = 10;
  int probe_size = 600;
  int decoy_class = 3;
  int decoy_count = 60;
  int fairwash_count = 24;

  // [metrics]
  int metrics_k = 10;
  int dktau_size = 2000;
  int balance_k = 30;
  std::string embed_arch = "conv:12,relu,pool,conv:24,relu,pool,conv:48,relu,fc:64,relu,fc:10";
  int embed_epochs = 6;
  std::string grid_channels = "0,1,2,3";
  int grid_k = 5;

  // [synthviz]
  bool synth_enabled = false;
  int synth_steps = 192;
  double synth_step_size = 0.5;
  int synth_jitter = 2;
  std::string synth_channels = "0,1,2,3,4,5,6,7";

  static RunManifest parse_file(const std::string& path);
  static RunManifest parse(const std::string& text);
  std::string serialize() const;
  void validate() const;

  AttackConfig attack_config() const;
  std::vector<int> parsed_grid_channels() const;
  std::vector<int> parsed_synth_channels() const;

  bool operator==(const RunManifest&) const = default;
};

}  // namespace fviz
