#pragma once

#include "fviz/stability.hpp"

#include <array>

namespace fviz {

struct GridSpec {
  std::string layer;
  std::vector<int> channels;
  int k = 5;
  int scale = 2;              // thumbnail upscale factor
  bool annotate_class = true;  // small class-index digits on each thumbnail
};

// One panel row per channel and model state (initial above final), k
// thumbnails each. Images still present in the other state's top-k get a
// green border, everything else gray.
void render_grid(const GridSpec& spec, const std::vector<TopKResult>& init_topk,
                 const std::vector<TopKResult>& final_topk, const DatasetHandle& dataset,
                 const std::string& path);

// Table-shaped aggregation over stability reports: one row per (layer, attack).
std::string table_report_text(const std::vector<MetricReport>& reports);
void save_table_report(const std::vector<MetricReport>& reports, const std::string& text_path,
                       const std::string& json_path);

// Deterministic artifact inventory with content hashes.
class ArtifactSummary {
 public:
  void add(const std::string& label, const std::string& path);
  void note(const std::string& key, const std::string& value);
  void save(const std::string& path) const;

 private:
  std::vector<std::array<std::string, 3>> entries_;  // label, relative path, sha256
  std::vector<std::pair<std::string, std::string>> notes_;
};

}  // namespace fviz
