#pragma once

#include "fviz/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fviz {

struct LabeledImage {
  std::string id;
  int class_label = 0;                // 0..K-1
  std::optional<int> protected_attr;  // 0/1 when annotated
  // Normalized pixels, channels x (height*width), same column layout as
  // FeatureBatch.
  Matf pixels;
};

struct DatasetHandle {
  std::string name;
  std::string split_tag = "full";  // full | train | test
  std::uint64_t split_seed = 0;
  int classes = 0;
  int height = 0, width = 0, channels = 0;
  Vecf norm_mean, norm_std;  // per channel, applied to [0,1] pixel values
  float range_lo = 0.f, range_hi = 0.f;
  std::vector<LabeledImage> images;
  std::optional<int> minority_attr;

  int count() const { return static_cast<int>(images.size()); }
  bool annotated() const;
  const LabeledImage& by_id(const std::string& id) const;
  int index_of(const std::string& id) const;  // -1 when absent
  void check_invariants() const;              // unique ids, labels in range, pixels in range
};

// Controls the synthetic protected-attribute injection. The attribute z is
// drawn per image with P(z=1 | class in biased_classes) = p_corr and
// P(z=1 | other class) = 1 - p_corr; a fixed marker patch is stamped with
// P(marker | z=1) = p_corr and P(marker | z=0) = 1 - p_corr. p_corr = 0.5
// makes z independent of both class and pixels.
struct BiasSpec {
  double p_corr = 0.9;
  std::vector<int> biased_classes = {0, 1, 2, 3};
  int marker_x = 2, marker_y = 2, marker_size = 4;
  float marker_rgb[3] = {1.0f, 0.05f, 0.9f};
  std::uint64_t seed = 0;
};

struct SyntheticSpec {
  std::string name = "synth10";
  int count = 4000;
  int size = 32;
  std::uint64_t seed = 1;
};

// Ten procedurally drawn texture/shape classes with per-image color, phase
// and position jitter.
DatasetHandle make_synthetic(const SyntheticSpec& spec);

DatasetHandle load_dataset(const std::string& name, const std::string& root_path);
void save_dataset(const DatasetHandle& dataset, const std::string& root_path);

std::pair<DatasetHandle, DatasetHandle> split(const DatasetHandle& dataset, double ratio,
                                              std::uint64_t seed);

DatasetHandle inject_bias(const DatasetHandle& dataset, const BiasSpec& spec);

struct AttributePartition {
  DatasetHandle group0;
  DatasetHandle group1;
  bool degenerate = false;  // one group empty
};
AttributePartition partition_by_attribute(const DatasetHandle& dataset);

// Deterministic evaluation subset used for rank-correlation metrics.
std::vector<std::string> sample_subset(const DatasetHandle& dataset, int size, std::uint64_t seed);

}  // namespace fviz
