#pragma once

#include "fviz/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fviz {

struct LayerDef {
  enum class Kind { conv, relu, pool, flatten, fc };
  Kind kind = Kind::conv;
  // conv
  int out_c = 0;
  int ksize = 3;
  int stride = 1;
  int pad = 1;
  // pool
  int pool = 2;
  // fc
  int width = 0;
};

// Chain of layer descriptors plus the input shape. Conv blocks are named
// conv1..convN in order, fully-connected layers fc1..fcM; those names are the
// targets that scoring and attacks refer to.
struct ArchSpec {
  int in_c = 3;
  int in_h = 32;
  int in_w = 32;
  std::vector<LayerDef> layers;

  // Text form, e.g. "conv:16,relu,pool,conv:32x3s1p1,relu,pool,fc:64,relu,fc:10".
  // Conv defaults: k3 s1 p1. Pool defaults to 2.
  static ArchSpec parse(const std::string& text, int in_c, int in_h, int in_w);
  std::string to_string() const;

  // Shape-checks the chain; throws SpecError on inconsistency. Requires at
  // least two conv layers and a final fc.
  void validate() const;

  int class_count() const;  // width of the final fc
  std::uint64_t hash() const;
};

}  // namespace fviz
