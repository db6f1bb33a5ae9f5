#pragma once

#include "fviz/stability.hpp"

namespace fviz {

struct SynthConfig {
  int steps = 256;
  double step_size = 0.5;      // l2 length of each ascent step
  double norm_budget = 0.0;    // 0: default sqrt(pixel count) * 1.0
  int jitter = 2;              // max |shift| in pixels per axis, wraparound
  int jitter_samples = 4;      // score averaging draws per evaluation
  double tol_rel = 0.01;       // accepted-step tolerance, fraction of score
  std::uint64_t seed = 0;
  bool gray_init = false;      // default: random noise
};

struct SynthResult {
  Matf image;  // channels x (h*w), same layout as LabeledImage pixels
  int height = 0, width = 0;
  std::vector<double> trace;  // jitter-averaged score per accepted step
  double final_score = 0.0;   // plain channel score of the final image
  int accepted = 0, rejected = 0;
};

// Gradient ascent on input pixels maximizing the post-activation channel
// score under an l2 norm constraint, with random wraparound translation
// (jitter) each step. Steps that drop the jitter-averaged score by more than
// the tolerance are rejected and shrink the step size.
SynthResult synthesize(Model& model, const std::string& layer, int channel, const SynthConfig& cfg);

struct DecorrelationRow {
  int channel = 0;
  double synth_similarity = 0.0;  // embedding cosine of pre/post synthetic images
  double topk_similarity = 0.0;   // mean embedding cosine of pre/post top-k sets
};

struct DecorrelationReport {
  std::string layer;
  std::vector<DecorrelationRow> rows;
  double mean_synth_similarity = 0.0;
  double mean_topk_similarity = 0.0;

  void save_json(const std::string& path) const;
};

// Side-by-side comparison of how much synthetic visualizations moved under an
// attack versus how much the top-k sets moved, per channel.
DecorrelationReport decorrelation_report(Model& initial, Model& final, const DatasetHandle& dataset,
                                         const std::string& layer, const std::vector<int>& channels,
                                         int k, const SynthConfig& cfg,
                                         const EmbeddingProvider& provider);

}  // namespace fviz
