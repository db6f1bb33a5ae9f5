#pragma once

#include "fviz/topk.hpp"

#include <memory>
#include <optional>

namespace fviz {

// External generic visual representation used to measure semantic change of
// top-k sets. Implementations must return unit-l2-norm columns and be
// deterministic per image.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
  // batch of images in FeatureBatch layout -> dim x batch embedding columns
  virtual Matf embed_batch(const FeatureBatch<float>& batch) const = 0;

  Matf embed_ids(const DatasetHandle& dataset, const std::vector<std::string>& ids) const;
};

// Penultimate-layer pre-activations of a frozen reference CNN, trained
// separately from the models under audit.
class CnnEmbeddingProvider final : public EmbeddingProvider {
 public:
  CnnEmbeddingProvider(Model ref, std::string layer);
  int dim() const override { return dim_; }
  std::string id() const override;
  Matf embed_batch(const FeatureBatch<float>& batch) const override;

 private:
  mutable Model ref_;
  std::string layer_;
  int dim_;
};

// Kendall rank correlation between two tie-free rankings of the same image
// subset. O(n log n) merge-sort inversion count.
double kendall_tau(const RankingList& a, const RankingList& b);

// Mean pairwise cosine similarities between top-k embedding sets.
// Entry (j, p) compares channel j's top-k in state a with channel p's in
// state b. Pairs of the identical image are excluded when j == p, so the
// diagonal of init_init is the over-distinct-pairs self-similarity and the
// diagonal of init_final vanishes against it when the sets are equal.
struct SimilarityMatrix {
  Matf init_init;
  Matf init_final;
  int k = 0;

  int channel_count() const { return static_cast<int>(init_init.rows()); }
};

SimilarityMatrix build_similarity(const std::vector<TopKResult>& init_topk,
                                  const std::vector<TopKResult>& final_topk,
                                  const DatasetHandle& dataset, const EmbeddingProvider& provider);

// (C_init,init_jj - C_init,final_jj) normalized by the mean initial
// cross-channel similarity of channel j.
double clip_delta(const SimilarityMatrix& sim, int j);

// Whack-a-mole ratios; nullopt when the denominator is not positive.
std::optional<double> clip_w(const SimilarityMatrix& sim, int j);
std::optional<double> kendall_tau_w(int j, const std::vector<RankingList>& init_rankings,
                                    const std::vector<RankingList>& final_rankings);

struct ChannelMetrics {
  int channel = 0;
  double tau = 0.0;
  double delta = 0.0;
  std::optional<double> tau_w;
  std::optional<double> whack_w;
};

struct MetricReport {
  std::string layer;
  std::string attack = "none";
  int k = 0;
  int dktau_size = 0;
  std::vector<ChannelMetrics> channels;
  double mean_tau = 0.0;
  double mean_delta = 0.0;
  std::optional<double> mean_tau_w;  // over channels where defined
  std::optional<double> mean_whack_w;
  double accuracy_before = -1.0;  // fraction; -1 when not measured
  double accuracy_after = -1.0;

  void save_json(const std::string& path) const;
  static MetricReport load_json(const std::string& path);
};

struct LayerReportConfig {
  int k = 10;
  int dktau_size = 2000;
  std::uint64_t dktau_seed = 0;
};

// Full per-channel stability report for one layer: the Table-1-shaped row
// source. Accuracies are evaluated on acc_eval when provided.
MetricReport layer_report(Model& initial, Model& final, const DatasetHandle& dataset,
                          const std::string& layer, const LayerReportConfig& cfg,
                          const EmbeddingProvider& provider,
                          const DatasetHandle* acc_eval = nullptr);

}  // namespace fviz
