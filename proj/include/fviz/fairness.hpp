#pragma once

#include "fviz/topk.hpp"

#include <optional>

namespace fviz {

// Difference of disparate impact for class c: |p(yhat=c | z=0) - p(yhat=c | z=1)|.
// nullopt when either group is empty.
std::optional<double> ddi(const std::vector<int>& predictions, const std::vector<int>& attrs,
                          int class_c);

// Difference of equal opportunity: |p(yhat=c | z=0, y=c) - p(yhat=c | z=1, y=c)|.
// nullopt when either group lacks y=c samples.
std::optional<double> deo(const std::vector<int>& predictions, const std::vector<int>& labels,
                          const std::vector<int>& attrs, int class_c);

// Two-sample Kolmogorov-Smirnov distance: sup_t |ECDF0(t) - ECDF1(t)|.
double ks_distance(const std::vector<double>& sample0, const std::vector<double>& sample1);

// Group-count ratio min/max within a top-k set; 0 when one group is absent,
// nullopt for an empty set.
std::optional<double> balance(const TopKResult& top, const DatasetHandle& dataset);

struct NeuronScope {
  std::string layer;
  std::vector<int> units;
};

// The `count` units of `layer` with the largest KS distance between
// group-conditional pre-activation distributions on the annotated set:
// the attribute-sensitivity proxy used to pick fairwashing targets.
NeuronScope select_target_neurons(Model& model, const DatasetHandle& annotated,
                                  const std::string& layer, int count);

struct FairnessReport {
  std::string layer;
  int k = 0;
  // per class
  std::vector<std::optional<double>> ddi_pre, ddi_post, deo_pre, deo_post;
  // per scoped unit, aligned with `units`
  std::vector<int> units;
  std::vector<double> ks_pre, ks_post;
  std::vector<std::optional<double>> balance_pre, balance_post;
  double accuracy_pre = -1.0;
  double accuracy_post = -1.0;

  double mean_ks_pre() const;
  double mean_ks_post() const;
  // fraction of scoped units with defined balance below/above a threshold
  double balance_fraction_pre(double threshold, bool above) const;
  double balance_fraction_post(double threshold, bool above) const;

  void save_json(const std::string& path) const;
};

struct FairnessEvalConfig {
  int k = 30;  // top-k used for balance
};

// Pre/post-attack fairness evaluation on an annotated split: model-level DDI
// and DEO per class, per-unit KS distance of pre-activations and top-k
// balance over the scoped units.
FairnessReport fairness_report(Model& initial, Model& final, const DatasetHandle& annotated_eval,
                               const NeuronScope& scope, const FairnessEvalConfig& cfg);

}  // namespace fviz
