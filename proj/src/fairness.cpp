#include "fviz/fairness.hpp"

#include "fviz/train.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>

namespace fviz {

using nlohmann::json;

std::optional<double> ddi(const std::vector<int>& predictions, const std::vector<int>& attrs,
                          int class_c) {
  if (predictions.size() != attrs.size()) throw ArgumentError("prediction/attribute length mismatch");
  long n0 = 0, n1 = 0, hit0 = 0, hit1 = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (attrs[i] == 0) {
      ++n0;
      if (predictions[i] == class_c) ++hit0;
    } else {
      ++n1;
      if (predictions[i] == class_c) ++hit1;
    }
  }
  if (n0 == 0 || n1 == 0) return std::nullopt;
  return std::abs(static_cast<double>(hit0) / n0 - static_cast<double>(hit1) / n1);
}

std::optional<double> deo(const std::vector<int>& predictions, const std::vector<int>& labels,
                          const std::vector<int>& attrs, int class_c) {
  if (predictions.size() != labels.size() || predictions.size() != attrs.size())
    throw ArgumentError("prediction/label/attribute length mismatch");
  long n0 = 0, n1 = 0, hit0 = 0, hit1 = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i] != class_c) continue;
    if (attrs[i] == 0) {
      ++n0;
      if (predictions[i] == class_c) ++hit0;
    } else {
      ++n1;
      if (predictions[i] == class_c) ++hit1;
    }
  }
  if (n0 == 0 || n1 == 0) return std::nullopt;
  return std::abs(static_cast<double>(hit0) / n0 - static_cast<double>(hit1) / n1);
}

double ks_distance(const std::vector<double>& sample0, const std::vector<double>& sample1) {
  if (sample0.empty() || sample1.empty()) throw ArgumentError("ks_distance needs non-empty samples");
  std::vector<double> a = sample0, b = sample1;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double sup = 0.0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    sup = std::max(sup, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return sup;
}

std::optional<double> balance(const TopKResult& top, const DatasetHandle& dataset) {
  if (top.ids.empty()) return std::nullopt;
  long n0 = 0, n1 = 0;
  for (const auto& id : top.ids) {
    const auto& img = dataset.by_id(id);
    if (!img.protected_attr)
      throw DataError("image '" + id + "' has no protected attribute");
    (*img.protected_attr == 0 ? n0 : n1)++;
  }
  if (n0 == 0 || n1 == 0) return 0.0;
  return static_cast<double>(std::min(n0, n1)) / static_cast<double>(std::max(n0, n1));
}

namespace {

// pre-activation samples of one unit split by attribute
std::pair<std::vector<double>, std::vector<double>> unit_groups(const ActivationScoreTable& table,
                                                                const DatasetHandle& dataset, int unit) {
  std::vector<double> g0, g1;
  for (int i = 0; i < table.count(); ++i) {
    const auto& img = dataset.images[static_cast<std::size_t>(i)];
    (!img.protected_attr || *img.protected_attr == 0 ? g0 : g1)
        .push_back(table.scores(unit, i));
  }
  return {std::move(g0), std::move(g1)};
}

}  // namespace

NeuronScope select_target_neurons(Model& model, const DatasetHandle& annotated,
                                  const std::string& layer, int count) {
  if (!annotated.annotated()) throw StateError("neuron selection needs an annotated dataset");
  const LayerHandle& handle = model.layer(layer);
  if (count < 1 || count > handle.channels)
    throw ArgumentError("neuron count " + std::to_string(count) + " out of range for layer " + layer);
  const auto table = score_all(model, annotated, layer, ScoreMode::pre);
  std::vector<std::pair<double, int>> scored;  // (-ks, unit) for stable ascending sort
  for (int u = 0; u < handle.channels; ++u) {
    auto [g0, g1] = unit_groups(table, annotated, u);
    if (g0.empty() || g1.empty()) throw StateError("annotated set lacks one attribute group");
    scored.emplace_back(-ks_distance(g0, g1), u);
  }
  std::sort(scored.begin(), scored.end());
  NeuronScope scope;
  scope.layer = layer;
  for (int i = 0; i < count; ++i) scope.units.push_back(scored[static_cast<std::size_t>(i)].second);
  std::sort(scope.units.begin(), scope.units.end());
  return scope;
}

namespace {

std::vector<int> predict(Model& model, const DatasetHandle& dataset) {
  const auto logits = forward_logits(model, dataset, all_indices(dataset));
  std::vector<int> preds(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    Eigen::Index argmax = 0;
    logits.col(b).maxCoeff(&argmax);
    preds[static_cast<std::size_t>(b)] = static_cast<int>(argmax);
  }
  return preds;
}

}  // namespace

FairnessReport fairness_report(Model& initial, Model& final, const DatasetHandle& annotated_eval,
                               const NeuronScope& scope, const FairnessEvalConfig& cfg) {
  if (!annotated_eval.annotated()) throw StateError("fairness report needs an annotated evaluation set");
  FairnessReport report;
  report.layer = scope.layer;
  report.k = cfg.k;
  report.units = scope.units;

  std::vector<int> labels, attrs;
  for (const auto& img : annotated_eval.images) {
    labels.push_back(img.class_label);
    attrs.push_back(*img.protected_attr);
  }
  const auto preds_pre = predict(initial, annotated_eval);
  const auto preds_post = predict(final, annotated_eval);
  for (int c = 0; c < annotated_eval.classes; ++c) {
    report.ddi_pre.push_back(ddi(preds_pre, attrs, c));
    report.ddi_post.push_back(ddi(preds_post, attrs, c));
    report.deo_pre.push_back(deo(preds_pre, labels, attrs, c));
    report.deo_post.push_back(deo(preds_post, labels, attrs, c));
  }

  const auto table_pre = score_all(initial, annotated_eval, scope.layer, ScoreMode::pre);
  const auto table_post = score_all(final, annotated_eval, scope.layer, ScoreMode::pre);
  for (int u : scope.units) {
    auto [pre0, pre1] = unit_groups(table_pre, annotated_eval, u);
    auto [post0, post1] = unit_groups(table_post, annotated_eval, u);
    report.ks_pre.push_back(ks_distance(pre0, pre1));
    report.ks_post.push_back(ks_distance(post0, post1));
    report.balance_pre.push_back(balance(topk(table_pre, u, cfg.k), annotated_eval));
    report.balance_post.push_back(balance(topk(table_post, u, cfg.k), annotated_eval));
  }
  report.accuracy_pre = evaluate_accuracy(initial, annotated_eval);
  report.accuracy_post = evaluate_accuracy(final, annotated_eval);
  return report;
}

double FairnessReport::mean_ks_pre() const {
  double s = 0;
  for (double v : ks_pre) s += v;
  return ks_pre.empty() ? 0.0 : s / static_cast<double>(ks_pre.size());
}

double FairnessReport::mean_ks_post() const {
  double s = 0;
  for (double v : ks_post) s += v;
  return ks_post.empty() ? 0.0 : s / static_cast<double>(ks_post.size());
}

namespace {

double balance_fraction(const std::vector<std::optional<double>>& balances, double threshold,
                        bool above) {
  int defined = 0, hits = 0;
  for (const auto& b : balances) {
    if (!b) continue;
    ++defined;
    if (above ? *b > threshold : *b < threshold) ++hits;
  }
  return defined == 0 ? 0.0 : static_cast<double>(hits) / defined;
}

json opt_list(const std::vector<std::optional<double>>& xs) {
  json out = json::array();
  for (const auto& x : xs) out.push_back(x ? json(*x) : json());
  return out;
}

}  // namespace

double FairnessReport::balance_fraction_pre(double threshold, bool above) const {
  return balance_fraction(balance_pre, threshold, above);
}

double FairnessReport::balance_fraction_post(double threshold, bool above) const {
  return balance_fraction(balance_post, threshold, above);
}

void FairnessReport::save_json(const std::string& path) const {
  json j;
  j["layer"] = layer;
  j["k"] = k;
  j["units"] = units;
  j["ddi_pre"] = opt_list(ddi_pre);
  j["ddi_post"] = opt_list(ddi_post);
  j["deo_pre"] = opt_list(deo_pre);
  j["deo_post"] = opt_list(deo_post);
  j["ks_pre"] = ks_pre;
  j["ks_post"] = ks_post;
  j["balance_pre"] = opt_list(balance_pre);
  j["balance_post"] = opt_list(balance_post);
  j["mean_ks_pre"] = mean_ks_pre();
  j["mean_ks_post"] = mean_ks_post();
  j["accuracy_pre"] = accuracy_pre;
  j["accuracy_post"] = accuracy_post;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write fairness report " + path);
  out << j.dump(2) << "\n";
}

}  // namespace fviz
