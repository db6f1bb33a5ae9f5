#pragma once

#include "fviz/topk.hpp"
#include "fviz/train.hpp"

#include <chrono>
#include <cmath>
#include <optional>

namespace fviz {

enum class AttackKind { push_down, push_up, fairwash };

const char* attack_kind_name(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::push_down;
  std::string layer = "conv4";
  int channel = -1;  // -1: whole layer
  int k = 10;        // frozen top-k per channel (push-down)

  int decoy_class = 0;   // push-up
  int decoy_count = 100;

  std::vector<int> fairwash_units;  // chosen on the initial model, frozen

  double alpha_init = 0.1;
  double alpha_min = 1e-6;
  double alpha_max = 0.9;
  double drop_hi = 0.5;  // percentage points
  double drop_lo = 0.1;
  bool alpha_fixed = false;

  int epochs = 2;
  int steps_per_epoch = 0;  // 0: ceil(train size / batch)
  double lr = 1e-5;
  int batch = 256;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  int attack_batch = 0;  // push-down (channel,image) pairs per step; 0: all
  int probe_every = 50;

  std::uint64_t seed = 0;

  void validate() const;
  std::uint64_t hash() const;
};

// Everything the attack needs frozen from the initial model before the first
// parameter update.
struct AttackSets {
  std::vector<int> channels;                  // channel scope within the layer
  std::vector<std::vector<int>> per_channel;  // push-down: train indices of the frozen top-k
  std::vector<int> decoy;                     // push-up: train indices
  std::vector<int> group0, group1;            // fairwash: train indices by attribute
  std::vector<int> units;                     // fairwash: unit scope
};

// Appendix-style dynamic weighting: halve alpha when the probe accuracy has
// dropped more than drop_hi points below the reference, double it (capped)
// when the drop is under drop_lo points.
struct AlphaScheduler {
  double alpha = 0.1;
  double alpha_min = 1e-6;
  double alpha_max = 0.9;
  double drop_hi = 0.5;
  double drop_lo = 0.1;
  double ref_accuracy = 0.0;  // percent

  double step(double probe_accuracy_pct) {
    const double drop = ref_accuracy - probe_accuracy_pct;
    if (drop > drop_hi) {
      alpha = std::max(alpha / 2.0, alpha_min);
    } else if (drop < drop_lo) {
      alpha = std::min(alpha * 2.0, alpha_max);
    }
    return alpha;
  }
};

struct AttackLogRow {
  int step = 0;
  double maintain_ce = 0.0;      // cross entropy against the teacher
  double maintain_excess = 0.0;  // maintain_ce minus teacher entropy (>= 0)
  double attack_loss = 0.0;      // unweighted
  double alpha = 0.0;
  bool probed = false;
  double probe_accuracy = 0.0;  // percent, valid when probed
  double wall_ms = 0.0;
};

struct AttackLog {
  std::vector<AttackLogRow> rows;
  double initial_probe_accuracy = 0.0;  // percent
  double final_probe_accuracy = 0.0;
  std::uint64_t teacher_hash_before = 0;
  std::uint64_t teacher_hash_after = 0;

  void save_csv(const std::string& path) const;
};

struct AttackResult {
  Model attacked;
  AttackLog log;
  AttackSets sets;
};

// --- loss cores -----------------------------------------------------------
// Each core computes the unweighted loss from captured activations and, when
// a gradient sink is supplied, accumulates d(loss)/d(activations) into it.

// Distillation maintain loss: mean cross entropy between the teacher's output
// distribution and the student's. dstudent gets the batch-averaged gradient.
template <class S>
S maintain_loss(const MatX<S>& teacher_logits, const MatX<S>& student_logits,
                MatX<S>* dstudent = nullptr) {
  if (teacher_logits.rows() != student_logits.rows() || teacher_logits.cols() != student_logits.cols())
    throw ArgumentError("teacher/student logit shapes differ");
  const Eigen::Index bsz = student_logits.cols();
  if (bsz == 0) throw ArgumentError("maintain loss needs a non-empty batch");
  const MatX<S> pt = softmax_columns(teacher_logits);
  S loss = S(0);
  if (dstudent) dstudent->resize(student_logits.rows(), bsz);
  for (Eigen::Index b = 0; b < bsz; ++b) {
    VecX<S> col = student_logits.col(b);
    const S mx = col.maxCoeff();
    VecX<S> ex = (col.array() - mx).exp();
    const S z = ex.sum();
    const VecX<S> log_ps = (col.array() - mx - std::log(z)).matrix();
    loss += -(pt.col(b).array() * log_ps.array()).sum();
    if (dstudent) dstudent->col(b) = (ex / z - pt.col(b)) / S(bsz);
  }
  return loss / S(bsz);
}

// Mean entropy of the teacher's output distribution; maintain_loss minus this
// is the nonnegative excess (KL) term.
template <class S>
S teacher_entropy(const MatX<S>& teacher_logits) {
  const MatX<S> pt = softmax_columns(teacher_logits);
  S h = S(0);
  for (Eigen::Index b = 0; b < pt.cols(); ++b)
    for (Eigen::Index i = 0; i < pt.rows(); ++i)
      if (pt(i, b) > S(0)) h += -pt(i, b) * std::log(pt(i, b));
  return h / S(pt.cols());
}

// Push-down: sum over channels in scope and their attack images of the
// spatial squared l2 norm of the post-activation map. `positions[ci]` lists
// batch positions of channel `channels[ci]`'s attack images.
template <class S>
S push_down_core(const FeatureBatch<S>& acts, const std::vector<int>& channels,
                 const std::vector<std::vector<int>>& positions, FeatureBatch<S>* dacts = nullptr) {
  if (channels.size() != positions.size()) throw ArgumentError("channel/position scope mismatch");
  const int hw = acts.spatial();
  S loss = S(0);
  for (std::size_t ci = 0; ci < channels.size(); ++ci) {
    const int j = channels[ci];
    if (j < 0 || j >= acts.channels()) throw IndexError("channel out of range in push-down scope");
    if (positions[ci].empty())
      throw ConfigError("empty attack set for channel " + std::to_string(j));
    for (int pos : positions[ci]) {
      auto map = acts.data.block(j, static_cast<Eigen::Index>(pos) * hw, 1, hw);
      loss += map.array().square().sum();
      if (dacts)
        dacts->data.block(j, static_cast<Eigen::Index>(pos) * hw, 1, hw) += S(2) * map;
    }
  }
  return loss;
}

// Push-up: hinge sum over channels, decoys and data images of
// [score(data) - score(decoy)]_+ with score the post-activation squared norm.
template <class S>
S push_up_core(const FeatureBatch<S>& data_acts, const FeatureBatch<S>& decoy_acts,
               const std::vector<int>& channels, FeatureBatch<S>* d_data = nullptr,
               FeatureBatch<S>* d_decoy = nullptr) {
  if (data_acts.batch == 0) throw ConfigError("push-up needs a non-empty data batch");
  if (decoy_acts.batch == 0) throw ConfigError("push-up needs a non-empty decoy set");
  const MatX<S> sx = channel_scores_post(data_acts);
  const MatX<S> sd = channel_scores_post(decoy_acts);
  const int hw = data_acts.spatial();
  S loss = S(0);
  for (int j : channels) {
    if (j < 0 || j >= data_acts.channels()) throw IndexError("channel out of range in push-up scope");
    for (int x = 0; x < data_acts.batch; ++x) {
      S cx = S(0);  // number of decoys strictly below this data image
      for (int d = 0; d < decoy_acts.batch; ++d) {
        const S margin = sx(j, x) - sd(j, d);
        if (margin > S(0)) {
          loss += margin;
          cx += S(1);
          if (d_decoy) {
            auto dmap = decoy_acts.data.block(j, static_cast<Eigen::Index>(d) * decoy_acts.spatial(), 1,
                                              decoy_acts.spatial());
            d_decoy->data.block(j, static_cast<Eigen::Index>(d) * decoy_acts.spatial(), 1,
                                decoy_acts.spatial()) -= S(2) * dmap;
          }
        }
      }
      if (d_data && cx > S(0)) {
        auto xmap = data_acts.data.block(j, static_cast<Eigen::Index>(x) * hw, 1, hw);
        d_data->data.block(j, static_cast<Eigen::Index>(x) * hw, 1, hw) += S(2) * cx * xmap;
      }
    }
  }
  return loss;
}

// Fairwashing: squared l2 distance between group means and between group
// second moments of pre-activations, restricted to the unit scope.
template <class S>
S fairwash_core(const FeatureBatch<S>& acts0, const FeatureBatch<S>& acts1,
                const std::vector<int>& units, FeatureBatch<S>* d0 = nullptr,
                FeatureBatch<S>* d1 = nullptr) {
  if (acts0.batch == 0 || acts1.batch == 0) throw ConfigError("fairwash needs non-empty group batches");
  if (acts0.spatial() != 1 || acts1.spatial() != 1)
    throw ArgumentError("fairwash operates on fully-connected pre-activations");
  if (units.empty()) throw ConfigError("fairwash needs a non-empty unit scope");
  const S n0 = S(acts0.batch), n1 = S(acts1.batch);
  S loss = S(0);
  for (int u : units) {
    if (u < 0 || u >= acts0.channels()) throw IndexError("unit out of range in fairwash scope");
    const auto row0 = acts0.data.row(u);
    const auto row1 = acts1.data.row(u);
    const S mu0 = row0.mean(), mu1 = row1.mean();
    const S rho0 = row0.array().square().mean(), rho1 = row1.array().square().mean();
    const S dmu = mu0 - mu1, drho = rho0 - rho1;
    loss += dmu * dmu + drho * drho;
    if (d0) d0->data.row(u).array() += S(2) * dmu / n0 + (S(4) * drho / n0) * row0.array();
    if (d1) d1->data.row(u).array() -= S(2) * dmu / n1 + (S(4) * drho / n1) * row1.array();
  }
  return loss;
}

// --- whole-model loss evaluations (pure; used by tests and the loop) -------

template <class S>
S push_down_loss(ModelT<S>& model, const DatasetHandle& data, const AttackSets& sets,
                 const std::string& layer) {
  // union of attack images
  std::vector<int> uniq;
  for (const auto& ids : sets.per_channel)
    for (int i : ids)
      if (std::find(uniq.begin(), uniq.end(), i) == uniq.end()) uniq.push_back(i);
  std::vector<std::vector<int>> positions(sets.per_channel.size());
  for (std::size_t ci = 0; ci < sets.per_channel.size(); ++ci)
    for (int i : sets.per_channel[ci])
      positions[ci].push_back(static_cast<int>(
          std::find(uniq.begin(), uniq.end(), i) - uniq.begin()));
  auto tr = model.forward(make_batch<S>(data, uniq), {{layer, false}});
  return push_down_core<S>(tr.acts[0], sets.channels, positions);
}

template <class S>
S push_up_loss(ModelT<S>& model, const DatasetHandle& data, const std::vector<int>& decoy_idx,
               const std::vector<int>& data_idx, const std::string& layer,
               const std::vector<int>& channels) {
  if (decoy_idx.empty()) throw ConfigError("empty decoy set");
  if (data_idx.empty()) throw ConfigError("empty data batch");
  auto trd = model.forward(make_batch<S>(data, decoy_idx), {{layer, false}});
  FeatureBatch<S> decoy_acts = trd.acts[0];
  auto trx = model.forward(make_batch<S>(data, data_idx), {{layer, false}});
  return push_up_core<S>(trx.acts[0], decoy_acts, channels);
}

template <class S>
S fairwash_loss(ModelT<S>& model, const DatasetHandle& data, const std::vector<int>& group0,
                const std::vector<int>& group1, const std::string& layer,
                const std::vector<int>& units) {
  if (group0.empty() || group1.empty()) throw ConfigError("empty fairwash group batch");
  auto tr0 = model.forward(make_batch<S>(data, group0), {{layer, true}});
  FeatureBatch<S> acts0 = tr0.acts[0];
  auto tr1 = model.forward(make_batch<S>(data, group1), {{layer, true}});
  return fairwash_core<S>(acts0, tr1.acts[0], units);
}

// Builds the frozen attack sets from the initial model (before any update).
AttackSets build_attack_sets(Model& initial, const AttackConfig& cfg, const DatasetHandle& train);

// Fine-tunes a copy of `initial` against the composite objective
// alpha * attack + (1 - alpha) * maintain. The probe set drives the alpha
// scheduler and must be disjoint from training data.
AttackResult run_attack(const Model& initial, const AttackConfig& cfg, const DatasetHandle& train,
                        const DatasetHandle& probe);

}  // namespace fviz
