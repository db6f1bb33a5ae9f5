#include "fviz/attack.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace fviz {

const char* attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::push_down: return "push_down";
    case AttackKind::push_up: return "push_up";
    case AttackKind::fairwash: return "fairwash";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "push_down") return AttackKind::push_down;
  if (name == "push_up") return AttackKind::push_up;
  if (name == "fairwash") return AttackKind::fairwash;
  throw ArgumentError("unknown attack kind '" + name + "'");
}

void AttackConfig::validate() const {
  if (!(alpha_init > 0.0 && alpha_init <= alpha_max)) throw ConfigError("need 0 < alpha_init <= alpha_max");
  if (!(drop_lo < drop_hi)) throw ConfigError("need drop_lo < drop_hi");
  if (epochs < 1) throw ConfigError("attack needs epochs >= 1");
  if (batch < 1 || lr <= 0.0) throw ConfigError("attack needs a positive batch and learning rate");
  if (k < 1) throw ConfigError("attack needs k >= 1");
  if (kind == AttackKind::push_up && decoy_count < 1) throw ConfigError("push-up needs decoy_count >= 1");
  if (probe_every < 1) throw ConfigError("probe_every must be >= 1");
}

std::uint64_t AttackConfig::hash() const {
  std::ostringstream repr;
  repr << attack_kind_name(kind) << "|" << layer << "|" << channel << "|" << k << "|" << decoy_class
       << "|" << decoy_count << "|" << alpha_init << "|" << alpha_min << "|" << alpha_max << "|"
       << drop_hi << "|" << drop_lo << "|" << alpha_fixed << "|" << epochs << "|" << steps_per_epoch
       << "|" << lr << "|" << batch << "|" << beta1 << "|" << beta2 << "|" << eps << "|" << attack_batch
       << "|" << probe_every << "|" << seed;
  for (int u : fairwash_units) repr << "," << u;
  std::uint64_t h = 1469598103934665603ull;
  for (char ch : repr.str()) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

void AttackLog::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write attack log " + path);
  out << "step,maintain_ce,maintain_excess,attack_loss,alpha,probed,probe_accuracy,wall_ms\n";
  out.precision(9);
  for (const auto& r : rows)
    out << r.step << "," << r.maintain_ce << "," << r.maintain_excess << "," << r.attack_loss << ","
        << r.alpha << "," << (r.probed ? 1 : 0) << "," << (r.probed ? r.probe_accuracy : 0.0) << ","
        << r.wall_ms << "\n";
}

namespace {

std::vector<int> scope_channels(const Model& model, const AttackConfig& cfg) {
  const LayerHandle& handle = model.layer(cfg.layer);
  std::vector<int> channels;
  if (cfg.channel >= 0) {
    if (cfg.channel >= handle.channels)
      throw ConfigError("channel " + std::to_string(cfg.channel) + " out of range for " + cfg.layer);
    channels.push_back(cfg.channel);
  } else {
    for (int j = 0; j < handle.channels; ++j) channels.push_back(j);
  }
  return channels;
}

}  // namespace

AttackSets build_attack_sets(Model& initial, const AttackConfig& cfg, const DatasetHandle& train) {
  cfg.validate();
  AttackSets sets;
  sets.channels = scope_channels(initial, cfg);
  auto rng = substream(cfg.seed, "attack-sets");
  switch (cfg.kind) {
    case AttackKind::push_down: {
      const auto table = score_all(initial, train, cfg.layer, ScoreMode::post);
      sets.per_channel.reserve(sets.channels.size());
      for (int j : sets.channels) {
        const auto top = topk(table, j, cfg.k);
        std::vector<int> idx;
        for (const auto& id : top.ids) idx.push_back(train.index_of(id));
        sets.per_channel.push_back(std::move(idx));
      }
      break;
    }
    case AttackKind::push_up: {
      std::vector<int> pool;
      for (int i = 0; i < train.count(); ++i)
        if (train.images[static_cast<std::size_t>(i)].class_label == cfg.decoy_class) pool.push_back(i);
      if (pool.empty())
        throw ConfigError("no training images of decoy class " + std::to_string(cfg.decoy_class));
      shuffle_indices(pool, rng);
      const int n = std::min<int>(cfg.decoy_count, static_cast<int>(pool.size()));
      sets.decoy.assign(pool.begin(), pool.begin() + n);
      std::sort(sets.decoy.begin(), sets.decoy.end());
      break;
    }
    case AttackKind::fairwash: {
      if (!train.annotated()) throw StateError("fairwash needs an annotated training set");
      for (int i = 0; i < train.count(); ++i)
        (*train.images[static_cast<std::size_t>(i)].protected_attr == 0 ? sets.group0 : sets.group1)
            .push_back(i);
      if (sets.group0.empty() || sets.group1.empty())
        throw ConfigError("fairwash needs both attribute groups in the training set");
      if (cfg.fairwash_units.empty()) throw ConfigError("fairwash needs a frozen unit scope");
      sets.units = cfg.fairwash_units;
      const LayerHandle& handle = initial.layer(cfg.layer);
      for (int u : sets.units)
        if (u < 0 || u >= handle.channels) throw ConfigError("fairwash unit out of range");
      break;
    }
  }
  return sets;
}

AttackResult run_attack(const Model& initial, const AttackConfig& cfg, const DatasetHandle& train,
                        const DatasetHandle& probe) {
  cfg.validate();
  if (probe.count() == 0) throw ConfigError("attack needs a non-empty probe set");
  Model teacher = initial.clone();
  Model student = initial.clone();
  const LayerHandle& handle = student.layer(cfg.layer);
  const bool capture_pre = cfg.kind == AttackKind::fairwash;
  const int inject_node = capture_pre ? handle.pre_node : handle.post_node;

  AttackResult result{student.clone(), {}, build_attack_sets(teacher, cfg, train)};
  AttackLog& log = result.log;
  log.teacher_hash_before = teacher.param_hash();

  // Teacher outputs over the train set are fixed; cache them once.
  const Matf teacher_logits = forward_logits(teacher, train, all_indices(train));

  AlphaScheduler sched;
  sched.alpha = cfg.alpha_init;
  sched.alpha_min = cfg.alpha_min;
  sched.alpha_max = cfg.alpha_max;
  sched.drop_hi = cfg.drop_hi;
  sched.drop_lo = cfg.drop_lo;
  sched.ref_accuracy = 100.0 * evaluate_accuracy(teacher, probe);
  log.initial_probe_accuracy = sched.ref_accuracy;

  Adam<float> opt(student.params(), student.grads(), cfg.beta1, cfg.beta2, cfg.eps);
  auto rng = substream(cfg.seed, "attack");

  // push-down: flattened (channel index in scope, train image) pairs
  std::vector<std::pair<int, int>> pd_pairs;
  if (cfg.kind == AttackKind::push_down)
    for (std::size_t ci = 0; ci < result.sets.per_channel.size(); ++ci)
      for (int idx : result.sets.per_channel[ci]) pd_pairs.emplace_back(static_cast<int>(ci), idx);

  auto order = all_indices(train);
  std::size_t cursor = order.size();  // forces an initial shuffle
  auto next_batch = [&](int n) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(n));
    while (static_cast<int>(idx.size()) < n) {
      if (cursor >= order.size()) {
        shuffle_indices(order, rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    return idx;
  };

  const int steps_per_epoch = cfg.steps_per_epoch > 0
                                  ? cfg.steps_per_epoch
                                  : (train.count() + cfg.batch - 1) / cfg.batch;
  const int total_steps = cfg.epochs * steps_per_epoch;
  const auto t0 = std::chrono::steady_clock::now();

  for (int step = 1; step <= total_steps; ++step) {
    const std::vector<int> maintain_idx = next_batch(std::min(cfg.batch, train.count()));
    const int bm = static_cast<int>(maintain_idx.size());

    // Combined batch: maintain images first, then the kind-specific extras.
    std::vector<int> combined = maintain_idx;
    std::vector<int> channels;                  // scope channel ids
    std::vector<std::vector<int>> positions;    // push-down positions per scope channel
    int g0_begin = 0, g0_n = 0, g1_begin = 0, g1_n = 0;
    int decoy_begin = 0, decoy_n = 0;
    switch (cfg.kind) {
      case AttackKind::push_down: {
        std::vector<std::pair<int, int>> pairs = pd_pairs;
        if (cfg.attack_batch > 0 && cfg.attack_batch < static_cast<int>(pairs.size())) {
          shuffle_indices(pairs, rng);
          pairs.resize(static_cast<std::size_t>(cfg.attack_batch));
        }
        channels.resize(result.sets.channels.size());
        for (std::size_t ci = 0; ci < channels.size(); ++ci)
          channels[ci] = result.sets.channels[ci];
        positions.assign(channels.size(), {});
        std::vector<int> seen;  // unique attack images appended to the batch
        for (const auto& [ci, img] : pairs) {
          auto it = std::find(seen.begin(), seen.end(), img);
          int pos;
          if (it == seen.end()) {
            seen.push_back(img);
            combined.push_back(img);
            pos = bm + static_cast<int>(seen.size()) - 1;
          } else {
            pos = bm + static_cast<int>(it - seen.begin());
          }
          positions[static_cast<std::size_t>(ci)].push_back(pos);
        }
        // drop scope channels that got no pair this step (subsampled mode)
        if (cfg.attack_batch > 0) {
          std::vector<int> ch2;
          std::vector<std::vector<int>> pos2;
          for (std::size_t ci = 0; ci < channels.size(); ++ci)
            if (!positions[ci].empty()) {
              ch2.push_back(channels[ci]);
              pos2.push_back(positions[ci]);
            }
          channels.swap(ch2);
          positions.swap(pos2);
        }
        break;
      }
      case AttackKind::push_up: {
        channels = result.sets.channels;
        decoy_begin = bm;
        decoy_n = static_cast<int>(result.sets.decoy.size());
        for (int idx : result.sets.decoy) combined.push_back(idx);
        break;
      }
      case AttackKind::fairwash: {
        channels = result.sets.channels;
        const int half = std::max(1, cfg.batch / 2);
        auto sample_group = [&](const std::vector<int>& group) {
          std::vector<int> g = group;
          if (static_cast<int>(g.size()) > half) {
            shuffle_indices(g, rng);
            g.resize(static_cast<std::size_t>(half));
          }
          return g;
        };
        const auto g0 = sample_group(result.sets.group0);
        const auto g1 = sample_group(result.sets.group1);
        g0_begin = bm;
        g0_n = static_cast<int>(g0.size());
        g1_begin = bm + g0_n;
        g1_n = static_cast<int>(g1.size());
        for (int idx : g0) combined.push_back(idx);
        for (int idx : g1) combined.push_back(idx);
        break;
      }
    }

    auto tr = student.forward(make_batch<float>(train, combined), {{cfg.layer, capture_pre}});
    const FeatureBatch<float>& acts = tr.acts[0];
    const int btotal = static_cast<int>(combined.size());

    // Maintain side: distillation CE on the maintain columns.
    Matf t_logits(teacher_logits.rows(), bm);
    for (int b = 0; b < bm; ++b) t_logits.col(b) = teacher_logits.col(maintain_idx[static_cast<std::size_t>(b)]);
    Matf s_logits = tr.logits.leftCols(bm);
    Matf d_maintain;
    const float m_ce = maintain_loss<float>(t_logits, s_logits, &d_maintain);
    const float m_h = teacher_entropy<float>(t_logits);

    Matf dlogits = Matf::Zero(tr.logits.rows(), btotal);
    dlogits.leftCols(bm) = (1.0f - static_cast<float>(sched.alpha)) * d_maintain;

    // Attack side. The per-step term is the mean over the evaluated
    // (channel, image) pairs or hinge triples: a constant rescale of the
    // exact sums that keeps the composite's two gradient scales inside the
    // optimizer's adaptive range.
    FeatureBatch<float> dacts = FeatureBatch<float>::zeros_like(acts);
    float a_loss = 0.0f;
    float a_scale = 1.0f;
    switch (cfg.kind) {
      case AttackKind::push_down: {
        std::size_t n_pairs = 0;
        for (const auto& pos : positions) n_pairs += pos.size();
        a_scale = 1.0f / static_cast<float>(std::max<std::size_t>(1, n_pairs));
        a_loss = push_down_core<float>(acts, channels, positions, &dacts);
        break;
      }
      case AttackKind::push_up: {
        // maintain columns double as the data term; decoys live at the tail
        FeatureBatch<float> data_acts;
        data_acts.batch = bm;
        data_acts.height = acts.height;
        data_acts.width = acts.width;
        data_acts.data = acts.data.leftCols(static_cast<Eigen::Index>(bm) * acts.spatial());
        FeatureBatch<float> decoy_acts;
        decoy_acts.batch = decoy_n;
        decoy_acts.height = acts.height;
        decoy_acts.width = acts.width;
        decoy_acts.data = acts.data.middleCols(static_cast<Eigen::Index>(decoy_begin) * acts.spatial(),
                                               static_cast<Eigen::Index>(decoy_n) * acts.spatial());
        FeatureBatch<float> d_data = FeatureBatch<float>::zeros_like(data_acts);
        FeatureBatch<float> d_decoy = FeatureBatch<float>::zeros_like(decoy_acts);
        a_scale = 1.0f / static_cast<float>(std::max<std::size_t>(
                      1, channels.size() * static_cast<std::size_t>(decoy_n) * static_cast<std::size_t>(bm)));
        a_loss = push_up_core<float>(data_acts, decoy_acts, channels, &d_data, &d_decoy);
        dacts.data.leftCols(static_cast<Eigen::Index>(bm) * acts.spatial()) = d_data.data;
        dacts.data.middleCols(static_cast<Eigen::Index>(decoy_begin) * acts.spatial(),
                              static_cast<Eigen::Index>(decoy_n) * acts.spatial()) = d_decoy.data;
        break;
      }
      case AttackKind::fairwash: {
        FeatureBatch<float> a0, a1;
        a0.batch = g0_n;
        a0.height = a0.width = 1;
        a0.data = acts.data.middleCols(g0_begin, g0_n);
        a1.batch = g1_n;
        a1.height = a1.width = 1;
        a1.data = acts.data.middleCols(g1_begin, g1_n);
        FeatureBatch<float> d0 = FeatureBatch<float>::zeros_like(a0);
        FeatureBatch<float> d1 = FeatureBatch<float>::zeros_like(a1);
        a_loss = fairwash_core<float>(a0, a1, result.sets.units, &d0, &d1);
        dacts.data.middleCols(g0_begin, g0_n) = d0.data;
        dacts.data.middleCols(g1_begin, g1_n) = d1.data;
        break;
      }
    }

    if (!std::isfinite(m_ce) || !std::isfinite(a_loss))
      throw TrainingError("attack aborted: non-finite composite loss at step " + std::to_string(step));
    a_loss *= a_scale;

    Injection<float> inj;
    inj.node = inject_node;
    inj.grad = dacts;
    inj.grad.data *= static_cast<float>(sched.alpha) * a_scale;
    student.zero_grads();
    student.backward(dlogits, btotal, {inj});
    opt.step(cfg.lr);

    AttackLogRow row;
    row.step = step;
    row.maintain_ce = m_ce;
    row.maintain_excess = std::max(0.0f, m_ce - m_h);
    row.attack_loss = a_loss;
    row.alpha = sched.alpha;
    if (step % cfg.probe_every == 0 || step == total_steps) {
      const double acc = 100.0 * evaluate_accuracy(student, probe);
      row.probed = true;
      row.probe_accuracy = acc;
      if (!cfg.alpha_fixed) sched.step(acc);
      log.final_probe_accuracy = acc;
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.rows.push_back(row);
  }

  log.teacher_hash_after = teacher.param_hash();
  result.attacked = student.clone();
  return result;
}

}  // namespace fviz
