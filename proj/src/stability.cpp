#include "fviz/stability.hpp"

#include "fviz/train.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace fviz {

using nlohmann::json;

Matf EmbeddingProvider::embed_ids(const DatasetHandle& dataset,
                                  const std::vector<std::string>& ids) const {
  if (ids.empty()) throw ArgumentError("cannot embed an empty id list");
  FeatureBatch<float> batch;
  batch.batch = static_cast<int>(ids.size());
  batch.height = dataset.height;
  batch.width = dataset.width;
  const Eigen::Index hw = static_cast<Eigen::Index>(dataset.height) * dataset.width;
  batch.data.resize(dataset.channels, hw * batch.batch);
  for (std::size_t i = 0; i < ids.size(); ++i)
    batch.data.middleCols(static_cast<Eigen::Index>(i) * hw, hw) = dataset.by_id(ids[i]).pixels;
  return embed_batch(batch);
}

CnnEmbeddingProvider::CnnEmbeddingProvider(Model ref, std::string layer)
    : ref_(std::move(ref)), layer_(std::move(layer)) {
  dim_ = ref_.layer(layer_).channels;
}

std::string CnnEmbeddingProvider::id() const {
  return "cnn:" + std::to_string(ref_.arch().hash()) + ":" + layer_;
}

Matf CnnEmbeddingProvider::embed_batch(const FeatureBatch<float>& batch) const {
  auto tr = ref_.forward(batch, {{layer_, true}});
  Matf e = tr.acts[0].data;
  for (Eigen::Index c = 0; c < e.cols(); ++c) {
    const float norm = e.col(c).norm();
    if (norm < 1e-12f) {
      e.col(c).setZero();
      e(0, c) = 1.0f;  // arbitrary fixed unit vector for an all-zero feature
    } else {
      e.col(c) /= norm;
    }
  }
  return e;
}

double kendall_tau(const RankingList& a, const RankingList& b) {
  if (a.ids != b.ids) throw ArgumentError("kendall tau needs rankings over the same image subset");
  const std::size_t n = a.ranks.size();
  if (n < 2) throw ArgumentError("kendall tau needs at least two items");
  // order items by rank in a, then count inversions of b's ranks
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[a.ranks[i] - 1] = static_cast<int>(i);
  std::vector<int> seq(n);
  for (std::size_t i = 0; i < n; ++i) seq[i] = b.ranks[static_cast<std::size_t>(order[i])];

  std::vector<int> buf(n);
  long long inversions = 0;
  // bottom-up merge sort
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
      const std::size_t mid = lo + width, hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, o = lo;
      while (i < mid && j < hi) {
        if (seq[i] <= seq[j]) {
          buf[o++] = seq[i++];
        } else {
          inversions += static_cast<long long>(mid - i);
          buf[o++] = seq[j++];
        }
      }
      while (i < mid) buf[o++] = seq[i++];
      while (j < hi) buf[o++] = seq[j++];
      std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
                seq.begin() + static_cast<std::ptrdiff_t>(lo));
    }
  }
  const long long total = static_cast<long long>(n) * (static_cast<long long>(n) - 1) / 2;
  return static_cast<double>(total - 2 * inversions) / static_cast<double>(total);
}

SimilarityMatrix build_similarity(const std::vector<TopKResult>& init_topk,
                                  const std::vector<TopKResult>& final_topk,
                                  const DatasetHandle& dataset, const EmbeddingProvider& provider) {
  if (init_topk.size() != final_topk.size())
    throw ArgumentError("initial/final top-k lists must cover the same channels");
  const int J = static_cast<int>(init_topk.size());
  if (J == 0) throw ArgumentError("empty top-k list");

  std::vector<std::string> unique_ids;
  std::map<std::string, int> col_of;
  auto intern = [&](const std::string& id) {
    if (col_of.emplace(id, static_cast<int>(unique_ids.size())).second) unique_ids.push_back(id);
  };
  for (const auto& t : init_topk)
    for (const auto& id : t.ids) intern(id);
  for (const auto& t : final_topk)
    for (const auto& id : t.ids) intern(id);

  const Matf emb = provider.embed_ids(dataset, unique_ids);

  auto set_matrix = [&](const TopKResult& t) {
    Matf e(emb.rows(), static_cast<Eigen::Index>(t.ids.size()));
    for (std::size_t i = 0; i < t.ids.size(); ++i)
      e.col(static_cast<Eigen::Index>(i)) = emb.col(col_of.at(t.ids[i]));
    return e;
  };
  std::vector<Matf> einit, efinal;
  einit.reserve(static_cast<std::size_t>(J));
  efinal.reserve(static_cast<std::size_t>(J));
  for (const auto& t : init_topk) einit.push_back(set_matrix(t));
  for (const auto& t : final_topk) efinal.push_back(set_matrix(t));

  auto mean_sim = [&](const Matf& ea, const std::vector<std::string>& ids_a, const Matf& eb,
                      const std::vector<std::string>& ids_b, bool exclude_same_id) {
    const Matf dots = ea.transpose() * eb;
    double sum = dots.sum();
    long count = static_cast<long>(dots.size());
    if (exclude_same_id) {
      for (std::size_t i = 0; i < ids_a.size(); ++i)
        for (std::size_t j = 0; j < ids_b.size(); ++j)
          if (ids_a[i] == ids_b[j]) {
            sum -= dots(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            --count;
          }
    }
    if (count <= 0) throw StateError("similarity mean over an empty pair set");
    return static_cast<float>(sum / static_cast<double>(count));
  };

  SimilarityMatrix sim;
  sim.k = init_topk.front().k;
  sim.init_init.resize(J, J);
  sim.init_final.resize(J, J);
  for (int j = 0; j < J; ++j) {
    for (int p = 0; p < J; ++p) {
      const bool same_channel = j == p;
      sim.init_init(j, p) = mean_sim(einit[static_cast<std::size_t>(j)], init_topk[static_cast<std::size_t>(j)].ids,
                                     einit[static_cast<std::size_t>(p)], init_topk[static_cast<std::size_t>(p)].ids,
                                     same_channel);
      sim.init_final(j, p) = mean_sim(einit[static_cast<std::size_t>(j)], init_topk[static_cast<std::size_t>(j)].ids,
                                      efinal[static_cast<std::size_t>(p)], final_topk[static_cast<std::size_t>(p)].ids,
                                      same_channel);
    }
  }
  return sim;
}

namespace {

double max_off_diagonal(const Matf& m, int j) {
  double best = -2.0;
  for (int p = 0; p < m.cols(); ++p)
    if (p != j) best = std::max(best, static_cast<double>(m(j, p)));
  return best;
}

}  // namespace

double clip_delta(const SimilarityMatrix& sim, int j) {
  const int J = sim.channel_count();
  if (j < 0 || j >= J) throw IndexError("channel out of range in clip_delta");
  if (J < 2) throw ArgumentError("clip_delta needs at least two channels");
  double cross = 0.0;
  for (int p = 0; p < J; ++p)
    if (p != j) cross += sim.init_init(j, p);
  cross /= static_cast<double>(J - 1);
  if (cross <= 0.0)
    throw StateError("degenerate embedding: nonpositive mean cross-channel similarity for channel " +
                     std::to_string(j));
  return (static_cast<double>(sim.init_init(j, j)) - static_cast<double>(sim.init_final(j, j))) / cross;
}

std::optional<double> clip_w(const SimilarityMatrix& sim, int j) {
  const int J = sim.channel_count();
  if (j < 0 || j >= J) throw IndexError("channel out of range in clip_w");
  const double num = max_off_diagonal(sim.init_final, j);
  const double den = max_off_diagonal(sim.init_init, j);
  if (den <= 0.0) return std::nullopt;
  return num / den;
}

std::optional<double> kendall_tau_w(int j, const std::vector<RankingList>& init_rankings,
                                    const std::vector<RankingList>& final_rankings) {
  const int J = static_cast<int>(init_rankings.size());
  if (static_cast<int>(final_rankings.size()) != J)
    throw ArgumentError("initial/final ranking lists must cover the same channels");
  if (j < 0 || j >= J) throw IndexError("channel out of range in kendall_tau_w");
  double num = -2.0, den = -2.0;
  for (int i = 0; i < J; ++i) {
    if (i == j) continue;
    num = std::max(num, kendall_tau(init_rankings[static_cast<std::size_t>(j)],
                                    final_rankings[static_cast<std::size_t>(i)]));
    den = std::max(den, kendall_tau(init_rankings[static_cast<std::size_t>(j)],
                                    init_rankings[static_cast<std::size_t>(i)]));
  }
  if (den <= 0.0) return std::nullopt;
  return num / den;
}

MetricReport layer_report(Model& initial, Model& final, const DatasetHandle& dataset,
                          const std::string& layer, const LayerReportConfig& cfg,
                          const EmbeddingProvider& provider, const DatasetHandle* acc_eval) {
  if (initial.arch().hash() != final.arch().hash())
    throw ArgumentError("layer_report needs checkpoints of the same architecture");
  const auto init_table = score_all(initial, dataset, layer, ScoreMode::post);
  const auto final_table = score_all(final, dataset, layer, ScoreMode::post);
  const int J = init_table.channels();

  const auto dktau = sample_subset(dataset, cfg.dktau_size, cfg.dktau_seed);
  std::vector<TopKResult> init_topk, final_topk;
  std::vector<RankingList> init_rank, final_rank;
  for (int j = 0; j < J; ++j) {
    init_topk.push_back(topk(init_table, j, cfg.k));
    final_topk.push_back(topk(final_table, j, cfg.k));
    init_rank.push_back(ranking(init_table, j, dktau));
    final_rank.push_back(ranking(final_table, j, dktau));
  }
  const SimilarityMatrix sim = build_similarity(init_topk, final_topk, dataset, provider);

  MetricReport report;
  report.layer = layer;
  report.k = cfg.k;
  report.dktau_size = static_cast<int>(dktau.size());
  double sum_tau = 0, sum_delta = 0, sum_tau_w = 0, sum_whack = 0;
  int n_tau_w = 0, n_whack = 0;
  for (int j = 0; j < J; ++j) {
    ChannelMetrics cm;
    cm.channel = j;
    cm.tau = kendall_tau(init_rank[static_cast<std::size_t>(j)], final_rank[static_cast<std::size_t>(j)]);
    cm.delta = clip_delta(sim, j);
    cm.tau_w = kendall_tau_w(j, init_rank, final_rank);
    cm.whack_w = clip_w(sim, j);
    sum_tau += cm.tau;
    sum_delta += cm.delta;
    if (cm.tau_w) {
      sum_tau_w += *cm.tau_w;
      ++n_tau_w;
    }
    if (cm.whack_w) {
      sum_whack += *cm.whack_w;
      ++n_whack;
    }
    report.channels.push_back(cm);
  }
  report.mean_tau = sum_tau / J;
  report.mean_delta = sum_delta / J;
  if (n_tau_w > 0) report.mean_tau_w = sum_tau_w / n_tau_w;
  if (n_whack > 0) report.mean_whack_w = sum_whack / n_whack;
  if (acc_eval) {
    report.accuracy_before = evaluate_accuracy(initial, *acc_eval);
    report.accuracy_after = evaluate_accuracy(final, *acc_eval);
  }
  return report;
}

void MetricReport::save_json(const std::string& path) const {
  json j;
  j["layer"] = layer;
  j["attack"] = attack;
  j["k"] = k;
  j["dktau_size"] = dktau_size;
  j["mean"] = {{"kendall_tau", mean_tau},
               {"clip_delta", mean_delta},
               {"kendall_tau_w", mean_tau_w ? json(*mean_tau_w) : json()},
               {"clip_w", mean_whack_w ? json(*mean_whack_w) : json()}};
  j["accuracy_before"] = accuracy_before;
  j["accuracy_after"] = accuracy_after;
  json rows = json::array();
  for (const auto& cm : channels) {
    rows.push_back({{"channel", cm.channel},
                    {"kendall_tau", cm.tau},
                    {"clip_delta", cm.delta},
                    {"kendall_tau_w", cm.tau_w ? json(*cm.tau_w) : json()},
                    {"clip_w", cm.whack_w ? json(*cm.whack_w) : json()}});
  }
  j["channels"] = rows;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write metric report " + path);
  out << j.dump(2) << "\n";
}

MetricReport MetricReport::load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open metric report " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw LoadError("corrupt metric report " + path + ": " + e.what());
  }
  MetricReport report;
  try {
    report.layer = j.at("layer").get<std::string>();
    report.attack = j.value("attack", "none");
    report.k = j.at("k").get<int>();
    report.dktau_size = j.at("dktau_size").get<int>();
    report.mean_tau = j.at("mean").at("kendall_tau").get<double>();
    report.mean_delta = j.at("mean").at("clip_delta").get<double>();
    if (!j.at("mean").at("kendall_tau_w").is_null())
      report.mean_tau_w = j.at("mean").at("kendall_tau_w").get<double>();
    if (!j.at("mean").at("clip_w").is_null()) report.mean_whack_w = j.at("mean").at("clip_w").get<double>();
    report.accuracy_before = j.value("accuracy_before", -1.0);
    report.accuracy_after = j.value("accuracy_after", -1.0);
    for (const auto& row : j.at("channels")) {
      ChannelMetrics cm;
      cm.channel = row.at("channel").get<int>();
      cm.tau = row.at("kendall_tau").get<double>();
      cm.delta = row.at("clip_delta").get<double>();
      if (!row.at("kendall_tau_w").is_null()) cm.tau_w = row.at("kendall_tau_w").get<double>();
      if (!row.at("clip_w").is_null()) cm.whack_w = row.at("clip_w").get<double>();
      report.channels.push_back(cm);
    }
  } catch (const json::exception& e) {
    throw LoadError("corrupt metric report " + path + ": " + e.what());
  }
  return report;
}

}  // namespace fviz
