#include "fviz/topk.hpp"

#include "fviz/train.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace fviz {

const char* score_mode_name(ScoreMode mode) { return mode == ScoreMode::post ? "post" : "pre"; }

ScoreMode parse_score_mode(const std::string& name) {
  if (name == "post") return ScoreMode::post;
  if (name == "pre") return ScoreMode::pre;
  throw ArgumentError("unknown score mode '" + name + "' (expected post|pre)");
}

int ActivationScoreTable::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == id) return static_cast<int>(i);
  return -1;
}

ActivationScoreTable score_all(Model& model, const DatasetHandle& dataset, const std::string& layer,
                               ScoreMode mode, int chunk) {
  if (dataset.count() == 0) throw ArgumentError("cannot score an empty dataset");
  const LayerHandle& handle = model.layer(layer);
  ActivationScoreTable table;
  table.layer = layer;
  table.mode = mode;
  table.scores.resize(handle.channels, dataset.count());
  table.ids.reserve(static_cast<std::size_t>(dataset.count()));
  for (const auto& img : dataset.images) table.ids.push_back(img.id);

  const auto idx = all_indices(dataset);
  for (std::size_t at = 0; at < idx.size(); at += static_cast<std::size_t>(chunk)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(chunk), idx.size() - at);
    std::vector<int> part(idx.begin() + static_cast<std::ptrdiff_t>(at),
                          idx.begin() + static_cast<std::ptrdiff_t>(at + n));
    auto tr = model.forward(make_batch<float>(dataset, part), {{layer, mode == ScoreMode::pre}});
    const Matf scores = mode == ScoreMode::post ? channel_scores_post(tr.acts[0])
                                                : channel_scores_pre(tr.acts[0]);
    table.scores.middleCols(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(n)) = scores;
  }
  if (!table.scores.allFinite()) throw StateError("non-finite activation scores for layer " + layer);
  return table;
}

namespace {

// Descending score, ties broken by ascending image id.
std::vector<int> order_by_score(const ActivationScoreTable& table, int channel,
                                const std::vector<int>& candidates) {
  if (channel < 0 || channel >= table.channels())
    throw IndexError("channel " + std::to_string(channel) + " out of range for layer " + table.layer);
  std::vector<int> order = candidates;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const float sa = table.scores(channel, a), sb = table.scores(channel, b);
    if (sa != sb) return sa > sb;
    return table.ids[static_cast<std::size_t>(a)] < table.ids[static_cast<std::size_t>(b)];
  });
  return order;
}

}  // namespace

TopKResult topk(const ActivationScoreTable& table, int channel, int k) {
  if (k < 1) throw ArgumentError("k must be >= 1");
  std::vector<int> all(static_cast<std::size_t>(table.count()));
  std::iota(all.begin(), all.end(), 0);
  auto order = order_by_score(table, channel, all);
  TopKResult result;
  result.layer = table.layer;
  result.channel = channel;
  result.k = std::min<int>(k, table.count());
  for (int i = 0; i < result.k; ++i) {
    result.ids.push_back(table.ids[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    result.scores.push_back(table.scores(channel, order[static_cast<std::size_t>(i)]));
  }
  return result;
}

RankingList ranking(const ActivationScoreTable& table, int channel,
                    const std::vector<std::string>& subset) {
  std::vector<int> cols;
  cols.reserve(subset.size());
  for (const auto& id : subset) {
    const int col = table.index_of(id);
    if (col < 0) throw IndexError("image id '" + id + "' not present in score table");
    cols.push_back(col);
  }
  auto order = order_by_score(table, channel, cols);
  std::map<int, int> rank_of_col;
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    rank_of_col[order[pos]] = static_cast<int>(pos) + 1;
  RankingList list;
  list.channel = channel;
  list.ids = subset;
  list.ranks.reserve(subset.size());
  for (int col : cols) list.ranks.push_back(rank_of_col[col]);
  return list;
}

void save_table(const ActivationScoreTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write score table " + path);
  out << "layer\tchannel\timage_id\tscore\tmode\n";
  out.precision(9);
  for (int j = 0; j < table.channels(); ++j)
    for (int i = 0; i < table.count(); ++i)
      out << table.layer << "\t" << j << "\t" << table.ids[static_cast<std::size_t>(i)] << "\t"
          << table.scores(j, i) << "\t" << score_mode_name(table.mode) << "\n";
}

ActivationScoreTable load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open score table " + path);
  std::string line;
  if (!std::getline(in, line)) throw LoadError("empty score table " + path);
  struct Row {
    int channel;
    std::string id;
    float score;
  };
  std::vector<Row> rows;
  ActivationScoreTable table;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string layer, channel, id, score, mode;
    if (!std::getline(ss, layer, '\t') || !std::getline(ss, channel, '\t') ||
        !std::getline(ss, id, '\t') || !std::getline(ss, score, '\t') || !std::getline(ss, mode))
      throw LoadError("malformed score table row in " + path + ": " + line);
    if (first) {
      table.layer = layer;
      table.mode = parse_score_mode(mode);
      first = false;
    } else if (layer != table.layer) {
      throw LoadError("score table " + path + " mixes layers");
    }
    rows.push_back({std::stoi(channel), id, std::stof(score)});
  }
  if (rows.empty()) throw LoadError("score table " + path + " has no rows");
  int max_channel = 0;
  for (const auto& r : rows) max_channel = std::max(max_channel, r.channel);
  std::vector<std::string> ids;
  for (const auto& r : rows) {
    if (r.channel != 0) break;
    ids.push_back(r.id);
  }
  table.ids = ids;
  table.scores.resize(max_channel + 1, static_cast<Eigen::Index>(ids.size()));
  if (rows.size() != ids.size() * static_cast<std::size_t>(max_channel + 1))
    throw LoadError("score table " + path + " is not a full channel x image grid");
  std::size_t at = 0;
  for (int j = 0; j <= max_channel; ++j)
    for (std::size_t i = 0; i < ids.size(); ++i, ++at) {
      if (rows[at].channel != j || rows[at].id != ids[i])
        throw LoadError("score table " + path + " rows out of order");
      table.scores(j, static_cast<Eigen::Index>(i)) = rows[at].score;
    }
  return table;
}

}  // namespace fviz
