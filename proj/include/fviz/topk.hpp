#pragma once

#include "fviz/data.hpp"
#include "fviz/model.hpp"

#include <string>
#include <vector>

namespace fviz {

enum class ScoreMode { post, pre };

const char* score_mode_name(ScoreMode mode);
ScoreMode parse_score_mode(const std::string& name);

// Per-(channel, image) scalar scores for one layer over one dataset.
// post: spatial squared l2 norm of the post-nonlinearity map.
// pre:  spatial mean of the pre-nonlinearity map (sign-preserving).
struct ActivationScoreTable {
  std::string layer;
  ScoreMode mode = ScoreMode::post;
  Matf scores;                   // channels x images
  std::vector<std::string> ids;  // column order

  int channels() const { return static_cast<int>(scores.rows()); }
  int count() const { return static_cast<int>(scores.cols()); }
  int index_of(const std::string& id) const;
};

struct TopKResult {
  std::string layer;
  int channel = 0;
  int k = 0;
  std::vector<std::string> ids;  // descending score, ties by ascending id
  std::vector<float> scores;
};

// Dense ranks (1 = highest score) over a subset of the table's images,
// aligned with the subset order as given.
struct RankingList {
  int channel = 0;
  std::vector<std::string> ids;
  std::vector<int> ranks;
};

ActivationScoreTable score_all(Model& model, const DatasetHandle& dataset, const std::string& layer,
                               ScoreMode mode, int chunk = 256);

TopKResult topk(const ActivationScoreTable& table, int channel, int k);
RankingList ranking(const ActivationScoreTable& table, int channel,
                    const std::vector<std::string>& subset);

// Delimited text: layer, channel, image_id, score.
void save_table(const ActivationScoreTable& table, const std::string& path);
ActivationScoreTable load_table(const std::string& path);

}  // namespace fviz
