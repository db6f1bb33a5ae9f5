#include "fviz/synthviz.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace fviz {

using nlohmann::json;

namespace {

Matf shift_wrap(const Matf& img, int h, int w, int dy, int dx) {
  Matf out(img.rows(), img.cols());
  for (int y = 0; y < h; ++y) {
    const int sy = ((y - dy) % h + h) % h;
    for (int x = 0; x < w; ++x) {
      const int sx = ((x - dx) % w + w) % w;
      out.col(static_cast<Eigen::Index>(y) * w + x) = img.col(static_cast<Eigen::Index>(sy) * w + sx);
    }
  }
  return out;
}

FeatureBatch<float> as_batch(const Matf& img, int h, int w) {
  FeatureBatch<float> b;
  b.batch = 1;
  b.height = h;
  b.width = w;
  b.data = img;
  return b;
}

double plain_score(Model& model, const std::string& layer, int channel, const Matf& img, int h, int w) {
  auto tr = model.forward(as_batch(img, h, w), {{layer, false}});
  const auto& maps = tr.acts[0];
  return channel_score(maps.data.block(channel, 0, 1, maps.spatial()));
}

}  // namespace

SynthResult synthesize(Model& model, const std::string& layer, int channel, const SynthConfig& cfg) {
  const LayerHandle& handle = model.layer(layer);
  if (channel < 0 || channel >= handle.channels)
    throw IndexError("channel " + std::to_string(channel) + " out of range for layer " + layer);
  if (cfg.steps < 0 || cfg.step_size <= 0) throw ArgumentError("synth needs steps >= 0 and step_size > 0");
  if (cfg.jitter < 0) throw ArgumentError("jitter must be >= 0");

  const int h = model.arch().in_h, w = model.arch().in_w, c = model.arch().in_c;
  const double budget = cfg.norm_budget > 0 ? cfg.norm_budget : std::sqrt(static_cast<double>(c) * h * w);
  auto rng = substream(cfg.seed, "jitter");

  Matf img(c, static_cast<Eigen::Index>(h) * w);
  if (cfg.gray_init) {
    img.setZero();
  } else {
    for (Eigen::Index i = 0; i < img.size(); ++i)
      img.data()[i] = static_cast<float>(normal(rng, 0.0, 0.1));
  }
  auto project = [&](Matf& m) {
    const double n = m.norm();
    if (n > budget) m *= static_cast<float>(budget / n);
  };
  project(img);

  auto avg_score = [&](const Matf& m) {
    if (cfg.jitter == 0 || cfg.jitter_samples <= 1) return plain_score(model, layer, channel, m, h, w);
    double s = 0.0;
    for (int q = 0; q < cfg.jitter_samples; ++q) {
      const int dy = static_cast<int>(uniform_index(rng, 2 * cfg.jitter + 1)) - cfg.jitter;
      const int dx = static_cast<int>(uniform_index(rng, 2 * cfg.jitter + 1)) - cfg.jitter;
      s += plain_score(model, layer, channel, shift_wrap(img, h, w, dy, dx), h, w);
    }
    return s / cfg.jitter_samples;
  };

  SynthResult result;
  result.height = h;
  result.width = w;
  double step = cfg.step_size;
  double current = avg_score(img);

  for (int t = 0; t < cfg.steps; ++t) {
    const int dy = cfg.jitter > 0 ? static_cast<int>(uniform_index(rng, 2 * cfg.jitter + 1)) - cfg.jitter : 0;
    const int dx = cfg.jitter > 0 ? static_cast<int>(uniform_index(rng, 2 * cfg.jitter + 1)) - cfg.jitter : 0;
    Matf shifted = shift_wrap(img, h, w, dy, dx);
    auto tr = model.forward(as_batch(shifted, h, w), {{layer, false}});
    const auto& maps = tr.acts[0];
    Injection<float> inj;
    inj.node = model.capture_node(layer, false);
    inj.grad = FeatureBatch<float>::zeros_like(maps);
    inj.grad.data.row(channel) = 2.0f * maps.data.row(channel);
    model.zero_grads();
    FeatureBatch<float> gin = model.net().backward({}, {inj});
    if (!gin.data.allFinite()) {
      break;  // keep the trace so far
    }
    const double gnorm = gin.data.norm();
    if (gnorm < 1e-12) break;  // flat: nothing to climb
    Matf grad = shift_wrap(gin.data, h, w, -dy, -dx);
    Matf candidate = img + (static_cast<float>(step / gnorm)) * grad;
    project(candidate);
    const double cand_score = avg_score(candidate);
    if (cand_score >= current - (cfg.tol_rel * std::abs(current) + 1e-9)) {
      img = std::move(candidate);
      current = cand_score;
      result.trace.push_back(current);
      ++result.accepted;
    } else {
      step *= 0.5;
      ++result.rejected;
      if (step < 1e-6) break;
    }
  }
  result.image = img;
  result.final_score = plain_score(model, layer, channel, img, h, w);
  return result;
}

DecorrelationReport decorrelation_report(Model& initial, Model& final, const DatasetHandle& dataset,
                                         const std::string& layer, const std::vector<int>& channels,
                                         int k, const SynthConfig& cfg,
                                         const EmbeddingProvider& provider) {
  if (channels.empty()) throw ArgumentError("decorrelation report needs at least one channel");
  const auto init_table = score_all(initial, dataset, layer, ScoreMode::post);
  const auto final_table = score_all(final, dataset, layer, ScoreMode::post);

  DecorrelationReport report;
  report.layer = layer;
  double sum_synth = 0, sum_topk = 0;
  for (int j : channels) {
    SynthConfig per = cfg;
    per.seed = substream_seed(cfg.seed, "synth-" + std::to_string(j));
    auto pre = synthesize(initial, layer, j, per);
    auto post = synthesize(final, layer, j, per);

    FeatureBatch<float> pair;
    pair.batch = 2;
    pair.height = pre.height;
    pair.width = pre.width;
    pair.data.resize(pre.image.rows(), pre.image.cols() * 2);
    pair.data.leftCols(pre.image.cols()) = pre.image;
    pair.data.rightCols(post.image.cols()) = post.image;
    const Matf emb = provider.embed_batch(pair);
    const double synth_sim = emb.col(0).dot(emb.col(1));

    std::vector<TopKResult> a{topk(init_table, j, k)};
    std::vector<TopKResult> b{topk(final_table, j, k)};
    const SimilarityMatrix sim = build_similarity(a, b, dataset, provider);
    const double topk_sim = sim.init_final(0, 0);

    report.rows.push_back({j, synth_sim, topk_sim});
    sum_synth += synth_sim;
    sum_topk += topk_sim;
  }
  report.mean_synth_similarity = sum_synth / static_cast<double>(channels.size());
  report.mean_topk_similarity = sum_topk / static_cast<double>(channels.size());
  return report;
}

void DecorrelationReport::save_json(const std::string& path) const {
  json j;
  j["layer"] = layer;
  j["mean_synth_similarity"] = mean_synth_similarity;
  j["mean_topk_similarity"] = mean_topk_similarity;
  json out_rows = json::array();
  for (const auto& r : rows)
    out_rows.push_back({{"channel", r.channel},
                        {"synth_similarity", r.synth_similarity},
                        {"topk_similarity", r.topk_similarity}});
  j["channels"] = out_rows;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write decorrelation report " + path);
  out << j.dump(2) << "\n";
}

}  // namespace fviz
