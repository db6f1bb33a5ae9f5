#include "fviz/pipeline.hpp"

#include "fviz/checkpoint.hpp"
#include "fviz/fairness.hpp"
#include "fviz/png.hpp"
#include "fviz/report.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fviz {

namespace fs = std::filesystem;

namespace {

void write_synth_png(const SynthResult& synth, const DatasetHandle& dataset, const std::string& path) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(synth.width) * synth.height * 3, 0);
  for (int y = 0; y < synth.height; ++y)
    for (int x = 0; x < synth.width; ++x) {
      const Eigen::Index col = static_cast<Eigen::Index>(y) * synth.width + x;
      for (int c = 0; c < std::min<int>(3, static_cast<int>(synth.image.rows())); ++c) {
        const float v01 = synth.image(c, col) * dataset.norm_std(c) + dataset.norm_mean(c);
        px[(static_cast<std::size_t>(y) * synth.width + x) * 3 + static_cast<std::size_t>(c)] =
            static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(v01 * 255.f)), 0, 255));
      }
    }
  write_png_rgb8(path, synth.width, synth.height, px);
}

// Attack-layer-wide top-k lists for grids.
std::vector<TopKResult> all_topk(const ActivationScoreTable& table, int k) {
  std::vector<TopKResult> out;
  for (int j = 0; j < table.channels(); ++j) out.push_back(topk(table, j, k));
  return out;
}

}  // namespace

RunOutcome run_pipeline(const RunManifest& m) {
  RunOutcome outcome;
  outcome.out_dir = m.out_dir;
  if (m.deterministic) Eigen::setNbThreads(1);

  fs::create_directories(m.out_dir);
  const fs::path out(m.out_dir);
  ArtifactSummary summary;
  std::string stage = "manifest";
  auto artifact = [&](const std::string& label, const fs::path& p) { summary.add(label, p.string()); };

  try {
    {
      std::ofstream mf(out / "manifest.ini");
      mf << m.serialize();
    }
    artifact("manifest", out / "manifest.ini");

    stage = "data";
    DatasetHandle full;
    if (m.data_kind == "synthetic") {
      SyntheticSpec spec;
      spec.name = m.data_name;
      spec.count = m.data_count;
      spec.size = m.data_size;
      spec.seed = substream_seed(m.seed, "data");
      full = make_synthetic(spec);
    } else {
      full = load_dataset(m.data_name, m.data_root);
    }
    if (m.bias) {
      BiasSpec bias;
      bias.p_corr = m.bias_p_corr;
      bias.seed = substream_seed(m.seed, "bias");
      full = inject_bias(full, bias);
    }
    auto [train, test] = split(full, m.split_ratio, substream_seed(m.seed, "split"));
    save_dataset(full, (out / "dataset").string());
    artifact("dataset-meta", out / "dataset" / "meta.json");
    artifact("dataset-images", out / "dataset" / "images.u8");

    stage = "baseline";
    ArchSpec arch = ArchSpec::parse(m.arch, full.channels, full.height, full.width);
    if (arch.class_count() != full.classes)
      throw ConfigError("architecture ends in " + std::to_string(arch.class_count()) +
                        " classes but the dataset has " + std::to_string(full.classes));
    Model baseline(arch, substream_seed(m.seed, "init"));
    TrainConfig tc;
    tc.epochs = m.train_epochs;
    tc.lr = m.train_lr;
    tc.batch = m.train_batch;
    tc.seed = substream_seed(m.seed, "train");
    train_classifier(baseline, train, tc);
    const double base_acc = evaluate_accuracy(baseline, test);
    CheckpointMeta base_meta;
    base_meta.role = "initial";
    base_meta.epochs = tc.epochs;
    base_meta.init_seed = substream_seed(m.seed, "init");
    base_meta.train_seed = tc.seed;
    base_meta.final_accuracy = base_acc;
    save_checkpoint(baseline, base_meta, (out / "baseline.ckpt").string());
    artifact("baseline-checkpoint", out / "baseline.ckpt");
    artifact("baseline-meta", out / "baseline.ckpt.meta.json");

    stage = "embed";
    ArchSpec embed_arch = ArchSpec::parse(m.embed_arch, full.channels, full.height, full.width);
    Model embed_net(embed_arch, substream_seed(m.seed, "embed-init"));
    TrainConfig etc_cfg;
    etc_cfg.epochs = m.embed_epochs;
    etc_cfg.lr = m.train_lr;
    etc_cfg.batch = m.train_batch;
    etc_cfg.seed = substream_seed(m.seed, "embed-train");
    train_classifier(embed_net, train, etc_cfg);
    const auto& embed_handles = embed_net.layer_handles();
    if (embed_handles.size() < 2) throw ConfigError("embedding architecture needs a penultimate layer");
    const std::string embed_layer = embed_handles[embed_handles.size() - 2].id;
    CheckpointMeta embed_meta;
    embed_meta.role = "initial";
    embed_meta.epochs = etc_cfg.epochs;
    save_checkpoint(embed_net, embed_meta, (out / "embed.ckpt").string());
    artifact("embed-checkpoint", out / "embed.ckpt");
    CnnEmbeddingProvider provider(embed_net.clone(), embed_layer);

    stage = "scores-initial";
    auto init_table = score_all(baseline, train, m.attack_layer, ScoreMode::post);
    save_table(init_table, (out / "scores_initial.tsv").string());
    artifact("scores-initial", out / "scores_initial.tsv");

    if (!m.attack_enabled) {
      stage = "summary";
      summary.note("status", "ok");
      summary.note("baseline_accuracy", std::to_string(base_acc));
      summary.save((out / "summary.json").string());
      return outcome;
    }

    stage = "attack";
    AttackConfig acfg = m.attack_config();
    if (acfg.kind == AttackKind::fairwash) {
      const NeuronScope scope =
          select_target_neurons(baseline, train, m.attack_layer, m.fairwash_count);
      acfg.fairwash_units = scope.units;
    }
    DatasetHandle probe = test;
    if (static_cast<int>(probe.images.size()) > m.probe_size)
      probe.images.resize(static_cast<std::size_t>(m.probe_size));
    AttackResult attack = run_attack(baseline, acfg, train, probe);
    attack.log.save_csv((out / "attack_log.csv").string());
    artifact("attack-log", out / "attack_log.csv");
    CheckpointMeta att_meta;
    att_meta.role = "attacked";
    att_meta.final_accuracy = evaluate_accuracy(attack.attacked, test);
    att_meta.config_hash = acfg.hash();
    save_checkpoint(attack.attacked, att_meta, (out / "attacked.ckpt").string());
    artifact("attacked-checkpoint", out / "attacked.ckpt");
    artifact("attacked-meta", out / "attacked.ckpt.meta.json");

    stage = "scores-final";
    auto final_table = score_all(attack.attacked, train, m.attack_layer, ScoreMode::post);
    save_table(final_table, (out / "scores_final.tsv").string());
    artifact("scores-final", out / "scores_final.tsv");

    stage = "stability";
    LayerReportConfig lrc;
    lrc.k = m.metrics_k;
    lrc.dktau_size = m.dktau_size;
    lrc.dktau_seed = substream_seed(m.seed, "dktau");
    MetricReport stability =
        layer_report(baseline, attack.attacked, train, m.attack_layer, lrc, provider, &test);
    stability.attack = m.attack_kind;
    stability.save_json((out / "stability.json").string());
    artifact("stability-report", out / "stability.json");

    if (acfg.kind == AttackKind::fairwash) {
      stage = "fairness";
      NeuronScope scope;
      scope.layer = m.attack_layer;
      scope.units = acfg.fairwash_units;
      FairnessEvalConfig fec;
      fec.k = m.balance_k;
      FairnessReport fairness = fairness_report(baseline, attack.attacked, test, scope, fec);
      fairness.save_json((out / "fairness.json").string());
      artifact("fairness-report", out / "fairness.json");
    }

    if (m.synth_enabled) {
      stage = "synthviz";
      SynthConfig sc;
      sc.steps = m.synth_steps;
      sc.step_size = m.synth_step_size;
      sc.jitter = m.synth_jitter;
      sc.seed = substream_seed(m.seed, "jitter");
      const auto channels = m.parsed_synth_channels();
      DecorrelationReport dec = decorrelation_report(baseline, attack.attacked, train, m.attack_layer,
                                                     channels, m.metrics_k, sc, provider);
      dec.save_json((out / "decorrelation.json").string());
      artifact("decorrelation-report", out / "decorrelation.json");
      for (int ch : channels) {
        SynthConfig per = sc;
        per.seed = substream_seed(sc.seed, "synth-" + std::to_string(ch));
        auto pre = synthesize(baseline, m.attack_layer, ch, per);
        auto post = synthesize(attack.attacked, m.attack_layer, ch, per);
        const std::string pre_name = "synth_" + m.attack_layer + "_" + std::to_string(ch) + "_pre.png";
        const std::string post_name = "synth_" + m.attack_layer + "_" + std::to_string(ch) + "_post.png";
        write_synth_png(pre, full, (out / pre_name).string());
        write_synth_png(post, full, (out / post_name).string());
        artifact(pre_name, out / pre_name);
        artifact(post_name, out / post_name);
      }
    }

    stage = "grids";
    {
      GridSpec gs;
      gs.layer = m.attack_layer;
      gs.channels = m.parsed_grid_channels();
      gs.k = m.grid_k;
      const std::string grid_name = "grid_" + m.attack_layer + ".png";
      render_grid(gs, all_topk(init_table, gs.k), all_topk(final_table, gs.k), train,
                  (out / grid_name).string());
      artifact(grid_name, out / grid_name);
    }

    stage = "table";
    save_table_report({stability}, (out / "table.txt").string(), (out / "table.json").string());
    artifact("table-text", out / "table.txt");
    artifact("table-json", out / "table.json");

    stage = "summary";
    summary.note("status", "ok");
    summary.note("baseline_accuracy", std::to_string(base_acc));
    summary.note("attacked_accuracy", std::to_string(att_meta.final_accuracy));
    summary.save((out / "summary.json").string());
  } catch (const Error& e) {
    outcome.exit_code = dynamic_cast<const ConfigError*>(&e) ? 2 : 3;
    outcome.failed_stage = stage;
    outcome.message = e.what();
    summary.note("status", "failed");
    summary.note("failed_stage", stage);
    summary.note("error", e.what());
    summary.save((out / "summary.json").string());
    std::cerr << "stage '" << stage << "' failed: " << e.what() << "\n";
  }
  return outcome;
}

}  // namespace fviz
