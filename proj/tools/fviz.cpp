#include "fviz/checkpoint.hpp"
#include "fviz/fairness.hpp"
#include "fviz/pipeline.hpp"
#include "fviz/png.hpp"
#include "fviz/report.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace fviz;

namespace {

struct DataArgs {
  std::string root;
  std::string name = "synth10";
  double split_ratio = 0.75;
  std::uint64_t split_seed = 11;
};

void add_data_args(CLI::App* cmd, DataArgs& args) {
  cmd->add_option("--data", args.root, "dataset root directory")->required();
  cmd->add_option("--name", args.name, "dataset name (must match meta.json)");
  cmd->add_option("--split-ratio", args.split_ratio, "train fraction");
  cmd->add_option("--split-seed", args.split_seed, "split seed");
}

Model load_model(const std::string& path) { return load_checkpoint(path).first; }

int run_cli(int argc, char** argv) {
  CLI::App app{"feature-visualization manipulation toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  bool deterministic = false;
  app.add_option("--threads", threads, "math thread count (0: library default)");
  app.add_flag("--deterministic", deterministic, "single-threaded deterministic kernels");

  // dataset
  auto* c_data = app.add_subcommand("dataset", "materialize a synthetic dataset");
  std::string d_out, d_name = "synth10";
  int d_count = 8000, d_size = 24;
  std::uint64_t d_seed = 1;
  bool d_bias = false;
  double d_pcorr = 0.9;
  c_data->add_option("--out", d_out)->required();
  c_data->add_option("--dataset-name", d_name);
  c_data->add_option("--count", d_count);
  c_data->add_option("--size", d_size);
  c_data->add_option("--seed", d_seed);
  c_data->add_flag("--bias", d_bias, "inject the synthetic protected attribute");
  c_data->add_option("--bias-pcorr", d_pcorr);

  // train
  auto* c_train = app.add_subcommand("train", "train a baseline classifier");
  DataArgs t_data;
  add_data_args(c_train, t_data);
  std::string t_arch =
      "conv:16,relu,pool,conv:32,relu,pool,conv:64,relu,pool,conv:96,relu,fc:128,relu,fc:10";
  std::string t_out = "baseline.ckpt";
  int t_epochs = 12, t_batch = 128;
  double t_lr = 1e-3;
  std::uint64_t t_seed = 7;
  c_train->add_option("--arch", t_arch);
  c_train->add_option("--epochs", t_epochs);
  c_train->add_option("--lr", t_lr);
  c_train->add_option("--batch", t_batch);
  c_train->add_option("--seed", t_seed);
  c_train->add_option("--out", t_out);

  // topk
  auto* c_topk = app.add_subcommand("topk", "score a layer and export tables");
  DataArgs k_data;
  add_data_args(c_topk, k_data);
  std::string k_ckpt, k_layer = "conv4", k_mode = "post", k_scores = "scores.tsv", k_top;
  int k_k = 10, k_channel = -1;
  bool k_train_split = true;
  c_topk->add_option("--ckpt", k_ckpt)->required();
  c_topk->add_option("--layer", k_layer);
  c_topk->add_option("--mode", k_mode, "post|pre");
  c_topk->add_option("--k", k_k);
  c_topk->add_option("--channel", k_channel, "limit top-k print to one channel");
  c_topk->add_option("--scores", k_scores, "score table output (tsv)");
  c_topk->add_option("--top", k_top, "top-k list output (tsv)");
  c_topk->add_flag("--train-split,!--full-set", k_train_split, "score the train split (default) or all");

  // attack
  auto* c_attack = app.add_subcommand("attack", "fine-tune against a visualization attack");
  DataArgs a_data;
  add_data_args(c_attack, a_data);
  std::string a_ckpt, a_kind = "push_down", a_layer = "conv4", a_out = "attack-out";
  AttackConfig acfg;
  int a_probe = 600, a_fair_count = 24;
  c_attack->add_option("--ckpt", a_ckpt)->required();
  c_attack->add_option("--kind", a_kind, "push_down|push_up|fairwash");
  c_attack->add_option("--layer", a_layer);
  c_attack->add_option("--channel", acfg.channel);
  c_attack->add_option("--k", acfg.k);
  c_attack->add_option("--alpha-init", acfg.alpha_init);
  c_attack->add_option("--alpha-min", acfg.alpha_min);
  c_attack->add_option("--alpha-max", acfg.alpha_max);
  c_attack->add_option("--drop-hi", acfg.drop_hi);
  c_attack->add_option("--drop-lo", acfg.drop_lo);
  c_attack->add_flag("--alpha-fixed", acfg.alpha_fixed);
  c_attack->add_option("--epochs", acfg.epochs);
  c_attack->add_option("--steps-per-epoch", acfg.steps_per_epoch);
  c_attack->add_option("--lr", acfg.lr);
  c_attack->add_option("--batch", acfg.batch);
  c_attack->add_option("--pairs", acfg.attack_batch, "push-down pairs per step (0: all)");
  c_attack->add_option("--probe-every", acfg.probe_every);
  c_attack->add_option("--probe-size", a_probe);
  c_attack->add_option("--decoy-class", acfg.decoy_class);
  c_attack->add_option("--decoy-count", acfg.decoy_count);
  c_attack->add_option("--fairwash-count", a_fair_count);
  c_attack->add_option("--seed", acfg.seed);
  c_attack->add_option("--out-dir", a_out);

  // stability
  auto* c_stab = app.add_subcommand("stability", "stability metrics for an attacked layer");
  DataArgs s_data;
  add_data_args(c_stab, s_data);
  std::string s_init, s_final, s_embed, s_layer = "conv4", s_out = "stability.json";
  LayerReportConfig s_cfg;
  c_stab->add_option("--init", s_init)->required();
  c_stab->add_option("--final", s_final)->required();
  c_stab->add_option("--embed", s_embed, "embedding reference checkpoint")->required();
  c_stab->add_option("--layer", s_layer);
  c_stab->add_option("--k", s_cfg.k);
  c_stab->add_option("--dktau", s_cfg.dktau_size);
  c_stab->add_option("--dktau-seed", s_cfg.dktau_seed);
  c_stab->add_option("--out", s_out);

  // fairness
  auto* c_fair = app.add_subcommand("fairness", "fairness metrics on an annotated split");
  DataArgs f_data;
  add_data_args(c_fair, f_data);
  std::string f_init, f_final, f_layer = "fc1", f_out = "fairness.json";
  int f_count = 24, f_balance_k = 30;
  c_fair->add_option("--init", f_init)->required();
  c_fair->add_option("--final", f_final)->required();
  c_fair->add_option("--layer", f_layer);
  c_fair->add_option("--count", f_count, "attribute-sensitive units to scope");
  c_fair->add_option("--balance-k", f_balance_k);
  c_fair->add_option("--out", f_out);

  // synthviz
  auto* c_synth = app.add_subcommand("synthviz", "synthetic feature visualization");
  std::string sv_ckpt, sv_layer = "conv4", sv_out_dir = ".", sv_tag = "pre";
  std::string sv_channels = "0";
  SynthConfig sv_cfg;
  c_synth->add_option("--ckpt", sv_ckpt)->required();
  c_synth->add_option("--layer", sv_layer);
  c_synth->add_option("--channels", sv_channels, "comma-separated channel list");
  c_synth->add_option("--steps", sv_cfg.steps);
  c_synth->add_option("--step-size", sv_cfg.step_size);
  c_synth->add_option("--budget", sv_cfg.norm_budget);
  c_synth->add_option("--jitter", sv_cfg.jitter);
  c_synth->add_option("--seed", sv_cfg.seed);
  c_synth->add_option("--tag", sv_tag, "pre|post filename tag");
  c_synth->add_option("--out-dir", sv_out_dir);

  // report
  auto* c_report = app.add_subcommand("report", "aggregate stability reports into a table");
  std::vector<std::string> r_inputs;
  std::string r_text = "table.txt", r_json = "table.json";
  c_report->add_option("--out-text", r_text);
  c_report->add_option("--out-json", r_json);
  c_report->add_option("inputs", r_inputs, "stability report json files")->required();

  // run
  auto* c_run = app.add_subcommand("run", "full pipeline from a manifest");
  std::string run_manifest;
  std::string run_out_override;
  c_run->add_option("--manifest", run_manifest)->required();
  c_run->add_option("--out-dir", run_out_override, "override manifest out_dir");

  CLI11_PARSE(app, argc, argv);
  if (deterministic)
    Eigen::setNbThreads(1);
  else if (threads > 0)
    Eigen::setNbThreads(threads);

  auto load_split = [](const DataArgs& args) {
    auto full = load_dataset(args.name, args.root);
    return split(full, args.split_ratio, args.split_seed);
  };

  if (*c_data) {
    SyntheticSpec spec;
    spec.name = d_name;
    spec.count = d_count;
    spec.size = d_size;
    spec.seed = d_seed;
    auto data = make_synthetic(spec);
    if (d_bias) {
      BiasSpec bias;
      bias.p_corr = d_pcorr;
      bias.seed = substream_seed(d_seed, "bias");
      data = inject_bias(data, bias);
    }
    save_dataset(data, d_out);
    std::cout << "wrote " << data.count() << " images to " << d_out << "\n";
  } else if (*c_train) {
    auto [train, test] = load_split(t_data);
    ArchSpec arch = ArchSpec::parse(t_arch, train.channels, train.height, train.width);
    Model model(arch, substream_seed(t_seed, "init"));
    TrainConfig cfg;
    cfg.epochs = t_epochs;
    cfg.lr = t_lr;
    cfg.batch = t_batch;
    cfg.seed = t_seed;
    train_classifier(model, train, cfg);
    CheckpointMeta meta;
    meta.role = "initial";
    meta.epochs = t_epochs;
    meta.init_seed = substream_seed(t_seed, "init");
    meta.train_seed = t_seed;
    meta.final_accuracy = evaluate_accuracy(model, test);
    save_checkpoint(model, meta, t_out);
    std::cout << "test accuracy " << meta.final_accuracy << ", wrote " << t_out << "\n";
  } else if (*c_topk) {
    auto model = load_model(k_ckpt);
    auto [train, test] = load_split(k_data);
    const DatasetHandle& eval = k_train_split ? train : test;
    auto table = score_all(model, eval, k_layer, parse_score_mode(k_mode));
    save_table(table, k_scores);
    std::cout << "wrote " << k_scores << "\n";
    if (!k_top.empty()) {
      std::ofstream out(k_top);
      out << "layer\tchannel\trank\timage_id\tscore\n";
      const auto channels = k_channel >= 0 ? std::vector<int>{k_channel} : [&] {
        std::vector<int> all(static_cast<std::size_t>(table.channels()));
        for (std::size_t j = 0; j < all.size(); ++j) all[j] = static_cast<int>(j);
        return all;
      }();
      for (int j : channels) {
        auto top = topk(table, j, k_k);
        for (std::size_t i = 0; i < top.ids.size(); ++i)
          out << k_layer << "\t" << j << "\t" << i + 1 << "\t" << top.ids[i] << "\t" << top.scores[i]
              << "\n";
      }
      std::cout << "wrote " << k_top << "\n";
    }
  } else if (*c_attack) {
    auto model = load_model(a_ckpt);
    auto [train, test] = load_split(a_data);
    acfg.kind = parse_attack_kind(a_kind);
    acfg.layer = a_layer;
    if (acfg.kind == AttackKind::fairwash)
      acfg.fairwash_units = select_target_neurons(model, train, a_layer, a_fair_count).units;
    DatasetHandle probe = test;
    if (static_cast<int>(probe.images.size()) > a_probe) probe.images.resize(static_cast<std::size_t>(a_probe));
    auto result = run_attack(model, acfg, train, probe);
    fs::create_directories(a_out);
    result.log.save_csv((fs::path(a_out) / "attack_log.csv").string());
    CheckpointMeta meta;
    meta.role = "attacked";
    meta.config_hash = acfg.hash();
    meta.final_accuracy = evaluate_accuracy(result.attacked, test);
    save_checkpoint(result.attacked, meta, (fs::path(a_out) / "attacked.ckpt").string());
    std::cout << "probe accuracy " << result.log.initial_probe_accuracy << "% -> "
              << result.log.final_probe_accuracy << "%, artifacts in " << a_out << "\n";
  } else if (*c_stab) {
    auto initial = load_model(s_init);
    auto final_model = load_model(s_final);
    auto embed_net = load_model(s_embed);
    auto [train, test] = load_split(s_data);
    const auto& handles = embed_net.layer_handles();
    if (handles.size() < 2) throw ConfigError("embedding checkpoint needs a penultimate layer");
    CnnEmbeddingProvider provider(embed_net.clone(), handles[handles.size() - 2].id);
    auto report = layer_report(initial, final_model, train, s_layer, s_cfg, provider, &test);
    report.save_json(s_out);
    std::cout << "mean kendall tau " << report.mean_tau << ", mean clip delta " << report.mean_delta
              << ", wrote " << s_out << "\n";
  } else if (*c_fair) {
    auto initial = load_model(f_init);
    auto final_model = load_model(f_final);
    auto [train, test] = load_split(f_data);
    auto scope = select_target_neurons(initial, train, f_layer, f_count);
    FairnessEvalConfig cfg;
    cfg.k = f_balance_k;
    auto report = fairness_report(initial, final_model, test, scope, cfg);
    report.save_json(f_out);
    std::cout << "mean ks " << report.mean_ks_pre() << " -> " << report.mean_ks_post() << ", wrote "
              << f_out << "\n";
  } else if (*c_synth) {
    auto model = load_model(sv_ckpt);
    fs::create_directories(sv_out_dir);
    std::stringstream ss(sv_channels);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const int ch = std::stoi(tok);
      SynthConfig cfg = sv_cfg;
      cfg.seed = substream_seed(sv_cfg.seed, "synth-" + std::to_string(ch));
      auto result = synthesize(model, sv_layer, ch, cfg);
      // de-normalize with the common 0.5/0.25 convention
      DatasetHandle norm;
      norm.channels = model.arch().in_c;
      norm.norm_mean = Vecf::Constant(norm.channels, 0.5f);
      norm.norm_std = Vecf::Constant(norm.channels, 0.25f);
      std::vector<std::uint8_t> px(static_cast<std::size_t>(result.width) * result.height * 3, 0);
      for (int y = 0; y < result.height; ++y)
        for (int x = 0; x < result.width; ++x)
          for (int c = 0; c < std::min(3, norm.channels); ++c) {
            const float v01 =
                result.image(c, static_cast<Eigen::Index>(y) * result.width + x) * 0.25f + 0.5f;
            px[(static_cast<std::size_t>(y) * result.width + x) * 3 + static_cast<std::size_t>(c)] =
                static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(v01 * 255.f)), 0, 255));
          }
      const std::string name =
          "synth_" + sv_layer + "_" + std::to_string(ch) + "_" + sv_tag + ".png";
      write_png_rgb8((fs::path(sv_out_dir) / name).string(), result.width, result.height, px);
      std::cout << name << " final score " << result.final_score << " accepted " << result.accepted
                << "\n";
    }
  } else if (*c_report) {
    std::vector<MetricReport> reports;
    for (const auto& path : r_inputs) reports.push_back(MetricReport::load_json(path));
    save_table_report(reports, r_text, r_json);
    std::cout << table_report_text(reports);
  } else if (*c_run) {
    auto manifest = RunManifest::parse_file(run_manifest);
    if (!run_out_override.empty()) manifest.out_dir = run_out_override;
    auto outcome = run_pipeline(manifest);
    if (outcome.exit_code != 0) {
      std::cerr << "run failed in stage '" << outcome.failed_stage << "': " << outcome.message << "\n";
      return outcome.exit_code;
    }
    std::cout << "run complete, artifacts in " << outcome.out_dir << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
