#include "fviz/manifest.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace fviz {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

struct Field {
  std::function<void(RunManifest&, const std::string&)> set;
  std::function<std::string(const RunManifest&)> get;
};

std::string fmt_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("manifest field " + where + " expects true/false, got '" + v + "'");
}

template <class T>
T parse_num(const std::string& v, const std::string& where) {
  std::istringstream in(v);
  T out;
  in >> out;
  if (in.fail() || !in.eof())
    throw ConfigError("manifest field " + where + " has a malformed value '" + v + "'");
  return out;
}

const std::map<std::string, std::map<std::string, Field>>& schema() {
  using M = RunManifest;
  auto str = [](std::string M::* p) {
    return Field{[p](M& m, const std::string& v) { m.*p = v; }, [p](const M& m) { return m.*p; }};
  };
  auto i32 = [](int M::* p, const char* where) {
    std::string w = where;
    return Field{[p, w](M& m, const std::string& v) { m.*p = parse_num<int>(v, w); },
                 [p](const M& m) { return std::to_string(m.*p); }};
  };
  auto u64 = [](std::uint64_t M::* p, const char* where) {
    std::string w = where;
    return Field{[p, w](M& m, const std::string& v) { m.*p = parse_num<std::uint64_t>(v, w); },
                 [p](const M& m) { return std::to_string(m.*p); }};
  };
  auto f64 = [](double M::* p, const char* where) {
    std::string w = where;
    return Field{[p, w](M& m, const std::string& v) { m.*p = parse_num<double>(v, w); },
                 [p](const M& m) { return fmt_double(m.*p); }};
  };
  auto b = [](bool M::* p, const char* where) {
    std::string w = where;
    return Field{[p, w](M& m, const std::string& v) { m.*p = parse_bool(v, w); },
                 [p](const M& m) { return (m.*p) ? "true" : "false"; }};
  };
  static const std::map<std::string, std::map<std::string, Field>> s = {
      {"run",
       {{"name", str(&M::name)},
        {"out_dir", str(&M::out_dir)},
        {"seed", u64(&M::seed, "run.seed")},
        {"deterministic", b(&M::deterministic, "run.deterministic")}}},
      {"data",
       {{"kind", str(&M::data_kind)},
        {"name", str(&M::data_name)},
        {"root", str(&M::data_root)},
        {"count", i32(&M::data_count, "data.count")},
        {"size", i32(&M::data_size, "data.size")},
        {"split_ratio", f64(&M::split_ratio, "data.split_ratio")},
        {"bias", b(&M::bias, "data.bias")},
        {"bias_p_corr", f64(&M::bias_p_corr, "data.bias_p_corr")}}},
      {"arch", {{"layers", str(&M::arch)}}},
      {"train",
       {{"epochs", i32(&M::train_epochs, "train.epochs")},
        {"lr", f64(&M::train_lr, "train.lr")},
        {"batch", i32(&M::train_batch, "train.batch")}}},
      {"attack",
       {{"enabled", b(&M::attack_enabled, "attack.enabled")},
        {"kind", str(&M::attack_kind)},
        {"layer", str(&M::attack_layer)},
        {"channel", i32(&M::attack_channel, "attack.channel")},
        {"k", i32(&M::attack_k, "attack.k")},
        {"alpha_init", f64(&M::alpha_init, "attack.alpha_init")},
        {"alpha_min", f64(&M::alpha_min, "attack.alpha_min")},
        {"alpha_max", f64(&M::alpha_max, "attack.alpha_max")},
        {"drop_hi", f64(&M::drop_hi, "attack.drop_hi")},
        {"drop_lo", f64(&M::drop_lo, "attack.drop_lo")},
        {"alpha_fixed", b(&M::alpha_fixed, "attack.alpha_fixed")},
        {"epochs", i32(&M::attack_epochs, "attack.epochs")},
        {"steps_per_epoch", i32(&M::steps_per_epoch, "attack.steps_per_epoch")},
        {"lr", f64(&M::attack_lr, "attack.lr")},
        {"batch", i32(&M::attack_batch_size, "attack.batch")},
        {"pairs", i32(&M::attack_pairs, "attack.pairs")},
        {"probe_every", i32(&M::probe_every, "attack.probe_every")},
        {"probe_size", i32(&M::probe_size, "attack.probe_size")},
        {"decoy_class", i32(&M::decoy_class, "attack.decoy_class")},
        {"decoy_count", i32(&M::decoy_count, "attack.decoy_count")},
        {"fairwash_count", i32(&M::fairwash_count, "attack.fairwash_count")}}},
      {"metrics",
       {{"k", i32(&M::metrics_k, "metrics.k")},
        {"dktau_size", i32(&M::dktau_size, "metrics.dktau_size")},
        {"balance_k", i32(&M::balance_k, "metrics.balance_k")},
        {"embed_arch", str(&M::embed_arch)},
        {"embed_epochs", i32(&M::embed_epochs, "metrics.embed_epochs")},
        {"grid_channels", str(&M::grid_channels)},
        {"grid_k", i32(&M::grid_k, "metrics.grid_k")}}},
      {"synthviz",
       {{"enabled", b(&M::synth_enabled, "synthviz.enabled")},
        {"steps", i32(&M::synth_steps, "synthviz.steps")},
        {"step_size", f64(&M::synth_step_size, "synthviz.step_size")},
        {"jitter", i32(&M::synth_jitter, "synthviz.jitter")},
        {"channels", str(&M::synth_channels)}}},
  };
  return s;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& where) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    out.push_back(parse_num<int>(tok, where));
  }
  return out;
}

}  // namespace

RunManifest RunManifest::parse(const std::string& text) {
  RunManifest m;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("manifest line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (schema().find(section) == schema().end())
        throw ConfigError("manifest line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("manifest line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("manifest line " + std::to_string(lineno) + ": key outside any section");
    const auto& fields = schema().at(section);
    const auto it = fields.find(key);
    if (it == fields.end())
      throw ConfigError("manifest line " + std::to_string(lineno) + ": unknown field " + section + "." + key);
    it->second.set(m, value);
  }
  m.validate();
  return m;
}

RunManifest RunManifest::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string RunManifest::serialize() const {
  std::ostringstream out;
  // fixed section order for reproducible files
  for (const char* section : {"run", "data", "arch", "train", "attack", "metrics", "synthviz"}) {
    out << "[" << section << "]\n";
    for (const auto& [key, field] : schema().at(section)) out << key << " = " << field.get(*this) << "\n";
    out << "\n";
  }
  return out.str();
}

void RunManifest::validate() const {
  if (data_kind != "synthetic" && data_kind != "disk")
    throw ConfigError("manifest field data.kind must be synthetic or disk");
  if (data_kind == "disk" && data_root.empty())
    throw ConfigError("manifest field data.root is required for disk datasets");
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw ConfigError("manifest field data.split_ratio must lie in (0, 1)");
  if (bias_p_corr < 0.0 || bias_p_corr > 1.0)
    throw ConfigError("manifest field data.bias_p_corr must lie in [0, 1]");
  parse_attack_kind(attack_kind);
  if (attack_enabled && attack_kind == "fairwash" && !bias)
    throw ConfigError("fairwash attack requires data.bias = true");
  if (probe_size < 1) throw ConfigError("manifest field attack.probe_size must be >= 1");
  parsed_grid_channels();
  parsed_synth_channels();
}

AttackConfig RunManifest::attack_config() const {
  AttackConfig cfg;
  cfg.kind = parse_attack_kind(attack_kind);
  cfg.layer = attack_layer;
  cfg.channel = attack_channel;
  cfg.k = attack_k;
  cfg.decoy_class = decoy_class;
  cfg.decoy_count = decoy_count;
  cfg.alpha_init = alpha_init;
  cfg.alpha_min = alpha_min;
  cfg.alpha_max = alpha_max;
  cfg.drop_hi = drop_hi;
  cfg.drop_lo = drop_lo;
  cfg.alpha_fixed = alpha_fixed;
  cfg.epochs = attack_epochs;
  cfg.steps_per_epoch = steps_per_epoch;
  cfg.lr = attack_lr;
  cfg.batch = attack_batch_size;
  cfg.attack_batch = attack_pairs;
  cfg.probe_every = probe_every;
  cfg.seed = substream_seed(seed, "attack-config");
  return cfg;
}

std::vector<int> RunManifest::parsed_grid_channels() const {
  return parse_int_list(grid_channels, "metrics.grid_channels");
}

std::vector<int> RunManifest::parsed_synth_channels() const {
  return parse_int_list(synth_channels, "synthviz.channels");
}

}  // namespace fviz
