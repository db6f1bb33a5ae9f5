#include "fviz/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace fviz {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'F', 'V', 'Z', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::string arch = model.arch().to_string();
  const std::uint32_t arch_len = static_cast<std::uint32_t>(arch.size());
  out.write(reinterpret_cast<const char*>(&arch_len), sizeof(arch_len));
  out.write(arch.data(), static_cast<std::streamsize>(arch.size()));
  const std::int32_t shape[3] = {model.arch().in_c, model.arch().in_h, model.arch().in_w};
  out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
  auto params = const_cast<Model&>(model).params();
  const std::uint32_t n_params = static_cast<std::uint32_t>(params.size());
  out.write(reinterpret_cast<const char*>(&n_params), sizeof(n_params));
  for (const auto* p : params) {
    const std::int64_t rows = p->rows(), cols = p->cols();
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    out.write(reinterpret_cast<const char*>(p->data()),
              static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p->size())));
  }

  json j;
  j["arch"] = meta.arch.empty() ? arch : meta.arch;
  j["arch_hash"] = model.arch().hash();
  j["input"] = {model.arch().in_c, model.arch().in_h, model.arch().in_w};
  j["init_seed"] = meta.init_seed;
  j["role"] = meta.role;
  j["epochs"] = meta.epochs;
  j["train_seed"] = meta.train_seed;
  j["final_accuracy"] = meta.final_accuracy;
  j["config_hash"] = meta.config_hash;
  std::ofstream side(path + ".meta.json");
  if (!side) throw DataError("cannot write checkpoint sidecar " + path + ".meta.json");
  side << j.dump(2) << "\n";
}

std::pair<Model, CheckpointMeta> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw LoadError("not a checkpoint file: " + path);
  std::uint32_t arch_len = 0;
  in.read(reinterpret_cast<char*>(&arch_len), sizeof(arch_len));
  std::string arch(arch_len, '\0');
  in.read(arch.data(), arch_len);
  std::int32_t shape[3];
  in.read(reinterpret_cast<char*>(shape), sizeof(shape));
  if (!in) throw LoadError("truncated checkpoint " + path);

  ArchSpec spec = ArchSpec::parse(arch, shape[0], shape[1], shape[2]);
  Model model(spec, 0);
  auto params = model.params();
  std::uint32_t n_params = 0;
  in.read(reinterpret_cast<char*>(&n_params), sizeof(n_params));
  if (n_params != params.size()) throw LoadError("checkpoint " + path + " does not match architecture");
  for (auto* p : params) {
    std::int64_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&rows), sizeof(rows));
    in.read(reinterpret_cast<char*>(&cols), sizeof(cols));
    if (rows != p->rows() || cols != p->cols())
      throw LoadError("checkpoint " + path + " has mismatched parameter shapes");
    in.read(reinterpret_cast<char*>(p->data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p->size())));
    if (!in) throw LoadError("truncated checkpoint " + path);
  }

  CheckpointMeta meta;
  meta.arch = arch;
  meta.in_c = shape[0];
  meta.in_h = shape[1];
  meta.in_w = shape[2];
  std::ifstream side(path + ".meta.json");
  if (side) {
    json j;
    try {
      side >> j;
      meta.init_seed = j.value("init_seed", 0ull);
      meta.role = j.value("role", "initial");
      meta.epochs = j.value("epochs", 0);
      meta.train_seed = j.value("train_seed", 0ull);
      meta.final_accuracy = j.value("final_accuracy", -1.0);
      meta.config_hash = j.value("config_hash", 0ull);
    } catch (const json::exception& e) {
      throw LoadError("corrupt checkpoint sidecar " + path + ".meta.json: " + e.what());
    }
  }
  return {std::move(model), meta};
}

}  // namespace fviz
