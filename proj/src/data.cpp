#include "fviz/data.hpp"

#include "fviz/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fviz {

namespace fs = std::filesystem;
using nlohmann::json;

bool DatasetHandle::annotated() const {
  if (images.empty()) return false;
  const bool first = images.front().protected_attr.has_value();
  for (const auto& img : images)
    if (img.protected_attr.has_value() != first)
      throw StateError("protected attribute present for some images but not all");
  return first;
}

const LabeledImage& DatasetHandle::by_id(const std::string& id) const {
  const int i = index_of(id);
  if (i < 0) throw IndexError("unknown image id '" + id + "'");
  return images[static_cast<std::size_t>(i)];
}

int DatasetHandle::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i].id == id) return static_cast<int>(i);
  return -1;
}

void DatasetHandle::check_invariants() const {
  std::set<std::string> seen;
  for (const auto& img : images) {
    if (!seen.insert(img.id).second) throw DataError("duplicate image id '" + img.id + "'");
    if (img.class_label < 0 || img.class_label >= classes)
      throw DataError("class label out of range for image '" + img.id + "'");
    if (img.pixels.rows() != channels || img.pixels.cols() != static_cast<Eigen::Index>(height) * width)
      throw DataError("pixel shape mismatch for image '" + img.id + "'");
    const float lo = img.pixels.minCoeff(), hi = img.pixels.maxCoeff();
    if (lo < range_lo - 1e-4f || hi > range_hi + 1e-4f)
      throw DataError("pixel values outside declared range for image '" + img.id + "'");
  }
  annotated();  // throws when partially annotated
}

namespace {

constexpr float kMean = 0.5f, kStd = 0.25f;

float normalize_px(float v01) { return (v01 - kMean) / kStd; }

void set_norm(DatasetHandle& d) {
  d.norm_mean = Vecf::Constant(d.channels, kMean);
  d.norm_std = Vecf::Constant(d.channels, kStd);
  d.range_lo = normalize_px(0.f);
  d.range_hi = normalize_px(1.f);
}

struct Painter {
  Matf& px;  // channels x (h*w), normalized values
  int h, w;
  void set(int y, int x, float r, float g, float b) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    const Eigen::Index col = static_cast<Eigen::Index>(y) * w + x;
    px(0, col) = normalize_px(r);
    px(1, col) = normalize_px(g);
    px(2, col) = normalize_px(b);
  }
};

struct Rgb {
  float r, g, b;
};

Rgb random_color(std::mt19937_64& rng, float lo, float hi) {
  return {static_cast<float>(uniform_in(rng, lo, hi)), static_cast<float>(uniform_in(rng, lo, hi)),
          static_cast<float>(uniform_in(rng, lo, hi))};
}

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

// All geometry is continuous (wavelengths, angles, centers, radii) so channel
// score distributions have dense tails instead of a few discrete spikes.
void draw_class(Matf& px, int h, int w, int cls, std::mt19937_64& rng) {
  Painter p{px, h, w};
  Rgb bg = random_color(rng, 0.05f, 0.45f);
  Rgb fg = random_color(rng, 0.55f, 0.95f);
  if (bernoulli(rng, 0.5)) std::swap(bg, fg);
  const double noise = 0.05;
  const double lambda = uniform_in(rng, 3.5, 9.0);   // grating wavelength
  const double lambda2 = uniform_in(rng, 3.5, 9.0);
  const double phase = uniform_in(rng, 0.0, 2.0 * M_PI);
  const double phase2 = uniform_in(rng, 0.0, 2.0 * M_PI);
  const double jitter = uniform_in(rng, -0.26, 0.26);  // orientation wobble
  const double cx = w * uniform_in(rng, 0.32, 0.68);
  const double cy = h * uniform_in(rng, 0.32, 0.68);
  const double radius = std::min(h, w) * uniform_in(rng, 0.2, 0.4);
  const double thick = std::max(1.3, radius * uniform_in(rng, 0.25, 0.45));
  const double rot = uniform_in(rng, -0.35, 0.35);
  const double dot_cut = uniform_in(rng, 0.15, 0.45);
  double bx[3], by[3], bs[3];
  for (int i = 0; i < 3; ++i) {
    bx[i] = w * uniform_in(rng, 0.2, 0.8);
    by[i] = h * uniform_in(rng, 0.2, 0.8);
    bs[i] = std::min(h, w) * uniform_in(rng, 0.12, 0.25);
  }
  double theta = jitter;
  if (cls == 1) theta += M_PI / 2;
  if (cls == 2) theta += uniform_in(rng, M_PI / 5, M_PI / 3);
  const double kx = std::cos(theta) * 2.0 * M_PI / lambda;
  const double ky = std::sin(theta) * 2.0 * M_PI / lambda;
  const double k2x = -std::sin(theta) * 2.0 * M_PI / lambda2;
  const double k2y = std::cos(theta) * 2.0 * M_PI / lambda2;
  // Per-image low-frequency tint keeps individual images discriminable.
  const double tdx = normal(rng), tdy = normal(rng);
  const double tnorm = std::hypot(tdx, tdy) + 1e-9;
  const Rgb tint = random_color(rng, -0.22f, 0.22f);
  // Saturated decals give every image salient unique local content, the way
  // natural photos carry incidental detail. Shape and color vary so that
  // different images engage different channels.
  const int n_decals = 3 + static_cast<int>(uniform_index(rng, 3));
  double dcx[5], dcy[5], dcr[5], dca[5];
  int dshape[5];
  Rgb dcol[5];
  for (int i = 0; i < n_decals; ++i) {
    dcx[i] = uniform_in(rng, 2.0, w - 2.0);
    dcy[i] = uniform_in(rng, 2.0, h - 2.0);
    dcr[i] = uniform_in(rng, 1.4, 3.0);
    dca[i] = uniform_in(rng, 0.0, M_PI);
    dshape[i] = static_cast<int>(uniform_index(rng, 3));  // disk, ring, bar
    dcol[i] = {bernoulli(rng, 0.5) ? 1.0f : 0.0f, bernoulli(rng, 0.5) ? 1.0f : 0.0f,
               bernoulli(rng, 0.5) ? 1.0f : 0.0f};
    if (bernoulli(rng, 0.5)) dcol[i].g = static_cast<float>(uniform_in(rng, 0.0, 1.0));
  }
  auto decal_hit = [&](int i, double x, double y) {
    const double ux = x - dcx[i], uy = y - dcy[i];
    switch (dshape[i]) {
      case 0: return std::hypot(ux, uy) < dcr[i];
      case 1: return std::abs(std::hypot(ux, uy) - dcr[i]) < 0.9;
      default: {
        const double bx = std::cos(dca[i]) * ux + std::sin(dca[i]) * uy;
        const double by = -std::sin(dca[i]) * ux + std::cos(dca[i]) * uy;
        return std::abs(bx) < 0.9 && std::abs(by) < dcr[i] * 1.6;
      }
    }
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double g1 = std::sin(kx * x + ky * y + phase);
      const double g2 = std::sin(k2x * x + k2y * y + phase2);
      const double rx = std::cos(rot) * (x - cx) + std::sin(rot) * (y - cy);
      const double ry = -std::sin(rot) * (x - cx) + std::cos(rot) * (y - cy);
      bool on = false;
      switch (cls) {
        case 0:
        case 1:
        case 2: on = g1 > 0; break;  // gratings: horizontal-ish / vertical-ish / diagonal
        case 3: on = g1 * g2 > 0; break;  // checker
        case 4: on = std::hypot(rx, ry) < radius; break;  // disk
        case 5: on = std::abs(std::hypot(rx, ry) - radius) < thick * 0.5; break;  // ring
        case 6: on = std::max(std::abs(rx), std::abs(ry)) < radius * 0.75; break;  // square
        case 7: on = std::abs(rx) < thick || std::abs(ry) < thick; break;  // plus
        case 8: on = g1 > dot_cut && g2 > dot_cut; break;  // dot lattice
        case 9: {  // smooth blobs
          double v = 0;
          for (int i = 0; i < 3; ++i) {
            const double d2 = (x - bx[i]) * (x - bx[i]) + (y - by[i]) * (y - by[i]);
            v += std::exp(-d2 / (2 * bs[i] * bs[i]));
          }
          on = v > 0.6;
          break;
        }
        default: throw DataError("synthetic class out of range");
      }
      Rgb c = on ? fg : bg;
      for (int i = 0; i < n_decals; ++i)
        if (decal_hit(i, x, y)) c = dcol[i];
      const float ramp =
          static_cast<float>(((x - w / 2.0) * tdx + (y - h / 2.0) * tdy) / (tnorm * std::min(h, w)));
      p.set(y, x, clamp01(c.r + tint.r * ramp + static_cast<float>(normal(rng, 0.0, noise))),
            clamp01(c.g + tint.g * ramp + static_cast<float>(normal(rng, 0.0, noise))),
            clamp01(c.b + tint.b * ramp + static_cast<float>(normal(rng, 0.0, noise))));
    }
  }
}

std::string image_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "img%06d", index);
  return buf;
}

}  // namespace

DatasetHandle make_synthetic(const SyntheticSpec& spec) {
  if (spec.count <= 0 || spec.size < 8) throw ArgumentError("synthetic spec needs count > 0 and size >= 8");
  DatasetHandle d;
  d.name = spec.name;
  d.classes = 10;
  d.height = d.width = spec.size;
  d.channels = 3;
  set_norm(d);
  auto rng = substream(spec.seed, "data");
  d.images.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    LabeledImage img;
    img.id = image_id(i);
    img.class_label = i % 10;
    img.pixels.resize(3, static_cast<Eigen::Index>(spec.size) * spec.size);
    draw_class(img.pixels, spec.size, spec.size, img.class_label, rng);
    d.images.push_back(std::move(img));
  }
  return d;
}

void save_dataset(const DatasetHandle& dataset, const std::string& root_path) {
  fs::create_directories(root_path);
  const fs::path root(root_path);
  json meta;
  meta["name"] = dataset.name;
  meta["classes"] = dataset.classes;
  meta["height"] = dataset.height;
  meta["width"] = dataset.width;
  meta["channels"] = dataset.channels;
  meta["count"] = dataset.count();
  meta["mean"] = std::vector<float>(dataset.norm_mean.data(), dataset.norm_mean.data() + dataset.channels);
  meta["std"] = std::vector<float>(dataset.norm_std.data(), dataset.norm_std.data() + dataset.channels);
  {
    std::ofstream out(root / "meta.json");
    out << meta.dump(2) << "\n";
  }
  std::ofstream imgs(root / "images.u8", std::ios::binary);
  std::ofstream labels(root / "labels.u8", std::ios::binary);
  std::ofstream ids(root / "ids.txt");
  for (const auto& img : dataset.images) {
    for (int c = 0; c < dataset.channels; ++c) {
      for (Eigen::Index i = 0; i < img.pixels.cols(); ++i) {
        const float v01 = img.pixels(c, i) * dataset.norm_std(c) + dataset.norm_mean(c);
        const int byte = static_cast<int>(std::lround(v01 * 255.0f));
        const unsigned char u = static_cast<unsigned char>(std::min(255, std::max(0, byte)));
        imgs.write(reinterpret_cast<const char*>(&u), 1);
      }
    }
    const unsigned char lab = static_cast<unsigned char>(img.class_label);
    labels.write(reinterpret_cast<const char*>(&lab), 1);
    ids << img.id << "\n";
  }
  if (!dataset.images.empty() && dataset.images.front().protected_attr.has_value()) {
    std::ofstream attrs(root / "attrs.tsv");
    for (const auto& img : dataset.images) attrs << img.id << "\t" << *img.protected_attr << "\n";
  }
}

DatasetHandle load_dataset(const std::string& name, const std::string& root_path) {
  const fs::path root(root_path);
  const fs::path meta_path = root / "meta.json";
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw LoadError("cannot open dataset metadata " + meta_path.string());
  json meta;
  try {
    meta_in >> meta;
  } catch (const json::exception& e) {
    throw LoadError("corrupt dataset metadata " + meta_path.string() + ": " + e.what());
  }
  DatasetHandle d;
  try {
    d.name = meta.at("name").get<std::string>();
    d.classes = meta.at("classes").get<int>();
    d.height = meta.at("height").get<int>();
    d.width = meta.at("width").get<int>();
    d.channels = meta.at("channels").get<int>();
    const auto mean = meta.at("mean").get<std::vector<float>>();
    const auto stdv = meta.at("std").get<std::vector<float>>();
    d.norm_mean = Eigen::Map<const Vecf>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    d.norm_std = Eigen::Map<const Vecf>(stdv.data(), static_cast<Eigen::Index>(stdv.size()));
  } catch (const json::exception& e) {
    throw LoadError("corrupt dataset metadata " + meta_path.string() + ": " + e.what());
  }
  if (d.name != name)
    throw LoadError("dataset at " + root_path + " is named '" + d.name + "', not '" + name + "'");
  d.range_lo = (0.f - d.norm_mean.maxCoeff()) / d.norm_std.minCoeff();
  d.range_hi = (1.f - d.norm_mean.minCoeff()) / d.norm_std.minCoeff();
  const int count = meta.at("count").get<int>();

  const fs::path img_path = root / "images.u8";
  std::ifstream imgs(img_path, std::ios::binary);
  if (!imgs) throw LoadError("cannot open image data " + img_path.string());
  const fs::path label_path = root / "labels.u8";
  std::ifstream labels(label_path, std::ios::binary);
  if (!labels) throw LoadError("cannot open labels " + label_path.string());
  const fs::path ids_path = root / "ids.txt";
  std::ifstream ids(ids_path);
  if (!ids) throw LoadError("cannot open id list " + ids_path.string());

  const Eigen::Index hw = static_cast<Eigen::Index>(d.height) * d.width;
  std::vector<unsigned char> buf(static_cast<std::size_t>(d.channels) * hw);
  for (int i = 0; i < count; ++i) {
    LabeledImage img;
    if (!std::getline(ids, img.id) || img.id.empty())
      throw LoadError("id list " + ids_path.string() + " is shorter than declared count");
    imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (imgs.gcount() != static_cast<std::streamsize>(buf.size()))
      throw LoadError("image data " + img_path.string() + " truncated at image " + std::to_string(i));
    unsigned char lab = 0;
    labels.read(reinterpret_cast<char*>(&lab), 1);
    if (labels.gcount() != 1) throw LoadError("labels " + label_path.string() + " truncated");
    img.class_label = lab;
    img.pixels.resize(d.channels, hw);
    for (int c = 0; c < d.channels; ++c)
      for (Eigen::Index px = 0; px < hw; ++px)
        img.pixels(c, px) =
            (static_cast<float>(buf[static_cast<std::size_t>(c) * hw + px]) / 255.0f - d.norm_mean(c)) /
            d.norm_std(c);
    d.images.push_back(std::move(img));
  }

  const fs::path attr_path = root / "attrs.tsv";
  if (fs::exists(attr_path)) {
    std::ifstream attrs(attr_path);
    std::string line;
    std::size_t row = 0;
    while (std::getline(attrs, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw LoadError("malformed attribute row in " + attr_path.string());
      const std::string id = line.substr(0, tab);
      const int z = std::stoi(line.substr(tab + 1));
      if (row >= d.images.size() || d.images[row].id != id)
        throw LoadError("attribute sidecar " + attr_path.string() + " does not match id order");
      d.images[row].protected_attr = z;
      ++row;
    }
    if (row != d.images.size())
      throw LoadError("attribute sidecar " + attr_path.string() + " is incomplete");
    int n1 = 0;
    for (const auto& img : d.images) n1 += *img.protected_attr;
    d.minority_attr = (n1 * 2 <= d.count()) ? 1 : 0;
  }
  d.check_invariants();
  return d;
}

std::pair<DatasetHandle, DatasetHandle> split(const DatasetHandle& dataset, double ratio,
                                              std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("split ratio must be in (0, 1)");
  std::vector<int> order(static_cast<std::size_t>(dataset.count()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  auto rng = substream(seed, "split");
  shuffle_indices(order, rng);
  const int n_train = static_cast<int>(std::floor(dataset.count() * ratio));
  auto build = [&](int begin, int end, const char* tag) {
    DatasetHandle out = dataset;
    out.images.clear();
    out.split_tag = tag;
    out.split_seed = seed;
    std::vector<int> picked(order.begin() + begin, order.begin() + end);
    std::sort(picked.begin(), picked.end());
    for (int idx : picked) out.images.push_back(dataset.images[static_cast<std::size_t>(idx)]);
    return out;
  };
  return {build(0, n_train, "train"), build(n_train, dataset.count(), "test")};
}

DatasetHandle inject_bias(const DatasetHandle& dataset, const BiasSpec& spec) {
  if (dataset.annotated()) throw StateError("dataset already carries a protected attribute");
  if (spec.p_corr < 0.0 || spec.p_corr > 1.0) throw ArgumentError("p_corr must lie in [0, 1]");
  DatasetHandle out = dataset;
  auto rng = substream(spec.seed, "bias");
  int n1 = 0;
  for (auto& img : out.images) {
    const bool biased_class = std::find(spec.biased_classes.begin(), spec.biased_classes.end(),
                                        img.class_label) != spec.biased_classes.end();
    const double pz = biased_class ? spec.p_corr : 1.0 - spec.p_corr;
    const int z = bernoulli(rng, pz) ? 1 : 0;
    img.protected_attr = z;
    n1 += z;
    const double p_marker = z == 1 ? spec.p_corr : 1.0 - spec.p_corr;
    if (bernoulli(rng, p_marker)) {
      for (int dy = 0; dy < spec.marker_size; ++dy) {
        for (int dx = 0; dx < spec.marker_size; ++dx) {
          const int y = spec.marker_y + dy, x = spec.marker_x + dx;
          if (y >= dataset.height || x >= dataset.width) continue;
          const Eigen::Index col = static_cast<Eigen::Index>(y) * dataset.width + x;
          for (int c = 0; c < 3 && c < dataset.channels; ++c)
            img.pixels(c, col) = (spec.marker_rgb[c] - dataset.norm_mean(c)) / dataset.norm_std(c);
        }
      }
    }
  }
  out.minority_attr = (n1 * 2 <= out.count()) ? 1 : 0;
  return out;
}

AttributePartition partition_by_attribute(const DatasetHandle& dataset) {
  if (!dataset.annotated()) throw StateError("dataset has no protected attribute");
  AttributePartition part;
  part.group0 = dataset;
  part.group0.images.clear();
  part.group1 = dataset;
  part.group1.images.clear();
  for (const auto& img : dataset.images)
    (*img.protected_attr == 0 ? part.group0 : part.group1).images.push_back(img);
  part.degenerate = part.group0.images.empty() || part.group1.images.empty();
  return part;
}

std::vector<std::string> sample_subset(const DatasetHandle& dataset, int size, std::uint64_t seed) {
  std::vector<int> order(static_cast<std::size_t>(dataset.count()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  auto rng = substream(seed, "dktau");
  shuffle_indices(order, rng);
  const int n = std::min<int>(size, dataset.count());
  std::vector<int> picked(order.begin(), order.begin() + n);
  std::sort(picked.begin(), picked.end());
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (int idx : picked) ids.push_back(dataset.images[static_cast<std::size_t>(idx)].id);
  return ids;
}

}  // namespace fviz
