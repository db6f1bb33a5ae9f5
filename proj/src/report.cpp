#include "fviz/report.hpp"

#include "fviz/png.hpp"
#include "fviz/sha256.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace fviz {

using nlohmann::json;

namespace {

// 3x5 digit glyphs, row-major bits
constexpr std::uint16_t kDigits[10] = {
    0b111101101101111, 0b010110010010111, 0b111001111100111, 0b111001111001111, 0b101101111001001,
    0b111100111001111, 0b111100111101111, 0b111001010010010, 0b111101111101111, 0b111101111001111,
};

struct Canvas {
  int w, h;
  std::vector<std::uint8_t> px;  // rgb
  Canvas(int width, int height) : w(width), h(height), px(static_cast<std::size_t>(width) * height * 3, 24) {}
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    const std::size_t at = (static_cast<std::size_t>(y) * w + x) * 3;
    px[at] = r;
    px[at + 1] = g;
    px[at + 2] = b;
  }
  void rect(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, r, g, b);
  }
  void digit(int x0, int y0, int d, int scale) {
    const std::uint16_t bits = kDigits[d % 10];
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 3; ++x)
        if (bits >> (14 - (y * 3 + x)) & 1) rect(x0 + x * scale, y0 + y * scale, x0 + (x + 1) * scale, y0 + (y + 1) * scale, 255, 255, 255);
  }
};

void blit_image(Canvas& canvas, const LabeledImage& img, const DatasetHandle& d, int x0, int y0,
                int scale) {
  for (int y = 0; y < d.height; ++y) {
    for (int x = 0; x < d.width; ++x) {
      const Eigen::Index col = static_cast<Eigen::Index>(y) * d.width + x;
      std::uint8_t rgb[3] = {0, 0, 0};
      for (int c = 0; c < std::min(3, d.channels); ++c) {
        const float v01 = img.pixels(c, col) * d.norm_std(c) + d.norm_mean(c);
        rgb[c] = static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(v01 * 255.f)), 0, 255));
      }
      canvas.rect(x0 + x * scale, y0 + y * scale, x0 + (x + 1) * scale, y0 + (y + 1) * scale, rgb[0],
                  rgb[1], rgb[2]);
    }
  }
}

}  // namespace

void render_grid(const GridSpec& spec, const std::vector<TopKResult>& init_topk,
                 const std::vector<TopKResult>& final_topk, const DatasetHandle& dataset,
                 const std::string& path) {
  if (spec.channels.empty()) throw ArgumentError("grid needs at least one channel");
  if (init_topk.size() != final_topk.size())
    throw ArgumentError("grid needs matching initial/final top-k lists");
  for (int ch : spec.channels)
    if (ch < 0 || ch >= static_cast<int>(init_topk.size()))
      throw ArgumentError("grid channel " + std::to_string(ch) + " not covered by top-k results");

  const int scale = std::max(1, spec.scale);
  const int thumb_w = dataset.width * scale, thumb_h = dataset.height * scale;
  const int border = 2, margin = 4;
  const int cell_w = thumb_w + 2 * border + margin;
  const int cell_h = thumb_h + 2 * border + margin;
  const int rows = static_cast<int>(spec.channels.size()) * 2;
  Canvas canvas(margin + spec.k * cell_w, margin + rows * cell_h);

  for (std::size_t ci = 0; ci < spec.channels.size(); ++ci) {
    const int ch = spec.channels[ci];
    const auto& a = init_topk[static_cast<std::size_t>(ch)];
    const auto& b = final_topk[static_cast<std::size_t>(ch)];
    const std::set<std::string> in_a(a.ids.begin(), a.ids.end());
    const std::set<std::string> in_b(b.ids.begin(), b.ids.end());
    for (int state = 0; state < 2; ++state) {
      const auto& t = state == 0 ? a : b;
      const auto& other = state == 0 ? in_b : in_a;
      const int row = static_cast<int>(ci) * 2 + state;
      for (int i = 0; i < spec.k && i < static_cast<int>(t.ids.size()); ++i) {
        const auto& id = t.ids[static_cast<std::size_t>(i)];
        if (dataset.index_of(id) < 0) throw DataError("grid image '" + id + "' missing from dataset");
        const LabeledImage& img = dataset.by_id(id);
        const int x0 = margin + i * cell_w, y0 = margin + row * cell_h;
        const bool retained = other.count(id) > 0;
        canvas.rect(x0, y0, x0 + thumb_w + 2 * border, y0 + thumb_h + 2 * border,
                    retained ? 30 : 90, retained ? 200 : 90, retained ? 60 : 90);
        blit_image(canvas, img, dataset, x0 + border, y0 + border, scale);
        if (spec.annotate_class) canvas.digit(x0 + border + 1, y0 + border + 1, img.class_label, scale);
      }
    }
  }
  write_png_rgb8(path, canvas.w, canvas.h, canvas.px);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "undef"; }

}  // namespace

std::string table_report_text(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ArgumentError("table report needs at least one metric report");
  std::ostringstream out;
  out << "layer/attack            CLIP-d   Kend-t   CLIP-W   Kend-t-W  Acc(%)\n";
  for (const auto& r : reports) {
    std::string name = r.layer + " " + r.attack;
    name.resize(23, ' ');
    out << name << " " << fmt(r.mean_delta) << "    " << fmt(r.mean_tau) << "    "
        << fmt_opt(r.mean_whack_w) << "    " << fmt_opt(r.mean_tau_w) << "     "
        << (r.accuracy_after >= 0 ? fmt(100.0 * r.accuracy_after) : "n/a") << "\n";
  }
  return out.str();
}

void save_table_report(const std::vector<MetricReport>& reports, const std::string& text_path,
                       const std::string& json_path) {
  {
    std::ofstream out(text_path);
    if (!out) throw DataError("cannot write table report " + text_path);
    out << table_report_text(reports);
  }
  json rows = json::array();
  for (const auto& r : reports) {
    rows.push_back({{"layer", r.layer},
                    {"attack", r.attack},
                    {"clip_delta", r.mean_delta},
                    {"kendall_tau", r.mean_tau},
                    {"clip_w", r.mean_whack_w ? json(*r.mean_whack_w) : json()},
                    {"kendall_tau_w", r.mean_tau_w ? json(*r.mean_tau_w) : json()},
                    {"accuracy_before", r.accuracy_before},
                    {"accuracy_after", r.accuracy_after}});
  }
  std::ofstream out(json_path);
  if (!out) throw DataError("cannot write table report " + json_path);
  out << json{{"rows", rows}}.dump(2) << "\n";
}

void ArtifactSummary::add(const std::string& label, const std::string& path) {
  entries_.push_back({label, std::filesystem::path(path).filename().string(), sha256_file(path)});
}

void ArtifactSummary::note(const std::string& key, const std::string& value) {
  notes_.emplace_back(key, value);
}

void ArtifactSummary::save(const std::string& path) const {
  json j;
  json arts = json::array();
  for (const auto& e : entries_) arts.push_back({{"label", e[0]}, {"file", e[1]}, {"sha256", e[2]}});
  j["artifacts"] = arts;
  json notes = json::object();
  for (const auto& [k, v] : notes_) notes[k] = v;
  j["notes"] = notes;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write summary " + path);
  out << j.dump(2) << "\n";
}

}  // namespace fviz
