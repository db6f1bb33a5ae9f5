#include "fviz/arch.hpp"

#include <charconv>
#include <sstream>

namespace fviz {

namespace {

int parse_int(const std::string& s, const std::string& what) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw SpecError("bad integer '" + s + "' in " + what);
  return value;
}

// "16", "16x3", "16x3s1p1" -> (out_c, k, s, p)
LayerDef parse_conv(const std::string& body) {
  LayerDef def;
  def.kind = LayerDef::Kind::conv;
  std::string cur;
  char field = 'c';
  auto flush = [&]() {
    if (cur.empty()) throw SpecError("empty field in conv spec '" + body + "'");
    const int v = parse_int(cur, "conv spec");
    switch (field) {
      case 'c': def.out_c = v; break;
      case 'x': def.ksize = v; break;
      case 's': def.stride = v; break;
      case 'p': def.pad = v; break;
    }
    cur.clear();
  };
  for (char ch : body) {
    if (ch == 'x' || ch == 's' || ch == 'p') {
      flush();
      field = ch;
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return def;
}

}  // namespace

ArchSpec ArchSpec::parse(const std::string& text, int in_c, int in_h, int in_w) {
  ArchSpec spec;
  spec.in_c = in_c;
  spec.in_h = in_h;
  spec.in_w = in_w;
  std::stringstream ss(text);
  std::string token;
  while (std::getline(ss, token, ',')) {
    // trim
    while (!token.empty() && (token.front() == ' ')) token.erase(token.begin());
    while (!token.empty() && (token.back() == ' ')) token.pop_back();
    if (token.empty()) continue;
    std::string head = token, body;
    if (auto colon = token.find(':'); colon != std::string::npos) {
      head = token.substr(0, colon);
      body = token.substr(colon + 1);
    }
    LayerDef def;
    if (head == "conv") {
      if (body.empty()) throw SpecError("conv layer needs a channel count");
      def = parse_conv(body);
    } else if (head == "relu") {
      def.kind = LayerDef::Kind::relu;
    } else if (head == "pool") {
      def.kind = LayerDef::Kind::pool;
      def.pool = body.empty() ? 2 : parse_int(body, "pool spec");
    } else if (head == "flatten") {
      def.kind = LayerDef::Kind::flatten;
    } else if (head == "fc") {
      if (body.empty()) throw SpecError("fc layer needs a width");
      def.kind = LayerDef::Kind::fc;
      def.width = parse_int(body, "fc spec");
    } else {
      throw SpecError("unknown layer kind '" + head + "'");
    }
    spec.layers.push_back(def);
  }
  spec.validate();
  return spec;
}

std::string ArchSpec::to_string() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& def : layers) {
    if (!first) out << ",";
    first = false;
    switch (def.kind) {
      case LayerDef::Kind::conv:
        out << "conv:" << def.out_c << "x" << def.ksize << "s" << def.stride << "p" << def.pad;
        break;
      case LayerDef::Kind::relu: out << "relu"; break;
      case LayerDef::Kind::pool: out << "pool:" << def.pool; break;
      case LayerDef::Kind::flatten: out << "flatten"; break;
      case LayerDef::Kind::fc: out << "fc:" << def.width; break;
    }
  }
  return out.str();
}

void ArchSpec::validate() const {
  if (in_c <= 0 || in_h <= 0 || in_w <= 0) throw SpecError("input shape must be positive");
  if (layers.empty()) throw SpecError("architecture has no layers");
  int c = in_c, h = in_h, w = in_w;
  bool flat = false;
  int convs = 0;
  bool saw_fc = false;
  for (const auto& def : layers) {
    switch (def.kind) {
      case LayerDef::Kind::conv: {
        if (flat) throw SpecError("conv after flatten");
        if (saw_fc) throw SpecError("conv after fc");
        if (def.out_c <= 0 || def.ksize <= 0 || def.stride <= 0 || def.pad < 0)
          throw SpecError("conv parameters out of range");
        const int oh = (h + 2 * def.pad - def.ksize) / def.stride + 1;
        const int ow = (w + 2 * def.pad - def.ksize) / def.stride + 1;
        if (h + 2 * def.pad < def.ksize || w + 2 * def.pad < def.ksize || oh <= 0 || ow <= 0)
          throw SpecError("conv kernel " + std::to_string(def.ksize) + " does not fit " +
                          std::to_string(h) + "x" + std::to_string(w) + " input");
        c = def.out_c;
        h = oh;
        w = ow;
        ++convs;
        break;
      }
      case LayerDef::Kind::relu:
        break;
      case LayerDef::Kind::pool:
        if (flat) throw SpecError("pool after flatten");
        if (def.pool < 2) throw SpecError("pool size must be >= 2");
        if (h < def.pool || w < def.pool)
          throw SpecError("pool " + std::to_string(def.pool) + " does not fit " + std::to_string(h) +
                          "x" + std::to_string(w) + " input");
        h /= def.pool;
        w /= def.pool;
        break;
      case LayerDef::Kind::flatten:
        if (flat) throw SpecError("duplicate flatten");
        c = c * h * w;
        h = w = 1;
        flat = true;
        break;
      case LayerDef::Kind::fc:
        if (!flat) {  // implicit flatten, mirroring the model builder
          c = c * h * w;
          h = w = 1;
          flat = true;
        }
        if (def.width <= 0) throw SpecError("fc width must be positive");
        c = def.width;
        saw_fc = true;
        break;
    }
  }
  if (convs < 2) throw SpecError("architecture needs at least two conv layers");
  if (layers.back().kind != LayerDef::Kind::fc) throw SpecError("architecture must end in an fc layer");
}

int ArchSpec::class_count() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (it->kind == LayerDef::Kind::fc) return it->width;
  throw SpecError("architecture has no fc layer");
}

std::uint64_t ArchSpec::hash() const {
  const std::string repr =
      std::to_string(in_c) + "x" + std::to_string(in_h) + "x" + std::to_string(in_w) + ":" + to_string();
  std::uint64_t h = 1469598103934665603ull;
  for (char ch : repr) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace fviz
