#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <boost/crc.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "common.hpp"

namespace gensart::io {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------------------------
// Raw float32 arrays with a JSON sidecar (<file>.json)

struct RawArray {
  std::vector<int> shape;  // slowest-first
  double spacing = 1.0;    // voxel size or detector pitch
  std::string kind;        // "phantom", "volume", "sinogram", ...
  Vec values;
  json meta = json::object();

  size_t count() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }
};

inline std::string sidecar_path(const std::string& path) { return path + ".json"; }

inline std::string crc32_hex(const std::string& bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc.checksum();
  return os.str();
}

inline std::string to_le_float32(std::span<const double> v) {
  std::string out(v.size() * 4, '\0');
  for (size_t i = 0; i < v.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v[i]));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(out.data() + 4 * i, &bits, 4);
  }
  return out;
}

inline Vec from_le_float32(const std::string& bytes) {
  Vec v(bytes.size() / 4);
  for (size_t i = 0; i < v.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    v[i] = std::bit_cast<float>(bits);
  }
  return v;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_raw(const std::string& path, const RawArray& a) {
  require(a.values.size() == a.count(), "array size does not match its shape");
  const std::string payload = to_le_float32(a.values);
  write_text(path, payload);
  json side;
  side["format"] = "gensart-raw";
  side["dtype"] = "float32";
  side["endianness"] = "little";
  side["shape"] = a.shape;
  side["spacing"] = a.spacing;
  side["kind"] = a.kind;
  side["crc32"] = crc32_hex(payload);
  side["meta"] = a.meta;
  write_text(sidecar_path(path), side.dump(2) + "\n");
}

inline RawArray read_raw(const std::string& path) {
  json side;
  try {
    side = json::parse(read_text(sidecar_path(path)));
  } catch (const json::exception& e) {
    throw ConfigError("malformed sidecar '" + sidecar_path(path) + "': " + e.what());
  }
  RawArray a;
  try {
    require(side.at("dtype") == "float32" && side.at("endianness") == "little",
            "sidecar '" + sidecar_path(path) + "' must describe little-endian float32");
    a.shape = side.at("shape").get<std::vector<int>>();
    a.spacing = side.at("spacing").get<double>();
    a.kind = side.at("kind").get<std::string>();
    if (side.contains("meta")) a.meta = side["meta"];
  } catch (const json::exception& e) {
    throw ConfigError("sidecar '" + sidecar_path(path) + "' is missing a field: " + e.what());
  }
  const std::string payload = read_text(path);
  require(payload.size() == a.count() * 4, "payload '" + path + "' has " + std::to_string(payload.size()) +
                                               " bytes, shape needs " + std::to_string(a.count() * 4));
  require(crc32_hex(payload) == side.at("crc32").get<std::string>(), "checksum mismatch for '" + path + "'");
  a.values = from_le_float32(payload);
  return a;
}

// ---------------------------------------------------------------------------------------------
// PGM slices

/// 8-bit binary PGM, row 0 at the top; the window is recorded in <file>.json.
inline void write_pgm(const std::string& path, int width, int height, std::span<const double> v, double lo,
                      double hi, json meta = json::object()) {
  require(v.size() == static_cast<size_t>(width) * height, "slice size does not match width x height");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (double x : v) out.push_back(static_cast<char>(std::lround(std::clamp((x - lo) / span, 0.0, 1.0) * 255)));
  write_text(path, out);
  meta["window_min"] = lo;
  meta["window_max"] = hi;
  meta["width"] = width;
  meta["height"] = height;
  write_text(sidecar_path(path), meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------------------------
// Comparison metrics over a mask

struct CompareMetrics {
  double psnr = 0.0;  // +inf when identical
  double rel_l2 = 0.0;
  double correlation = 0.0;
};

inline CompareMetrics compare(std::span<const double> a, std::span<const double> truth,
                              const std::vector<std::uint8_t>& mask) {
  require(a.size() == truth.size(), "volumes to compare must have the same shape");
  double lo = INFINITY, hi = -INFINITY, se = 0.0, tt = 0.0, n = 0.0, ma = 0.0, mt = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    lo = std::min(lo, truth[i]);
    hi = std::max(hi, truth[i]);
    se += (a[i] - truth[i]) * (a[i] - truth[i]);
    tt += truth[i] * truth[i];
    ma += a[i];
    mt += truth[i];
    n += 1;
  }
  require(n > 0, "comparison mask is empty");
  ma /= n;
  mt /= n;
  double caa = 0.0, ctt = 0.0, cat = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    caa += (a[i] - ma) * (a[i] - ma);
    ctt += (truth[i] - mt) * (truth[i] - mt);
    cat += (a[i] - ma) * (truth[i] - mt);
  }
  CompareMetrics m;
  const double range = hi > lo ? hi - lo : std::max(std::abs(hi), 1.0);
  m.psnr = se == 0 ? INFINITY : 20 * std::log10(range / std::sqrt(se / n));
  m.rel_l2 = tt > 0 ? std::sqrt(se / tt) : std::sqrt(se);
  m.correlation = caa > 0 && ctt > 0 ? cat / std::sqrt(caa * ctt) : (se == 0 ? 1.0 : 0.0);
  return m;
}

inline std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// INI configuration with a fixed schema

struct KeySpec {
  std::string section, key;
  std::optional<std::string> fallback;  // nullopt: required
  std::string doc;
};

/// Flat INI sections; every key must be declared in the schema, required keys must be present.
class Config {
 public:
  Config(std::vector<KeySpec> schema, const std::string& path) : schema_(std::move(schema)) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("cannot parse config '" + path + "': " + e.message() + " (line " +
                        std::to_string(e.line()) + ")");
    }
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty())
        throw ConfigError("config key '" + section + "' must live inside a [section]");
      for (const auto& [key, value] : body) {
        const std::string name = section + "." + key;
        if (!find(section, key)) throw ConfigError("unknown config key '" + name + "'");
        values_[name] = trim(value.data());
      }
    }
    for (const auto& k : schema_) {
      const std::string name = k.section + "." + k.key;
      if (values_.count(name)) continue;
      if (!k.fallback) throw ConfigError("missing required config key '" + name + "'");
      values_[name] = *k.fallback;
    }
  }

  const std::string& str(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("config key '" + name + "' is not in the schema");
    return it->second;
  }

  double num(const std::string& name) const {
    const std::string& s = str(name);
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::logic_error&) {
      throw ConfigError("config key '" + name + "' must be a number (got '" + s + "')");
    }
  }

  long integer(const std::string& name) const {
    double v = num(name);
    if (v != std::floor(v)) throw ConfigError("config key '" + name + "' must be an integer (got '" + str(name) + "')");
    return static_cast<long>(v);
  }

  bool flag(const std::string& name) const {
    const std::string& s = str(name);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + name + "' must be true/false (got '" + s + "')");
  }

  bool is_auto(const std::string& name) const { return str(name) == "auto"; }

  /// Value restricted to a fixed set of choices.
  const std::string& choice(const std::string& name, std::initializer_list<const char*> allowed) const {
    const std::string& s = str(name);
    std::string list;
    for (const char* a : allowed) {
      if (s == a) return s;
      list += std::string(list.empty() ? "" : "|") + a;
    }
    throw ConfigError("config key '" + name + "' must be one of " + list + " (got '" + s + "')");
  }

  /// Resolved configuration (defaults included), in schema order.
  std::string dump() const {
    std::ostringstream os;
    std::string current;
    for (const auto& k : schema_) {
      if (k.section != current) {
        os << (current.empty() ? "" : "\n") << "[" << k.section << "]\n";
        current = k.section;
      }
      os << k.key << " = " << values_.at(k.section + "." + k.key) << "\n";
    }
    return os.str();
  }

  json to_json() const {
    json j = json::object();
    for (const auto& k : schema_) j[k.section][k.key] = values_.at(k.section + "." + k.key);
    return j;
  }

 private:
  static std::string trim(std::string s) {
    auto b = s.find_first_not_of(" \t\r\n"), e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  bool find(const std::string& section, const std::string& key) const {
    return std::any_of(schema_.begin(), schema_.end(),
                       [&](const KeySpec& k) { return k.section == section && k.key == key; });
  }

  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
};

}  // namespace gensart::io
