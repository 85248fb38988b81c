#pragma once

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "basis/core.hpp"
#include "basis/scorenet.hpp"
#include "basis/tasks.hpp"

namespace basis {

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

enum class LogLevel { quiet = 0, error = 1, warn = 2, info = 3, debug = 4 };

/// BASIS_LOG = quiet | error | warn | info | debug (default warn).
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("BASIS_LOG");
    if (!env) return LogLevel::warn;
    const std::string v = env;
    if (v == "quiet") return LogLevel::quiet;
    if (v == "error") return LogLevel::error;
    if (v == "info") return LogLevel::info;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::warn;
  }();
  return level;
}

inline void log(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level()) || level == LogLevel::quiet) return;
  static constexpr const char* names[] = {"", "error", "warn", "info", "debug"};
  std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

struct IdxImages {
  std::vector<Signal> images;  // shape [1, rows, cols], values in [0, 1]
  std::size_t rows = 0;
  std::size_t cols = 0;
};

namespace detail {

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at, const std::string& path) {
  if (b.size() < at + 4) throw Error(Errc::format_error, "truncated IDX header at byte offset " + std::to_string(at) + " in " + path);
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) | b[at + 3];
}

inline std::size_t checked_payload(const std::vector<unsigned char>& b, std::size_t header,
                                   const std::vector<std::uint32_t>& dims, const std::string& path) {
  std::size_t total = 1;
  for (auto d : dims) {
    if (d != 0 && total > (std::size_t{1} << 40) / d)
      throw Error(Errc::format_error, "IDX dimension product overflows at byte offset 4 in " + path);
    total *= d;
  }
  if (b.size() < header + total)
    throw Error(Errc::format_error, "truncated IDX payload at byte offset " + std::to_string(b.size()) + " (expected " +
                                        std::to_string(header + total) + " bytes) in " + path);
  return total;
}

}  // namespace detail

inline IdxImages read_idx_images(const std::string& path) {
  const auto b = detail::read_file_bytes(path);
  const std::uint32_t magic = detail::be32(b, 0, path);
  if (magic != 0x00000803)
    throw Error(Errc::format_error, "bad IDX image magic at byte offset 0 in " + path);
  std::vector<std::uint32_t> dims{detail::be32(b, 4, path), detail::be32(b, 8, path), detail::be32(b, 12, path)};
  require(dims[1] >= 1 && dims[2] >= 1, Errc::format_error, "zero image extent at byte offset 8 in " + path);
  const std::size_t header = 16;
  detail::checked_payload(b, header, dims, path);
  IdxImages out;
  out.rows = dims[1];
  out.cols = dims[2];
  const std::size_t plane = out.rows * out.cols;
  out.images.reserve(dims[0]);
  for (std::size_t n = 0; n < dims[0]; ++n) {
    std::vector<double> px(plane);
    for (std::size_t p = 0; p < plane; ++p) px[p] = b[header + n * plane + p] / 255.0;
    out.images.emplace_back(Shape{1, out.rows, out.cols}, std::move(px));
  }
  return out;
}

inline std::vector<int> read_idx_labels(const std::string& path) {
  const auto b = detail::read_file_bytes(path);
  const std::uint32_t magic = detail::be32(b, 0, path);
  if (magic != 0x00000801)
    throw Error(Errc::format_error, "bad IDX label magic at byte offset 0 in " + path);
  std::vector<std::uint32_t> dims{detail::be32(b, 4, path)};
  detail::checked_payload(b, 8, dims, path);
  std::vector<int> labels(dims[0]);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = b[8 + i];
  return labels;
}

/// Images plus labels; the label file is optional (labels default to -1).
inline std::vector<LabeledSignal> read_idx(const std::string& images_path, const std::string& labels_path = "") {
  auto imgs = read_idx_images(images_path);
  std::vector<int> labels;
  if (!labels_path.empty()) {
    labels = read_idx_labels(labels_path);
    require(labels.size() == imgs.images.size(), Errc::format_error,
            "label count " + std::to_string(labels.size()) + " does not match image count " +
                std::to_string(imgs.images.size()));
  }
  std::vector<LabeledSignal> out;
  out.reserve(imgs.images.size());
  for (std::size_t i = 0; i < imgs.images.size(); ++i)
    out.push_back({std::move(imgs.images[i]), labels.empty() ? -1 : labels[i]});
  return out;
}

// ---------------------------------------------------------------------------
// PNM
// ---------------------------------------------------------------------------

/// Clamp to [0, 1] and round half up to 8 bits.
inline unsigned char quantize_byte(double v) {
  const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
  return static_cast<unsigned char>(std::floor(c * 255.0 + 0.5));
}

/// [1,H,W] -> P5, [3,H,W] -> P6 (channel planes are interleaved per pixel).
inline std::string encode_pnm(const Signal& s) {
  const auto& dims = s.shape().dims();
  require(dims.size() == 3 && (dims[0] == 1 || dims[0] == 3), Errc::invalid_argument,
          "PNM output needs shape [1,H,W] or [3,H,W], got " + s.shape().str());
  const std::size_t c = dims[0], h = dims[1], w = dims[2], plane = h * w;
  std::string out = (c == 1 ? "P5\n" : "P6\n") + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + c * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out.push_back(static_cast<char>(quantize_byte(s[ch * plane + p])));
  return out;
}

inline Signal decode_pnm(const std::vector<unsigned char>& b, const std::string& name = "<memory>") {
  std::size_t pos = 0;
  auto skip_space = [&] {
    for (;;) {
      while (pos < b.size() && std::isspace(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        return;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    const std::size_t at = pos;
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos] - '0');
      if (v > (1u << 24)) throw Error(Errc::format_error, std::string("PNM ") + what + " too large at byte offset " + std::to_string(at) + " in " + name);
      ++pos;
    }
    if (pos == at) throw Error(Errc::format_error, std::string("expected PNM ") + what + " at byte offset " + std::to_string(at) + " in " + name);
    return v;
  };
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6'))
    throw Error(Errc::format_error, "unsupported PNM magic at byte offset 0 in " + name);
  const std::size_t c = b[1] == '5' ? 1 : 3;
  pos = 2;
  const std::size_t w = read_int("width"), h = read_int("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = read_int("maxval");
  if (maxval != 255) throw Error(Errc::format_error, "unsupported PNM maxval at byte offset " + std::to_string(maxval_at) + " in " + name);
  require(w >= 1 && h >= 1, Errc::format_error, "zero PNM extent in " + name);
  if (pos >= b.size() || !std::isspace(b[pos])) throw Error(Errc::format_error, "missing PNM header terminator at byte offset " + std::to_string(pos) + " in " + name);
  ++pos;
  const std::size_t plane = w * h;
  if (b.size() - pos < c * plane) throw Error(Errc::format_error, "truncated PNM raster at byte offset " + std::to_string(b.size()) + " in " + name);
  Signal s(Shape{c, h, w});
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) s[ch * plane + p] = b[pos + p * c + ch] / 255.0;
  return s;
}

inline Signal read_pnm(const std::string& path) { return decode_pnm(detail::read_file_bytes(path), path); }

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::io_error, "cannot write " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), Errc::io_error, "write failed for " + path);
}

inline void write_pnm(const std::string& path, const Signal& s) { write_file(path, encode_pnm(s)); }

// ---------------------------------------------------------------------------
// CSV datasets
// ---------------------------------------------------------------------------

inline std::vector<double> parse_number_list(std::string_view text, char sep, const std::string& context) {
  std::vector<double> out;
  std::string cell;
  std::stringstream ss{std::string(text)};
  while (std::getline(ss, cell, sep)) {
    const auto a = cell.find_first_not_of(" \t\r");
    const auto z = cell.find_last_not_of(" \t\r");
    if (a == std::string::npos) throw Error(Errc::format_error, "empty field in " + context);
    cell = cell.substr(a, z - a + 1);
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size() || !std::isfinite(v))
      throw Error(Errc::format_error, "not a finite number '" + cell + "' in " + context);
    out.push_back(v);
  }
  return out;
}

/// One signal per non-empty line. With `labeled`, the first field is an
/// integer label. Every row must hold exactly shape.size() values.
inline std::vector<LabeledSignal> read_csv_dataset(const std::string& path, const Shape& shape, bool labeled) {
  std::ifstream in(path);
  require(static_cast<bool>(in), Errc::io_error, "cannot open " + path);
  std::vector<LabeledSignal> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    const std::string ctx = path + " line " + std::to_string(lineno);
    auto values = parse_number_list(line, ',', ctx);
    int label = -1;
    if (labeled) {
      require(!values.empty(), Errc::format_error, "missing label in " + ctx);
      label = static_cast<int>(values.front());
      values.erase(values.begin());
    }
    require(values.size() == shape.size(), Errc::format_error,
            "expected " + std::to_string(shape.size()) + " values, found " + std::to_string(values.size()) + " in " + ctx);
    out.push_back({Signal(shape, std::move(values)), label});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flat key = value configuration
// ---------------------------------------------------------------------------

/// Grammar: one `key = value` per line; `#` starts a comment line; blank lines
/// are ignored; keys are unique. Typed accessors raise E_CONFIG naming the key.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& source = "<config>") {
    Config c;
    c.source_ = source;
    std::stringstream ss{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(Errc::config_error, source + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      if (key.empty()) throw Error(Errc::config_error, source + ":" + std::to_string(lineno) + ": empty key");
      if (c.values_.count(key))
        throw Error(Errc::config_error, source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.values_[key] = value;
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), Errc::io_error, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key, const std::optional<std::string>& fallback = std::nullopt) const {
    used_.push_back(key);
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    if (fallback) return *fallback;
    throw Error(Errc::config_error, "missing required key '" + key + "' in " + source_);
  }

  double real(const std::string& key, std::optional<double> fallback = std::nullopt) const {
    if (!has(key) && fallback) {
      used_.push_back(key);
      return *fallback;
    }
    const std::string v = str(key);
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d))
      throw Error(Errc::config_error, "key '" + key + "' expects a finite number, got '" + v + "'");
    return d;
  }

  std::uint64_t integer(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) const {
    if (!has(key) && fallback) {
      used_.push_back(key);
      return *fallback;
    }
    const std::string v = str(key);
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char ch) { return std::isdigit(ch); }))
      throw Error(Errc::config_error, "key '" + key + "' expects a non-negative integer, got '" + v + "'");
    errno = 0;
    const unsigned long long n = std::strtoull(v.c_str(), nullptr, 10);
    if (errno == ERANGE) throw Error(Errc::config_error, "key '" + key + "' is out of range");
    return n;
  }

  bool boolean(const std::string& key, std::optional<bool> fallback = std::nullopt) const {
    if (!has(key) && fallback) {
      used_.push_back(key);
      return *fallback;
    }
    const std::string v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error(Errc::config_error, "key '" + key + "' expects true or false, got '" + v + "'");
  }

  std::vector<double> reals(const std::string& key) const {
    const std::string v = str(key);
    try {
      return parse_number_list(v, ',', "key '" + key + "'");
    } catch (const Error& e) {
      throw Error(Errc::config_error, e.what());
    }
  }

  std::string choice(const std::string& key, const std::vector<std::string>& allowed,
                     const std::optional<std::string>& fallback = std::nullopt) const {
    const std::string v = str(key, fallback);
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : "|") + a;
      throw Error(Errc::config_error, "key '" + key + "' must be one of " + list + ", got '" + v + "'");
    }
    return v;
  }

  /// Keys present in the file that no accessor asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (std::find(used_.begin(), used_.end(), k) == used_.end()) out.push_back(k);
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto z = s.find_last_not_of(" \t\r");
    return s.substr(a, z - a + 1);
  }

  std::string source_;
  std::map<std::string, std::string> values_;
  mutable std::vector<std::string> used_;
};

// ---------------------------------------------------------------------------
// JSON output
// ---------------------------------------------------------------------------

/// Streaming JSON writer with a fixed two-space layout. Numbers use 17
/// significant digits; non-finite values are written as null.
class JsonWriter {
 public:
  JsonWriter& begin_object() { return open('{'); }
  JsonWriter& end_object() { return close('}'); }
  JsonWriter& begin_array() { return open('['); }
  JsonWriter& end_array() { return close(']'); }

  JsonWriter& key(std::string_view k) {
    separator();
    write_string(k);
    out_ += ": ";
    after_key_ = true;
    return *this;
  }

  JsonWriter& value(double v) {
    separator();
    raw(v);
    return *this;
  }
  JsonWriter& value(std::uint64_t v) {
    separator();
    raw(v);
    return *this;
  }
  JsonWriter& value(int v) {
    separator();
    raw(v);
    return *this;
  }
  JsonWriter& value(bool v) {
    separator();
    raw(v);
    return *this;
  }
  JsonWriter& value(std::string_view s) {
    separator();
    raw(s);
    return *this;
  }
  JsonWriter& value(const char* s) { return value(std::string_view(s)); }
  JsonWriter& null() {
    separator();
    out_ += "null";
    return *this;
  }

  /// Scalar arrays are written on one line.
  template <class T>
  JsonWriter& array(const std::vector<T>& values) {
    separator();
    out_ += '[';
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out_ += ", ";
      raw(values[i]);
    }
    out_ += ']';
    return *this;
  }

  template <class T>
  JsonWriter& field(std::string_view k, const T& v) {
    key(k);
    if constexpr (requires { v.begin(); } && !std::is_convertible_v<T, std::string_view>)
      return array(v);
    else
      return value(v);
  }

  const std::string& str() const { return out_; }
  std::string finish() const { return out_ + "\n"; }

 private:
  void raw(double v) {
    if (!std::isfinite(v)) {
      out_ += "null";
      return;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out_ += buf;
  }
  void raw(std::uint64_t v) { out_ += std::to_string(v); }
  void raw(int v) { out_ += std::to_string(v); }
  void raw(bool v) { out_ += v ? "true" : "false"; }
  void raw(std::string_view s) { write_string(s); }

  JsonWriter& open(char c) {
    separator();
    out_ += c;
    first_.push_back(true);
    return *this;
  }
  JsonWriter& close(char c) {
    const bool empty = first_.back();
    first_.pop_back();
    if (!empty) newline();
    out_ += c;
    return *this;
  }
  void separator() {
    if (after_key_) {
      after_key_ = false;
      return;
    }
    if (first_.empty()) return;
    if (!first_.back()) out_ += ",";
    first_.back() = false;
    newline();
  }
  void newline() {
    out_ += "\n";
    out_.append(2 * first_.size(), ' ');
  }
  void write_string(std::string_view s) {
    out_ += '"';
    for (char ch : s) {
      switch (ch) {
        case '"': out_ += "\\\""; break;
        case '\\': out_ += "\\\\"; break;
        case '\n': out_ += "\\n"; break;
        case '\t': out_ += "\\t"; break;
        case '\r': out_ += "\\r"; break;
        default:
          if (static_cast<unsigned char>(ch) < 0x20) {
            char buf[8];
            std::snprintf(buf, sizeof buf, "\\u%04x", static_cast<unsigned>(static_cast<unsigned char>(ch)));
            out_ += buf;
          } else {
            out_ += ch;
          }
      }
    }
    out_ += '"';
  }

  std::string out_;
  std::vector<bool> first_;
  bool after_key_ = false;
};

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Collects artifacts in memory and writes them, plus a manifest listing
/// each file's FNV-1a 64 hash and size, in one pass.
class RunDirectory {
 public:
  explicit RunDirectory(std::string root) : root_(std::move(root)) {}

  void add(const std::string& relative, std::string bytes) {
    for (auto& f : files_)
      if (f.first == relative) {
        f.second = std::move(bytes);
        return;
      }
    files_.emplace_back(relative, std::move(bytes));
  }

  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }
  const std::string& root() const { return root_; }

  std::string manifest() const {
    std::string out;
    for (const auto& [name, bytes] : files_) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
      out += std::string(buf) + "  " + std::to_string(bytes.size()) + "  " + name + "\n";
    }
    return out;
  }

  void flush() const {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root_, ec);
    require(!ec, Errc::io_error, "cannot create output directory " + root_ + ": " + ec.message());
    for (const auto& [name, bytes] : files_) {
      const fs::path p = fs::path(root_) / name;
      fs::create_directories(p.parent_path(), ec);
      require(!ec, Errc::io_error, "cannot create directory " + p.parent_path().string());
      write_file(p.string(), bytes);
    }
    write_file((fs::path(root_) / "manifest.txt").string(), manifest());
  }

 private:
  std::string root_;
  std::vector<std::pair<std::string, std::string>> files_;
};

}  // namespace basis
