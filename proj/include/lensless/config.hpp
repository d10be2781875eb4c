#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lensless/dataset.hpp"
#include "lensless/error.hpp"
#include "lensless/pipeline.hpp"
#include "lensless/training.hpp"

namespace lensless {

// Sectioned key = value files in the TOML grammar, restricted to what the
// configs need: strings, integers, floats, booleans and one-line arrays of
// those. No inline tables, dotted keys or multi-line values.
namespace toml {

struct Value {
  enum class Kind { boolean, integer, floating, string, array } kind = Kind::integer;
  bool b = false;
  std::int64_t i = 0;
  double d = 0.0;
  std::string s;
  std::vector<Value> items;
  int line = 0;
};

struct Entry {
  Value value;
  int line = 0;
};

struct Document {
  std::string origin;  // file name used in diagnostics
  std::map<std::string, std::map<std::string, Entry>> sections;  // "" holds top-level keys
  std::map<std::string, int> section_lines;
};

[[noreturn]] inline void fail(const std::string& origin, int line, const std::string& msg) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

class Parser {
 public:
  Parser(std::string_view text, std::string origin, int line) : t_(text), origin_(std::move(origin)), line_(line) {}

  Value value() {
    skip_ws();
    if (pos_ >= t_.size()) fail(origin_, line_, "missing value");
    Value v;
    v.line = line_;
    const char c = t_[pos_];
    if (c == '"') {
      v.kind = Value::Kind::string;
      v.s = string();
    } else if (c == '[') {
      v.kind = Value::Kind::array;
      ++pos_;
      for (;;) {
        skip_ws();
        if (pos_ < t_.size() && t_[pos_] == ']') {
          ++pos_;
          break;
        }
        v.items.push_back(value());
        if (v.items.back().kind == Value::Kind::array) fail(origin_, line_, "nested arrays are not supported");
        skip_ws();
        if (pos_ < t_.size() && t_[pos_] == ',') {
          ++pos_;
        } else if (pos_ < t_.size() && t_[pos_] == ']') {
          ++pos_;
          break;
        } else {
          fail(origin_, line_, "expected ',' or ']' in array");
        }
      }
    } else {
      const auto end = t_.find_first_of(",] \t", pos_);
      const std::string tok(t_.substr(pos_, end == std::string_view::npos ? std::string_view::npos : end - pos_));
      pos_ += tok.size();
      scalar(tok, v);
    }
    return v;
  }

  void expect_end() {
    skip_ws();
    if (pos_ != t_.size()) fail(origin_, line_, "unexpected trailing text '" + std::string(t_.substr(pos_)) + "'");
  }

 private:
  void skip_ws() {
    while (pos_ < t_.size() && (t_[pos_] == ' ' || t_[pos_] == '\t' || t_[pos_] == '\r')) ++pos_;
  }

  std::string string() {
    std::string out;
    ++pos_;
    while (pos_ < t_.size() && t_[pos_] != '"') {
      char c = t_[pos_++];
      if (c == '\\') {
        if (pos_ >= t_.size()) break;
        const char e = t_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(origin_, line_, std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (pos_ >= t_.size()) fail(origin_, line_, "unterminated string");
    ++pos_;
    return out;
  }

  void scalar(std::string tok, Value& v) {
    if (tok == "true" || tok == "false") {
      v.kind = Value::Kind::boolean;
      v.b = tok == "true";
      return;
    }
    std::erase(tok, '_');
    const char* b = tok.data();
    const char* e = b + tok.size();
    if (!tok.empty() && tok[0] == '+') ++b;
    std::int64_t i = 0;
    if (auto r = std::from_chars(b, e, i); r.ec == std::errc() && r.ptr == e) {
      v.kind = Value::Kind::integer;
      v.i = i;
      v.d = static_cast<double>(i);
      return;
    }
    double d = 0.0;
    if (auto r = std::from_chars(b, e, d); r.ec == std::errc() && r.ptr == e && std::isfinite(d)) {
      v.kind = Value::Kind::floating;
      v.d = d;
      return;
    }
    fail(origin_, line_, "cannot parse value '" + tok + "'");
  }

  std::string_view t_;
  std::string origin_;
  int line_;
  std::size_t pos_ = 0;
};

// Drops a trailing comment, leaving '#' inside strings alone.
inline std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t n = 0; n < line.size(); ++n) {
    if (line[n] == '\\' && in_str) {
      ++n;
    } else if (line[n] == '"') {
      in_str = !in_str;
    } else if (line[n] == '#' && !in_str) {
      return line.substr(0, n);
    }
  }
  return line;
}

inline bool bare_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

inline Document parse(const std::string& text, const std::string& origin = "config") {
  Document doc;
  doc.origin = origin;
  std::istringstream in(text);
  std::string raw, section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.size() < 3 || line.back() != ']' || line[1] == '[') fail(origin, lineno, "malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!bare_key(section)) fail(origin, lineno, "malformed section name '" + section + "'");
      if (doc.section_lines.count(section)) fail(origin, lineno, "duplicate section [" + section + "]");
      doc.section_lines[section] = lineno;
      doc.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(origin, lineno, "expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (!bare_key(key)) fail(origin, lineno, "malformed key '" + key + "'");
    Parser p(std::string_view(line).substr(eq + 1), origin, lineno);
    Entry e{p.value(), lineno};
    p.expect_end();
    auto& sec = doc.sections[section];
    if (sec.count(key)) fail(origin, lineno, "duplicate key '" + key + "'");
    sec.emplace(key, std::move(e));
  }
  return doc;
}

inline Document parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

// Shortest text that reads back to the same double, always with a '.' or
// exponent so it stays a float.
inline std::string format_double(double d) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), d);
  std::string s(buf, r.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out + "\"";
}

/// Typed access to a Document. Every key read is marked; finish() rejects
/// whatever was never asked for.
class Reader {
 public:
  explicit Reader(const Document& d) : doc_(d) {}

  template <class F>
  void get(const std::string& section, const std::string& key, F&& assign) {
    used_sections_.insert(section);
    const auto s = doc_.sections.find(section);
    if (s == doc_.sections.end()) return;
    const auto e = s->second.find(key);
    if (e == s->second.end()) return;
    used_.insert(section + "." + key);
    assign(e->second.value);
  }

  void finish() const {
    for (const auto& [name, line] : doc_.section_lines)
      if (!used_sections_.count(name)) fail(doc_.origin, line, "unknown section [" + name + "]");
    for (const auto& [name, entries] : doc_.sections)
      for (const auto& [key, e] : entries)
        if (!used_.count(name + "." + key)) {
          fail(doc_.origin, e.line,
               "unknown key '" + key + "'" + (name.empty() ? std::string(" at top level") : " in [" + name + "]"));
        }
  }

  std::int64_t integer(const Value& v) const {
    if (v.kind != Value::Kind::integer) fail(doc_.origin, v.line, "expected an integer");
    return v.i;
  }
  double number(const Value& v) const {
    if (v.kind != Value::Kind::integer && v.kind != Value::Kind::floating) fail(doc_.origin, v.line, "expected a number");
    return v.d;
  }
  std::string string(const Value& v) const {
    if (v.kind != Value::Kind::string) fail(doc_.origin, v.line, "expected a string");
    return v.s;
  }
  bool boolean(const Value& v) const {
    if (v.kind != Value::Kind::boolean) fail(doc_.origin, v.line, "expected true or false");
    return v.b;
  }
  std::vector<double> numbers(const Value& v) const {
    if (v.kind != Value::Kind::array) fail(doc_.origin, v.line, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& x : v.items) out.push_back(number(x));
    return out;
  }
  std::vector<int> integers(const Value& v) const {
    if (v.kind != Value::Kind::array) fail(doc_.origin, v.line, "expected an array of integers");
    std::vector<int> out;
    for (const auto& x : v.items) out.push_back(static_cast<int>(integer(x)));
    return out;
  }

  [[noreturn]] void error(const Value& v, const std::string& msg) const { fail(doc_.origin, v.line, msg); }

 private:
  const Document& doc_;
  std::set<std::string> used_sections_, used_;
};

}  // namespace toml

struct MismatchConfig {
  int size = 8;
  int channels = 1;
  double psf_correlation = 2.0;
  std::vector<double> perturbations{0.0, 0.01, 0.05, 0.1};
  std::vector<double> snr_db{30.0, 20.0, 10.0, 0.0};
  double rho_x = kAdmmRhoX;
  double rho_y = kAdmmRhoY;
  double rho_z = kAdmmRhoZ;
  int draws = 20;
};

struct BenchmarkConfig {
  int unrolled_iterations = 20;
  int epochs = 10;         // training epochs for the learned rows
  int timing_images = 20;  // inference time is averaged over at least this many images
};

struct StageConfig {
  ProcessorArch arch = fixed_arch(ProcessorKind::identity);
  bool trainable = false;
};

/// Everything one command needs. One file drives any command.
struct Config {
  std::uint64_t seed = 0;
  DatasetConfig data;
  std::filesystem::path manifest = "data/manifest.jsonl";
  InversionConfig inversion;
  bool inversion_trainable = true;
  StageConfig pre, post;
  LossWeights loss;
  int epochs = kDefaultEpochs;
  int batch_size = kDefaultBatchSize;
  AdamConfig adam;
  double inversion_lr = 0.0;  // 0: same as lr
  bool evaluate_each_epoch = true;
  MismatchConfig mismatch;
  BenchmarkConfig benchmark;

  TrainOptions train_options(int threads) const {
    TrainOptions o;
    o.epochs = epochs;
    o.batch_size = batch_size;
    o.adam = adam;
    o.inversion_lr = inversion_lr;
    o.loss = loss;
    o.seed = seed;
    o.threads = threads;
    o.evaluate_each_epoch = evaluate_each_epoch;
    return o;
  }
};

inline void validate(const Config& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(c.data.shape.height >= 2 && c.data.shape.width >= 2, "data: height and width must be >= 2");
  need(c.data.shape.channels == 1 || c.data.shape.channels == 3, "data: channels must be 1 or 3");
  need(c.data.n_train >= 0 && c.data.n_test >= 0, "data: record counts must be >= 0");
  need(c.data.psf_correlation >= 1.0, "psf: correlation must be >= 1");
  need(c.data.noise.kind == NoiseKind::none || std::isfinite(c.data.noise.target_snr_db), "noise: snr_db must be finite");
  need(c.inversion.n_iter >= 1, "inversion: n_iter must be >= 1");
  need(c.inversion.eps > 0.0, "inversion: eps must be > 0");
  need(c.inversion.fista_iterations >= 1 && c.inversion.pnp_iterations >= 1, "inversion: iteration counts must be >= 1");
  need(c.inversion.fista_tau >= 0.0 && c.inversion.pnp_rho > 0.0, "inversion: fista_tau >= 0 and pnp_rho > 0 required");
  validate(c.pre.arch);
  validate(c.post.arch);
  validate(c.loss);
  need(c.epochs >= 1 && c.batch_size >= 1, "train: epochs and batch_size must be >= 1");
  need(c.adam.lr > 0.0 && c.adam.eps > 0.0, "train: lr and adam_eps must be > 0");
  need(c.inversion_lr >= 0.0, "train: inversion_lr must be >= 0");
  need(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0 && c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0,
       "train: betas must lie in [0, 1)");
  need(c.mismatch.size >= 2 && c.mismatch.size <= 12, "mismatch: size must lie in [2, 12]");
  need(c.mismatch.channels == 1 || c.mismatch.channels == 3, "mismatch: channels must be 1 or 3");
  need(c.mismatch.rho_x > 0 && c.mismatch.rho_y > 0 && c.mismatch.rho_z > 0, "mismatch: rhos must be > 0");
  need(c.mismatch.draws >= 1, "mismatch: draws must be >= 1");
  for (double p : c.mismatch.perturbations) need(p >= 0.0 && p <= 1.0, "mismatch: perturbations must lie in [0, 1]");
  need(c.benchmark.unrolled_iterations >= 1 && c.benchmark.epochs >= 0 && c.benchmark.timing_images >= 1,
       "benchmark: unrolled_iterations >= 1, epochs >= 0 and timing_images >= 1 required");
  if (!c.data.psf_path.empty() && !std::filesystem::exists(c.data.psf_path)) {
    throw ConfigError("psf: path " + c.data.psf_path.string() + " does not exist");
  }
  if (!c.data.scene_dir.empty() && !std::filesystem::is_directory(c.data.scene_dir)) {
    throw ConfigError("data: scene_dir " + c.data.scene_dir.string() + " is not a directory");
  }
}

namespace detail {

inline void read_stage(toml::Reader& r, const std::string& sec, StageConfig& s, int channels) {
  std::vector<int> widths;
  bool have_widths = false;
  r.get(sec, "kind", [&](const toml::Value& v) {
    try {
      s.arch.kind = parse_processor_kind(r.string(v));
    } catch (const ConfigError& e) {
      r.error(v, e.what());
    }
  });
  r.get(sec, "widths", [&](const toml::Value& v) {
    widths = r.integers(v);
    have_widths = true;
  });
  r.get(sec, "kernel_size", [&](const toml::Value& v) { s.arch.kernel_size = static_cast<int>(r.integer(v)); });
  r.get(sec, "slope", [&](const toml::Value& v) { s.arch.slope = r.number(v); });
  r.get(sec, "trainable", [&](const toml::Value& v) { s.trainable = r.boolean(v); });
  if (s.arch.kind == ProcessorKind::conv_stack) {
    s.arch.widths = have_widths ? widths : default_conv_arch(channels).widths;
  } else {
    s.arch.widths.clear();
  }
}

}  // namespace detail

inline Config config_from(const toml::Document& doc) {
  Config c;
  toml::Reader r(doc);
  auto u64 = [&](const toml::Value& v) {
    const auto i = r.integer(v);
    if (i < 0) r.error(v, "expected a non-negative integer");
    return static_cast<std::uint64_t>(i);
  };
  auto i32 = [&](const toml::Value& v) { return static_cast<int>(r.integer(v)); };

  r.get("", "seed", [&](const toml::Value& v) { c.seed = u64(v); });

  auto& d = c.data;
  r.get("data", "out_dir", [&](const toml::Value& v) { d.out_dir = r.string(v); });
  r.get("data", "manifest", [&](const toml::Value& v) { c.manifest = r.string(v); });
  r.get("data", "height", [&](const toml::Value& v) { d.shape.height = i32(v); });
  r.get("data", "width", [&](const toml::Value& v) { d.shape.width = i32(v); });
  r.get("data", "channels", [&](const toml::Value& v) { d.shape.channels = i32(v); });
  r.get("data", "n_train", [&](const toml::Value& v) { d.n_train = i32(v); });
  r.get("data", "n_test", [&](const toml::Value& v) { d.n_test = i32(v); });
  r.get("data", "scene_complexity", [&](const toml::Value& v) { d.scene_complexity = i32(v); });
  r.get("data", "scene_seed", [&](const toml::Value& v) { d.scene_seed = u64(v); });
  r.get("data", "scene_dir", [&](const toml::Value& v) { d.scene_dir = r.string(v); });

  r.get("psf", "seed", [&](const toml::Value& v) { d.psf_seed = u64(v); });
  r.get("psf", "correlation", [&](const toml::Value& v) { d.psf_correlation = r.number(v); });
  r.get("psf", "path", [&](const toml::Value& v) { d.psf_path = r.string(v); });

  r.get("noise", "kind", [&](const toml::Value& v) {
    const auto k = r.string(v);
    if (k == "shot") {
      d.noise.kind = NoiseKind::shot;
    } else if (k == "none") {
      d.noise.kind = NoiseKind::none;
    } else {
      r.error(v, "noise kind must be \"shot\" or \"none\"");
    }
  });
  r.get("noise", "snr_db", [&](const toml::Value& v) { d.noise.target_snr_db = r.number(v); });
  r.get("noise", "seed", [&](const toml::Value& v) { d.noise.seed = u64(v); });

  auto& inv = c.inversion;
  r.get("inversion", "kind", [&](const toml::Value& v) {
    try {
      inv.kind = parse_inversion_kind(r.string(v));
    } catch (const ConfigError& e) {
      r.error(v, e.what());
    }
  });
  r.get("inversion", "n_iter", [&](const toml::Value& v) { inv.n_iter = i32(v); });
  r.get("inversion", "eps", [&](const toml::Value& v) { inv.eps = r.number(v); });
  r.get("inversion", "fista_iterations", [&](const toml::Value& v) { inv.fista_iterations = i32(v); });
  r.get("inversion", "fista_tau", [&](const toml::Value& v) { inv.fista_tau = r.number(v); });
  r.get("inversion", "pnp_iterations", [&](const toml::Value& v) { inv.pnp_iterations = i32(v); });
  r.get("inversion", "pnp_rho", [&](const toml::Value& v) { inv.pnp_rho = r.number(v); });
  r.get("inversion", "trainable", [&](const toml::Value& v) { c.inversion_trainable = r.boolean(v); });

  detail::read_stage(r, "pre", c.pre, d.shape.channels);
  detail::read_stage(r, "post", c.post, d.shape.channels);

  r.get("loss", "mse_weight", [&](const toml::Value& v) { c.loss.mse_weight = r.number(v); });
  r.get("loss", "perceptual_weight", [&](const toml::Value& v) { c.loss.perceptual_weight = r.number(v); });
  r.get("loss", "alpha", [&](const toml::Value& v) { c.loss.alpha = r.number(v); });

  r.get("train", "epochs", [&](const toml::Value& v) { c.epochs = i32(v); });
  r.get("train", "batch_size", [&](const toml::Value& v) { c.batch_size = i32(v); });
  r.get("train", "lr", [&](const toml::Value& v) { c.adam.lr = r.number(v); });
  r.get("train", "beta1", [&](const toml::Value& v) { c.adam.beta1 = r.number(v); });
  r.get("train", "beta2", [&](const toml::Value& v) { c.adam.beta2 = r.number(v); });
  r.get("train", "adam_eps", [&](const toml::Value& v) { c.adam.eps = r.number(v); });
  r.get("train", "inversion_lr", [&](const toml::Value& v) { c.inversion_lr = r.number(v); });
  r.get("train", "evaluate_each_epoch", [&](const toml::Value& v) { c.evaluate_each_epoch = r.boolean(v); });

  auto& m = c.mismatch;
  r.get("mismatch", "size", [&](const toml::Value& v) { m.size = i32(v); });
  r.get("mismatch", "channels", [&](const toml::Value& v) { m.channels = i32(v); });
  r.get("mismatch", "psf_correlation", [&](const toml::Value& v) { m.psf_correlation = r.number(v); });
  r.get("mismatch", "perturbations", [&](const toml::Value& v) { m.perturbations = r.numbers(v); });
  r.get("mismatch", "snr_db", [&](const toml::Value& v) { m.snr_db = r.numbers(v); });
  r.get("mismatch", "rho_x", [&](const toml::Value& v) { m.rho_x = r.number(v); });
  r.get("mismatch", "rho_y", [&](const toml::Value& v) { m.rho_y = r.number(v); });
  r.get("mismatch", "rho_z", [&](const toml::Value& v) { m.rho_z = r.number(v); });
  r.get("mismatch", "draws", [&](const toml::Value& v) { m.draws = i32(v); });

  auto& b = c.benchmark;
  r.get("benchmark", "unrolled_iterations", [&](const toml::Value& v) { b.unrolled_iterations = i32(v); });
  r.get("benchmark", "epochs", [&](const toml::Value& v) { b.epochs = i32(v); });
  r.get("benchmark", "timing_images", [&](const toml::Value& v) { b.timing_images = i32(v); });

  r.finish();
  validate(c);
  return c;
}

inline Config parse_config(const std::string& text, const std::string& origin = "config") {
  return config_from(toml::parse(text, origin));
}

inline Config load_config(const std::filesystem::path& path) { return config_from(toml::parse_file(path)); }

/// Canonical text form; parse_config(to_toml(c)) reproduces c.
inline std::string to_toml(const Config& c) {
  using toml::format_double;
  using toml::quote;
  std::ostringstream o;
  auto list = [](const auto& v, auto fmt) {
    std::string s = "[";
    for (std::size_t n = 0; n < v.size(); ++n) s += (n ? ", " : "") + fmt(v[n]);
    return s + "]";
  };
  auto stage = [&](const char* name, const StageConfig& s) {
    o << "\n[" << name << "]\n";
    o << "kind = " << quote(to_string(s.arch.kind)) << "\n";
    if (s.arch.kind == ProcessorKind::conv_stack) {
      o << "widths = " << list(s.arch.widths, [](int w) { return std::to_string(w); }) << "\n";
      o << "kernel_size = " << s.arch.kernel_size << "\n";
      o << "slope = " << format_double(s.arch.slope) << "\n";
    }
    o << "trainable = " << (s.trainable ? "true" : "false") << "\n";
  };
  const auto& d = c.data;
  o << "seed = " << c.seed << "\n";
  o << "\n[data]\n";
  o << "out_dir = " << quote(d.out_dir.string()) << "\n";
  o << "manifest = " << quote(c.manifest.string()) << "\n";
  o << "height = " << d.shape.height << "\nwidth = " << d.shape.width << "\nchannels = " << d.shape.channels << "\n";
  o << "n_train = " << d.n_train << "\nn_test = " << d.n_test << "\n";
  o << "scene_complexity = " << d.scene_complexity << "\nscene_seed = " << d.scene_seed << "\n";
  o << "scene_dir = " << quote(d.scene_dir.string()) << "\n";
  o << "\n[psf]\n";
  o << "seed = " << d.psf_seed << "\ncorrelation = " << format_double(d.psf_correlation) << "\n";
  o << "path = " << quote(d.psf_path.string()) << "\n";
  o << "\n[noise]\n";
  o << "kind = " << quote(d.noise.kind == NoiseKind::shot ? "shot" : "none") << "\n";
  o << "snr_db = " << format_double(d.noise.target_snr_db) << "\nseed = " << d.noise.seed << "\n";
  const auto& inv = c.inversion;
  o << "\n[inversion]\n";
  o << "kind = " << quote(to_string(inv.kind)) << "\nn_iter = " << inv.n_iter << "\n";
  o << "eps = " << format_double(inv.eps) << "\n";
  o << "fista_iterations = " << inv.fista_iterations << "\nfista_tau = " << format_double(inv.fista_tau) << "\n";
  o << "pnp_iterations = " << inv.pnp_iterations << "\npnp_rho = " << format_double(inv.pnp_rho) << "\n";
  o << "trainable = " << (c.inversion_trainable ? "true" : "false") << "\n";
  stage("pre", c.pre);
  stage("post", c.post);
  o << "\n[loss]\n";
  o << "mse_weight = " << format_double(c.loss.mse_weight) << "\n";
  o << "perceptual_weight = " << format_double(c.loss.perceptual_weight) << "\n";
  o << "alpha = " << format_double(c.loss.alpha) << "\n";
  o << "\n[train]\n";
  o << "epochs = " << c.epochs << "\nbatch_size = " << c.batch_size << "\n";
  o << "lr = " << format_double(c.adam.lr) << "\nbeta1 = " << format_double(c.adam.beta1) << "\n";
  o << "beta2 = " << format_double(c.adam.beta2) << "\nadam_eps = " << format_double(c.adam.eps) << "\n";
  o << "inversion_lr = " << format_double(c.inversion_lr) << "\n";
  o << "evaluate_each_epoch = " << (c.evaluate_each_epoch ? "true" : "false") << "\n";
  const auto& m = c.mismatch;
  o << "\n[mismatch]\n";
  o << "size = " << m.size << "\nchannels = " << m.channels << "\n";
  o << "psf_correlation = " << format_double(m.psf_correlation) << "\n";
  o << "perturbations = " << list(m.perturbations, format_double) << "\n";
  o << "snr_db = " << list(m.snr_db, format_double) << "\n";
  o << "rho_x = " << format_double(m.rho_x) << "\nrho_y = " << format_double(m.rho_y) << "\n";
  o << "rho_z = " << format_double(m.rho_z) << "\ndraws = " << m.draws << "\n";
  o << "\n[benchmark]\n";
  o << "unrolled_iterations = " << c.benchmark.unrolled_iterations << "\nepochs = " << c.benchmark.epochs << "\n";
  o << "timing_images = " << c.benchmark.timing_images << "\n";
  return o.str();
}

/// Pipeline described by the config around the given PSF.
inline Pipeline<float> build_pipeline(const Config& c, const Image& psf) {
  const Trainable t{c.pre.trainable, c.inversion_trainable && (c.inversion.kind == InversionKind::unrolled ||
                                                               c.inversion.kind == InversionKind::tikhonov),
                    c.post.trainable};
  return Pipeline<float>::make(psf, c.inversion, c.pre.arch, c.post.arch, c.seed, t);
}

}  // namespace lensless
