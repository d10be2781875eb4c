#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lensless/config.hpp"
#include "lensless/tensor_io.hpp"
#include "lensless/training.hpp"

namespace lensless {

// Layout: magic "LLCKPT", u32 version, u32 index length, the index (compact
// JSON: blob names, kinds, offsets, sizes and a few scalars), then the blobs.
// Parameter vectors and the PSF are LTNSR1 tensors; config, history and
// optimizer state are text.
inline constexpr std::array<char, 6> kCheckpointMagic = {'L', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct PipelineCheckpoint {
  std::string config_text;  // canonical config echo
  Image psf;                // PSF the inversion uses (trained for a learned PSF leaf)
  int centroid_i = 0, centroid_j = 0;
  double psf_scale = 1.0;
  std::vector<float> pre, inversion, post;
  TrainState state;
};

namespace detail {

inline Image as_column(const std::vector<float>& v) {
  return Image(Shape{static_cast<int>(v.size()), 1, 1}, v);
}

inline std::vector<float> from_column(const Image& t, const char* name) {
  if (t.width() != 1 || t.channels() != 1) throw FormatError(std::string("checkpoint: blob '") + name + "' is not a vector");
  return std::vector<float>(t.values().begin(), t.values().end());
}

inline std::string history_text(const std::vector<EpochRecord>& h) {
  std::string out;
  for (const auto& r : h) out += r.to_json().dump() + "\n";
  return out;
}

inline std::string optimizer_text(const TrainState& s) {
  nlohmann::json j;
  j["step"] = s.adam.step;
  j["lr"] = s.adam.config.lr;
  j["beta1"] = s.adam.config.beta1;
  j["beta2"] = s.adam.config.beta2;
  j["eps"] = s.adam.config.eps;
  j["m"] = s.adam.m;
  j["v"] = s.adam.v;
  if (!s.adam.lr_scale.empty()) j["lr_scale"] = s.adam.lr_scale;
  return j.dump();
}

}  // namespace detail

inline std::string encode_checkpoint(const PipelineCheckpoint& c) {
  struct Blob {
    std::string name, kind, bytes;
  };
  const std::vector<Blob> blobs = {
      {"config", "text", c.config_text},
      {"psf", "ltnsr", ltnsr::encode(c.psf)},
      {"pre", "ltnsr", ltnsr::encode(detail::as_column(c.pre))},
      {"inversion", "ltnsr", ltnsr::encode(detail::as_column(c.inversion))},
      {"post", "ltnsr", ltnsr::encode(detail::as_column(c.post))},
      {"history", "text", detail::history_text(c.state.history)},
      {"optimizer", "text", detail::optimizer_text(c.state)},
  };
  nlohmann::json index;
  index["epochs_done"] = c.state.epochs_done;
  index["centroid"] = {c.centroid_i, c.centroid_j};
  index["psf_scale"] = c.psf_scale;
  std::size_t offset = 0;
  for (const auto& b : blobs) {
    index["blobs"].push_back({{"name", b.name}, {"kind", b.kind}, {"offset", offset}, {"size", b.bytes.size()}});
    offset += b.bytes.size();
  }
  const std::string idx = index.dump();
  std::string out(kCheckpointMagic.data(), kCheckpointMagic.size());
  ltnsr::put_u32(out, kCheckpointVersion);
  ltnsr::put_u32(out, static_cast<std::uint32_t>(idx.size()));
  out += idx;
  for (const auto& b : blobs) out += b.bytes;
  return out;
}

inline PipelineCheckpoint decode_checkpoint(std::string_view bytes) {
  constexpr std::size_t head = 6 + 4 + 4;
  if (bytes.size() < head || std::memcmp(bytes.data(), kCheckpointMagic.data(), 6) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = ltnsr::get_u32(p + 6);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (this build reads " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t idx_len = ltnsr::get_u32(p + 10);
  if (bytes.size() - head < idx_len) throw FormatError("checkpoint: truncated index");
  PipelineCheckpoint c;
  try {
    const auto index = nlohmann::json::parse(bytes.substr(head, idx_len));
    const std::string_view payload = bytes.substr(head + idx_len);
    std::size_t expected = 0;
    auto blob = [&](const std::string& name) -> std::string_view {
      for (const auto& b : index.at("blobs"))
        if (b.at("name") == name) {
          const auto off = b.at("offset").get<std::size_t>(), size = b.at("size").get<std::size_t>();
          if (off > payload.size() || payload.size() - off < size) throw FormatError("checkpoint: truncated blob " + name);
          return payload.substr(off, size);
        }
      throw FormatError("checkpoint: missing blob " + name);
    };
    for (const auto& b : index.at("blobs")) expected += b.at("size").get<std::size_t>();
    if (expected != payload.size()) throw FormatError("checkpoint: payload size does not match the index");
    auto tensor = [&](const std::string& name) {
      const auto s = blob(name);
      std::size_t off = 0;
      Image t = ltnsr::decode(s, off);
      if (off != s.size()) throw FormatError("checkpoint: trailing bytes in blob " + name);
      return t;
    };
    c.config_text = std::string(blob("config"));
    c.psf = tensor("psf");
    c.pre = detail::from_column(tensor("pre"), "pre");
    c.inversion = detail::from_column(tensor("inversion"), "inversion");
    c.post = detail::from_column(tensor("post"), "post");
    c.centroid_i = index.at("centroid").at(0).get<int>();
    c.centroid_j = index.at("centroid").at(1).get<int>();
    c.psf_scale = index.at("psf_scale").get<double>();
    c.state.epochs_done = index.at("epochs_done").get<int>();
    std::istringstream hist{std::string(blob("history"))};
    for (std::string line; std::getline(hist, line);)
      if (!line.empty()) c.state.history.push_back(EpochRecord::from_json(nlohmann::json::parse(line)));
    const auto opt = nlohmann::json::parse(blob("optimizer"));
    c.state.adam.step = opt.at("step").get<long>();
    c.state.adam.config = AdamConfig{opt.at("lr").get<double>(), opt.at("beta1").get<double>(),
                                     opt.at("beta2").get<double>(), opt.at("eps").get<double>()};
    c.state.adam.m = opt.at("m").get<std::vector<double>>();
    c.state.adam.v = opt.at("v").get<std::vector<double>>();
    if (opt.contains("lr_scale")) c.state.adam.lr_scale = opt.at("lr_scale").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed index or record: ") + e.what());
  }
  return c;
}

inline void save_checkpoint(const PipelineCheckpoint& c, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(c));
}

inline PipelineCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

inline std::vector<float> inversion_values(const Pipeline<float>& p) {
  if (p.inversion.kind == InversionKind::unrolled) return p.unrolled.flat();
  if (p.inversion.kind == InversionKind::tikhonov) return {p.raw_eps};
  return {};
}

inline PipelineCheckpoint make_checkpoint(const Config& c, const Pipeline<float>& p, const TrainState& s) {
  PipelineCheckpoint k;
  k.config_text = to_toml(c);
  k.psf = p.psf;
  k.centroid_i = p.kernel.centroid_i;
  k.centroid_j = p.kernel.centroid_j;
  k.psf_scale = p.psf_scale;
  k.pre = p.pre.values;
  k.inversion = inversion_values(p);
  k.post = p.post.values;
  k.state = s;
  return k;
}

struct Restored {
  Config config;
  Pipeline<float> pipeline;
  TrainState state;
};

/// Rebuilds the pipeline a checkpoint describes. Vector lengths must match
/// the architectures of the echoed config.
inline Restored restore(const PipelineCheckpoint& k) {
  Restored r;
  r.config = parse_config(k.config_text, "checkpoint config");
  r.pipeline = build_pipeline(r.config, k.psf);
  auto& p = r.pipeline;
  auto check = [](std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
      throw ShapeError(std::string("checkpoint: ") + what + " has " + std::to_string(got) + " values, config expects " +
                       std::to_string(want));
    }
  };
  check(k.pre.size(), p.pre.values.size(), "pre-processor");
  check(k.post.size(), p.post.values.size(), "post-processor");
  check(k.inversion.size(), inversion_values(p).size(), "inversion block");
  p.pre.values = k.pre;
  p.post.values = k.post;
  if (p.inversion.kind == InversionKind::unrolled) p.unrolled = UnrolledParams<float>::from_flat(k.inversion);
  if (p.inversion.kind == InversionKind::tikhonov) p.raw_eps = k.inversion[0];
  p.psf_scale = static_cast<float>(k.psf_scale);
  p.kernel = plan_kernel_with_shift(p.psf, k.centroid_i, k.centroid_j);
  r.state = k.state;
  check(r.state.adam.m.size(), p.param_count(), "optimizer state");
  check(r.state.adam.v.size(), p.param_count(), "optimizer state");
  if (!r.state.adam.lr_scale.empty()) check(r.state.adam.lr_scale.size(), p.param_count(), "optimizer state");
  return r;
}

}  // namespace lensless
