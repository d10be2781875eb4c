#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lensless/error.hpp"
#include "lensless/forward_sim.hpp"
#include "lensless/parallel.hpp"
#include "lensless/tensor_io.hpp"

namespace lensless {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw FormatError("manifest: unknown split '" + s + "'");
}

struct DatasetConfig {
  std::filesystem::path out_dir = "data";
  Shape shape{128, 128, 3};
  int n_train = 200;
  int n_test = 50;
  std::uint64_t psf_seed = 7;
  double psf_correlation = 2.0;
  std::filesystem::path psf_path;   // optional; overrides the synthetic PSF
  int scene_complexity = 8;
  std::uint64_t scene_seed = 1000;  // test scenes use scene_seed + i
  std::filesystem::path scene_dir;  // optional directory of PNG scenes
  NoiseSpec noise{NoiseKind::shot, 20.0, 17};
  int threads = 1;
};

// Train scenes draw from a seed range disjoint from the test range.
inline constexpr std::uint64_t kTrainSeedOffset = 1'000'000;

struct ManifestRecord {
  std::string scene_path;        // relative to the manifest directory
  std::string measurement_path;  // relative to the manifest directory
  double snr_db = 0.0;           // NaN-free; 0 with noise kind none
  std::uint64_t seed = 0;        // scene seed
  std::uint64_t noise_seed = 0;
  Split split = Split::train;
};

struct DatasetManifest {
  std::filesystem::path location;  // path of the manifest file
  std::string psf_path;            // relative to the manifest directory
  Split split_filter = Split::train;
  nlohmann::json generator;        // generator config echo
  std::vector<ManifestRecord> records;

  std::filesystem::path base_dir() const { return location.parent_path(); }
  std::filesystem::path resolve(const std::string& rel) const { return base_dir() / rel; }

  std::vector<const ManifestRecord*> split(Split s) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records)
      if (r.split == s) out.push_back(&r);
    return out;
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t record_noise_seed(std::uint64_t noise_seed, std::uint64_t scene_seed) {
  return splitmix64(noise_seed ^ splitmix64(scene_seed));
}

inline nlohmann::json to_json(const DatasetConfig& c) {
  nlohmann::json j;
  j["height"] = c.shape.height;
  j["width"] = c.shape.width;
  j["channels"] = c.shape.channels;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["psf_seed"] = c.psf_seed;
  j["psf_correlation"] = c.psf_correlation;
  j["psf_path"] = c.psf_path.string();
  j["scene_complexity"] = c.scene_complexity;
  j["scene_seed"] = c.scene_seed;
  j["scene_dir"] = c.scene_dir.string();
  j["noise_kind"] = c.noise.kind == NoiseKind::shot ? "shot" : "none";
  j["snr_db"] = c.noise.target_snr_db;
  j["noise_seed"] = c.noise.seed;
  return j;
}

/// Bilinear resample used for imported scenes.
template <class T>
Tensor3<T> resize_bilinear(const Tensor3<T>& in, int h, int w, int channels) {
  const Tensor3<T> src = broadcast_channels(in, channels);
  Tensor3<T> out(h, w, channels);
  for (int i = 0; i < h; ++i) {
    const double si = std::clamp((i + 0.5) * src.height() / h - 0.5, 0.0, src.height() - 1.0);
    const int i0 = static_cast<int>(si), i1 = std::min(i0 + 1, src.height() - 1);
    const double fi = si - i0;
    for (int j = 0; j < w; ++j) {
      const double sj = std::clamp((j + 0.5) * src.width() / w - 0.5, 0.0, src.width() - 1.0);
      const int j0 = static_cast<int>(sj), j1 = std::min(j0 + 1, src.width() - 1);
      const double fj = sj - j0;
      for (int k = 0; k < channels; ++k) {
        out(i, j, k) = static_cast<T>((1 - fi) * ((1 - fj) * src(i0, j0, k) + fj * src(i0, j1, k)) +
                                      fi * ((1 - fj) * src(i1, j0, k) + fj * src(i1, j1, k)));
      }
    }
  }
  return out;
}

/// PSF for a dataset config: loaded from psf_path when set, synthetic otherwise.
inline Image dataset_psf(const DatasetConfig& c) {
  if (!c.psf_path.empty()) {
    Image psf = load_image_any(c.psf_path);
    if (psf.height() != c.shape.height || psf.width() != c.shape.width) {
      psf = resize_bilinear(psf, c.shape.height, c.shape.width, psf.channels());
    }
    return broadcast_channels(psf, c.shape.channels);
  }
  return synth_psf<float>(c.psf_seed, c.shape, c.psf_correlation);
}

inline std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  if (ec) throw IoError("cannot list scene directory " + dir.string() + ": " + ec.message());
  std::sort(files.begin(), files.end());
  return files;
}

inline nlohmann::json to_json(const ManifestRecord& r) {
  nlohmann::json j;
  j["kind"] = "record";
  j["split"] = to_string(r.split);
  j["scene_path"] = r.scene_path;
  j["measurement_path"] = r.measurement_path;
  j["snr_db"] = r.snr_db;
  j["seed"] = r.seed;
  j["noise_seed"] = r.noise_seed;
  return j;
}

inline void write_manifest(const DatasetManifest& m) {
  std::ostringstream out;
  nlohmann::json header;
  header["kind"] = "header";
  header["format"] = "lensless-manifest/1";
  header["psf_path"] = m.psf_path;
  header["generator"] = m.generator;
  out << header.dump() << '\n';
  for (const auto& r : m.records) out << to_json(r).dump() << '\n';
  write_file_bytes(m.location, out.str());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.location = path;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "header") {
        m.psf_path = j.at("psf_path").get<std::string>();
        m.generator = j.value("generator", nlohmann::json::object());
        have_header = true;
      } else if (kind == "record") {
        ManifestRecord r;
        r.split = parse_split(j.at("split").get<std::string>());
        r.scene_path = j.at("scene_path").get<std::string>();
        r.measurement_path = j.at("measurement_path").get<std::string>();
        r.snr_db = j.at("snr_db").get<double>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.noise_seed = j.at("noise_seed").get<std::uint64_t>();
        m.records.push_back(std::move(r));
      } else {
        throw FormatError("unknown record kind '" + kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("manifest " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("manifest " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw FormatError("manifest " + path.string() + " has no header line");
  return m;
}

/// Writes PSF, scene/measurement pairs and manifest.jsonl under out_dir.
/// Each record's randomness comes only from its own seeds, so the output is
/// independent of the worker count.
inline DatasetManifest gen_dataset(const DatasetConfig& c) {
  if (c.n_train < 0 || c.n_test < 0) throw ConfigError("gen_dataset: negative record count");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.out_dir / "train", ec);
  fs::create_directories(c.out_dir / "test", ec);
  if (ec) throw IoError("cannot create " + c.out_dir.string() + ": " + ec.message());

  const Image psf = dataset_psf(c);
  save_tensor(psf, c.out_dir / "psf.ltnsr");
  const auto kernel = plan_kernel(psf);

  std::vector<fs::path> imports;
  if (!c.scene_dir.empty()) {
    imports = list_pngs(c.scene_dir);
    if (imports.empty()) throw ConfigError("scene_dir " + c.scene_dir.string() + " has no PNG files");
  }

  DatasetManifest m;
  m.location = c.out_dir / "manifest.jsonl";
  m.psf_path = "psf.ltnsr";
  m.generator = to_json(c);
  const std::size_t total = static_cast<std::size_t>(c.n_test) + c.n_train;
  m.records.resize(total);
  for (std::size_t n = 0; n < total; ++n) {
    auto& r = m.records[n];
    const bool test = n < static_cast<std::size_t>(c.n_test);
    const std::size_t idx = test ? n : n - c.n_test;
    r.split = test ? Split::test : Split::train;
    r.seed = test ? c.scene_seed + idx : c.scene_seed + kTrainSeedOffset + idx;
    r.noise_seed = record_noise_seed(c.noise.seed, r.seed);
    r.snr_db = c.noise.kind == NoiseKind::shot ? c.noise.target_snr_db : 0.0;
    char name[64];
    std::snprintf(name, sizeof(name), "%06zu", idx);
    const std::string dir = to_string(r.split);
    r.scene_path = dir + "/scene_" + name + ".ltnsr";
    r.measurement_path = dir + "/meas_" + name + ".ltnsr";
  }

  parallel_for(total, c.threads, [&](std::size_t n) {
    const auto& r = m.records[n];
    Image scene = imports.empty()
                      ? synth_scene<float>(r.seed, c.shape, c.scene_complexity)
                      : resize_bilinear(load_png(imports[n % imports.size()]), c.shape.height, c.shape.width,
                                        c.shape.channels);
    NoiseSpec spec = c.noise;
    spec.seed = r.noise_seed;
    const Image meas = add_shot_noise(simulate(scene, kernel), spec);
    save_tensor(scene, m.resolve(r.scene_path));
    save_tensor(meas, m.resolve(r.measurement_path));
  });
  write_manifest(m);
  return m;
}

/// Recomputes a record's measurement from its stored scene and seeds.
inline Image replay_measurement(const DatasetManifest& m, const ManifestRecord& r, const FrequencyKernel<float>& kernel,
                                double snr_override_db = std::numeric_limits<double>::quiet_NaN()) {
  const Image scene = load_tensor(m.resolve(r.scene_path));
  NoiseSpec spec;
  const bool override_snr = !std::isnan(snr_override_db);
  const std::string kind = m.generator.value("noise_kind", std::string("shot"));
  spec.kind = (override_snr || kind == "shot") ? NoiseKind::shot : NoiseKind::none;
  spec.target_snr_db = override_snr ? snr_override_db : r.snr_db;
  spec.seed = r.noise_seed;
  return add_shot_noise(simulate(scene, kernel), spec);
}

}  // namespace lensless
