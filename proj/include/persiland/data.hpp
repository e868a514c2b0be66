#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "persiland/feature_map.hpp"
#include "persiland/rng.hpp"

namespace persiland {

/// One clip: feature map, multi-hot labels, identity and split membership.
struct Clip {
  std::string clip_id;
  std::string split;  // "train", "valid" or "test"
  FeatureMap features;
  std::vector<int> labels;
};

struct Dataset {
  std::vector<Clip> clips;
  std::vector<std::string> tag_names;

  int num_tags() const { return static_cast<int>(tag_names.size()); }

  std::vector<const Clip*> split(const std::string& name) const {
    std::vector<const Clip*> out;
    for (const auto& clip : clips) {
      if (clip.split == name) out.push_back(&clip);
    }
    return out;
  }
};

// --- feature files ----------------------------------------------------------
//
// One raw binary file per clip: channel-major little-endian 32-bit floats,
// shape recorded in the manifest.

inline void write_feature_file(const std::string& path, const FeatureMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open feature file for writing: " + path);
  }
  for (double v : map.data) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
  if (!out.good()) {
    throw std::runtime_error("failed writing feature file: " + path);
  }
}

inline FeatureMap read_feature_file(const std::string& path, int channels,
                                    int frames) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature file: " + path);
  FeatureMap map(channels, frames);
  for (auto& v : map.data) {
    float f = 0.0f;
    in.read(reinterpret_cast<char*>(&f), sizeof(f));
    v = static_cast<double>(f);
  }
  if (!in.good()) {
    throw std::runtime_error("feature file shorter than its manifest shape: " +
                             path);
  }
  check_finite(map, path.c_str());
  return map;
}

// --- manifest ---------------------------------------------------------------
//
// CSV with a header row: clip_id,file_path,num_channels,num_frames,split,
// then one column per tag holding 0/1. File paths are relative to the
// manifest's directory.

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream stream(line);
  while (std::getline(stream, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace detail

inline void save_dataset(const Dataset& dataset, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto manifest_path = std::filesystem::path(dir) / "manifest.csv";
  std::ofstream manifest(manifest_path);
  if (!manifest) {
    throw std::runtime_error("cannot write manifest: " +
                             manifest_path.string());
  }
  manifest << "clip_id,file_path,num_channels,num_frames,split";
  for (const auto& tag : dataset.tag_names) manifest << ',' << tag;
  manifest << '\n';
  for (const auto& clip : dataset.clips) {
    const std::string file_name = clip.clip_id + ".bin";
    write_feature_file((std::filesystem::path(dir) / file_name).string(),
                       clip.features);
    manifest << clip.clip_id << ',' << file_name << ','
             << clip.features.channels << ',' << clip.features.frames << ','
             << clip.split;
    for (int label : clip.labels) manifest << ',' << label;
    manifest << '\n';
  }
  if (!manifest.good()) {
    throw std::runtime_error("failed writing manifest: " +
                             manifest_path.string());
  }
}

/// Loads a dataset from a manifest file. Shapes are validated against the
/// manifest row by row; errors name the offending clip.
inline Dataset load_features(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path);
  const auto base_dir = std::filesystem::path(manifest_path).parent_path();

  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("manifest is empty: " + manifest_path);
  }
  const auto header = detail::split_csv_line(line);
  if (header.size() < 6 || header[0] != "clip_id" ||
      header[1] != "file_path" || header[2] != "num_channels" ||
      header[3] != "num_frames" || header[4] != "split") {
    throw std::runtime_error("malformed manifest header in " + manifest_path);
  }

  Dataset dataset;
  dataset.tag_names.assign(header.begin() + 5, header.end());

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size()) {
      throw std::runtime_error("manifest row for clip '" +
                               (fields.empty() ? "?" : fields[0]) +
                               "' has the wrong number of columns");
    }
    Clip clip;
    clip.clip_id = fields[0];
    clip.split = fields[4];
    int channels = 0, frames = 0;
    try {
      channels = std::stoi(fields[2]);
      frames = std::stoi(fields[3]);
    } catch (const std::exception&) {
      throw std::runtime_error("manifest row for clip '" + clip.clip_id +
                               "' has a malformed shape");
    }
    if (channels < 1 || frames < 1) {
      throw std::runtime_error("manifest row for clip '" + clip.clip_id +
                               "' has a non-positive shape");
    }
    const auto file_path = base_dir / fields[1];
    if (!std::filesystem::exists(file_path)) {
      throw std::runtime_error("feature file missing for clip '" +
                               clip.clip_id + "': " + file_path.string());
    }
    const auto size = std::filesystem::file_size(file_path);
    const auto expected = static_cast<std::uintmax_t>(channels) *
                          static_cast<std::uintmax_t>(frames) * sizeof(float);
    if (size != expected) {
      throw std::runtime_error("feature file for clip '" + clip.clip_id +
                               "' has " + std::to_string(size) +
                               " bytes, manifest shape needs " +
                               std::to_string(expected));
    }
    clip.features = read_feature_file(file_path.string(), channels, frames);
    for (std::size_t i = 5; i < fields.size(); ++i) {
      if (fields[i] != "0" && fields[i] != "1") {
        throw std::runtime_error("label for clip '" + clip.clip_id +
                                 "' must be 0 or 1");
      }
      clip.labels.push_back(fields[i] == "1" ? 1 : 0);
    }
    dataset.clips.push_back(std::move(clip));
  }
  return dataset;
}

// --- normalization ----------------------------------------------------------

/// Per-channel mean and standard deviation over all frames of the given
/// split. Channels with zero variance get a standard deviation of 1.
inline NormalizationParams fit_normalizer(const Dataset& dataset,
                                          const std::string& split = "train") {
  const auto clips = dataset.split(split);
  if (clips.empty()) {
    throw std::invalid_argument("cannot fit normalizer: split '" + split +
                                "' is empty");
  }
  const int channels = clips.front()->features.channels;
  for (const Clip* clip : clips) {
    if (clip->features.channels != channels) {
      throw std::invalid_argument("clip '" + clip->clip_id +
                                  "' has a different channel count");
    }
  }

  NormalizationParams params;
  params.mean.assign(static_cast<std::size_t>(channels), 0.0);
  params.stddev.assign(static_cast<std::size_t>(channels), 1.0);
  std::vector<double> sum(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> sum_sq(static_cast<std::size_t>(channels), 0.0);
  std::vector<std::int64_t> count(static_cast<std::size_t>(channels), 0);
  for (const Clip* clip : clips) {
    for (int c = 0; c < channels; ++c) {
      for (double v : clip->features.channel(c)) {
        sum[static_cast<std::size_t>(c)] += v;
        sum_sq[static_cast<std::size_t>(c)] += v * v;
      }
      count[static_cast<std::size_t>(c)] += clip->features.frames;
    }
  }
  for (int c = 0; c < channels; ++c) {
    const double n = static_cast<double>(count[static_cast<std::size_t>(c)]);
    const double mean = sum[static_cast<std::size_t>(c)] / n;
    const double variance =
        std::max(0.0, sum_sq[static_cast<std::size_t>(c)] / n - mean * mean);
    params.mean[static_cast<std::size_t>(c)] = mean;
    params.stddev[static_cast<std::size_t>(c)] =
        variance > 0.0 ? std::sqrt(variance) : 1.0;
  }
  return params;
}

inline FeatureMap apply_normalizer(const NormalizationParams& params,
                                   const FeatureMap& map) {
  if (static_cast<int>(params.mean.size()) != map.channels) {
    throw std::invalid_argument(
        "normalizer dimensionality does not match the feature map");
  }
  FeatureMap out = map;
  for (int c = 0; c < map.channels; ++c) {
    const double mean = params.mean[static_cast<std::size_t>(c)];
    const double stddev = params.stddev[static_cast<std::size_t>(c)];
    for (double& v : out.channel(c)) v = (v - mean) / stddev;
  }
  return out;
}

inline void normalize_dataset(const NormalizationParams& params,
                              Dataset& dataset) {
  for (auto& clip : dataset.clips) {
    clip.features = apply_normalizer(params, clip.features);
  }
}

// --- synthetic generation ---------------------------------------------------

/// Desk-scale stand-in dataset: every clip is a noisy baseline with m smooth
/// bumps, m drawn uniformly from 1..max_peaks, and the label vector holds
/// the thresholds m >= 1, m >= 2, ..., m >= max_peaks.
struct SyntheticConfig {
  int num_clips = 100;
  int length = 256;
  int num_channels = 1;
  int max_peaks = 5;
  double noise_std = 0.05;
  std::uint64_t rng_seed = 0;
  double train_fraction = 0.7;
  double valid_fraction = 0.1;
  int bump_width = 8;          // raised-cosine half-width in samples
  double bump_amp_low = 0.7;   // bump peak amplitude range
  double bump_amp_high = 1.0;
};

inline void validate(const SyntheticConfig& cfg) {
  if (cfg.num_clips < 1) throw std::invalid_argument("num_clips must be >= 1");
  if (cfg.max_peaks < 1) throw std::invalid_argument("max_peaks must be >= 1");
  if (cfg.num_channels < 1) {
    throw std::invalid_argument("num_channels must be >= 1");
  }
  if (cfg.noise_std < 0.0) {
    throw std::invalid_argument("noise_std must be non-negative");
  }
  if (cfg.bump_width < 2) throw std::invalid_argument("bump_width must be >= 2");
  // Peak centers need at least 2*width separation inside [width, L-1-width].
  const int usable = cfg.length - 1 - 2 * cfg.bump_width;
  if (usable < (cfg.max_peaks - 1) * 2 * cfg.bump_width) {
    throw std::invalid_argument(
        "clip length too short for max_peaks bumps of this width");
  }
  if (cfg.train_fraction < 0.0 || cfg.valid_fraction < 0.0 ||
      cfg.train_fraction + cfg.valid_fraction > 1.0) {
    throw std::invalid_argument("invalid split fractions");
  }
}

inline Dataset generate_synthetic(const SyntheticConfig& cfg) {
  validate(cfg);
  Rng rng(Rng::derive(cfg.rng_seed, 11));

  Dataset dataset;
  for (int k = 1; k <= cfg.max_peaks; ++k) {
    dataset.tag_names.push_back("peaks_ge_" + std::to_string(k));
  }

  const int n_train = static_cast<int>(
      std::llround(cfg.train_fraction * static_cast<double>(cfg.num_clips)));
  const int n_valid = static_cast<int>(
      std::llround(cfg.valid_fraction * static_cast<double>(cfg.num_clips)));

  const int w = cfg.bump_width;
  const int lo = w, hi = cfg.length - 1 - w;

  for (int index = 0; index < cfg.num_clips; ++index) {
    Clip clip;
    char id[32];
    std::snprintf(id, sizeof(id), "clip_%05d", index);
    clip.clip_id = id;
    clip.split = index < n_train           ? "train"
                 : index < n_train + n_valid ? "valid"
                                             : "test";

    const int peaks = rng.uniform_int(1, cfg.max_peaks);
    for (int k = 1; k <= cfg.max_peaks; ++k) {
      clip.labels.push_back(peaks >= k ? 1 : 0);
    }

    clip.features = FeatureMap(cfg.num_channels, cfg.length);
    for (int c = 0; c < cfg.num_channels; ++c) {
      auto row = clip.features.channel(c);
      // Centers by rejection: pairwise separation of at least 2*width keeps
      // every bump a distinct local maximum. Falls back to an even spread if
      // rejection stalls (cannot happen for validated configs, kept cheap).
      std::vector<int> centers;
      int guard = 0;
      while (static_cast<int>(centers.size()) < peaks && guard < 10000) {
        ++guard;
        const int candidate = rng.uniform_int(lo, hi);
        bool fits = true;
        for (int existing : centers) {
          if (std::abs(existing - candidate) < 2 * w) {
            fits = false;
            break;
          }
        }
        if (fits) centers.push_back(candidate);
      }
      while (static_cast<int>(centers.size()) < peaks) {
        centers.push_back(lo + 2 * w * static_cast<int>(centers.size()));
      }

      for (int center : centers) {
        const double amplitude = rng.uniform(cfg.bump_amp_low, cfg.bump_amp_high);
        for (int t = std::max(0, center - w + 1);
             t <= std::min(cfg.length - 1, center + w - 1); ++t) {
          row[static_cast<std::size_t>(t)] +=
              amplitude * 0.5 *
              (1.0 + std::cos(3.14159265358979323846 *
                              static_cast<double>(t - center) /
                              static_cast<double>(w)));
        }
      }
      if (cfg.noise_std > 0.0) {
        for (auto& v : row) v += rng.normal(0.0, cfg.noise_std);
      }
    }
    dataset.clips.push_back(std::move(clip));
  }
  return dataset;
}

}  // namespace persiland
