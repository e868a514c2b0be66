#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace persiland {

/// Dense 2-D array flowing through the network: one row per channel, one
/// column per time frame, channel-major storage.
struct FeatureMap {
  int channels = 0;
  int frames = 0;
  std::vector<double> data;

  FeatureMap() = default;
  FeatureMap(int channels_, int frames_)
      : channels(channels_),
        frames(frames_),
        data(static_cast<std::size_t>(channels_) *
                 static_cast<std::size_t>(frames_),
             0.0) {}

  double& at(int channel, int frame) {
    return data[static_cast<std::size_t>(channel) *
                    static_cast<std::size_t>(frames) +
                static_cast<std::size_t>(frame)];
  }
  double at(int channel, int frame) const {
    return data[static_cast<std::size_t>(channel) *
                    static_cast<std::size_t>(frames) +
                static_cast<std::size_t>(frame)];
  }
  std::span<double> channel(int c) {
    return {data.data() + static_cast<std::size_t>(c) *
                              static_cast<std::size_t>(frames),
            static_cast<std::size_t>(frames)};
  }
  std::span<const double> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) *
                              static_cast<std::size_t>(frames),
            static_cast<std::size_t>(frames)};
  }
};

inline void check_finite(const FeatureMap& map, const char* what) {
  for (double v : map.data) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(std::string(what) +
                                  " contains non-finite values");
    }
  }
}

/// Per-channel z-score parameters fitted on a training split. Channels with
/// zero variance keep a standard deviation of 1 so they pass through merely
/// centered.
struct NormalizationParams {
  std::vector<double> mean;
  std::vector<double> stddev;
};

}  // namespace persiland
