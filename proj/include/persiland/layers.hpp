#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "persiland/feature_map.hpp"
#include "persiland/landscape.hpp"
#include "persiland/parallel.hpp"
#include "persiland/topology.hpp"

namespace persiland {

enum class Activation { linear, relu, sigmoid };

inline double activate(Activation act, double x) {
  switch (act) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::linear:
      return x;
  }
  return x;
}

inline double activate_derivative(Activation act, double pre) {
  switch (act) {
    case Activation::relu:
      return pre > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: {
      const double s = activate(Activation::sigmoid, pre);
      return s * (1.0 - s);
    }
    case Activation::linear:
      return 1.0;
  }
  return 1.0;
}

/// A (K, L, S) convolution layer: K filters of length L spanning the full
/// channel depth, followed by max pooling over non-overlapping windows of S
/// frames (the trailing remainder is dropped).
struct ConvLayerSpec {
  int num_filters = 1;
  int filter_length = 1;
  int pool_size = 1;
};

inline void validate(const ConvLayerSpec& spec) {
  if (spec.num_filters < 1 || spec.filter_length < 1 || spec.pool_size < 1) {
    throw std::invalid_argument("convolution layer needs K, L, S >= 1");
  }
}

/// Frames surviving convolution and pooling, or -1 when the input is too
/// short to produce a single output frame.
inline int conv_output_frames(int input_frames, const ConvLayerSpec& spec) {
  const int convolved = input_frames - spec.filter_length + 1;
  if (convolved < 1) return -1;
  const int pooled = convolved / spec.pool_size;
  return pooled >= 1 ? pooled : -1;
}

/// Forward state kept for the backward pass.
struct ConvCache {
  FeatureMap input;
  FeatureMap pre;           // pre-activation values, K x (N-L+1)
  std::vector<int> argmax;  // winning pre index per pooled frame, K x pooled
};

/// weights are laid out [filter][in_channel][tap]; biases one per filter.
inline FeatureMap conv1d_forward(const FeatureMap& input,
                                 const ConvLayerSpec& spec,
                                 std::span<const double> weights,
                                 std::span<const double> biases,
                                 Activation act, ConvCache* cache = nullptr,
                                 int threads = 1) {
  validate(spec);
  const int in_channels = input.channels;
  const int taps = spec.filter_length;
  if (weights.size() != static_cast<std::size_t>(spec.num_filters) *
                            static_cast<std::size_t>(in_channels) *
                            static_cast<std::size_t>(taps) ||
      biases.size() != static_cast<std::size_t>(spec.num_filters)) {
    throw std::invalid_argument("convolution parameter shape mismatch");
  }
  const int pooled = conv_output_frames(input.frames, spec);
  if (pooled < 1) {
    throw std::invalid_argument(
        "input too short for convolution layer: " +
        std::to_string(input.frames) + " frames with L=" +
        std::to_string(taps) + ", S=" + std::to_string(spec.pool_size));
  }
  const int convolved = input.frames - taps + 1;

  FeatureMap pre(spec.num_filters, convolved);
  FeatureMap out(spec.num_filters, pooled);
  std::vector<int> argmax(static_cast<std::size_t>(spec.num_filters) *
                          static_cast<std::size_t>(pooled));

  parallel_for(0, spec.num_filters, threads, [&](int k_begin, int k_end) {
    for (int k = k_begin; k < k_end; ++k) {
      double* pre_row = pre.channel(k).data();
      const double* w_filter =
          weights.data() + static_cast<std::size_t>(k) *
                               static_cast<std::size_t>(in_channels) *
                               static_cast<std::size_t>(taps);
      for (int t = 0; t < convolved; ++t) pre_row[t] = biases[static_cast<std::size_t>(k)];
      for (int c = 0; c < in_channels; ++c) {
        const double* in_row = input.channel(c).data();
        const double* w = w_filter + static_cast<std::size_t>(c) *
                                         static_cast<std::size_t>(taps);
        for (int l = 0; l < taps; ++l) {
          const double wl = w[l];
          const double* shifted = in_row + l;
          for (int t = 0; t < convolved; ++t) {
            pre_row[t] += wl * shifted[t];
          }
        }
      }
      for (int p = 0; p < pooled; ++p) {
        const int window = p * spec.pool_size;
        int best = window;
        double best_value = activate(act, pre_row[window]);
        for (int s = 1; s < spec.pool_size; ++s) {
          const double value = activate(act, pre_row[window + s]);
          if (value > best_value) {  // ties keep the earliest frame
            best_value = value;
            best = window + s;
          }
        }
        out.at(k, p) = best_value;
        argmax[static_cast<std::size_t>(k) * static_cast<std::size_t>(pooled) +
               static_cast<std::size_t>(p)] = best;
      }
    }
  });

  if (cache != nullptr) {
    cache->input = input;
    cache->pre = std::move(pre);
    cache->argmax = std::move(argmax);
  }
  return out;
}

struct ConvGrads {
  FeatureMap input;
  std::vector<double> weights;
  std::vector<double> biases;
};

inline ConvGrads conv1d_backward(const ConvLayerSpec& spec,
                                 std::span<const double> weights,
                                 Activation act, const ConvCache& cache,
                                 const FeatureMap& upstream, int threads = 1) {
  const int in_channels = cache.input.channels;
  const int taps = spec.filter_length;
  const int convolved = cache.pre.frames;
  const int pooled = convolved / spec.pool_size;
  if (upstream.channels != spec.num_filters || upstream.frames != pooled) {
    throw std::invalid_argument("upstream gradient shape mismatch");
  }

  // Pooling routes each pooled gradient to its argmax frame; the activation
  // derivative is applied at that frame.
  FeatureMap dpre(spec.num_filters, convolved);
  for (int k = 0; k < spec.num_filters; ++k) {
    for (int p = 0; p < pooled; ++p) {
      const int at = cache.argmax[static_cast<std::size_t>(k) *
                                      static_cast<std::size_t>(pooled) +
                                  static_cast<std::size_t>(p)];
      dpre.at(k, at) +=
          upstream.at(k, p) * activate_derivative(act, cache.pre.at(k, at));
    }
  }

  ConvGrads grads;
  grads.weights.assign(weights.size(), 0.0);
  grads.biases.assign(static_cast<std::size_t>(spec.num_filters), 0.0);
  grads.input = FeatureMap(in_channels, cache.input.frames);

  parallel_for(0, spec.num_filters, threads, [&](int k_begin, int k_end) {
    for (int k = k_begin; k < k_end; ++k) {
      const double* dpre_row = dpre.channel(k).data();
      double sum = 0.0;
      for (int t = 0; t < convolved; ++t) sum += dpre_row[t];
      grads.biases[static_cast<std::size_t>(k)] = sum;
      for (int c = 0; c < in_channels; ++c) {
        const double* in_row = cache.input.channel(c).data();
        double* wg = grads.weights.data() +
                     (static_cast<std::size_t>(k) *
                          static_cast<std::size_t>(in_channels) +
                      static_cast<std::size_t>(c)) *
                         static_cast<std::size_t>(taps);
        for (int l = 0; l < taps; ++l) {
          const double* shifted = in_row + l;
          double acc = 0.0;
          for (int t = 0; t < convolved; ++t) acc += dpre_row[t] * shifted[t];
          wg[l] = acc;
        }
      }
    }
  });

  parallel_for(0, in_channels, threads, [&](int c_begin, int c_end) {
    for (int c = c_begin; c < c_end; ++c) {
      double* din_row = grads.input.channel(c).data();
      for (int k = 0; k < spec.num_filters; ++k) {
        const double* dpre_row = dpre.channel(k).data();
        const double* w = weights.data() +
                          (static_cast<std::size_t>(k) *
                               static_cast<std::size_t>(in_channels) +
                           static_cast<std::size_t>(c)) *
                              static_cast<std::size_t>(taps);
        for (int l = 0; l < taps; ++l) {
          const double wl = w[l];
          double* shifted = din_row + l;
          for (int t = 0; t < convolved; ++t) shifted[t] += wl * dpre_row[t];
        }
      }
    }
  });

  return grads;
}

/// Persistence layer parameters: the landscape sampling window plus the
/// segment length T cut along the time axis.
struct PersistenceLayerSpec {
  LandscapeSpec landscape;
  int segment_length = 32;
};

inline void validate(const PersistenceLayerSpec& spec) {
  validate(spec.landscape);
  if (spec.segment_length < 2) {
    throw std::invalid_argument("persistence segment length must be >= 2");
  }
}

struct PersistenceCache {
  int in_channels = 0;
  int in_frames = 0;
  int segments = 0;
  int segment_length = 0;
  int pieces = 0;
  int samples = 0;
  // One route per output entry, laid out [segment][channel][piece][sample].
  std::vector<GradientRoute> routes;
};

/// Cuts the time axis into floor(N/T) segments, computes the sampled
/// landscape of every (channel, segment) signal and stacks the P*Q blocks
/// channel-major into the output channels. Output frame g corresponds to
/// input frames [g*T, (g+1)*T); the trailing remainder is dropped.
inline FeatureMap persistence_forward(const FeatureMap& input,
                                      const PersistenceLayerSpec& spec,
                                      PersistenceCache* cache = nullptr,
                                      int threads = 1) {
  validate(spec);
  const int T = spec.segment_length;
  if (input.frames < T) {
    throw std::invalid_argument(
        "input too short for persistence layer: " +
        std::to_string(input.frames) + " frames with T=" + std::to_string(T));
  }
  const int segments = input.frames / T;
  const int P = spec.landscape.num_pieces;
  const int Q = spec.landscape.num_samples;
  const int block = P * Q;

  FeatureMap out(input.channels * block, segments);
  std::vector<GradientRoute> routes(
      static_cast<std::size_t>(segments) *
      static_cast<std::size_t>(input.channels) *
      static_cast<std::size_t>(block));

  parallel_for(0, input.channels, threads, [&](int c_begin, int c_end) {
    for (int c = c_begin; c < c_end; ++c) {
      const auto row = input.channel(c);
      for (int g = 0; g < segments; ++g) {
        const auto segment = row.subspan(static_cast<std::size_t>(g) *
                                             static_cast<std::size_t>(T),
                                         static_cast<std::size_t>(T));
        const auto matrix =
            sample_landscape(compute_pairs(segment), spec.landscape);
        for (int i = 0; i < block; ++i) {
          out.at(c * block + i, g) = matrix.values[static_cast<std::size_t>(i)];
          routes[(static_cast<std::size_t>(g) *
                      static_cast<std::size_t>(input.channels) +
                  static_cast<std::size_t>(c)) *
                     static_cast<std::size_t>(block) +
                 static_cast<std::size_t>(i)] =
              matrix.ownership[static_cast<std::size_t>(i)];
        }
      }
    }
  });

  if (cache != nullptr) {
    cache->in_channels = input.channels;
    cache->in_frames = input.frames;
    cache->segments = segments;
    cache->segment_length = T;
    cache->pieces = P;
    cache->samples = Q;
    cache->routes = std::move(routes);
  }
  return out;
}

/// Scatters upstream gradients back onto the input frames through the cached
/// routes. Frames in the dropped remainder receive zero gradient.
inline FeatureMap persistence_backward(const PersistenceCache& cache,
                                       const FeatureMap& upstream,
                                       int threads = 1) {
  const int block = cache.pieces * cache.samples;
  if (upstream.channels != cache.in_channels * block ||
      upstream.frames != cache.segments) {
    throw std::invalid_argument("upstream gradient shape mismatch");
  }
  FeatureMap dinput(cache.in_channels, cache.in_frames);
  parallel_for(0, cache.in_channels, threads, [&](int c_begin, int c_end) {
    for (int c = c_begin; c < c_end; ++c) {
      double* din_row = dinput.channel(c).data();
      for (int g = 0; g < cache.segments; ++g) {
        const std::size_t base =
            (static_cast<std::size_t>(g) *
                 static_cast<std::size_t>(cache.in_channels) +
             static_cast<std::size_t>(c)) *
            static_cast<std::size_t>(block);
        for (int i = 0; i < block; ++i) {
          const GradientRoute& route =
              cache.routes[base + static_cast<std::size_t>(i)];
          if (route.side == RouteSide::none) continue;
          din_row[g * cache.segment_length + route.vertex] +=
              route.sign * upstream.at(c * block + i, g);
        }
      }
    }
  });
  return dinput;
}

/// Channel-wise concatenation of two branch outputs with equal time lengths.
inline FeatureMap concat_branches(const FeatureMap& conv_out,
                                  const FeatureMap& pers_out) {
  if (conv_out.frames != pers_out.frames) {
    throw std::invalid_argument(
        "branch time lengths differ: " + std::to_string(conv_out.frames) +
        " vs " + std::to_string(pers_out.frames));
  }
  FeatureMap out(conv_out.channels + pers_out.channels, conv_out.frames);
  std::copy(conv_out.data.begin(), conv_out.data.end(), out.data.begin());
  std::copy(pers_out.data.begin(), pers_out.data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(conv_out.data.size()));
  return out;
}

/// Splits a gradient back into the two concatenated channel ranges.
inline std::pair<FeatureMap, FeatureMap> split_channels(
    const FeatureMap& upstream, int first_channels) {
  if (first_channels < 0 || first_channels > upstream.channels) {
    throw std::invalid_argument("invalid channel split");
  }
  FeatureMap first(first_channels, upstream.frames);
  FeatureMap second(upstream.channels - first_channels, upstream.frames);
  const std::size_t cut = static_cast<std::size_t>(first_channels) *
                          static_cast<std::size_t>(upstream.frames);
  std::copy(upstream.data.begin(),
            upstream.data.begin() + static_cast<std::ptrdiff_t>(cut),
            first.data.begin());
  std::copy(upstream.data.begin() + static_cast<std::ptrdiff_t>(cut),
            upstream.data.end(), second.data.begin());
  return {std::move(first), std::move(second)};
}

/// Temporal mean per channel.
inline std::vector<double> mean_pool_forward(const FeatureMap& input) {
  if (input.frames < 1) {
    throw std::invalid_argument("mean pooling needs at least one frame");
  }
  std::vector<double> out(static_cast<std::size_t>(input.channels), 0.0);
  for (int c = 0; c < input.channels; ++c) {
    double sum = 0.0;
    for (int t = 0; t < input.frames; ++t) sum += input.at(c, t);
    out[static_cast<std::size_t>(c)] = sum / static_cast<double>(input.frames);
  }
  return out;
}

/// The mean distributes gradient uniformly: 1/N to every frame.
inline FeatureMap mean_pool_backward(std::span<const double> upstream,
                                     int channels, int frames) {
  if (upstream.size() != static_cast<std::size_t>(channels)) {
    throw std::invalid_argument("upstream gradient shape mismatch");
  }
  FeatureMap dinput(channels, frames);
  for (int c = 0; c < channels; ++c) {
    const double share =
        upstream[static_cast<std::size_t>(c)] / static_cast<double>(frames);
    for (int t = 0; t < frames; ++t) dinput.at(c, t) = share;
  }
  return dinput;
}

}  // namespace persiland
