#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "persiland/feature_map.hpp"
#include "persiland/layers.hpp"
#include "persiland/metrics.hpp"
#include "persiland/rng.hpp"

namespace persiland {

enum class Variant { cnn, pnn, pcnn };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::cnn: return "cnn";
    case Variant::pnn: return "pnn";
    case Variant::pcnn: return "pcnn";
  }
  return "pcnn";
}

inline Variant variant_from_string(const std::string& name) {
  if (name == "cnn") return Variant::cnn;
  if (name == "pnn") return Variant::pnn;
  if (name == "pcnn") return Variant::pcnn;
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected cnn, pnn or pcnn)");
}

struct TrainConfig {
  double learning_rate = 0.01;
  double dropout_rate = 0.5;
  int epochs = 100;
  std::uint64_t rng_seed = 0;
  int batch_size = 16;
  int threads = 1;
};

/// Full architecture description: early convolution stack, the branch
/// selection with its middle convolution and/or persistence layer, and the
/// late 1x1 convolution stack ending in the tag output layer.
struct NetworkSpec {
  Variant variant = Variant::pcnn;
  int input_channels = 128;
  int num_tags = 50;
  std::vector<ConvLayerSpec> early;
  std::optional<ConvLayerSpec> middle;
  std::optional<PersistenceLayerSpec> persistence;
  std::vector<ConvLayerSpec> late;
};

/// Paper-default architecture for the given branch selection.
inline NetworkSpec default_spec(Variant variant, int input_channels,
                                int num_tags) {
  NetworkSpec spec;
  spec.variant = variant;
  spec.input_channels = input_channels;
  spec.num_tags = num_tags;
  spec.early = {ConvLayerSpec{64, 8, 4}};
  if (variant != Variant::pnn) {
    spec.middle = ConvLayerSpec{3200, 1, 32};
  }
  if (variant != Variant::cnn) {
    spec.persistence = PersistenceLayerSpec{LandscapeSpec{0.0, 5.0, 5, 10}, 32};
  }
  spec.late = {ConvLayerSpec{512, 1, 1}, ConvLayerSpec{512, 1, 1},
               ConvLayerSpec{num_tags, 1, 1}};
  return spec;
}

/// Collects every violated structural invariant; an empty result means the
/// spec is usable.
inline std::vector<std::string> validate(const NetworkSpec& spec) {
  std::vector<std::string> violations;
  if (spec.input_channels < 1) {
    violations.push_back("input_channels must be >= 1");
  }
  if (spec.num_tags < 1) {
    violations.push_back("num_tags must be >= 1");
  }
  auto check_conv = [&](const ConvLayerSpec& conv, const std::string& name) {
    if (conv.num_filters < 1 || conv.filter_length < 1 || conv.pool_size < 1) {
      violations.push_back(name + " needs K, L, S >= 1");
    }
  };
  for (std::size_t i = 0; i < spec.early.size(); ++i) {
    check_conv(spec.early[i], "early[" + std::to_string(i) + "]");
  }

  const bool wants_middle = spec.variant != Variant::pnn;
  const bool wants_persistence = spec.variant != Variant::cnn;
  if (wants_middle && !spec.middle.has_value()) {
    violations.push_back(to_string(spec.variant) +
                         " requires a middle convolution layer");
  }
  if (!wants_middle && spec.middle.has_value()) {
    violations.push_back("pnn must not define a middle convolution layer");
  }
  if (wants_persistence && !spec.persistence.has_value()) {
    violations.push_back(to_string(spec.variant) +
                         " requires a persistence layer");
  }
  if (!wants_persistence && spec.persistence.has_value()) {
    violations.push_back("cnn must not define a persistence layer");
  }
  if (spec.middle.has_value()) check_conv(*spec.middle, "middle");
  if (spec.persistence.has_value()) {
    const auto& p = *spec.persistence;
    if (!(p.landscape.c1 > p.landscape.c0)) {
      violations.push_back("persistence landscape range requires c1 > c0");
    }
    if (p.landscape.num_pieces < 1 || p.landscape.num_samples < 1) {
      violations.push_back("persistence landscape needs P, Q >= 1");
    }
    if (p.segment_length < 2) {
      violations.push_back("persistence segment length must be >= 2");
    }
  }
  if (spec.variant == Variant::pcnn && spec.middle.has_value() &&
      spec.persistence.has_value() &&
      spec.middle->pool_size != spec.persistence->segment_length) {
    violations.push_back(
        "pcnn requires the middle pooling size to equal the persistence "
        "segment length (S_m = T)");
  }

  if (spec.late.empty()) {
    violations.push_back("at least one late convolution layer is required");
  } else {
    for (std::size_t i = 0; i < spec.late.size(); ++i) {
      check_conv(spec.late[i], "late[" + std::to_string(i) + "]");
      if (spec.late[i].filter_length != 1 || spec.late[i].pool_size != 1) {
        violations.push_back("late[" + std::to_string(i) +
                             "] must use L = 1 and S = 1");
      }
    }
    if (spec.late.back().num_filters != spec.num_tags) {
      violations.push_back(
          "last late layer must have num_filters equal to num_tags");
    }
  }
  return violations;
}

inline void validate_or_throw(const NetworkSpec& spec) {
  const auto violations = validate(spec);
  if (!violations.empty()) {
    std::string message = "invalid network spec:";
    for (const auto& v : violations) message += "\n  - " + v;
    throw std::invalid_argument(message);
  }
}

struct LayerParams {
  std::vector<double> weights;
  std::vector<double> biases;
};

struct ParamSet {
  std::vector<LayerParams> early;
  std::optional<LayerParams> middle;
  std::vector<LayerParams> late;
};

/// Visits all parameter tensors in declaration order:
/// early (w, b) pairs, then middle, then late.
template <typename Set, typename Fn>
void for_each_tensor(Set& params, Fn&& fn) {
  for (auto& layer : params.early) {
    fn(layer.weights);
    fn(layer.biases);
  }
  if (params.middle.has_value()) {
    fn(params.middle->weights);
    fn(params.middle->biases);
  }
  for (auto& layer : params.late) {
    fn(layer.weights);
    fn(layer.biases);
  }
}

struct Model {
  NetworkSpec spec;
  ParamSet params;
  std::optional<NormalizationParams> normalizer;
  std::vector<std::string> tag_names;
};

namespace detail {

/// Channel count entering the late stack.
inline int late_input_channels(const NetworkSpec& spec) {
  int channels = 0;
  if (spec.middle.has_value()) channels += spec.middle->num_filters;
  if (spec.persistence.has_value()) {
    int early_out = spec.input_channels;
    if (!spec.early.empty()) early_out = spec.early.back().num_filters;
    channels += spec.persistence->landscape.num_pieces *
                spec.persistence->landscape.num_samples * early_out;
  }
  return channels;
}

inline LayerParams init_layer(int in_channels, const ConvLayerSpec& spec,
                              Rng& rng) {
  LayerParams layer;
  const std::size_t count = static_cast<std::size_t>(spec.num_filters) *
                            static_cast<std::size_t>(in_channels) *
                            static_cast<std::size_t>(spec.filter_length);
  layer.weights.resize(count);
  layer.biases.assign(static_cast<std::size_t>(spec.num_filters), 0.0);
  const double fan_in =
      static_cast<double>(in_channels) * spec.filter_length;
  const double fan_out =
      static_cast<double>(spec.num_filters) * spec.filter_length;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& w : layer.weights) w = rng.uniform(-bound, bound);
  return layer;
}

}  // namespace detail

/// Builds a model with fan-scaled uniform weights and zero biases, seeded.
inline Model init_model(const NetworkSpec& spec, std::uint64_t seed) {
  validate_or_throw(spec);
  Model model;
  model.spec = spec;
  Rng rng(Rng::derive(seed, 0));

  int channels = spec.input_channels;
  for (const auto& conv : spec.early) {
    model.params.early.push_back(detail::init_layer(channels, conv, rng));
    channels = conv.num_filters;
  }
  if (spec.middle.has_value()) {
    model.params.middle = detail::init_layer(channels, *spec.middle, rng);
  }
  int late_channels = detail::late_input_channels(spec);
  for (const auto& conv : spec.late) {
    model.params.late.push_back(detail::init_layer(late_channels, conv, rng));
    late_channels = conv.num_filters;
  }
  return model;
}

inline ParamSet zero_like(const ParamSet& params) {
  ParamSet zeros = params;
  for_each_tensor(zeros, [](std::vector<double>& t) {
    std::fill(t.begin(), t.end(), 0.0);
  });
  return zeros;
}

struct ForwardCache {
  std::vector<ConvCache> early;
  ConvCache middle;
  PersistenceCache persistence;
  std::vector<ConvCache> late;
  std::vector<std::vector<double>> dropout_masks;  // one per late layer; empty = none
  int concat_first_channels = 0;
  int late_frames = 0;
  std::vector<double> scores;
};

/// Runs the full network. With training=true, inverted dropout masks are
/// drawn from `dropout_rng` and applied to the inputs of every late layer
/// except the tag output layer.
inline std::vector<double> forward(const Model& model, const FeatureMap& input,
                                   ForwardCache* cache, bool training = false,
                                   double dropout_rate = 0.0,
                                   Rng* dropout_rng = nullptr,
                                   int threads = 1) {
  const NetworkSpec& spec = model.spec;
  if (input.channels != spec.input_channels) {
    throw std::invalid_argument(
        "input has " + std::to_string(input.channels) + " channels, expected " +
        std::to_string(spec.input_channels));
  }

  ForwardCache local;
  ForwardCache& fc = cache != nullptr ? *cache : local;
  fc.early.resize(spec.early.size());
  fc.late.resize(spec.late.size());
  fc.dropout_masks.assign(spec.late.size(), {});

  FeatureMap x = input;
  for (std::size_t i = 0; i < spec.early.size(); ++i) {
    if (conv_output_frames(x.frames, spec.early[i]) < 1) {
      throw std::invalid_argument("input too short for early convolution layer " +
                                  std::to_string(i + 1) + " (" +
                                  std::to_string(x.frames) + " frames)");
    }
    x = conv1d_forward(x, spec.early[i], model.params.early[i].weights,
                       model.params.early[i].biases, Activation::relu,
                       &fc.early[i], threads);
  }

  FeatureMap branch_out;
  fc.concat_first_channels = 0;
  if (spec.variant == Variant::cnn || spec.variant == Variant::pcnn) {
    if (conv_output_frames(x.frames, *spec.middle) < 1) {
      throw std::invalid_argument("input too short for middle convolution "
                                  "layer (" +
                                  std::to_string(x.frames) + " frames)");
    }
    branch_out = conv1d_forward(x, *spec.middle, model.params.middle->weights,
                                model.params.middle->biases, Activation::relu,
                                &fc.middle, threads);
    fc.concat_first_channels = branch_out.channels;
  }
  if (spec.variant == Variant::pnn || spec.variant == Variant::pcnn) {
    if (x.frames < spec.persistence->segment_length) {
      throw std::invalid_argument("input too short for persistence layer (" +
                                  std::to_string(x.frames) + " frames)");
    }
    FeatureMap pers_out =
        persistence_forward(x, *spec.persistence, &fc.persistence, threads);
    branch_out = spec.variant == Variant::pnn
                     ? std::move(pers_out)
                     : concat_branches(branch_out, pers_out);
  }

  x = std::move(branch_out);
  for (std::size_t j = 0; j < spec.late.size(); ++j) {
    const bool output_layer = j + 1 == spec.late.size();
    if (training && dropout_rate > 0.0 && !output_layer) {
      if (dropout_rng == nullptr) {
        throw std::invalid_argument("dropout requires an rng");
      }
      auto& mask = fc.dropout_masks[j];
      mask.resize(x.data.size());
      const double keep = 1.0 - dropout_rate;
      for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = dropout_rng->uniform() < dropout_rate ? 0.0 : 1.0 / keep;
        x.data[i] *= mask[i];
      }
    }
    x = conv1d_forward(x, spec.late[j], model.params.late[j].weights,
                       model.params.late[j].biases,
                       output_layer ? Activation::sigmoid : Activation::relu,
                       &fc.late[j], threads);
  }

  fc.late_frames = x.frames;
  fc.scores = mean_pool_forward(x);
  return fc.scores;
}

/// Deterministic inference pass; dropout is always off.
inline std::vector<double> predict(const Model& model, const FeatureMap& input,
                                   int threads = 1) {
  return forward(model, input, nullptr, false, 0.0, nullptr, threads);
}

/// Mean binary cross-entropy over tags; scores are clamped away from 0/1.
inline double bce_loss(std::span<const double> scores,
                       std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length");
  }
  double loss = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const double p = std::clamp(scores[j], 1e-12, 1.0 - 1e-12);
    loss -= labels[j] == 1 ? std::log(p) : std::log(1.0 - p);
  }
  return loss / static_cast<double>(scores.size());
}

inline std::vector<double> bce_gradient(std::span<const double> scores,
                                        std::span<const int> labels) {
  std::vector<double> grad(scores.size());
  const double scale = 1.0 / static_cast<double>(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const double p = std::clamp(scores[j], 1e-12, 1.0 - 1e-12);
    grad[j] = scale * (labels[j] == 1 ? -1.0 / p : 1.0 / (1.0 - p));
  }
  return grad;
}

/// Back-propagates dL/dscores through the cached forward pass. Returns
/// parameter gradients shaped like the model's ParamSet; optionally also the
/// gradient with respect to the network input.
inline ParamSet backward(const Model& model, const ForwardCache& cache,
                         std::span<const double> dscores,
                         FeatureMap* input_gradient = nullptr,
                         int threads = 1) {
  const NetworkSpec& spec = model.spec;
  ParamSet grads = zero_like(model.params);

  FeatureMap d = mean_pool_backward(dscores, spec.num_tags, cache.late_frames);
  for (int j = static_cast<int>(spec.late.size()) - 1; j >= 0; --j) {
    const bool output_layer = j + 1 == static_cast<int>(spec.late.size());
    auto layer_grads = conv1d_backward(
        spec.late[static_cast<std::size_t>(j)],
        model.params.late[static_cast<std::size_t>(j)].weights,
        output_layer ? Activation::sigmoid : Activation::relu,
        cache.late[static_cast<std::size_t>(j)], d, threads);
    grads.late[static_cast<std::size_t>(j)].weights =
        std::move(layer_grads.weights);
    grads.late[static_cast<std::size_t>(j)].biases =
        std::move(layer_grads.biases);
    d = std::move(layer_grads.input);
    const auto& mask = cache.dropout_masks[static_cast<std::size_t>(j)];
    if (!mask.empty()) {
      for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] *= mask[i];
    }
  }

  FeatureMap d_early;
  const bool has_middle = spec.variant != Variant::pnn;
  const bool has_persistence = spec.variant != Variant::cnn;
  FeatureMap d_mid, d_pers;
  if (has_middle && has_persistence) {
    auto [first, second] = split_channels(d, cache.concat_first_channels);
    d_mid = std::move(first);
    d_pers = std::move(second);
  } else if (has_middle) {
    d_mid = std::move(d);
  } else {
    d_pers = std::move(d);
  }
  if (has_middle) {
    auto layer_grads =
        conv1d_backward(*spec.middle, model.params.middle->weights,
                        Activation::relu, cache.middle, d_mid, threads);
    grads.middle->weights = std::move(layer_grads.weights);
    grads.middle->biases = std::move(layer_grads.biases);
    d_early = std::move(layer_grads.input);
  }
  if (has_persistence) {
    FeatureMap from_pers = persistence_backward(cache.persistence, d_pers, threads);
    if (d_early.data.empty()) {
      d_early = std::move(from_pers);
    } else {
      for (std::size_t i = 0; i < d_early.data.size(); ++i) {
        d_early.data[i] += from_pers.data[i];
      }
    }
  }

  d = std::move(d_early);
  for (int i = static_cast<int>(spec.early.size()) - 1; i >= 0; --i) {
    auto layer_grads = conv1d_backward(
        spec.early[static_cast<std::size_t>(i)],
        model.params.early[static_cast<std::size_t>(i)].weights,
        Activation::relu, cache.early[static_cast<std::size_t>(i)], d,
        threads);
    grads.early[static_cast<std::size_t>(i)].weights =
        std::move(layer_grads.weights);
    grads.early[static_cast<std::size_t>(i)].biases =
        std::move(layer_grads.biases);
    d = std::move(layer_grads.input);
  }
  if (input_gradient != nullptr) *input_gradient = std::move(d);
  return grads;
}

/// One labeled sample as seen by the trainer; views into caller-owned data.
struct TrainExample {
  const FeatureMap* features = nullptr;
  const std::vector<int>* labels = nullptr;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_perclass_auc;
  std::optional<double> val_perclip_auc;
};

struct TrainResult {
  Model best;
  Model final_model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 when no validation split drove selection
};

namespace detail {

inline EvalTable score_examples(const Model& model,
                                std::span<const TrainExample> examples,
                                int threads) {
  EvalTable table;
  table.num_clips = static_cast<int>(examples.size());
  table.num_tags = model.spec.num_tags;
  for (const auto& example : examples) {
    const auto scores = predict(model, *example.features, threads);
    table.scores.insert(table.scores.end(), scores.begin(), scores.end());
    table.labels.insert(table.labels.end(), example.labels->begin(),
                        example.labels->end());
  }
  return table;
}

}  // namespace detail

/// Mini-batch AdaGrad training with inverted dropout on the hidden late
/// layers. Keeps the parameter snapshot with the best validation per-class
/// AUC; without a validation split the final parameters double as the
/// snapshot.
inline TrainResult train(const Model& initial,
                         std::span<const TrainExample> train_set,
                         std::span<const TrainExample> valid_set,
                         const TrainConfig& cfg) {
  if (train_set.empty()) {
    throw std::invalid_argument("training set is empty");
  }
  if (cfg.learning_rate <= 0.0) {
    throw std::invalid_argument("learning rate must be positive");
  }
  if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  for (const auto& example : train_set) {
    if (static_cast<int>(example.labels->size()) != initial.spec.num_tags) {
      throw std::invalid_argument(
          "label vector length does not match num_tags");
    }
  }
  for (const auto& example : valid_set) {
    if (static_cast<int>(example.labels->size()) != initial.spec.num_tags) {
      throw std::invalid_argument(
          "label vector length does not match num_tags");
    }
  }

  Model model = initial;
  ParamSet accumulator = zero_like(model.params);
  Rng shuffle_rng(Rng::derive(cfg.rng_seed, 1));
  Rng dropout_rng(Rng::derive(cfg.rng_seed, 2));
  const double epsilon = 1e-8;

  TrainResult result;
  result.best = model;
  double best_auc = -1.0;

  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      const int j = shuffle_rng.uniform_int(0, i);
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(j)]);
    }

    double loss_sum = 0.0;
    std::size_t offset = 0;
    while (offset < order.size()) {
      const std::size_t batch_end =
          std::min(order.size(), offset + static_cast<std::size_t>(cfg.batch_size));
      const double batch_count = static_cast<double>(batch_end - offset);

      ParamSet batch_grads = zero_like(model.params);
      for (std::size_t s = offset; s < batch_end; ++s) {
        const TrainExample& example =
            train_set[static_cast<std::size_t>(order[s])];
        ForwardCache cache;
        const auto scores =
            forward(model, *example.features, &cache, true, cfg.dropout_rate,
                    &dropout_rng, cfg.threads);
        loss_sum += bce_loss(scores, *example.labels);
        const auto dscores = bce_gradient(scores, *example.labels);
        ParamSet sample_grads =
            backward(model, cache, dscores, nullptr, cfg.threads);
        // Sum sample gradients tensor by tensor in declaration order.
        std::vector<std::vector<double>*> dst, src;
        for_each_tensor(batch_grads,
                        [&](std::vector<double>& t) { dst.push_back(&t); });
        for_each_tensor(sample_grads,
                        [&](std::vector<double>& t) { src.push_back(&t); });
        for (std::size_t t = 0; t < dst.size(); ++t) {
          for (std::size_t i = 0; i < dst[t]->size(); ++i) {
            (*dst[t])[i] += (*src[t])[i];
          }
        }
      }

      // AdaGrad step on the batch-mean gradient.
      std::vector<std::vector<double>*> params, grads, states;
      for_each_tensor(model.params,
                      [&](std::vector<double>& t) { params.push_back(&t); });
      for_each_tensor(batch_grads,
                      [&](std::vector<double>& t) { grads.push_back(&t); });
      for_each_tensor(accumulator,
                      [&](std::vector<double>& t) { states.push_back(&t); });
      for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t]->size(); ++i) {
          const double g = (*grads[t])[i] / batch_count;
          (*states[t])[i] += g * g;
          (*params[t])[i] -=
              cfg.learning_rate * g / std::sqrt((*states[t])[i] + epsilon);
        }
      }
      offset = batch_end;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    if (!valid_set.empty()) {
      const auto table = detail::score_examples(model, valid_set, cfg.threads);
      const auto report = evaluate(table);
      record.val_perclass_auc = report.perclass_auc;
      record.val_perclip_auc = report.perclip_auc;
      if (report.perclass_auc.has_value() && *report.perclass_auc > best_auc) {
        best_auc = *report.perclass_auc;
        result.best = model;
        result.best_epoch = epoch;
      }
    }
    result.history.push_back(record);
  }

  result.final_model = model;
  if (valid_set.empty()) {
    result.best = result.final_model;
    result.best_epoch = cfg.epochs;
  }
  return result;
}

inline void write_history_csv(std::ostream& out,
                              std::span<const EpochRecord> history) {
  char buffer[64];
  out << "epoch,train_loss,val_perclass_auc,val_perclip_auc\n";
  auto format = [&](std::optional<double> v) -> std::string {
    if (!v.has_value()) return "nan";
    std::snprintf(buffer, sizeof(buffer), "%.17g", *v);
    return buffer;
  };
  for (const auto& record : history) {
    std::snprintf(buffer, sizeof(buffer), "%.17g", record.train_loss);
    out << record.epoch << ',' << buffer << ','
        << format(record.val_perclass_auc) << ','
        << format(record.val_perclip_auc) << '\n';
  }
}

// --- model serialization ---------------------------------------------------
//
// Layout: magic "PLMF", u32 version, u64 JSON byte length, the JSON header
// (network spec plus optional normalizer and tag names), u64 payload byte
// length, then all parameter tensors in declaration order as little-endian
// 32-bit floats.

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian");

inline nlohmann::json spec_to_json(const NetworkSpec& spec) {
  nlohmann::json j;
  j["variant"] = to_string(spec.variant);
  j["input_channels"] = spec.input_channels;
  j["num_tags"] = spec.num_tags;
  auto conv_json = [](const ConvLayerSpec& c) {
    return nlohmann::json{{"filters", c.num_filters},
                          {"length", c.filter_length},
                          {"pool", c.pool_size}};
  };
  j["early"] = nlohmann::json::array();
  for (const auto& c : spec.early) j["early"].push_back(conv_json(c));
  if (spec.middle.has_value()) j["middle"] = conv_json(*spec.middle);
  if (spec.persistence.has_value()) {
    j["persistence"] = {{"c0", spec.persistence->landscape.c0},
                        {"c1", spec.persistence->landscape.c1},
                        {"pieces", spec.persistence->landscape.num_pieces},
                        {"samples", spec.persistence->landscape.num_samples},
                        {"segment", spec.persistence->segment_length}};
  }
  j["late"] = nlohmann::json::array();
  for (const auto& c : spec.late) j["late"].push_back(conv_json(c));
  return j;
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
  NetworkSpec spec;
  spec.variant = variant_from_string(j.at("variant").get<std::string>());
  spec.input_channels = j.at("input_channels").get<int>();
  spec.num_tags = j.at("num_tags").get<int>();
  auto conv_from = [](const nlohmann::json& c) {
    return ConvLayerSpec{c.at("filters").get<int>(), c.at("length").get<int>(),
                         c.at("pool").get<int>()};
  };
  spec.early.clear();
  for (const auto& c : j.at("early")) spec.early.push_back(conv_from(c));
  if (j.contains("middle")) spec.middle = conv_from(j.at("middle"));
  if (j.contains("persistence")) {
    const auto& p = j.at("persistence");
    spec.persistence = PersistenceLayerSpec{
        LandscapeSpec{p.at("c0").get<double>(), p.at("c1").get<double>(),
                      p.at("pieces").get<int>(), p.at("samples").get<int>()},
        p.at("segment").get<int>()};
  }
  spec.late.clear();
  for (const auto& c : j.at("late")) spec.late.push_back(conv_from(c));
  return spec;
}

inline void save_model(const Model& model, const std::string& path) {
  nlohmann::json header;
  header["spec"] = spec_to_json(model.spec);
  if (model.normalizer.has_value()) {
    header["normalizer"] = {{"mean", model.normalizer->mean},
                            {"stddev", model.normalizer->stddev}};
  }
  if (!model.tag_names.empty()) header["tag_names"] = model.tag_names;
  const std::string blob = header.dump();

  std::uint64_t payload_floats = 0;
  for_each_tensor(model.params,
                  [&](const std::vector<double>& t) { payload_floats += t.size(); });

  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open model file for writing: " + path);
  out.write("PLMF", 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t blob_size = blob.size();
  out.write(reinterpret_cast<const char*>(&blob_size), sizeof(blob_size));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  const std::uint64_t payload_bytes = payload_floats * sizeof(float);
  out.write(reinterpret_cast<const char*>(&payload_bytes),
            sizeof(payload_bytes));
  for_each_tensor(model.params, [&](const std::vector<double>& t) {
    for (double v : t) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), sizeof(f));
    }
  });
  if (!out.good()) throw std::runtime_error("failed writing model: " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in.good() || std::string(magic, 4) != "PLMF") {
    throw std::runtime_error("not a model file: " + path);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != 1) {
    throw std::runtime_error("unsupported model version " +
                             std::to_string(version));
  }
  std::uint64_t blob_size = 0;
  in.read(reinterpret_cast<char*>(&blob_size), sizeof(blob_size));
  std::string blob(blob_size, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(blob_size));
  if (!in.good()) throw std::runtime_error("truncated model header: " + path);
  const auto header = nlohmann::json::parse(blob);

  Model model;
  model.spec = spec_from_json(header.at("spec"));
  validate_or_throw(model.spec);
  if (header.contains("normalizer")) {
    NormalizationParams norm;
    norm.mean = header["normalizer"].at("mean").get<std::vector<double>>();
    norm.stddev = header["normalizer"].at("stddev").get<std::vector<double>>();
    model.normalizer = std::move(norm);
  }
  if (header.contains("tag_names")) {
    model.tag_names = header["tag_names"].get<std::vector<std::string>>();
  }

  // Rebuild tensor shapes from the spec, then fill from the payload.
  Model shaped = init_model(model.spec, 0);
  model.params = std::move(shaped.params);

  std::uint64_t payload_bytes = 0;
  in.read(reinterpret_cast<char*>(&payload_bytes), sizeof(payload_bytes));
  std::uint64_t expected_floats = 0;
  for_each_tensor(model.params, [&](std::vector<double>& t) {
    expected_floats += t.size();
  });
  if (payload_bytes != expected_floats * sizeof(float)) {
    throw std::runtime_error("model payload size mismatch in " + path);
  }
  for_each_tensor(model.params, [&](std::vector<double>& t) {
    for (auto& v : t) {
      float f = 0.0f;
      in.read(reinterpret_cast<char*>(&f), sizeof(f));
      v = static_cast<double>(f);
    }
  });
  if (!in.good()) throw std::runtime_error("truncated model payload: " + path);
  return model;
}

}  // namespace persiland
