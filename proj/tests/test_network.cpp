#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "persiland/network.hpp"
#include "persiland/rng.hpp"
#include "test_support.hpp"

using namespace persiland;

namespace {

NetworkSpec tiny_pcnn_spec() {
  NetworkSpec spec;
  spec.variant = Variant::pcnn;
  spec.input_channels = 3;
  spec.num_tags = 2;
  spec.early = {ConvLayerSpec{2, 4, 2}};
  spec.middle = ConvLayerSpec{2, 1, 8};
  spec.persistence = PersistenceLayerSpec{LandscapeSpec{0, 2, 2, 4}, 8};
  spec.late = {ConvLayerSpec{2, 1, 1}};
  return spec;
}

FeatureMap random_map(Rng& rng, int channels, int frames, double lo, double hi) {
  FeatureMap map(channels, frames);
  for (auto& v : map.data) v = rng.uniform(lo, hi);
  return map;
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("output time lengths follow the floor arithmetic") {
  Rng rng(140);
  for (int trial = 0; trial < 60; ++trial) {
    NetworkSpec spec;
    spec.variant = Variant::pcnn;
    spec.input_channels = rng.uniform_int(1, 3);
    spec.num_tags = rng.uniform_int(1, 4);
    const int stack = rng.uniform_int(1, 2);
    for (int i = 0; i < stack; ++i) {
      spec.early.push_back(ConvLayerSpec{rng.uniform_int(1, 4),
                                         rng.uniform_int(1, 5),
                                         rng.uniform_int(1, 3)});
    }
    const int T = rng.uniform_int(2, 6);
    spec.middle = ConvLayerSpec{rng.uniform_int(1, 4), 1, T};
    spec.persistence =
        PersistenceLayerSpec{LandscapeSpec{0, 3, rng.uniform_int(1, 3),
                                           rng.uniform_int(2, 5)},
                             T};
    spec.late = {ConvLayerSpec{spec.num_tags, 1, 1}};
    REQUIRE(validate(spec).empty());

    const int frames = rng.uniform_int(1, 80);
    int expected = frames;
    bool viable = true;
    for (const auto& conv : spec.early) {
      expected = conv_output_frames(expected, conv);
      if (expected < 0) viable = false;
    }
    if (viable && expected / T < 1) viable = false;

    const auto model = init_model(spec, 9);
    FeatureMap input = random_map(rng, spec.input_channels, frames, -1.0, 1.0);
    if (!viable) {
      CHECK_THROWS_AS(predict(model, input), std::invalid_argument);
    } else {
      ForwardCache cache;
      const auto scores = forward(model, input, &cache);
      CHECK(static_cast<int>(scores.size()) == spec.num_tags);
      CHECK(cache.late_frames == expected / T);
    }
  }
}

TEST_CASE("tiny pcnn end-to-end gradients match finite differences") {
  const auto spec = tiny_pcnn_spec();
  // Seed chosen so the input is generic: no pooling ties, no landscape
  // rank ties, no grid point near a triangle piece boundary.
  const std::uint64_t seed = 2;
  Model model = init_model(spec, seed);
  Rng rng(Rng::derive(seed, 77));
  FeatureMap input = random_map(rng, 3, 37, -1.0, 1.0);
  const std::vector<int> labels{1, 0};
  const double h = 1e-5;

  auto loss_at = [&](const Model& m, const FeatureMap& in) {
    return bce_loss(predict(m, in), labels);
  };

  ForwardCache cache;
  const auto scores = forward(model, input, &cache);
  const auto dscores = bce_gradient(scores, labels);
  FeatureMap input_grad;
  ParamSet grads = backward(model, cache, dscores, &input_grad);

  std::vector<std::vector<double>*> ptensors, gtensors;
  for_each_tensor(model.params,
                  [&](std::vector<double>& t) { ptensors.push_back(&t); });
  for_each_tensor(grads,
                  [&](std::vector<double>& t) { gtensors.push_back(&t); });
  REQUIRE(ptensors.size() == gtensors.size());

  for (std::size_t t = 0; t < ptensors.size(); ++t) {
    for (std::size_t i = 0; i < ptensors[t]->size(); ++i) {
      const double orig = (*ptensors[t])[i];
      (*ptensors[t])[i] = orig + h;
      const double up = loss_at(model, input);
      (*ptensors[t])[i] = orig - h;
      const double down = loss_at(model, input);
      (*ptensors[t])[i] = orig;
      REQUIRE(testsupport::gradients_match((*gtensors[t])[i],
                                           (up - down) / (2 * h), 1e-3));
    }
  }
  for (std::size_t i = 0; i < input.data.size(); ++i) {
    const double orig = input.data[i];
    input.data[i] = orig + h;
    const double up = loss_at(model, input);
    input.data[i] = orig - h;
    const double down = loss_at(model, input);
    input.data[i] = orig;
    REQUIRE(testsupport::gradients_match(input_grad.data[i],
                                         (up - down) / (2 * h), 1e-3));
  }
}

TEST_CASE("pcnn restricted to one branch reproduces the single-branch nets") {
  const auto spec = tiny_pcnn_spec();
  Model pcnn = init_model(spec, 5);
  Rng rng(123);
  const FeatureMap input = random_map(rng, 3, 41, -1.0, 1.0);

  // Zeroing the late weights that read the persistence block must reproduce
  // a CNN holding the shared weights; same for the middle block and PNN.
  const int mid_channels = spec.middle->num_filters;
  const int pers_channels = spec.persistence->landscape.num_pieces *
                            spec.persistence->landscape.num_samples *
                            spec.early.back().num_filters;

  NetworkSpec cnn_spec = spec;
  cnn_spec.variant = Variant::cnn;
  cnn_spec.persistence.reset();
  Model cnn = init_model(cnn_spec, 1);
  cnn.params.early = pcnn.params.early;
  cnn.params.middle = pcnn.params.middle;
  NetworkSpec pnn_spec = spec;
  pnn_spec.variant = Variant::pnn;
  pnn_spec.middle.reset();
  Model pnn = init_model(pnn_spec, 1);
  pnn.params.early = pcnn.params.early;

  // Late layer of the PCNN reads [middle | persistence] channels.
  const auto& late = pcnn.params.late[0];
  const int total = mid_channels + pers_channels;
  for (int k = 0; k < spec.num_tags; ++k) {
    for (int c = 0; c < mid_channels; ++c) {
      cnn.params.late[0].weights[static_cast<std::size_t>(k * mid_channels + c)] =
          late.weights[static_cast<std::size_t>(k * total + c)];
    }
    for (int c = 0; c < pers_channels; ++c) {
      pnn.params.late[0].weights[static_cast<std::size_t>(k * pers_channels + c)] =
          late.weights[static_cast<std::size_t>(k * total + mid_channels + c)];
    }
    cnn.params.late[0].biases[static_cast<std::size_t>(k)] =
        late.biases[static_cast<std::size_t>(k)];
    pnn.params.late[0].biases[static_cast<std::size_t>(k)] =
        late.biases[static_cast<std::size_t>(k)];
  }

  Model pcnn_mid_only = pcnn;
  Model pcnn_pers_only = pcnn;
  for (int k = 0; k < spec.num_tags; ++k) {
    for (int c = 0; c < pers_channels; ++c) {
      pcnn_mid_only.params.late[0]
          .weights[static_cast<std::size_t>(k * total + mid_channels + c)] = 0.0;
    }
    for (int c = 0; c < mid_channels; ++c) {
      pcnn_pers_only.params.late[0].weights[static_cast<std::size_t>(k * total + c)] =
          0.0;
    }
  }

  const auto cnn_scores = predict(cnn, input);
  const auto mid_only_scores = predict(pcnn_mid_only, input);
  const auto pnn_scores = predict(pnn, input);
  const auto pers_only_scores = predict(pcnn_pers_only, input);
  for (int k = 0; k < spec.num_tags; ++k) {
    CHECK(mid_only_scores[static_cast<std::size_t>(k)] ==
          Catch::Approx(cnn_scores[static_cast<std::size_t>(k)]).margin(1e-12));
    CHECK(pers_only_scores[static_cast<std::size_t>(k)] ==
          Catch::Approx(pnn_scores[static_cast<std::size_t>(k)]).margin(1e-12));
  }
}

TEST_CASE("training reduces the loss on a separable toy set") {
  NetworkSpec spec;
  spec.variant = Variant::cnn;
  spec.input_channels = 1;
  spec.num_tags = 2;
  spec.early = {ConvLayerSpec{4, 2, 2}};
  spec.middle = ConvLayerSpec{4, 1, 4};
  spec.late = {ConvLayerSpec{8, 1, 1}, ConvLayerSpec{2, 1, 1}};
  REQUIRE(validate(spec).empty());

  Rng rng(50);
  FeatureMap high(1, 18), low(1, 18);
  for (auto& v : high.data) v = rng.uniform(0.8, 1.4);
  for (auto& v : low.data) v = rng.uniform(-1.4, -0.8);
  const std::vector<int> label_high{1, 0};
  const std::vector<int> label_low{0, 1};
  const std::vector<TrainExample> train_set{{&high, &label_high},
                                            {&low, &label_low}};

  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 2;
  cfg.dropout_rate = 0.0;
  cfg.rng_seed = 3;
  const auto result = train(init_model(spec, 3), train_set, {}, cfg);

  REQUIRE(result.history.size() == 60);
  CHECK(result.history.back().train_loss < result.history.front().train_loss);
  // Monotone on average: compare the mean of the first and last thirds.
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += result.history[static_cast<std::size_t>(i)].train_loss;
    tail += result.history[static_cast<std::size_t>(40 + i)].train_loss;
  }
  CHECK(tail < head);
}

TEST_CASE("seeded training is bit-reproducible") {
  const auto spec = tiny_pcnn_spec();
  Rng rng(8);
  std::vector<FeatureMap> maps;
  std::vector<std::vector<int>> labels;
  for (int i = 0; i < 6; ++i) {
    maps.push_back(random_map(rng, 3, 37, -1.0, 1.0));
    labels.push_back({rng.uniform_int(0, 1), rng.uniform_int(0, 1)});
  }
  std::vector<TrainExample> train_set;
  for (int i = 0; i < 4; ++i) train_set.push_back({&maps[i], &labels[i]});
  std::vector<TrainExample> valid_set;
  for (int i = 4; i < 6; ++i) valid_set.push_back({&maps[i], &labels[i]});

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.rng_seed = 42;
  const auto a = train(init_model(spec, 42), train_set, valid_set, cfg);
  const auto b = train(init_model(spec, 42), train_set, valid_set, cfg);

  std::vector<const std::vector<double>*> ta, tb;
  for_each_tensor(a.final_model.params,
                  [&](const std::vector<double>& t) { ta.push_back(&t); });
  for_each_tensor(b.final_model.params,
                  [&](const std::vector<double>& t) { tb.push_back(&t); });
  for (std::size_t t = 0; t < ta.size(); ++t) {
    REQUIRE(*ta[t] == *tb[t]);  // bit-identical trajectories
  }
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    REQUIRE(a.history[e].train_loss == b.history[e].train_loss);
  }
}

TEST_CASE("label length mismatches are rejected") {
  const auto spec = tiny_pcnn_spec();
  Rng rng(9);
  const FeatureMap map = random_map(rng, 3, 37, -1.0, 1.0);
  const std::vector<int> bad{1, 0, 1};
  const std::vector<TrainExample> train_set{{&map, &bad}};
  TrainConfig cfg;
  CHECK_THROWS_AS(train(init_model(spec, 1), train_set, {}, cfg),
                  std::invalid_argument);
}

TEST_CASE("prediction contract") {
  const auto spec = tiny_pcnn_spec();
  const Model model = init_model(spec, 31);
  Rng rng(64);
  const FeatureMap input = random_map(rng, 3, 50, -1.0, 1.0);

  SECTION("scores lie strictly inside (0, 1)") {
    for (double s : predict(model, input)) {
      CHECK(s > 0.0);
      CHECK(s < 1.0);
    }
  }
  SECTION("inference is deterministic and dropout-free") {
    const auto a = predict(model, input);
    const auto b = predict(model, input);
    CHECK(a == b);
  }
  SECTION("zero weights collapse to sigmoid of the output bias") {
    Model zeroed = model;
    for_each_tensor(zeroed.params, [](std::vector<double>& t) {
      std::fill(t.begin(), t.end(), 0.0);
    });
    zeroed.params.late.back().biases = {0.4, -0.3};
    const auto scores = predict(zeroed, input);
    CHECK(scores[0] == Catch::Approx(1.0 / (1.0 + std::exp(-0.4))).margin(1e-12));
    CHECK(scores[1] == Catch::Approx(1.0 / (1.0 + std::exp(0.3))).margin(1e-12));
  }
  SECTION("too-short inputs name the failing layer") {
    const FeatureMap tiny(3, 2);
    CHECK_THROWS_WITH(predict(model, tiny),
                      Catch::Matchers::ContainsSubstring("early convolution"));
    const FeatureMap short_mid(3, 13);  // early output: 5 frames < S_m=8
    CHECK_THROWS_WITH(predict(model, short_mid),
                      Catch::Matchers::ContainsSubstring("middle convolution"));

    NetworkSpec pnn = tiny_pcnn_spec();
    pnn.variant = Variant::pnn;
    pnn.middle.reset();
    CHECK_THROWS_WITH(predict(init_model(pnn, 1), short_mid),
                      Catch::Matchers::ContainsSubstring("persistence"));
  }
  SECTION("wrong channel count is rejected") {
    const FeatureMap wrong(2, 50);
    CHECK_THROWS_AS(predict(model, wrong), std::invalid_argument);
  }
}

TEST_CASE("aligned self-concatenation leaves predictions unchanged") {
  // With L = 1 the convolution sees no seam context, so doubling a
  // T*S-aligned input duplicates every segment exactly.
  NetworkSpec spec;
  spec.variant = Variant::pnn;
  spec.input_channels = 2;
  spec.num_tags = 3;
  spec.early = {ConvLayerSpec{3, 1, 2}};
  spec.persistence = PersistenceLayerSpec{LandscapeSpec{0, 2, 2, 5}, 4};
  spec.late = {ConvLayerSpec{3, 1, 1}};
  const Model model = init_model(spec, 17);

  Rng rng(18);
  const int frames = 2 * 4 * 2;  // S * T * segments
  const FeatureMap input = random_map(rng, 2, frames, -1.0, 1.0);
  FeatureMap doubled(2, 2 * frames);
  for (int c = 0; c < 2; ++c) {
    for (int t = 0; t < frames; ++t) {
      doubled.at(c, t) = input.at(c, t);
      doubled.at(c, frames + t) = input.at(c, t);
    }
  }
  const auto once = predict(model, input);
  const auto twice = predict(model, doubled);
  for (std::size_t i = 0; i < once.size(); ++i) {
    CHECK(once[i] == Catch::Approx(twice[i]).margin(1e-12));
  }
}

TEST_CASE("spec validation lists every violated invariant") {
  NetworkSpec spec = tiny_pcnn_spec();
  spec.middle->pool_size = 4;              // breaks S_m = T
  spec.late = {ConvLayerSpec{5, 2, 3}};    // breaks L=S=1 and tag count
  const auto violations = validate(spec);
  REQUIRE(violations.size() == 3);
  CHECK_THROWS_AS(init_model(spec, 1), std::invalid_argument);

  NetworkSpec missing = tiny_pcnn_spec();
  missing.persistence.reset();
  CHECK_FALSE(validate(missing).empty());
}

TEST_CASE("model files round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "persiland_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "model.bin").string();
  const auto path2 = (dir / "model2.bin").string();

  Model model = init_model(tiny_pcnn_spec(), 77);
  model.normalizer = NormalizationParams{{0.1, 0.2, 0.3}, {1.0, 2.0, 3.0}};
  model.tag_names = {"alpha", "beta"};
  save_model(model, path);

  const Model loaded = load_model(path);
  CHECK(loaded.spec.variant == Variant::pcnn);
  CHECK(loaded.spec.num_tags == 2);
  REQUIRE(loaded.normalizer.has_value());
  CHECK(loaded.normalizer->mean == model.normalizer->mean);
  CHECK(loaded.tag_names == model.tag_names);

  // Parameters pass through a float32 payload; saving the loaded model must
  // reproduce the file byte for byte.
  save_model(loaded, path2);
  CHECK(read_bytes(path) == read_bytes(path2));

  Rng rng(5);
  const FeatureMap input = random_map(rng, 3, 37, -1.0, 1.0);
  const auto a = predict(loaded, input);
  const auto b = predict(load_model(path2), input);
  CHECK(a == b);

  SECTION("corrupt files are rejected") {
    const auto bad = (dir / "bad.bin").string();
    std::ofstream out(bad, std::ios::binary);
    out << "not a model";
    out.close();
    CHECK_THROWS_AS(load_model(bad), std::runtime_error);
  }
}

TEST_CASE("history csv columns") {
  std::vector<EpochRecord> history;
  history.push_back(EpochRecord{1, 0.5, 0.75, 0.875});
  history.push_back(EpochRecord{2, 0.25, std::nullopt, std::nullopt});
  std::ostringstream out;
  write_history_csv(out, history);
  CHECK(out.str() ==
        "epoch,train_loss,val_perclass_auc,val_perclip_auc\n"
        "1,0.5,0.75,0.875\n"
        "2,0.25,nan,nan\n");
}
