#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace acd;
using namespace testing_support;

namespace {

Model single_linear(float w, float b) {
  Model m;
  m.input_shape = {1};
  m.layers.push_back(LayerSpec::linear(Tensor({1, 1}, {w}), Tensor({1}, {b})));
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Forward, SingleLinearLayer) {
  EXPECT_FLOAT_EQ(forward(single_linear(2, 1), Tensor({1}, {3}))[0], 7.0f);
}

TEST(Forward, ReluOnlyModel) {
  Model m;
  m.input_shape = {2};
  m.layers.push_back(LayerSpec::relu());
  const auto y = forward(m, Tensor({2}, {-1, 2}));
  EXPECT_EQ(as_vector(y), (std::vector<float>{0, 2}));
}

TEST(Forward, FixtureCnnOnZeroImageMatchesBruteForce) {
  Rng rng(3);
  auto m = architectures::mnist_cnn();
  randomize_weights(m, rng, 0.3);
  const Tensor zero(m.input_shape);
  const auto y = forward(m, zero);
  EXPECT_LT(max_abs_diff(y, oracle_forward(m, zero)), 1e-5);
}

TEST(Forward, MatchesOracleOnRandomModels) {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = random_model(rng);
    const auto x = random_input(m, rng);
    EXPECT_LT(max_abs_diff(forward(m, x), oracle_forward(m, x)), 1e-5) << "trial " << trial;
  }
}

TEST(Forward, ShapeMismatchNamesLayer) {
  Model m;
  m.input_shape = {3};
  m.layers.push_back(LayerSpec::linear(3, 4));
  m.layers.push_back(LayerSpec::relu());
  m.layers.push_back(LayerSpec::linear(5, 2));
  try {
    m.activation_shapes();
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos) << e.what();
  }
  Model ok = single_linear(1, 0);
  EXPECT_THROW(forward(ok, Tensor({2})), ShapeError);
}

TEST(Forward, DropoutIsIdentityAtInference) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_model(rng);
    Model stripped = m;
    std::erase_if(stripped.layers, [](const LayerSpec& l) { return l.kind == LayerKind::dropout; });
    const auto x = random_input(m, rng);
    EXPECT_EQ(forward(m, x), forward(stripped, x));
  }
}

TEST(Softmax, Symmetric) {
  const auto p = softmax(Tensor({2}, {0, 0}));
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const auto p = softmax(Tensor({2}, {1000, 0}));
  EXPECT_TRUE(p.all_finite());
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);
}

TEST(Softmax, MatchesHighPrecisionReference) {
  const auto p = softmax(Tensor({3}, {1, 2, 3}));
  const long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), z = e1 + e2 + e3;
  EXPECT_NEAR(p[0], double(e1 / z), 1e-7);
  EXPECT_NEAR(p[1], double(e2 / z), 1e-7);
  EXPECT_NEAR(p[2], double(e3 / z), 1e-7);
  EXPECT_NEAR(double(p[0]) + p[1] + p[2], 1.0, 1e-6);
}

TEST(Softmax, RandomInputsSumToOne) {
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const auto p = softmax(random_tensor({1 + rng.below(12)}, rng, -50, 50));
    double s = 0;
    for (float v : p.values()) {
      EXPECT_GE(v, 0.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, RejectsEmptyInput) { EXPECT_THROW(softmax(Tensor()), ShapeError); }

TEST(Conv2d, OnesKernelOverOnes) {
  const auto l = LayerSpec::conv2d(Tensor({1, 1, 2, 2}, 1.0f), Tensor({1}));
  const auto y = conv2d(Tensor({1, 3, 3}, 1.0f), l);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
  for (float v : y.values()) EXPECT_EQ(v, 4.0f);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  const auto x = random_tensor({1, 4, 5}, rng);
  EXPECT_EQ(conv2d(x, LayerSpec::conv2d(Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}))), x);
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t kh = 1 + rng.below(3), kw = 1 + rng.below(3);
    const Extent2 stride{1 + rng.below(2), 1 + rng.below(2)}, pad{rng.below(2), rng.below(2)};
    auto l = LayerSpec::conv2d(random_tensor({3, 2, kh, kw}, rng), random_tensor({3}, rng), stride, pad);
    const auto x = random_tensor({2, 4 + rng.below(4), 4 + rng.below(4)}, rng);
    const auto y = conv2d(x, l);
    const auto oracle = oracle_conv2d(x, l);
    ASSERT_EQ(y.shape(), oracle.shape());
    EXPECT_LT(max_abs_diff(y, oracle), 1e-5);
  }
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
  Model m;
  m.input_shape = {1, 2, 2};
  m.layers.push_back(LayerSpec::conv2d(1, 1, {3, 3}));
  EXPECT_THROW(m.activation_shapes(), ShapeError);
}

TEST(Linear, MatchesNestedLoopOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto l = LayerSpec::linear(random_tensor({5, 7}, rng), random_tensor({5}, rng));
    const auto x = random_tensor({7}, rng);
    EXPECT_LT(max_abs_diff(linear(x, l), oracle_linear(x, l)), 1e-5);
  }
}

TEST(Maxpool, PicksBottomRight) {
  const auto r = maxpool2d_with_indices(Tensor({1, 2, 2}, {1, 2, 3, 4}), LayerSpec::maxpool2d({2, 2}));
  EXPECT_EQ(r.values[0], 4.0f);
  EXPECT_EQ(r.argmax[0], 3u);
}

TEST(Maxpool, ConstantInputTakesFirstIndex) {
  const auto r = maxpool2d_with_indices(Tensor({1, 4, 4}, 2.0f), LayerSpec::maxpool2d({2, 2}));
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{0, 2, 8, 10}));
}

TEST(Maxpool, GatherAtIndicesReproducesValues) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const auto x = random_tensor({2, 5 + rng.below(4), 5 + rng.below(4)}, rng);
    const auto l = LayerSpec::maxpool2d({2, 1 + rng.below(2)}, Extent2{1 + rng.below(2), 1 + rng.below(2)});
    const auto r = maxpool2d_with_indices(x, l);
    ASSERT_EQ(r.values.size(), r.argmax.size());
    for (std::size_t i = 0; i < r.values.size(); ++i) EXPECT_EQ(x[r.argmax[i]], r.values[i]);
    EXPECT_EQ(r.values, oracle_maxpool(x, l));
  }
}

TEST(InputGradient, LinearModelGivesWeightRow) {
  Rng rng(2);
  Model m;
  m.input_shape = {4};
  m.layers.push_back(LayerSpec::linear(random_tensor({3, 4}, rng), Tensor({3})));
  const auto x = random_tensor({4}, rng);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto g = input_gradient(m, x, c);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_FLOAT_EQ(g[i], m.layers[0].weight[c * 4 + i]);
  }
}

TEST(InputGradient, MatchesCentralDifferencesOnFixtureCnn) {
  Rng rng(17);
  auto m = architectures::mnist_cnn();
  randomize_weights(m, rng, 0.25);
  for (int trial = 0; trial < 3; ++trial) {
    const auto x = random_tensor(m.input_shape, rng, 0, 1);
    for (auto target : {GradientTarget::logit, GradientTarget::cross_entropy})
      EXPECT_LT(gradient_check(m, x, rng.below(10), target, rng, 40), 1e-2);
  }
}

TEST(InputGradient, DeadReluRegionIsZero) {
  Model m;
  m.input_shape = {3};
  m.layers.push_back(LayerSpec::linear(Tensor({2, 3}, 1.0f), Tensor({2}, -10.0f)));
  m.layers.push_back(LayerSpec::relu());
  m.layers.push_back(LayerSpec::linear(Tensor({2, 2}, 1.0f), Tensor({2})));
  const auto g = input_gradient(m, Tensor({3}, 1.0f), 0);
  EXPECT_TRUE(g.all_zero());
}

TEST(InputGradient, RejectsTokenModels) {
  Rng rng(1);
  auto m = architectures::text_cnn({"<pad>", "<unk>", "a"}, 4, 3, 2);
  EXPECT_THROW(input_gradient(m, Tensor({4}), 0), UnsupportedLayerError);
  EXPECT_THROW(input_gradient(single_linear(1, 0), Tensor({1}), 3), ShapeError);
}

TEST(ModelIo, RoundTripIsBitExact) {
  Rng rng(30);
  auto m = architectures::mnist_cnn();
  randomize_weights(m, rng);
  const auto a = scratch_dir("io_a"), b = scratch_dir("io_b");
  save_model(m, a);
  const auto loaded = load_model(a);
  save_model(loaded, b);
  EXPECT_EQ(slurp(a / "weights.bin"), slurp(b / "weights.bin"));
  EXPECT_EQ(slurp(a / "model.json"), slurp(b / "model.json"));
  for (int i = 0; i < 5; ++i) {
    const auto x = random_tensor(m.input_shape, rng, 0, 1);
    EXPECT_EQ(forward(m, x), forward(loaded, x));
  }
}

TEST(ModelIo, RoundTripPreservesRandomModels) {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_model(rng);
    const auto dir = scratch_dir("io_rand");
    save_model(m, dir);
    const auto loaded = load_model(dir);
    const auto x = random_input(m, rng);
    EXPECT_EQ(forward(m, x), forward(loaded, x));
    EXPECT_EQ(loaded.vocab, m.vocab);
  }
}

namespace {

void write_manifest(const std::filesystem::path& dir, const std::string& json, const std::vector<float>& blob) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "model.json") << json;
  std::ofstream out(dir / "weights.bin", std::ios::binary);
  out.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size() * 4));
}

const char* kTwoLayer = R"({"format_version": 1, "input_shape": [2], "class_labels": ["a", "b"],
  "layers": [
    {"kind": "linear", "weight": {"offset": 0, "shape": [2, 2]}, "bias": {"offset": 16, "shape": [2]}},
    {"kind": "relu"},
    {"kind": "linear", "weight": {"offset": 24, "shape": [2, 2]}, "bias": {"offset": %OFF%, "shape": [2]}}
  ]})";

std::string two_layer(const std::string& bias_offset, int version = 1) {
  std::string s = kTwoLayer;
  s.replace(s.find("%OFF%"), 5, bias_offset);
  if (version != 1) s.replace(s.find("\"format_version\": 1"), 19, "\"format_version\": " + std::to_string(version));
  return s;
}

}  // namespace

TEST(ModelIo, HandWrittenManifestMatchesHandComputation) {
  const auto dir = scratch_dir("io_hand");
  // W1 = [[1, -1], [2, 0]], b1 = [0, -1], W2 = [[1, 1], [0, 3]], b2 = [0.5, 0]
  write_manifest(dir, two_layer("40"), {1, -1, 2, 0, 0, -1, 1, 1, 0, 3, 0.5f, 0});
  const auto m = load_model(dir);
  // x = [3, 1]: h = relu([2, 5]) = [2, 5]; y = [7.5, 15]
  const auto y = forward(m, Tensor({2}, {3, 1}));
  EXPECT_FLOAT_EQ(y[0], 7.5f);
  EXPECT_FLOAT_EQ(y[1], 15.0f);
  EXPECT_EQ(m.class_labels, (std::vector<std::string>{"a", "b"}));
}

TEST(ModelIo, DistinctErrorsForMalformedModels) {
  const std::vector<float> blob{1, -1, 2, 0, 0, -1, 1, 1, 0, 3, 0.5f, 0};
  const auto dir = scratch_dir("io_bad");
  write_manifest(dir, two_layer("4000"), blob);
  EXPECT_THROW(load_model(dir), OffsetError);
  write_manifest(dir, two_layer("42"), blob);
  EXPECT_THROW(load_model(dir), OffsetError);
  write_manifest(dir, two_layer("44"), blob);
  EXPECT_THROW(load_model(dir), TruncatedBlobError);
  write_manifest(dir, two_layer("40", 7), blob);
  EXPECT_THROW(load_model(dir), VersionError);
  write_manifest(dir, R"({"format_version": 1, "input_shape": [2], "layers": [{"kind": "lstm"}]})", blob);
  EXPECT_THROW(load_model(dir), UnsupportedLayerError);
  write_manifest(dir, "{not json", blob);
  EXPECT_THROW(load_model(dir), ModelFormatError);
}

TEST(RawContainer, RoundTrip) {
  Rng rng(2);
  const auto t = random_tensor({2, 3, 4}, rng);
  const auto path = scratch_dir("raw") / "t.acdf";
  write_raw(path, t);
  EXPECT_EQ(read_raw(path), t);
  EXPECT_EQ(load_image(path), t);
  std::ofstream(path, std::ios::binary | std::ios::app) << "x";
  EXPECT_THROW(read_raw(path), DataError);
}

TEST(Idx, MnistSubsetLoads) {
  const auto test = mnist_test(10);
  ASSERT_EQ(test.size(), 10u);
  EXPECT_EQ(test[0].input.shape(), (Shape{1, 28, 28}));
  for (const auto& s : test) {
    EXPECT_LT(s.label, 10u);
    for (float v : s.input.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_EQ(mnist_train().size(), 4000u);
  EXPECT_EQ(mnist_test().size(), 1000u);
}

TEST(Idx, WriteThenReadUbyte) {
  const auto path = scratch_dir("idx") / "img.idx";
  write_idx_ubyte(path, {2, 2, 3}, {0, 255, 51, 0, 0, 0, 1, 2, 3, 4, 5, 6});
  const auto img = load_image(path, 0);
  EXPECT_EQ(img.shape(), (Shape{1, 2, 3}));
  EXPECT_FLOAT_EQ(img[1], 1.0f);
  EXPECT_FLOAT_EQ(img[2], 0.2f);
  EXPECT_FLOAT_EQ(load_image(path, 1)[5], 6.0f / 255.0f);
  EXPECT_THROW(load_image(path, 2), DataError);
}

TEST(Corpus, ReadAndEncode) {
  const auto path = scratch_dir("corpus") / "c.jsonl";
  std::ofstream(path) << R"({"tokens": ["not", "very", "good"], "label": 0})" << "\n\n"
                      << R"({"tokens": ["good"], "label": 1})" << "\n";
  const auto corpus = read_corpus(path);
  ASSERT_EQ(corpus.size(), 2u);
  const auto vocab = build_vocab(corpus);
  EXPECT_EQ(vocab, (std::vector<std::string>{"<pad>", "<unk>", "not", "very", "good"}));
  const auto m = architectures::text_cnn(vocab, 5, 4, 3);
  const auto ids = encode_tokens(m, {"very", "bad"});
  EXPECT_EQ(as_vector(ids), (std::vector<float>{3, 1, 0, 0, 0}));
  EXPECT_THROW(encode_tokens(m, {"a", "b", "c", "d", "e", "f"}), ShapeError);
  std::ofstream(path) << "{\"tokens\": [], \"label\": 0}\n";
  EXPECT_THROW(read_corpus(path), DataError);
}

TEST(Train, SeparableToySetReachesFullAccuracy) {
  Rng rng(12);
  std::vector<Sample> data;
  for (int i = 0; i < 200; ++i) {
    const float a = float(rng.uniform(-1, 1)), b = float(rng.uniform(-1, 1));
    if (std::abs(a + 0.5f * b) < 0.05f) continue;
    data.push_back({Tensor({2}, {a, b}), a + 0.5f * b > 0 ? 1u : 0u});
  }
  Model arch;
  arch.input_shape = {2};
  arch.layers.push_back(LayerSpec::linear(2, 2));
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.seed = 1;
  const auto r = train_fixture(arch, data, {}, cfg);
  EXPECT_GE(r.report.train_accuracy, 0.99);
}

TEST(Train, DeterministicGivenSeed) {
  const auto train = mnist_train(300);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 5;
  const auto a = train_fixture(architectures::mnist_cnn(), train, {}, cfg);
  const auto b = train_fixture(architectures::mnist_cnn(), train, {}, cfg);
  for (std::size_t i = 0; i < a.model.layers.size(); ++i) {
    EXPECT_EQ(a.model.layers[i].weight, b.model.layers[i].weight);
    EXPECT_EQ(a.model.layers[i].bias, b.model.layers[i].bias);
  }
  cfg.seed = 6;
  const auto c = train_fixture(architectures::mnist_cnn(), train, {}, cfg);
  EXPECT_NE(a.model.layers[0].weight, c.model.layers[0].weight);
}

TEST(Train, NonFiniteLossAborts) {
  std::vector<Sample> data{{Tensor({1}, {1e30f}), 0}, {Tensor({1}, {-1e30f}), 1}};
  Model arch;
  arch.input_shape = {1};
  arch.layers.push_back(LayerSpec::linear(1, 2));
  TrainConfig cfg;
  cfg.learning_rate = 1e10;
  EXPECT_THROW(train_fixture(arch, data, {}, cfg), NumericError);
}

TEST(Train, MnistSubsetCnnReachesNinetyPercent) {
  const auto& r = trained_mnist_cnn();
  EXPECT_GE(r.report.test_accuracy, 0.90);
  EXPECT_DOUBLE_EQ(accuracy(r.model, mnist_test()), r.report.test_accuracy);
}
