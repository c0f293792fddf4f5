// Command-line front end: explain predictions, score units, mine phrases,
// measure adversarial stability, weaken and train fixture models.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "acd/acd.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v, const char* f = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw acd::DataError("cannot write " + path);
  out << content;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> words;
  for (std::string w; is >> w;) words.push_back(w);
  return words;
}

/// Options shared by commands that score groups of one input.
struct InputOptions {
  std::string model_dir;
  std::string text;
  std::string image;
  std::size_t index = 0;
  std::string cls = "auto";
  std::string scorer = "cd";
  std::string cd_bias = "proportional";
  std::string cd_relu = "standard";
  float reference = 0.0f;
  std::size_t superpixel = 14;
  std::uint64_t seed = 0;

  void add(CLI::App* app) {
    app->add_option("--model", model_dir, "Model directory (model.json + weights.bin)")->required();
    auto* t = app->add_option("--text", text, "Whitespace-separated tokens");
    auto* i = app->add_option("--image", image, "IDX or ACDF image file");
    t->excludes(i);
    app->add_option("--index", index, "Image index inside an IDX stack");
    app->add_option("--class", cls, "Target class index or 'auto' for the prediction");
    app->add_option("--scorer", scorer, "cd | occlusion | buildup")
        ->check(CLI::IsMember({"cd", "occlusion", "buildup"}));
    app->add_option("--cd-bias", cd_bias, "proportional | naive")->check(CLI::IsMember({"proportional", "naive"}));
    app->add_option("--cd-relu", cd_relu, "standard | shapley")->check(CLI::IsMember({"standard", "shapley"}));
    app->add_option("--reference", reference, "Reference value for occlusion and build-up");
    app->add_option("--superpixel", superpixel, "Superpixel edge length in pixels")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Random seed");
  }

  struct Loaded {
    acd::Model model;
    acd::Tensor x;
    acd::UnitLayout layout;
    std::vector<std::string> tokens;
    acd::ScorerSpec spec;
  };

  Loaded load() const {
    if (text.empty() == image.empty()) throw UsageError("exactly one of --text or --image is required");
    Loaded l{acd::load_model(model_dir), {}, {}, {}, {}};
    if (!text.empty()) {
      l.tokens = split_words(text);
      l.x = acd::encode_tokens(l.model, l.tokens);
      l.layout = acd::UnitLayout::text(l.tokens.size(), l.model.feature_shape());
    } else {
      l.x = acd::load_image(image, index);
      l.layout = acd::UnitLayout::image(l.model.feature_shape(), superpixel);
    }
    l.spec.method = *acd::score_method_from_string(scorer);
    l.spec.variant.bias = cd_bias == "naive" ? acd::BiasRule::all_to_beta_naive : acd::BiasRule::proportional;
    l.spec.variant.relu = cd_relu == "shapley" ? acd::ReluRule::shapley : acd::ReluRule::activation_of_beta;
    l.spec.reference_value = reference;
    if (cls == "auto") {
      l.spec.target_class = acd::predict(l.model, l.x);
    } else {
      try {
        l.spec.target_class = std::stoul(cls);
      } catch (const std::exception&) {
        throw UsageError("--class must be an integer or 'auto'");
      }
    }
    return l;
  }
};

/// Every image of an IDX stack or of an ACDF batch [N, C, H, W].
std::vector<acd::Tensor> load_stack(const std::string& path) {
  std::vector<acd::Tensor> out;
  std::ifstream probe(path, std::ios::binary);
  char magic[4] = {};
  probe.read(magic, 4);
  if (std::string(magic, 4) == "ACDF") {
    const auto t = acd::read_raw(path);
    if (t.rank() != 4) throw acd::ShapeError(path + ": expected an ACDF batch [N, C, H, W]");
    const acd::Shape item(t.shape().begin() + 1, t.shape().end());
    const auto per = acd::shape_numel(item);
    for (std::size_t i = 0; i < t.extent(0); ++i)
      out.emplace_back(item, std::vector<float>(t.values().begin() + i * per, t.values().begin() + (i + 1) * per));
    return out;
  }
  const auto header = acd::read_idx(path);
  const std::size_t n = header.shape.size() == 3 ? header.shape[0] : 1;
  for (std::size_t i = 0; i < n; ++i) out.push_back(acd::load_image(path, i));
  return out;
}

int run_explain(const InputOptions& in, std::optional<double> k, std::optional<std::size_t> max_iters, bool smooth,
                const std::string& out, const std::string& svg_path) {
  auto l = in.load();
  acd::AcdParams params =
      l.layout.domain == acd::Domain::text ? acd::AcdParams::text_defaults() : acd::AcdParams::image_defaults();
  if (k) params.k = *k;
  if (max_iters) params.max_iters = *max_iters;
  params.smooth = smooth;
  const auto h = acd::acd(l.model, l.x, l.spec, params, l.layout, l.tokens);
  acd::save_hierarchy(h, out);
  if (!svg_path.empty()) write_text(svg_path, acd::render_hierarchy_svg(h));
  std::cout << "class " << h.target_class << ": " << h.nodes.size() << " nodes, root score "
            << fmt(h.nodes[h.roots.front()].score) << "\n";
  return 0;
}

int run_scores(const InputOptions& in, const std::string& out, const std::string& svg_path) {
  auto l = in.load();
  const auto map = acd::unit_level_map(l.model, l.x, l.spec, l.layout);
  std::vector<double> scores(map.values().begin(), map.values().end());
  nlohmann::json j{{"class", l.spec.target_class},
                   {"scorer", acd::scorer_to_json(l.spec)},
                   {"grid", {l.layout.grid_h, l.layout.grid_w}},
                   {"scores", scores}};
  if (!l.tokens.empty()) j["tokens"] = l.tokens;
  write_text(out, j.dump(2) + "\n");
  if (!svg_path.empty())
    write_text(svg_path, acd::render_unit_map_svg(scores, l.layout.grid_h, l.layout.grid_w, l.tokens));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical interpretations of feed-forward network predictions"};
  app.require_subcommand(1);

  InputOptions explain_in;
  std::optional<double> k;
  std::optional<std::size_t> max_iters;
  bool smooth = false;
  std::string out, svg_path;
  auto* explain = app.add_subcommand("explain", "Build and store the hierarchy for one prediction");
  explain_in.add(explain);
  explain->add_option("--k", k, "Percent-of-max pop threshold (default 90 text, 95 images)");
  explain->add_option("--max-iters", max_iters, "Agglomeration rounds for images (default 5)");
  explain->add_option("--smooth", smooth, "Fill holes in image patches (true|false)");
  explain->add_option("--out", out, "Hierarchy file to write")->required();
  explain->add_option("--svg", svg_path, "Rendering to write");

  std::string hierarchy_path;
  auto* render = app.add_subcommand("render", "Render a stored hierarchy");
  render->add_option("--hierarchy", hierarchy_path)->required();
  render->add_option("--svg", svg_path)->required();
  std::uint64_t unused_seed = 0;
  render->add_option("--seed", unused_seed, "Accepted for uniformity; rendering is deterministic");

  InputOptions scores_in;
  auto* scores = app.add_subcommand("scores", "Score every unit on its own");
  scores_in.add(scores);
  scores->add_option("--out", out, "JSON file to write")->required();
  scores->add_option("--svg", svg_path, "Heat map to write");

  std::string model_dir, corpus_path, lengths_arg = "1,3,5", scorer_name = "cd", cls_arg;
  std::size_t per_length = 5;
  std::uint64_t seed = 0;
  auto* phrases = app.add_subcommand("top-phrases", "Mine the highest and lowest scoring phrases of a corpus");
  phrases->add_option("--model", model_dir)->required();
  phrases->add_option("--corpus", corpus_path, "Token corpus (JSON lines)")->required();
  phrases->add_option("--lengths", lengths_arg, "Comma-separated phrase lengths");
  phrases->add_option("--count", per_length, "Phrases per length and polarity");
  phrases->add_option("--class", cls_arg, "Class whose scores are mined (default: last class)");
  phrases->add_option("--scorer", scorer_name)->check(CLI::IsMember({"cd", "occlusion", "buildup"}));
  phrases->add_option("--k", k, "Percent-of-max pop threshold (default 90)");
  phrases->add_option("--seed", seed);
  phrases->add_option("--out", out, "TSV file to write")->required();

  std::string images_path, labels_path, attack = "fgsm", adv_path;
  std::vector<double> epsilons;
  std::size_t count = 20, superpixel = 14;
  auto* robust = app.add_subcommand("robustness", "Hierarchy stability under adversarial perturbation");
  robust->add_option("--model", model_dir)->required();
  robust->add_option("--images", images_path, "IDX image stack")->required();
  robust->add_option("--labels", labels_path, "IDX label file")->required();
  robust->add_option("--attack", attack, "fgsm | gradient | file")->check(CLI::IsMember({"fgsm", "gradient", "file"}));
  robust->add_option("--adv", adv_path, "Adversarial image stack aligned with --images (attack=file)");
  robust->add_option("--epsilons", epsilons, "Epsilon schedule (default 0.02 doubling to 0.64)")->delimiter(',');
  robust->add_option("--count", count, "Number of images to report");
  robust->add_option("--scorer", scorer_name, "cd | occlusion")->check(CLI::IsMember({"cd", "occlusion", "buildup"}));
  robust->add_option("--k", k);
  robust->add_option("--max-iters", max_iters);
  robust->add_option("--superpixel", superpixel)->check(CLI::PositiveNumber);
  robust->add_option("--seed", seed, "Shuffles which images are attacked");
  robust->add_option("--out", out, "TSV report to write")->required();

  double fraction = 0.25;
  std::string test_images, test_labels;
  auto* weaken = app.add_subcommand("weaken", "Permute a fraction of a model's weights");
  weaken->add_option("--model", model_dir)->required();
  weaken->add_option("--fraction", fraction);
  weaken->add_option("--seed", seed);
  weaken->add_option("--out", out, "Model directory to write")->required();

  std::string arch = "mnist-cnn", train_images, train_labels, test_corpus;
  std::size_t epochs = 5, batch = 32, train_limit = 0;
  double lr = 0.05;
  auto* train = app.add_subcommand("train-fixture", "Train a small fixture model");
  train->add_option("--arch", arch, "mnist-cnn | text-cnn")->check(CLI::IsMember({"mnist-cnn", "text-cnn"}));
  train->add_option("--train-images", train_images);
  train->add_option("--train-labels", train_labels);
  train->add_option("--test-images", test_images);
  train->add_option("--test-labels", test_labels);
  train->add_option("--train-limit", train_limit, "Use at most this many training samples");
  train->add_option("--corpus", corpus_path, "Training corpus for text-cnn");
  train->add_option("--test-corpus", test_corpus, "Held-out corpus for text-cnn");
  train->add_option("--epochs", epochs);
  train->add_option("--lr", lr);
  train->add_option("--batch", batch);
  train->add_option("--seed", seed);
  train->add_option("--out", out, "Model directory to write")->required();

  std::string input_path;
  auto* fwd = app.add_subcommand("forward", "Logits for an ACDF input (or a batch along a leading axis)");
  fwd->add_option("--model", model_dir)->required();
  fwd->add_option("--input", input_path)->required();
  fwd->add_option("--seed", seed);
  fwd->add_option("--out", out, "ACDF file to write")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*explain) return run_explain(explain_in, k, max_iters, smooth, out, svg_path);
    if (*render) {
      write_text(svg_path, acd::render_hierarchy_svg(acd::load_hierarchy(hierarchy_path)));
      return 0;
    }
    if (*scores) return run_scores(scores_in, out, svg_path);

    if (*phrases) {
      const auto model = acd::load_model(model_dir);
      std::vector<std::size_t> lengths;
      for (const auto& part : split_words([&] {
             auto s = lengths_arg;
             for (auto& c : s) c = c == ',' ? ' ' : c;
             return s;
           }())) {
        try {
          lengths.push_back(std::stoul(part));
        } catch (const std::exception&) {
          throw UsageError("--lengths must be comma-separated integers");
        }
      }
      acd::ScorerSpec spec;
      spec.method = *acd::score_method_from_string(scorer_name);
      spec.target_class = cls_arg.empty() ? model.class_count() - 1 : std::stoul(cls_arg);
      auto params = acd::AcdParams::text_defaults();
      if (k) params.k = *k;
      const auto table = acd::top_phrases(acd::read_corpus(corpus_path), model, spec, lengths, per_length, params);
      std::string tsv = "length\tpolarity\trank\tphrase\tmean_score\tcount\n";
      for (const auto& row : table.rows)
        for (const auto* side : {&row.positive, &row.negative})
          for (std::size_t r = 0; r < side->size(); ++r) {
            const auto& rec = (*side)[r];
            std::string phrase;
            for (const auto& t : rec.tokens) phrase += (phrase.empty() ? "" : " ") + t;
            tsv += std::to_string(row.length) + "\t" + (side == &row.positive ? "positive" : "negative") + "\t" +
                   std::to_string(r + 1) + "\t" + phrase + "\t" + fmt(rec.mean_score) + "\t" +
                   std::to_string(rec.count) + "\n";
          }
      write_text(out, tsv);
      return 0;
    }

    if (*robust) {
      const auto model = acd::load_model(model_dir);
      const auto samples = acd::load_mnist(images_path, labels_path);
      if (attack == "file" && adv_path.empty()) throw UsageError("--attack file requires --adv");
      if (epsilons.empty()) epsilons = acd::doubling_schedule(0.02, 6);
      acd::ScorerSpec spec;
      spec.method = *acd::score_method_from_string(scorer_name);
      auto params = acd::AcdParams::image_defaults();
      if (k) params.k = *k;
      if (max_iters) params.max_iters = *max_iters;
      std::vector<acd::Tensor> adversarial;
      if (attack == "file") adversarial = load_stack(adv_path);
      std::vector<std::size_t> order(std::min(samples.size(), attack == "file" ? adversarial.size() : SIZE_MAX));
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      if (seed != 0) acd::Rng(seed).shuffle(std::span(order));
      std::string tsv =
          "image_id\toriginal_class\tadversarial_class\tepsilon\tcorr_original_class\tcorr_adversarial_class\tmean\n";
      std::size_t written = 0;
      double total = 0.0;
      for (auto id : order) {
        if (written == count) break;
        const auto& s = samples[id];
        if (acd::predict(model, s.input) != s.label) continue;
        std::optional<acd::AttackResult> adv;
        if (attack == "file") {
          auto t = adversarial[id];
          const auto cls = acd::predict(model, t);
          if (cls != s.label) adv = acd::AttackResult{std::move(t), 0.0, cls};
        } else if (attack == "fgsm") {
          adv = acd::fgsm_attack(model, s.input, s.label, epsilons);
        } else {
          adv = acd::gradient_attack(model, s.input, s.label, epsilons);
        }
        if (!adv) continue;
        const auto r = acd::hierarchy_stability(model, s.input, adv->adversarial, spec, params, superpixel);
        tsv += std::to_string(id) + "\t" + std::to_string(r.original_class) + "\t" +
               std::to_string(r.adversarial_class) + "\t" + fmt(adv->epsilon) + "\t" +
               fmt(r.original_correlation) + "\t" + fmt(r.adversarial_correlation) + "\t" + fmt(r.mean) + "\n";
        total += r.mean;
        ++written;
      }
      write_text(out, tsv);
      std::cout << written << " images, mean correlation " << fmt(written ? total / double(written) : 0.0) << "\n";
      return 0;
    }

    if (*weaken) {
      acd::save_model(acd::weaken_model(acd::load_model(model_dir), fraction, seed), out);
      return 0;
    }

    if (*train) {
      acd::Model arch_model;
      std::vector<acd::Sample> train_set, test_set;
      if (arch == "mnist-cnn") {
        if (train_images.empty() || train_labels.empty())
          throw UsageError("mnist-cnn needs --train-images and --train-labels");
        arch_model = acd::architectures::mnist_cnn();
        train_set = acd::load_mnist(train_images, train_labels, train_limit ? train_limit : SIZE_MAX);
        if (!test_images.empty()) test_set = acd::load_mnist(test_images, test_labels);
      } else {
        if (corpus_path.empty()) throw UsageError("text-cnn needs --corpus");
        auto corpus = acd::read_corpus(corpus_path);
        if (train_limit && corpus.size() > train_limit) corpus.resize(train_limit);
        std::size_t length = 0;
        for (const auto& r : corpus) length = std::max(length, r.tokens.size());
        arch_model = acd::architectures::text_cnn(acd::build_vocab(corpus), length + 2);
        auto to_samples = [&](const std::vector<acd::TextRecord>& rs) {
          std::vector<acd::Sample> out_samples;
          for (const auto& r : rs)
            if (r.tokens.size() <= arch_model.input_shape[0])
              out_samples.push_back({acd::encode_tokens(arch_model, r.tokens), r.label});
          return out_samples;
        };
        train_set = to_samples(corpus);
        if (!test_corpus.empty()) test_set = to_samples(acd::read_corpus(test_corpus));
      }
      const auto result = acd::train_fixture(arch_model, train_set, test_set, {epochs, lr, 0.9, batch, seed});
      acd::save_model(result.model, out);
      nlohmann::json report{{"train_accuracy", result.report.train_accuracy},
                            {"test_accuracy", result.report.test_accuracy},
                            {"epoch_loss", result.report.epoch_loss},
                            {"train_samples", train_set.size()},
                            {"test_samples", test_set.size()}};
      write_text(out + "/train_report.json", report.dump(2) + "\n");
      std::cout << "train accuracy " << fmt(result.report.train_accuracy, "%.4f") << ", test accuracy "
                << fmt(result.report.test_accuracy, "%.4f") << "\n";
      return 0;
    }

    if (*fwd) {
      const auto model = acd::load_model(model_dir);
      const auto input = acd::read_raw(input_path);
      if (input.shape() == model.input_shape) {
        acd::write_raw(out, acd::forward(model, input));
        return 0;
      }
      acd::Shape item(input.shape().begin() + 1, input.shape().end());
      if (input.rank() != model.input_shape.size() + 1 || item != model.input_shape)
        throw acd::ShapeError("input " + acd::shape_str(input.shape()) + " matches neither the model input " +
                              acd::shape_str(model.input_shape) + " nor a batch of it");
      const std::size_t batch_n = input.extent(0), per = acd::shape_numel(item);
      const std::size_t classes = model.class_count();
      std::vector<float> logits;
      for (std::size_t b = 0; b < batch_n; ++b) {
        acd::Tensor x(item, std::vector<float>(input.values().begin() + b * per, input.values().begin() + (b + 1) * per));
        const auto y = acd::forward(model, x);
        logits.insert(logits.end(), y.values().begin(), y.values().end());
      }
      acd::write_raw(out, acd::Tensor({batch_n, classes}, std::move(logits)));
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const acd::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const acd::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const acd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
