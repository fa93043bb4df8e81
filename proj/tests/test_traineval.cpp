#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "whc/error.hpp"
#include "whc/ops.hpp"
#include "whc/report.hpp"
#include "whc/traineval.hpp"

using namespace whc;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("whc_traineval_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Zero weights everywhere; only the output bias drives the prediction.
void constant_output(Model& m, float value) {
  for (auto& p : m.params().all()) p.value.fill(0.0f);
  m.params().get("output.bias").value[0] = value;
}

TrainConfig small_config() {
  TrainConfig c;
  c.variant = Variant::WHCNet3;
  c.init = InitScheme::He;
  c.lr = 1e-4;
  c.epochs = 2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("training pairs carry 1/8 targets that integrate to the dot count") {
  std::mt19937_64 rng(61);
  LabeledImage im{"p", ImageRaster(256, 256), {}};
  std::uniform_real_distribution<double> u(0.0, 255.9);
  for (int i = 0; i < 12; ++i) im.dots.push_back(Dot{u(rng), u(rng)});
  const TrainConfig cfg = small_config();
  const TrainingPair a = make_training_pair(im, cfg);
  CHECK(a.target.height == 32);
  CHECK(a.target.width == 32);
  CHECK(std::abs(integrate(a.target) - 12.0) <= 1e-4);
  CHECK(a.count == 12.0);
  CHECK(a.input.shape() == nn::Shape{1, 3, 256, 256});

  const TrainingPair b = make_training_pair(im, cfg);
  CHECK(a.input == b.input);
  CHECK(a.target.values == b.target.values);

  const TrainingPair z = make_training_pair(LabeledImage{"z", ImageRaster(64, 64), {}}, cfg);
  for (double v : z.target.values) CHECK(v == 0.0);
}

TEST_CASE("inputs are scaled to [0, 1]") {
  ImageRaster img(8, 8);
  img.at(0, 0, 0) = 255;
  img.at(1, 2, 1) = 51;
  const nn::Tensor4 t = image_to_tensor(img);
  CHECK(t.at(0, 0, 0, 0) == 1.0f);
  CHECK(t.at(0, 1, 1, 2) == doctest::Approx(0.2f));
  CHECK(t.at(0, 2, 0, 0) == 0.0f);
}

TEST_CASE("divisibility is enforced per variant") {
  TrainConfig cfg = small_config();
  CHECK(required_input_multiple(Variant::WHCNet1) == 16);
  CHECK(required_input_multiple(Variant::CSRNet) == 8);
  const LabeledImage im{"odd", ImageRaster(40, 24), {}};
  CHECK_NOTHROW(make_training_pair(im, cfg));
  cfg.variant = Variant::WHCNet1;
  CHECK_THROWS_AS(make_training_pair(im, cfg), ShapeError);
  CHECK_THROWS_AS(make_training_pair(LabeledImage{"x", ImageRaster(12, 16), {}}, small_config()), ShapeError);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK(c.lr == 1e-6);
  CHECK(c.batch_size == 1);
  CHECK(c.init_std == 0.01);
  CHECK(c.init == InitScheme::Gaussian);
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.gt_downsample = 4;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.lr = -1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  TrainConfig cfg = small_config();
  cfg.lr = 0.0;
  cfg.epochs = 3;
  const auto pairs = make_training_pairs(synth_dataset(2, 32, 4, 1), cfg);
  Model m(cfg.variant);
  initialize(m, cfg);
  const std::string before = encode_weights(m);
  train(m, pairs, cfg);
  CHECK(encode_weights(m) == before);
}

TEST_CASE("training is deterministic and writes checkpoints") {
  TrainConfig cfg = small_config();
  const auto pairs = make_training_pairs(synth_dataset(3, 32, 5, 2), cfg);
  auto run = [&](const std::filesystem::path& dir) {
    cfg.checkpoint_dir = dir;
    Model m(cfg.variant);
    initialize(m, cfg);
    auto r = train(m, pairs, cfg);
    return std::pair{r, encode_weights(m)};
  };
  const auto d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
  const auto [r1, w1] = run(d1);
  const auto [r2, w2] = run(d2);
  REQUIRE(r1.history.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(r1.history[i].mean_loss == r2.history[i].mean_loss);
  CHECK(w1 == w2);
  CHECK(std::filesystem::exists(d1 / "last.whcw"));
  CHECK(std::filesystem::exists(d1 / "best.whcw"));
  CHECK(read_text_file(d1 / "last.whcw") == w1);
  CHECK(r1.best_epoch >= 1);
}

TEST_CASE("validation metrics select the best checkpoint") {
  TrainConfig cfg = small_config();
  cfg.epochs = 3;
  const auto data = synth_dataset(3, 32, 5, 4);
  const auto pairs = make_training_pairs(data, cfg);
  const std::vector<TrainingPair> val(pairs.begin(), pairs.begin() + 1);
  cfg.checkpoint_dir = scratch_dir("best");
  Model m(cfg.variant);
  initialize(m, cfg);
  std::vector<int> seen;
  const auto r = train(m, pairs, cfg, &val, [&](const EpochRecord& e) { seen.push_back(e.epoch); });
  CHECK(seen == std::vector<int>{1, 2, 3});
  double best = 1e300;
  int best_epoch = 0;
  for (const auto& e : r.history) {
    REQUIRE(e.val_mae.has_value());
    if (*e.val_mae < best) {
      best = *e.val_mae;
      best_epoch = e.epoch;
    }
  }
  CHECK(r.best_epoch == best_epoch);

  const std::string csv = format_history_csv(r.history);
  CHECK(csv.rfind("epoch,mean_loss,val_mae,val_rmse\n1,", 0) == 0);
}

TEST_CASE("training errors") {
  TrainConfig cfg = small_config();
  Model m(cfg.variant);
  CHECK_THROWS_AS(train(m, {}, cfg), InvalidArgument);
  const auto pairs = make_training_pairs(synth_dataset(1, 32, 2, 5), cfg);
  Model other(Variant::CSRNet);
  CHECK_THROWS_AS(train(other, pairs, cfg), InvalidArgument);

  initialize(m, cfg);
  m.params().get("output.bias").value[0] = std::numeric_limits<float>::infinity();
  try {
    train(m, pairs, cfg);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("loss on one repeated pair does not increase at a small step") {
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  const auto pairs = make_training_pairs(synth_dataset(1, 32, 6, 9), cfg);
  Model m(cfg.variant);
  initialize(m, cfg);
  const double initial = nn::euclidean_loss(m.forward(pairs[0].input), pairs[0].target_tensor).value;
  cfg.lr = 1e-4 * initial;
  cfg.epochs = 10;
  const auto r = train(m, pairs, cfg);
  for (std::size_t i = 1; i < r.history.size(); ++i) CHECK(r.history[i].mean_loss <= r.history[i - 1].mean_loss);
}

TEST_CASE("predict_count integrates the output map") {
  Model m(Variant::WHCNet3);
  constant_output(m, 0.0f);
  CHECK(predict_count(m, ImageRaster(64, 64)) == 0.0);
  constant_output(m, 0.5f);
  const Prediction p = predict(m, ImageRaster(64, 64));
  CHECK(p.map.height == 8);
  CHECK(p.count == 32.0);
  CHECK_THROWS_AS(predict(m, ImageRaster(60, 64)), ShapeError);
}

TEST_CASE("metrics") {
  const Metrics m = compute_metrics({{"a", 4, 4}, {"b", 8, 4}});
  CHECK(m.mae == 2.0);
  CHECK(m.rmse == doctest::Approx(std::sqrt(8.0)).epsilon(1e-15));
  const Metrics z = compute_metrics({{"a", 3, 3}, {"b", 1.5, 1.5}});
  CHECK(z.mae == 0.0);
  CHECK(z.rmse == 0.0);
  CHECK_THROWS_AS(compute_metrics({}), InvalidArgument);

  std::mt19937_64 rng(62);
  for (int t = 0; t < 100; ++t) {
    std::vector<ImageResult> rs;
    std::uniform_real_distribution<double> u(0.0, 100.0);
    const int n = 1 + int(rng() % 50);
    double abs_sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
      rs.push_back({"i", u(rng), u(rng)});
      const double d = rs.back().estimated - rs.back().ground_truth;
      abs_sum += std::fabs(d);
      sq += d * d;
    }
    const Metrics got = compute_metrics(rs);
    CHECK(std::abs(got.mae - abs_sum / n) <= 1e-9);
    CHECK(std::abs(got.rmse - std::sqrt(sq / n)) <= 1e-9);
    CHECK(got.mae <= got.rmse);
  }
}

TEST_CASE("evaluate agrees across thread counts and with predict_count") {
  TrainConfig cfg = small_config();
  const auto data = synth_dataset(4, 32, 6, 11);
  Model m(cfg.variant);
  initialize(m, cfg);
  const Metrics one = evaluate(m, data, 1);
  const Metrics three = evaluate(m, data, 3);
  CHECK(one.mae == three.mae);
  CHECK(one.rmse == three.rmse);
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(one.per_image[i].id == data[i].id);
    CHECK(one.per_image[i].estimated == predict_count(m, data[i].raster));
    CHECK(one.per_image[i].ground_truth == double(data[i].dots.size()));
  }
  const Metrics pairs = evaluate(m, make_training_pairs(data, cfg), 2);
  CHECK(pairs.mae == one.mae);
  CHECK_THROWS_AS(evaluate(m, std::vector<LabeledImage>{}), InvalidArgument);
}

TEST_CASE("synthetic data") {
  const auto a = synth_dataset(4, 64, 10, 7);
  REQUIRE(a.size() == 4);
  for (const auto& im : a) {
    CHECK(im.raster.width == 64);
    CHECK(im.dots.size() <= 10);
    CHECK(std::abs(integrate(generate_density(im.dots, KernelParams{}, 64, 64)) - double(im.dots.size())) <= 1e-4);
  }
  const auto b = synth_dataset(4, 64, 10, 7);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a[i].raster == b[i].raster);
    CHECK(a[i].dots == b[i].dots);
  }
  CHECK(synth_dataset(3, 16, 0, 1)[2].dots.empty());
  CHECK_THROWS_AS(synth_dataset(1, 24, 3, 1), InvalidArgument);
  CHECK_THROWS_AS(synth_dataset(1, 32, -1, 1), InvalidArgument);
}

TEST_CASE("report table layout") {
  ReportRow r{"WHCNet3", compute_metrics({{"a", 2, 1}}), std::nullopt, 12345678, 49382716};
  const std::string table = render_report_table({r});
  CHECK(table.find("Model") != std::string::npos);
  CHECK(table.find("Patches") != std::string::npos);
  CHECK(table.find("Whole image") != std::string::npos);
  CHECK(table.find("Size") != std::string::npos);
  CHECK(table.find("WHCNet3") != std::string::npos);
  CHECK(table.find("12.35 M params") != std::string::npos);

  const auto j = report_to_json({r});
  CHECK(j["models"][0]["model"] == "WHCNet3");
  CHECK(j["models"][0]["patches"]["mae"] == 1.0);
  const std::string nd = per_image_ndjson(r);
  CHECK(nlohmann::json::parse(nd.substr(0, nd.find('\n')))["abs_error"] == 1.0);
}
