#include "whc/traineval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "whc/error.hpp"
#include "whc/ops.hpp"

namespace whc {

LabeledImage to_labeled(const Patch& p) { return LabeledImage{p.stem(), p.raster, p.dots}; }

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("learning rate must be finite and >= 0");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (gt_downsample != 8) throw InvalidArgument("gt_downsample must be 8 (network output stride)");
  if (init == InitScheme::Gaussian && !(init_std > 0.0)) throw InvalidArgument("init_std must be positive");
  kernel.validate();
}

int required_input_multiple(Variant v) {
  int pools = 0;
  for (const auto& l : build_frontend()) pools += l.kind == LayerKind::MaxPool;
  for (const auto& l : build_backend(v)) pools += l.kind == LayerKind::MaxPool;
  return 1 << pools;
}

nn::Tensor4 image_to_tensor(const ImageRaster& image) {
  nn::Tensor4 t(nn::Shape{1, 3, image.height, image.width});
  for (int ch = 0; ch < 3; ++ch) {
    float* plane = t.plane(0, ch);
    for (int r = 0; r < image.height; ++r)
      for (int c = 0; c < image.width; ++c)
        plane[std::size_t(r) * image.width + c] = float(image.at(r, c, ch)) / 255.0f;
  }
  return t;
}

TrainingPair make_training_pair(const LabeledImage& image, const TrainConfig& config) {
  const int multiple = required_input_multiple(config.variant);
  if (image.raster.height % multiple != 0 || image.raster.width % multiple != 0)
    throw ShapeError("image " + image.id + " is " + std::to_string(image.raster.width) + "x" +
                     std::to_string(image.raster.height) + ", " +
                     std::string(variant_name(config.variant)) + " needs multiples of " +
                     std::to_string(multiple));
  TrainingPair pair;
  pair.id = image.id;
  pair.input = image_to_tensor(image.raster);
  const DensityMap full = generate_density(image.dots, config.kernel, image.raster.height, image.raster.width);
  pair.target = downsample_sum(full, config.gt_downsample);
  pair.target_tensor = nn::Tensor4(nn::Shape{1, 1, pair.target.height, pair.target.width});
  for (std::size_t i = 0; i < pair.target.values.size(); ++i)
    pair.target_tensor[i] = float(pair.target.values[i]);
  pair.count = double(image.dots.size());
  return pair;
}

std::vector<TrainingPair> make_training_pairs(const std::vector<LabeledImage>& images,
                                              const TrainConfig& config) {
  config.validate();
  std::vector<TrainingPair> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(make_training_pair(im, config));
  return out;
}

void initialize(Model& model, const TrainConfig& config) {
  if (config.init == InitScheme::Gaussian) {
    nn::gaussian_init(model.params(), config.init_std, config.seed);
    return;
  }
  nn::he_init(model.params(), config.seed);
  // The density head keeps small weights: a He-scaled head starts most output
  // pixels below zero, where the final ReLU blocks their gradient for good.
  std::mt19937_64 rng(config.seed + 1);
  std::normal_distribution<double> dist(0.0, config.init_std);
  for (float& v : model.params().get("output.weight").value.vec()) v = float(dist(rng));
}

namespace {

nn::Tensor4 stack(const std::vector<const nn::Tensor4*>& items) {
  const nn::Shape s0 = items.front()->shape();
  nn::Tensor4 out(nn::Shape{int(items.size()), s0.c, s0.h, s0.w});
  const std::size_t per = s0.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape() != s0)
      throw ShapeError("batch items differ in shape: " + items[i]->shape().str() + " vs " + s0.str());
    std::copy_n(items[i]->data(), per, out.data() + i * per);
  }
  return out;
}

}  // namespace

TrainResult train(Model& model, const std::vector<TrainingPair>& pairs, const TrainConfig& config,
                  const std::vector<TrainingPair>* val, const EpochCallback& on_epoch) {
  config.validate();
  if (pairs.empty()) throw InvalidArgument("train: no training pairs");
  if (config.variant != model.variant())
    throw InvalidArgument("train: config variant " + std::string(variant_name(config.variant)) +
                          " does not match model " + std::string(variant_name(model.variant())));
  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);

  TrainResult result;
  std::vector<std::size_t> order(pairs.size());
  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ull);
  double best = std::numeric_limits<double>::infinity();
  model.params().zero_grad();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(config.batch_size));
      std::vector<const nn::Tensor4*> xs, ys;
      for (std::size_t i = start; i < stop; ++i) {
        xs.push_back(&pairs[order[i]].input);
        ys.push_back(&pairs[order[i]].target_tensor);
      }
      const nn::Tensor4 x = xs.size() == 1 ? *xs.front() : stack(xs);
      const nn::Tensor4 y = ys.size() == 1 ? *ys.front() : stack(ys);

      Model::Trace trace;
      const nn::Tensor4 pred = model.forward(x, &trace);
      const auto loss = nn::euclidean_loss(pred, y);
      if (!std::isfinite(loss.value))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(steps + 1) + " (first item " + pairs[order[start]].id + ")");
      model.backward(trace, loss.grad);
      nn::sgd_step(model.params(), config.lr);
      loss_sum += loss.value;
      ++steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / double(steps);
    if (val && !val->empty()) {
      const Metrics m = evaluate(model, *val);
      rec.val_mae = m.mae;
      rec.val_rmse = m.rmse;
    }
    const double score = rec.val_mae.value_or(rec.mean_loss);
    const bool improved = score < best;
    if (improved) {
      best = score;
      result.best_epoch = epoch;
    }
    if (!config.checkpoint_dir.empty()) {
      save_weights(model, config.checkpoint_dir / "last.whcw");
      if (improved) save_weights(model, config.checkpoint_dir / "best.whcw");
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

std::string format_history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,mean_loss,val_mae,val_rmse\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + format_real(r.mean_loss) + "," +
           (r.val_mae ? format_real(*r.val_mae) : "") + "," + (r.val_rmse ? format_real(*r.val_rmse) : "") + "\n";
  }
  return out;
}

namespace {

Prediction to_prediction(const nn::Tensor4& out) {
  Prediction p;
  p.map = DensityMap(out.h(), out.w());
  for (std::size_t i = 0; i < p.map.values.size(); ++i) p.map.values[i] = double(out[i]);
  p.count = integrate(p.map);
  return p;
}

template <typename Item, typename Fn>
Metrics evaluate_items(const std::vector<Item>& items, int threads, Fn&& score) {
  if (items.empty()) throw InvalidArgument("evaluate: empty test set");
  std::vector<ImageResult> results(items.size());
  const int workers = std::clamp(threads, 1, int(items.size()));
  auto run = [&](int worker) {
    for (std::size_t i = std::size_t(worker); i < items.size(); i += std::size_t(workers)) results[i] = score(items[i]);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(run, t);
  }
  return compute_metrics(std::move(results));
}

}  // namespace

Prediction predict(const Model& model, const ImageRaster& image) {
  return to_prediction(model.forward(image_to_tensor(image)));
}

double predict_count(const Model& model, const ImageRaster& image) { return predict(model, image).count; }

Metrics compute_metrics(std::vector<ImageResult> results) {
  if (results.empty()) throw InvalidArgument("compute_metrics: no results");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& r : results) {
    const double e = std::abs(r.estimated - r.ground_truth);
    abs_sum += e;
    sq_sum += e * e;
  }
  Metrics m;
  const double n = double(results.size());
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  // Rounding can leave rmse a hair below mae when all errors are equal.
  if (m.rmse < m.mae) m.rmse = m.mae;
  m.per_image = std::move(results);
  return m;
}

Metrics evaluate(const Model& model, const std::vector<TrainingPair>& testset, int threads) {
  return evaluate_items(testset, threads, [&](const TrainingPair& p) {
    return ImageResult{p.id, to_prediction(model.forward(p.input)).count, p.count};
  });
}

Metrics evaluate(const Model& model, const std::vector<LabeledImage>& testset, int threads) {
  return evaluate_items(testset, threads, [&](const LabeledImage& im) {
    return ImageResult{im.id, predict_count(model, im.raster), double(im.dots.size())};
  });
}

std::vector<LabeledImage> synth_dataset(int n, int image_size, int max_objects, std::uint64_t seed) {
  if (n < 0) throw InvalidArgument("synth_dataset: n must be >= 0");
  if (image_size < 16 || image_size % 16 != 0)
    throw InvalidArgument("synth_dataset: image_size must be a positive multiple of 16");
  if (max_objects < 0) throw InvalidArgument("synth_dataset: max_objects must be >= 0");

  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double s = double(image_size);
  std::vector<LabeledImage> out;
  out.reserve(std::size_t(n));

  for (int idx = 0; idx < n; ++idx) {
    LabeledImage im;
    im.id = "synth_" + std::to_string(idx);
    const int count = std::uniform_int_distribution<int>(0, max_objects)(rng);

    // Background: soft green-brown gradient with per-pixel texture noise.
    std::vector<double> rgb(std::size_t(image_size) * image_size * 3);
    const double gx = uniform(-0.15, 0.15), gy = uniform(-0.15, 0.15);
    const double base[3] = {uniform(0.20, 0.35), uniform(0.30, 0.45), uniform(0.10, 0.20)};
    std::normal_distribution<double> noise(0.0, 0.04);
    for (int r = 0; r < image_size; ++r)
      for (int c = 0; c < image_size; ++c)
        for (int ch = 0; ch < 3; ++ch)
          rgb[(std::size_t(r) * image_size + c) * 3 + ch] =
              base[ch] + gx * (c / s - 0.5) + gy * (r / s - 0.5) + noise(rng);

    const double margin = 2.0;
    for (int k = 0; k < count; ++k) {
      // Centres on a 1/8-pixel grid keep flipped coordinates exact.
      const double cx = std::round(uniform(margin, s - 1.0 - margin) * 8.0) / 8.0;
      const double cy = std::round(uniform(margin, s - 1.0 - margin) * 8.0) / 8.0;
      const double a = uniform(s / 40.0 + 1.0, s / 20.0 + 1.5);
      const double b = a * uniform(0.45, 0.75);
      const double theta = uniform(0.0, 3.14159265358979);
      const double ct = std::cos(theta), st = std::sin(theta);
      const double color[3] = {uniform(0.85, 1.0), uniform(0.75, 0.95), uniform(0.35, 0.55)};
      const int r0 = std::max(0, int(cy - a - 2)), r1 = std::min(image_size - 1, int(cy + a + 2));
      const int c0 = std::max(0, int(cx - a - 2)), c1 = std::min(image_size - 1, int(cx + a + 2));
      for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c) {
          const double dx = c - cx, dy = r - cy;
          const double u = (dx * ct + dy * st) / a;
          const double v = (-dx * st + dy * ct) / b;
          const double q = u * u + v * v;
          const double alpha = std::clamp(1.5 - q, 0.0, 1.0);
          if (alpha <= 0.0) continue;
          for (int ch = 0; ch < 3; ++ch) {
            double& px = rgb[(std::size_t(r) * image_size + c) * 3 + ch];
            px = (1.0 - alpha) * px + alpha * color[ch];
          }
        }
      im.dots.push_back(Dot{cx, cy});
    }

    im.raster = ImageRaster(image_size, image_size);
    for (std::size_t i = 0; i < rgb.size(); ++i)
      im.raster.pixels[i] = std::uint8_t(std::lround(std::clamp(rgb[i], 0.0, 1.0) * 255.0));
    out.push_back(std::move(im));
  }
  return out;
}

}  // namespace whc
