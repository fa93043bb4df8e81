#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "whc/augment.hpp"
#include "whc/density.hpp"
#include "whc/ingest.hpp"
#include "whc/models.hpp"

namespace whc {

/// An image with its dot annotations (a patch, a whole image or a synthetic sample).
struct LabeledImage {
  std::string id;
  ImageRaster raster;
  std::vector<Dot> dots;
};

LabeledImage to_labeled(const Patch& p);

enum class InitScheme { Gaussian, He };

struct TrainConfig {
  Variant variant = Variant::WHCNet3;
  double lr = 1e-6;
  int epochs = 1;
  int batch_size = 1;
  std::uint64_t seed = 0;
  KernelParams kernel;
  int gt_downsample = 8;
  bool determinism = true;
  InitScheme init = InitScheme::Gaussian;
  double init_std = 0.01;
  /// When set, `last.whcw` is written every epoch and `best.whcw` whenever
  /// the selection metric improves.
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

struct TrainingPair {
  std::string id;
  nn::Tensor4 input;   ///< (1, 3, H, W), RGB scaled to [0, 1]
  DensityMap target;   ///< ground truth at 1/8 resolution
  nn::Tensor4 target_tensor;
  double count = 0.0;  ///< number of annotated dots
};

/// Spatial multiple required by `v` (16 for WHCNet1, 8 otherwise).
int required_input_multiple(Variant v);

nn::Tensor4 image_to_tensor(const ImageRaster& image);

TrainingPair make_training_pair(const LabeledImage& image, const TrainConfig& config);
std::vector<TrainingPair> make_training_pairs(const std::vector<LabeledImage>& images,
                                              const TrainConfig& config);

/// Weight initialisation per config; biases zero. Gaussian draws every weight
/// from N(0, init_std^2). He scales hidden convs by sqrt(2 / fan_in) and draws
/// the 1x1 output conv from N(0, init_std^2).
void initialize(Model& model, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_mae;
  std::optional<double> val_rmse;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Plain SGD on the Euclidean density loss. Each epoch visits the pairs in a
/// seeded shuffled order in batches of `batch_size`.
TrainResult train(Model& model, const std::vector<TrainingPair>& pairs, const TrainConfig& config,
                  const std::vector<TrainingPair>* val = nullptr, const EpochCallback& on_epoch = {});

std::string format_history_csv(const std::vector<EpochRecord>& history);

struct Prediction {
  DensityMap map;  ///< network output at 1/8 resolution
  double count = 0.0;
};

Prediction predict(const Model& model, const ImageRaster& image);
double predict_count(const Model& model, const ImageRaster& image);

struct ImageResult {
  std::string id;
  double estimated = 0.0;
  double ground_truth = 0.0;
};

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  std::vector<ImageResult> per_image;
};

/// MAE and RMSE over (estimated, ground-truth) count pairs.
Metrics compute_metrics(std::vector<ImageResult> results);

/// Predicts every test item (in parallel over `threads` workers) and scores
/// the counts against the dot counts.
Metrics evaluate(const Model& model, const std::vector<TrainingPair>& testset, int threads = 1);
Metrics evaluate(const Model& model, const std::vector<LabeledImage>& testset, int threads = 1);

/// Bright elliptical blobs on a textured background; blob centres are the dots.
std::vector<LabeledImage> synth_dataset(int n, int image_size, int max_objects, std::uint64_t seed);

}  // namespace whc
