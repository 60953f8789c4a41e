#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "mipslice/augment.hpp"
#include "mipslice/mip.hpp"
#include "mipslice/models.hpp"
#include "mipslice/nn/tensor.hpp"

namespace mipslice {

struct TrainConfig {
  int crop_h = 256;
  int crop_w = 384;
  int batch_size = 5;
  int epochs = 50;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-7;
  double sigma_start = 10.0;
  double sigma_end = 1.5;
  int plateau_half_width = 50;       ///< v of the 2D target map
  double validation_fraction = 0.1;
  int validation_stride = 8;         ///< sliding-window stride when validating regressors
  AugmentConfig augment;
  std::uint64_t seed = 0;

  /// Per-variant defaults: batch 5 (2D) / 8 (1D); regressors use 100 x 512
  /// crops, learning rate 1e-5 and batch 12.
  static TrainConfig defaults(Variant v);
  /// Throws ConfigError on invalid values or crops the model cannot take.
  void validate(const Model& model) const;

  bool operator==(const TrainConfig&) const = default;
};

struct TrainingSample {
  MipImage image;
  double y_mm = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double sigma = 0.0;
  double loss = 0.0;          ///< mean training loss over the epoch's batches
  double val_error_mm = 0.0;  ///< mean |error| on the validation split
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
};

/// Mean over the batch of the per-sample sum of squared differences.
double loss_l2(const nn::Tensor& pred, const nn::Tensor& target);
/// d loss_l2 / d pred.
nn::Tensor loss_l2_grad(const nn::Tensor& pred, const nn::Tensor& target);

struct Crop {
  Image2D pixels;
  int offset = 0;              ///< first image row of the crop
  int col_offset = 0;          ///< first image column (negative when padded)
  std::optional<int> y_local;  ///< empty when y_true lies outside the crop
};

/// Uniform vertical offset in [0, H - crop_h], window centred at W / 2. Images
/// smaller than the crop are padded with -127 (rows above, columns both sides).
Crop sample_crop(const Image2D& img, int y_true, int crop_h, int crop_w, Rng& rng);
/// The same crop at a fixed offset.
Crop crop_at(const Image2D& img, int y_true, int offset, int crop_h, int crop_w);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains `model` in place with Adam on random crops of augmented images,
/// sigma-annealed targets (confidence-map variants) or y/presence losses
/// (regressors). The model ends with the weights of the epoch with the lowest
/// validation error. Deterministic for a given config.seed.
/// Throws TrainingError on an empty dataset or a non-finite loss.
TrainHistory train(Model& model, const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Images of one view listed in <dir>/annotations.csv, with the merged
/// (floor-of-mean) ground truth. Ambiguous cases are dropped when asked;
/// `limit` >= 0 keeps only the first ids in sorted order.
std::vector<TrainingSample> load_training_set(const std::filesystem::path& dir, View view, bool skip_ambiguous = true,
                                              int limit = -1);

/// Rows of `epoch,sigma,loss,val_error_mm`.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

}  // namespace mipslice
