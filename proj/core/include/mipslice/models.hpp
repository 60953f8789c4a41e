#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mipslice/nn/layers.hpp"
#include "mipslice/nn/tensor.hpp"
#include "mipslice/random.hpp"

namespace mipslice {

enum class Variant { l3unet2d, l3unet1d, baseline_regression, baseline_regression_dual };

std::string to_string(Variant v);
/// Accepts the canonical names plus the CLI spellings "baseline" and "baseline-dual".
Variant variant_from_string(const std::string& name);
bool is_confidence_map_variant(Variant v);

/// Fixed input crop of the sliding-window regressor.
inline constexpr int kBaselineCropHeight = 100;
inline constexpr int kBaselineCropWidth = 512;

struct ModelConfig {
  Variant variant = Variant::l3unet2d;
  int depth = 5;            ///< encoder levels
  int base_channels = 32;   ///< first-level width, doubling per level
  double leaky_relu_alpha = 0.05;
  double dropout_p = 0.25;
  int final_pool = 4;       ///< pool size below the deepest encoder level
  std::uint64_t init_seed = 0;

  /// Defaults for the variant; the regressors use a VGG16 width of 64.
  static ModelConfig defaults(Variant v);

  /// 2^(depth-1) * final_pool for the UNets; 1 for the regressors.
  int downsample_factor() const;
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// A network with a training-mode forward/backward and a thread-safe
/// evaluation-mode `infer`. Inputs are (N, 1, H, W) tensors of int8 pixels
/// scaled by 1/127 (see image_to_input).
///
/// Output shapes:
///   l3unet2d                 (N, 1, H, W)   sigmoid confidence map
///   l3unet1d                 (N, 1, H, 1)   sigmoid confidence vector
///   baseline_regression      (N, 1, 1, 1)   row / crop height
///   baseline_regression_dual (N, 2, 1, 1)   [row / crop height, presence probability]
class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)) {}
  virtual ~Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Variant variant() const { return config_.variant; }
  const ModelConfig& config() const { return config_; }

  virtual nn::Tensor infer(const nn::Tensor& x) const = 0;
  virtual nn::Tensor forward(const nn::Tensor& x, Rng& rng) = 0;
  virtual void backward(const nn::Tensor& grad_out) = 0;

  /// Throws ShapeError when (H, W) is not accepted by this network.
  virtual void check_input(int height, int width) const;

  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Tensor*> buffers();
  void zero_grad();

 protected:
  virtual void collect(std::vector<nn::Parameter*>& params, std::vector<nn::Tensor*>& buffers) = 0;

 private:
  ModelConfig config_;
};

std::unique_ptr<Model> build_l3unet_2d(const ModelConfig& cfg);
std::unique_ptr<Model> build_l3unet_1d(const ModelConfig& cfg);
std::unique_ptr<Model> build_baseline_regressor(const ModelConfig& cfg);
/// Dispatches on cfg.variant.
std::unique_ptr<Model> build_model(const ModelConfig& cfg);

/// Number of trainable scalars (batch-norm running statistics excluded).
std::int64_t count_parameters(Model& model);
std::int64_t count_parameters(nn::Layer& layer);

struct CheckpointInfo {
  std::uint64_t training_config_hash = 0;
  int epoch = -1;
};

/// Writes <manifest>.json {variant, config, parameter_count,
/// training_config_hash, epoch, weights} and the float32 weights next to it
/// (<stem>.weights.bin: parameters then buffers, in collection order).
void save_checkpoint(Model& model, const std::filesystem::path& manifest, const CheckpointInfo& info);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointInfo info;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest);

/// Snapshot / restore of all weights and buffers (used for best-epoch selection).
std::vector<float> export_state(Model& model);
void import_state(Model& model, const std::vector<float>& state);

}  // namespace mipslice
