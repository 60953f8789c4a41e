#include "mipslice/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mipslice/error.hpp"

namespace mipslice {

using nn::Tensor;
using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::l3unet2d: return "l3unet2d";
    case Variant::l3unet1d: return "l3unet1d";
    case Variant::baseline_regression: return "baseline_regression";
    case Variant::baseline_regression_dual: return "baseline_regression_dual";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  if (name == "l3unet2d") return Variant::l3unet2d;
  if (name == "l3unet1d") return Variant::l3unet1d;
  if (name == "baseline" || name == "baseline_regression") return Variant::baseline_regression;
  if (name == "baseline-dual" || name == "baseline_regression_dual") return Variant::baseline_regression_dual;
  throw DomainError("unknown model variant '" + name + "'");
}

bool is_confidence_map_variant(Variant v) { return v == Variant::l3unet2d || v == Variant::l3unet1d; }

ModelConfig ModelConfig::defaults(Variant v) {
  ModelConfig cfg;
  cfg.variant = v;
  if (!is_confidence_map_variant(v)) cfg.base_channels = 64;
  return cfg;
}

int ModelConfig::downsample_factor() const {
  if (!is_confidence_map_variant(variant)) return 1;
  return (1 << (depth - 1)) * final_pool;
}

void ModelConfig::validate() const {
  if (depth < 1 || depth > 8) throw ConfigError("model depth must be in [1, 8]");
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (final_pool < 1) throw ConfigError("final_pool must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must be in [0, 1)");
  if (!(leaky_relu_alpha >= 0.0)) throw ConfigError("leaky_relu_alpha must be >= 0");
}

void Model::check_input(int height, int width) const {
  const int f = config_.downsample_factor();
  if (height < 1 || width < 1 || height % f != 0 || width % f != 0) {
    throw ShapeError("input " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by " +
                     std::to_string(f) + " (pad first)");
  }
}

std::vector<nn::Parameter*> Model::parameters() {
  std::vector<nn::Parameter*> params;
  std::vector<Tensor*> bufs;
  collect(params, bufs);
  return params;
}

std::vector<Tensor*> Model::buffers() {
  std::vector<nn::Parameter*> params;
  std::vector<Tensor*> bufs;
  collect(params, bufs);
  return bufs;
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(0.0f);
}

namespace {

void check_batch(const Tensor& x) {
  if (x.n() < 1 || x.c() != 1) throw ShapeError("model input must be (N, 1, H, W), got " + x.shape().str());
}

/// UNet with a 2D decoder, or with every skip and the bottleneck reduced by a
/// global horizontal max-pool and a 1D decoder.
class L3UNet final : public Model {
 public:
  explicit L3UNet(const ModelConfig& cfg) : Model(cfg), one_d_(cfg.variant == Variant::l3unet1d) {
    cfg.validate();
    Rng init = make_rng(cfg.init_seed, {0x4c33554e4554ull});
    const auto alpha = static_cast<float>(cfg.leaky_relu_alpha);
    const int depth = cfg.depth;
    std::vector<int> widths(depth);
    for (int l = 0; l < depth; ++l) widths[l] = cfg.base_channels << l;
    auto units_at = [](int level) { return level == 0 ? 1 : 2; };

    int in = 1;
    for (int l = 0; l < depth; ++l) {
      auto block = std::make_unique<nn::Sequential>();
      for (int u = 0; u < units_at(l); ++u) {
        const std::string name = "enc" + std::to_string(l) + ".unit" + std::to_string(u);
        block->add<nn::Conv2d>(u == 0 ? in : widths[l], widths[l], 3, 3, init, name + ".conv");
        block->add<nn::BatchNorm>(widths[l], name + ".bn");
        block->add<nn::LeakyRelu>(alpha);
      }
      encoder_.push_back(std::move(block));
      const int pool = l + 1 < depth ? 2 : cfg.final_pool;
      pools_.emplace_back(pool, pool);
      upsamples_.emplace_back(pool, one_d_ ? 1 : pool);
      in = widths[l];
    }
    if (one_d_) skip_reducers_.resize(depth + 1);

    decoder_.resize(depth);
    int below = widths[depth - 1];  // channels arriving from the level underneath
    const int kw = one_d_ ? 1 : 3;
    for (int l = depth - 1; l >= 0; --l) {
      const int out = widths[l > 0 ? l - 1 : 0];
      auto block = std::make_unique<nn::Sequential>();
      for (int u = 0; u < units_at(l); ++u) {
        const std::string name = "dec" + std::to_string(l) + ".unit" + std::to_string(u);
        block->add<nn::Conv2d>(u == 0 ? below + widths[l] : out, out, 3, kw, init, name + ".conv");
        block->add<nn::BatchNorm>(out, name + ".bn");
        block->add<nn::LeakyRelu>(alpha);
      }
      block->add<nn::Conv2d>(out, out, 1, 1, init, "dec" + std::to_string(l) + ".pointwise");
      block->add<nn::LeakyRelu>(alpha);
      block->add<nn::Dropout>(static_cast<float>(cfg.dropout_p), /*channelwise=*/!one_d_);
      decoder_[l] = std::move(block);
      up_channels_.insert(up_channels_.begin(), below);
      below = out;
    }
    head_.add<nn::Conv2d>(below, 1, 1, 1, init, "head.conv");
    head_.add<nn::Sigmoid>();
  }

  Tensor infer(const Tensor& x) const override {
    check_batch(x);
    check_input(x.h(), x.w());
    const int depth = config().depth;
    std::vector<Tensor> skips(depth);
    Tensor h = x;
    for (int l = 0; l < depth; ++l) {
      skips[l] = encoder_[l]->infer(h);
      h = pools_[l].infer(skips[l]);
    }
    if (one_d_) {
      h = skip_reducers_[depth].infer(h);
      for (int l = 0; l < depth; ++l) skips[l] = skip_reducers_[l].infer(skips[l]);
    }
    for (int l = depth - 1; l >= 0; --l) {
      h = upsamples_[l].infer(h);
      h = decoder_[l]->infer(nn::concat_channels(h, skips[l]));
    }
    return head_.infer(h);
  }

  Tensor forward(const Tensor& x, Rng& rng) override {
    check_batch(x);
    check_input(x.h(), x.w());
    const int depth = config().depth;
    std::vector<Tensor> skips(depth);
    Tensor h = x;
    for (int l = 0; l < depth; ++l) {
      skips[l] = encoder_[l]->forward(h, rng);
      h = pools_[l].forward(skips[l], rng);
    }
    if (one_d_) {
      h = skip_reducers_[depth].forward(h, rng);
      for (int l = 0; l < depth; ++l) skips[l] = skip_reducers_[l].forward(skips[l], rng);
    }
    for (int l = depth - 1; l >= 0; --l) {
      h = upsamples_[l].forward(h, rng);
      h = decoder_[l]->forward(nn::concat_channels(h, skips[l]), rng);
    }
    return head_.forward(h, rng);
  }

  void backward(const Tensor& grad_out) override {
    const int depth = config().depth;
    std::vector<Tensor> skip_grads(depth);
    Tensor g = head_.backward(grad_out);
    for (int l = 0; l < depth; ++l) {
      auto [from_below, from_skip] = nn::split_channels(decoder_[l]->backward(g), up_channels_[l]);
      skip_grads[l] = std::move(from_skip);
      g = upsamples_[l].backward(from_below);
    }
    if (one_d_) {
      g = skip_reducers_[depth].backward(g);
      for (int l = 0; l < depth; ++l) skip_grads[l] = skip_reducers_[l].backward(skip_grads[l]);
    }
    for (int l = depth - 1; l >= 0; --l) {
      Tensor gs = pools_[l].backward(g);
      gs += skip_grads[l];
      g = encoder_[l]->backward(gs);
    }
  }

 protected:
  void collect(std::vector<nn::Parameter*>& params, std::vector<Tensor*>& buffers) override {
    for (auto& block : encoder_) block->collect(params, buffers);
    for (int l = config().depth - 1; l >= 0; --l) decoder_[l]->collect(params, buffers);
    head_.collect(params, buffers);
  }

 private:
  bool one_d_;
  std::vector<std::unique_ptr<nn::Sequential>> encoder_;
  std::vector<nn::MaxPool> pools_;
  std::vector<nn::RowMax> skip_reducers_;  // [0, depth) skips, [depth] bottleneck
  std::vector<nn::Upsample> upsamples_;    // indexed by the decoder level they feed
  std::vector<std::unique_ptr<nn::Sequential>> decoder_;
  std::vector<int> up_channels_;  // channels coming from below, per decoder level
  nn::Sequential head_;
};

/// VGG16-style trunk (13 conv + ReLU, five 2x2 pools) with a dense head on the
/// flattened features of a fixed 100x512 crop.
class BaselineRegressor final : public Model {
 public:
  explicit BaselineRegressor(const ModelConfig& cfg) : Model(cfg), dual_(cfg.variant == Variant::baseline_regression_dual) {
    cfg.validate();
    Rng init = make_rng(cfg.init_seed, {0x5647473136ull});
    constexpr int kConvsPerBlock[5] = {2, 2, 3, 3, 3};
    constexpr int kWidthMultiplier[5] = {1, 2, 4, 8, 8};
    int in = 1;
    int h = kBaselineCropHeight;
    int w = kBaselineCropWidth;
    for (int b = 0; b < 5; ++b) {
      const int width = cfg.base_channels * kWidthMultiplier[b];
      for (int u = 0; u < kConvsPerBlock[b]; ++u) {
        trunk_.add<nn::Conv2d>(in, width, 3, 3, init, "block" + std::to_string(b) + ".conv" + std::to_string(u));
        trunk_.add<nn::LeakyRelu>(0.0f);
        in = width;
      }
      trunk_.add<nn::MaxPool>(2, 2);
      h /= 2;
      w /= 2;
    }
    head_ = std::make_unique<nn::Dense>(in * h * w, dual_ ? 2 : 1, init, "head");
  }

  void check_input(int height, int width) const override {
    if (height != kBaselineCropHeight || width != kBaselineCropWidth) {
      throw ShapeError("baseline regressor expects " + std::to_string(kBaselineCropHeight) + "x" +
                       std::to_string(kBaselineCropWidth) + " crops, got " + std::to_string(height) + "x" +
                       std::to_string(width));
    }
  }

  Tensor infer(const Tensor& x) const override {
    check_batch(x);
    check_input(x.h(), x.w());
    Tensor out = head_->infer(trunk_.infer(x));
    if (dual_) apply_presence_sigmoid(out);
    return out;
  }

  Tensor forward(const Tensor& x, Rng& rng) override {
    check_batch(x);
    check_input(x.h(), x.w());
    Tensor out = head_->forward(trunk_.forward(x, rng), rng);
    if (dual_) {
      apply_presence_sigmoid(out);
      output_ = out;
    }
    return out;
  }

  void backward(const Tensor& grad_out) override {
    Tensor g = grad_out;
    if (dual_) {
      for (int n = 0; n < g.n(); ++n) {
        const float p = output_.at(n, 1, 0, 0);
        g.at(n, 1, 0, 0) *= p * (1.0f - p);
      }
    }
    trunk_.backward(head_->backward(g));
  }

 protected:
  void collect(std::vector<nn::Parameter*>& params, std::vector<Tensor*>& buffers) override {
    trunk_.collect(params, buffers);
    head_->collect(params, buffers);
  }

 private:
  static void apply_presence_sigmoid(Tensor& out) {
    for (int n = 0; n < out.n(); ++n) {
      float& v = out.at(n, 1, 0, 0);
      v = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
    }
  }

  bool dual_;
  nn::Sequential trunk_;
  std::unique_ptr<nn::Dense> head_;
  Tensor output_;
};

std::string hash_hex(std::uint64_t h) {
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

json config_to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"depth", c.depth},
          {"base_channels", c.base_channels},
          {"leaky_relu_alpha", c.leaky_relu_alpha},
          {"dropout_p", c.dropout_p},
          {"final_pool", c.final_pool},
          {"init_seed", c.init_seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c = ModelConfig::defaults(variant_from_string(j.at("variant").get<std::string>()));
  c.depth = j.value("depth", c.depth);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.leaky_relu_alpha = j.value("leaky_relu_alpha", c.leaky_relu_alpha);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.final_pool = j.value("final_pool", c.final_pool);
  c.init_seed = j.value("init_seed", c.init_seed);
  return c;
}

}  // namespace

std::unique_ptr<Model> build_l3unet_2d(const ModelConfig& cfg) {
  ModelConfig c = cfg;
  c.variant = Variant::l3unet2d;
  return std::make_unique<L3UNet>(c);
}

std::unique_ptr<Model> build_l3unet_1d(const ModelConfig& cfg) {
  ModelConfig c = cfg;
  c.variant = Variant::l3unet1d;
  return std::make_unique<L3UNet>(c);
}

std::unique_ptr<Model> build_baseline_regressor(const ModelConfig& cfg) {
  if (is_confidence_map_variant(cfg.variant)) {
    throw DomainError("build_baseline_regressor: variant must be baseline_regression or baseline_regression_dual");
  }
  return std::make_unique<BaselineRegressor>(cfg);
}

std::unique_ptr<Model> build_model(const ModelConfig& cfg) {
  switch (cfg.variant) {
    case Variant::l3unet2d: return build_l3unet_2d(cfg);
    case Variant::l3unet1d: return build_l3unet_1d(cfg);
    default: return build_baseline_regressor(cfg);
  }
}

std::int64_t count_parameters(Model& model) {
  std::int64_t total = 0;
  for (const auto* p : model.parameters()) total += static_cast<std::int64_t>(p->value.size());
  return total;
}

std::int64_t count_parameters(nn::Layer& layer) {
  std::vector<nn::Parameter*> params;
  std::vector<Tensor*> buffers;
  layer.collect(params, buffers);
  std::int64_t total = 0;
  for (const auto* p : params) total += static_cast<std::int64_t>(p->value.size());
  return total;
}

std::vector<float> export_state(Model& model) {
  std::vector<float> state;
  for (const auto* p : model.parameters()) state.insert(state.end(), p->value.values().begin(), p->value.values().end());
  for (const auto* b : model.buffers()) state.insert(state.end(), b->values().begin(), b->values().end());
  return state;
}

void import_state(Model& model, const std::vector<float>& state) {
  std::size_t pos = 0;
  auto take = [&](Tensor& t) {
    if (pos + t.size() > state.size()) throw FormatError("model state is too short for this architecture");
    std::memcpy(t.data(), state.data() + pos, t.size() * sizeof(float));
    pos += t.size();
  };
  for (auto* p : model.parameters()) take(p->value);
  for (auto* b : model.buffers()) take(*b);
  if (pos != state.size()) throw FormatError("model state is too long for this architecture");
}

void save_checkpoint(Model& model, const std::filesystem::path& manifest, const CheckpointInfo& info) {
  std::filesystem::path weights = manifest;
  weights.replace_extension(".weights.bin");
  const std::vector<float> state = export_state(model);
  {
    std::ofstream out(weights, std::ios::binary);
    if (!out) throw IoError("cannot write " + weights.string());
    out.write(reinterpret_cast<const char*>(state.data()), static_cast<std::streamsize>(state.size() * sizeof(float)));
    if (!out) throw IoError("write failed for " + weights.string());
  }
  const json j = {{"variant", to_string(model.variant())},
                  {"config", config_to_json(model.config())},
                  {"parameter_count", count_parameters(model)},
                  {"training_config_hash", hash_hex(info.training_config_hash)},
                  {"epoch", info.epoch},
                  {"weights", weights.filename().string()}};
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + manifest.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open checkpoint " + manifest.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint manifest " + manifest.string() + ": " + e.what());
  }
  LoadedCheckpoint ckpt;
  ckpt.model = build_model(config_from_json(j.at("config")));
  ckpt.info.epoch = j.value("epoch", -1);
  ckpt.info.training_config_hash = std::stoull(j.value("training_config_hash", std::string("0")), nullptr, 16);
  const std::filesystem::path weights = manifest.parent_path() / j.at("weights").get<std::string>();
  std::ifstream win(weights, std::ios::binary | std::ios::ate);
  if (!win) throw IoError("cannot open weights " + weights.string());
  const auto bytes = static_cast<std::size_t>(win.tellg());
  if (bytes % sizeof(float) != 0) throw FormatError("weights file size is not a multiple of 4");
  std::vector<float> state(bytes / sizeof(float));
  win.seekg(0);
  win.read(reinterpret_cast<char*>(state.data()), static_cast<std::streamsize>(bytes));
  if (!win) throw IoError("failed reading " + weights.string());
  import_state(*ckpt.model, state);
  if (j.contains("parameter_count") && j["parameter_count"].get<std::int64_t>() != count_parameters(*ckpt.model)) {
    throw FormatError("checkpoint parameter_count does not match the rebuilt architecture");
  }
  return ckpt;
}

}  // namespace mipslice
