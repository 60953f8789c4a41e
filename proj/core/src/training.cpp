#include "mipslice/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "mipslice/error.hpp"
#include "mipslice/inference.hpp"
#include "mipslice/targets.hpp"

namespace mipslice {

using nn::Tensor;

TrainConfig TrainConfig::defaults(Variant v) {
  TrainConfig c;
  switch (v) {
    case Variant::l3unet2d: c.batch_size = 5; break;
    case Variant::l3unet1d: c.batch_size = 8; break;
    case Variant::baseline_regression:
    case Variant::baseline_regression_dual:
      c.crop_h = kBaselineCropHeight;
      c.crop_w = kBaselineCropWidth;
      c.learning_rate = 1e-5;
      c.batch_size = 12;
      break;
  }
  return c;
}

void TrainConfig::validate(const Model& model) const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(sigma_start > 0.0) || !(sigma_end > 0.0)) throw ConfigError("sigma schedule endpoints must be positive");
  if (plateau_half_width < 0) throw ConfigError("plateau_half_width must be >= 0");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) throw ConfigError("validation_fraction must be in [0, 1)");
  if (validation_stride < 1) throw ConfigError("validation_stride must be >= 1");
  if (crop_h < 1 || crop_w < 1) throw ConfigError("crop dimensions must be positive");
  augment.validate();
  try {
    model.check_input(crop_h, crop_w);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("crop size rejected by the model: ") + e.what());
  }
}

double loss_l2(const Tensor& pred, const Tensor& target) {
  if (!(pred.shape() == target.shape())) {
    throw ShapeError("loss_l2: shape mismatch " + pred.shape().str() + " vs " + target.shape().str());
  }
  if (pred.n() < 1) throw ShapeError("loss_l2: empty batch");
  double sum = 0.0;
  auto p = pred.values();
  auto t = target.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - t[i];
    sum += d * d;
  }
  return sum / pred.n();
}

Tensor loss_l2_grad(const Tensor& pred, const Tensor& target) {
  if (!(pred.shape() == target.shape())) throw ShapeError("loss_l2_grad: shape mismatch");
  Tensor g(pred.shape());
  const float scale = 2.0f / static_cast<float>(pred.n());
  auto p = pred.values();
  auto t = target.values();
  auto d = g.values();
  for (std::size_t i = 0; i < p.size(); ++i) d[i] = scale * (p[i] - t[i]);
  return g;
}

Crop crop_at(const Image2D& img, int y_true, int offset, int crop_h, int crop_w) {
  if (crop_h < 1 || crop_w < 1) throw ShapeError("crop: dimensions must be positive");
  const int rows = std::max(img.rows(), crop_h);
  if (offset < 0 || offset > rows - crop_h) throw ShapeError("crop: offset outside the image");
  Crop crop;
  crop.offset = offset;
  crop.col_offset = (img.cols() - crop_w) / 2;
  crop.pixels = Image2D(crop_h, crop_w, kPadValue);
  for (int r = 0; r < crop_h; ++r) {
    const int src_r = offset + r;
    if (src_r >= img.rows()) break;
    auto src = img.row(src_r);
    auto dst = crop.pixels.row(r);
    for (int c = 0; c < crop_w; ++c) {
      const int src_c = crop.col_offset + c;
      if (src_c >= 0 && src_c < img.cols()) dst[c] = src[src_c];
    }
  }
  const int local = y_true - offset;
  if (local >= 0 && local < crop_h) crop.y_local = local;
  return crop;
}

Crop sample_crop(const Image2D& img, int y_true, int crop_h, int crop_w, Rng& rng) {
  const int rows = std::max(img.rows(), crop_h);
  return crop_at(img, y_true, uniform_int(rng, 0, rows - crop_h), crop_h, crop_w);
}

namespace {

// Stream tags for make_rng.
constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kSampleStream = 3;
constexpr std::uint64_t kDropoutStream = 4;

int row_of(const TrainingSample& s) {
  return std::clamp(static_cast<int>(std::lround(s.y_mm / s.image.row_spacing)), 0, s.image.rows() - 1);
}

struct Batch {
  Tensor input;
  Tensor target;
  std::vector<bool> positive;
};

// Regressors see a positive window for half the samples (all of them for the
// single-output model, which has no way to express absence).
Crop regressor_crop(const Image2D& img, int y, const TrainConfig& cfg, bool dual, Rng& rng) {
  const int rows = std::max(img.rows(), cfg.crop_h);
  if (!dual || bernoulli(rng, 0.5)) {
    const int lo = std::max(0, y - cfg.crop_h + 1);
    const int hi = std::min(rows - cfg.crop_h, y);
    return crop_at(img, y, uniform_int(rng, lo, hi), cfg.crop_h, cfg.crop_w);
  }
  return sample_crop(img, y, cfg.crop_h, cfg.crop_w, rng);
}

Batch make_batch(const Model& model, const std::vector<TrainingSample>& data, const std::vector<std::size_t>& idx,
                 const TrainConfig& cfg, int epoch, double sigma) {
  const int n = static_cast<int>(idx.size());
  const Variant v = model.variant();
  Batch b;
  b.input = Tensor({n, 1, cfg.crop_h, cfg.crop_w});
  switch (v) {
    case Variant::l3unet2d: b.target = Tensor({n, 1, cfg.crop_h, cfg.crop_w}); break;
    case Variant::l3unet1d: b.target = Tensor({n, 1, cfg.crop_h, 1}); break;
    case Variant::baseline_regression: b.target = Tensor({n, 1, 1, 1}); break;
    case Variant::baseline_regression_dual: b.target = Tensor({n, 2, 1, 1}); break;
  }
  b.positive.resize(n);
  for (int i = 0; i < n; ++i) {
    const TrainingSample& s = data[idx[i]];
    Rng rng = make_rng(cfg.seed, {kSampleStream, static_cast<std::uint64_t>(epoch), idx[i]});
    const AugmentResult aug = augment(s.image, row_of(s), cfg.augment, rng);
    const Crop crop = is_confidence_map_variant(v)
                          ? sample_crop(aug.image.pixels, aug.y_true, cfg.crop_h, cfg.crop_w, rng)
                          : regressor_crop(aug.image.pixels, aug.y_true, cfg, v == Variant::baseline_regression_dual, rng);
    float* dst = b.input.sample(i);
    auto src = crop.pixels.values();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k] / 127.0f;
    b.positive[i] = crop.y_local.has_value();
    if (!crop.y_local) continue;  // all-zero target
    const int y = *crop.y_local;
    float* t = b.target.sample(i);
    if (v == Variant::l3unet2d) {
      const auto map = make_confidence_map_2d(cfg.crop_h, cfg.crop_w, y, sigma, cfg.plateau_half_width);
      std::copy(map.values.values().begin(), map.values.values().end(), t);
    } else if (v == Variant::l3unet1d) {
      const auto map = make_confidence_map_1d(cfg.crop_h, y, sigma);
      std::copy(map.values.begin(), map.values.end(), t);
    } else {
      t[0] = static_cast<float>(y) / cfg.crop_h;
      if (v == Variant::baseline_regression_dual) t[1] = 1.0f;
    }
  }
  return b;
}

// L2 on y over positive windows plus binary cross-entropy on presence.
double regressor_loss(const Tensor& pred, const Batch& b, bool dual, Tensor& grad) {
  const int n = pred.n();
  grad = Tensor(pred.shape());
  int positives = 0;
  for (int i = 0; i < n; ++i) positives += b.positive[i] ? 1 : 0;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (b.positive[i]) {
      const double d = pred.at(i, 0, 0, 0) - b.target.at(i, 0, 0, 0);
      loss += d * d / positives;
      grad.at(i, 0, 0, 0) = static_cast<float>(2.0 * d / positives);
    }
    if (dual) {
      const double p = std::clamp<double>(pred.at(i, 1, 0, 0), 1e-7, 1.0 - 1e-7);
      const double t = b.target.at(i, 1, 0, 0);
      loss += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p)) / n;
      grad.at(i, 1, 0, 0) = static_cast<float>((p - t) / (p * (1.0 - p)) / n);
    }
  }
  return loss;
}

double validation_error(const Model& model, const std::vector<TrainingSample>& data, const std::vector<std::size_t>& idx,
                        const TrainConfig& cfg) {
  double total = 0.0;
  for (std::size_t i : idx) {
    const PredictionResult r = predict_any(model, data[i].image, cfg.validation_stride);
    total += std::abs(r.y_mm - data[i].y_mm);
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

TrainHistory train(Model& model, const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  if (dataset.empty()) throw TrainingError("train: empty dataset");
  cfg.validate(model);
  for (const auto& s : dataset) {
    s.image.validate();
    if (s.image.domain != IntensityDomain::int8) throw TrainingError("train: images must be quantized (int8 domain)");
    if (!(s.y_mm >= 0.0 && s.y_mm < s.image.height_mm())) {
      throw TrainingError("train: annotation outside image " + s.image.source_id);
    }
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng = make_rng(cfg.seed, {kSplitStream});
  std::shuffle(order.begin(), order.end(), split_rng);
  std::size_t n_val = static_cast<std::size_t>(std::lround(cfg.validation_fraction * dataset.size()));
  if (cfg.validation_fraction > 0.0 && dataset.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, dataset.size() - 1);
  if (dataset.size() < 2) n_val = 0;
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(train_idx.begin(), train_idx.end());

  nn::Adam adam(model.parameters(), {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon});
  const bool maps = is_confidence_map_variant(model.variant());
  const bool dual = model.variant() == Variant::baseline_regression_dual;

  TrainHistory history;
  std::vector<float> best_state;
  double best_score = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double sigma = sigma_schedule(epoch, cfg.epochs, cfg.sigma_start, cfg.sigma_end);
    Rng shuffle_rng = make_rng(cfg.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)});
    std::vector<std::size_t> perm = train_idx;
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t first = 0; first < perm.size(); first += cfg.batch_size) {
      const std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(first),
                                         perm.begin() + static_cast<std::ptrdiff_t>(std::min(perm.size(), first + cfg.batch_size)));
      const Batch b = make_batch(model, dataset, idx, cfg, epoch, sigma);
      Rng dropout_rng = make_rng(cfg.seed, {kDropoutStream, static_cast<std::uint64_t>(epoch), first});
      adam.zero_grad();
      const Tensor pred = model.forward(b.input, dropout_rng);
      double loss = 0.0;
      Tensor grad;
      if (maps) {
        loss = loss_l2(pred, b.target);
        grad = loss_l2_grad(pred, b.target);
      } else {
        loss = regressor_loss(pred, b, dual, grad);
      }
      if (!std::isfinite(loss)) {
        throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                            std::to_string(first) + " (lr " + std::to_string(cfg.learning_rate) + ")");
      }
      model.backward(grad);
      adam.step();
      loss_sum += loss;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.sigma = sigma;
    rec.loss = loss_sum / std::max(1, batches);
    rec.val_error_mm = val.empty() ? 0.0 : validation_error(model, dataset, val, cfg);
    const double score = val.empty() ? rec.loss : rec.val_error_mm;
    if (history.best_epoch < 0 || score < best_score) {
      best_score = score;
      history.best_epoch = epoch;
      best_state = export_state(model);
    }
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  import_state(model, best_state);
  return history;
}

std::vector<TrainingSample> load_training_set(const std::filesystem::path& dir, View view, bool skip_ambiguous,
                                              int limit) {
  const auto merged = merge_annotations(read_annotations_csv(dir / "annotations.csv"));
  std::vector<TrainingSample> out;
  for (const auto& [id, truth] : merged) {
    if (limit >= 0 && static_cast<int>(out.size()) >= limit) break;
    if (skip_ambiguous && truth.ambiguous) continue;
    out.push_back({load_mip(mip_stem(dir, id, view)), truth.y_mm});
  }
  return out;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,sigma,loss,val_error_mm\n";
  char line[160];
  for (const auto& e : history.epochs) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g\n", e.epoch, e.sigma, e.loss, e.val_error_mm);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace mipslice
