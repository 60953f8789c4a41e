#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "mipslice/annotation_service.hpp"
#include "mipslice/config_file.hpp"
#include "mipslice/error.hpp"
#include "mipslice/eval.hpp"
#include "mipslice/inference.hpp"
#include "mipslice/phantom.hpp"
#include "mipslice/training.hpp"
#include "mipslice/volume.hpp"

namespace mipslice::cli {

namespace fs = std::filesystem;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_mip_path(const fs::path& p) {
  const std::string name = p.filename().string();
  for (const char* view : {".frontal", ".sagittal"}) {
    for (const char* ext : {".json", ".png"}) {
      if (ends_with(name, std::string(view) + ext)) return true;
    }
  }
  return false;
}

bool is_volume_path(const fs::path& p) {
  if (is_nifti_path(p)) return true;
  const auto ext = p.extension();
  return (ext == ".raw" || ext == ".json") && !is_mip_path(p);
}

// Volumes named on the command line, directories expanded (sorted).
std::vector<fs::path> expand_volumes(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && (is_nifti_path(e.path()) || e.path().extension() == ".raw")) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

std::string volume_id(const fs::path& p) {
  std::string name = p.filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".raw", ".json"}) {
    if (ends_with(name, ext)) return name.substr(0, name.size() - std::string(ext).size());
  }
  return name;
}

// Cached MIP pairs live under $MIPSLICE_CACHE keyed by source path, size,
// modification time and projection settings.
std::optional<fs::path> cache_stem(const fs::path& volume, double half_width) {
  const char* root = std::getenv("MIPSLICE_CACHE");
  if (!root || !*root) return std::nullopt;
  std::error_code ec;
  const fs::path abs = fs::absolute(volume, ec);
  const auto size = fs::file_size(volume, ec);
  const auto mtime = fs::last_write_time(volume, ec).time_since_epoch().count();
  std::ostringstream key;
  key << abs.string() << '|' << size << '|' << mtime << '|' << half_width;
  std::ostringstream hex;
  hex << std::hex << fnv1a64(key.str());
  fs::create_directories(root);
  return fs::path(root) / hex.str();
}

MipPair preprocess_cached(const fs::path& path, double half_width, std::ostream& out) {
  const auto stem = cache_stem(path, half_width);
  if (stem && fs::exists(fs::path(*stem).concat(".frontal.json")) && fs::exists(fs::path(*stem).concat(".sagittal.json"))) {
    MipPair pair{load_mip(fs::path(*stem).concat(".frontal")), load_mip(fs::path(*stem).concat(".sagittal"))};
    out << "cache hit " << path.string() << '\n';
    return pair;
  }
  Volume3D vol = load_volume(path);
  vol.set_id(volume_id(path));
  MipPair pair = preprocess_volume(vol, half_width);
  if (stem) {
    save_mip(pair.frontal, fs::path(*stem).concat(".frontal"));
    save_mip(pair.sagittal, fs::path(*stem).concat(".sagittal"));
  }
  return pair;
}

std::vector<fs::path> prediction_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::map<std::string, MergedAnnotation> try_truth(const fs::path& csv) {
  if (csv.empty() || !fs::exists(csv)) return {};
  return merge_annotations(read_annotations_csv(csv));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CT slice localisation from maximum intensity projections", "mipslice"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for every random choice")->capture_default_str();

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Project CT volumes to quantised frontal and sagittal MIPs");
  std::vector<std::string> pre_inputs;
  std::string pre_out;
  double half_width = 20.0;
  pre->add_option("volumes", pre_inputs, "Volume files or directories")->required();
  pre->add_option("-o,--out", pre_out, "Output directory")->required();
  pre->add_option("--half-width", half_width, "Half width of the restricted sagittal slab (mm)")->capture_default_str();

  // gen-phantoms
  auto* gen = app.add_subcommand("gen-phantoms", "Write a synthetic dataset with known landmark rows");
  int gen_n = 0;
  std::string gen_out;
  bool gen_no_volumes = false;
  PhantomConfig phantom_cfg;
  gen->add_option("-n", gen_n, "Number of phantoms")->required()->check(CLI::NonNegativeNumber);
  gen->add_option("-o,--out", gen_out, "Output directory")->required();
  gen->add_flag("--no-volumes", gen_no_volumes, "Skip writing NIfTI volumes");
  gen->add_option("--thickness-min", phantom_cfg.thickness_min_mm)->capture_default_str();
  gen->add_option("--thickness-max", phantom_cfg.thickness_max_mm)->capture_default_str();
  gen->add_option("--fov-min", phantom_cfg.fov_height_min)->capture_default_str();
  gen->add_option("--fov-max", phantom_cfg.fov_height_max)->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train a detector on a MIP dataset");
  std::string variant_name;
  std::string config_path;
  std::string train_data;
  std::string train_out;
  std::string train_view = "frontal";
  std::optional<int> epochs, batch, base_channels, crop_h, crop_w, limit;
  std::optional<double> lr;
  tr->add_option("--variant", variant_name, "l3unet2d | l3unet1d | baseline | baseline-dual");
  tr->add_option("--config", config_path, "Experiment file (key = value); overrides flags")->check(CLI::ExistingFile);
  tr->add_option("--data", train_data, "Dataset directory (MIPs + annotations.csv)")->required();
  tr->add_option("-o,--out", train_out, "Output directory for checkpoint and history")->required();
  tr->add_option("--view", train_view, "frontal | sagittal")->capture_default_str();
  tr->add_option("--epochs", epochs);
  tr->add_option("--batch-size", batch);
  tr->add_option("--base-channels", base_channels);
  tr->add_option("--crop-h", crop_h);
  tr->add_option("--crop-w", crop_w);
  tr->add_option("--lr", lr);
  tr->add_option("--limit", limit, "Use only the first N images");

  // predict
  auto* pr = app.add_subcommand("predict", "Locate the landmark slice in volumes or MIPs");
  std::string model_path;
  std::vector<std::string> pred_inputs;
  std::string pred_out;
  std::string pred_view = "frontal";
  std::string pred_ann;
  int stride = 1;
  bool no_overlay = false;
  pr->add_option("--model", model_path, "Checkpoint manifest (.json)")->required()->check(CLI::ExistingFile);
  pr->add_option("--input", pred_inputs, "Volume, MIP (.png/.json) or dataset directory")->required();
  pr->add_option("-o,--out", pred_out, "Output directory")->required();
  pr->add_option("--view", pred_view, "frontal | sagittal")->capture_default_str();
  pr->add_option("--ann", pred_ann, "Annotation CSV for ground-truth lines in overlays");
  pr->add_option("--stride", stride, "Sliding-window stride for the regressors")->capture_default_str()->check(CLI::PositiveNumber);
  pr->add_flag("--no-overlay", no_overlay, "Skip overlay PNGs");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Compare predictions with annotations");
  std::string eval_pred;
  std::string eval_ann;
  std::string eval_out;
  bool skip_ambiguous = false;
  ev->add_option("--pred", eval_pred, "Directory of prediction JSON files")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--ann", eval_ann, "Annotation CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("-o,--out", eval_out, "Per-image CSV (a *_stats.csv summary is written alongside)");
  ev->add_flag("--skip-ambiguous", skip_ambiguous);

  // benchmark
  auto* bm = app.add_subcommand("benchmark", "Time whole-image inference per model");
  std::vector<std::string> bench_models;
  std::vector<std::string> bench_inputs;
  int bench_height = 440;
  int bench_runs = 10;
  int bench_warmups = 2;
  int bench_stride = 1;
  std::string bench_out;
  bm->add_option("--models", bench_models, "Checkpoint manifests")->required()->check(CLI::ExistingFile);
  bm->add_option("--input", bench_inputs, "MIP images (default: one synthetic image)");
  bm->add_option("--height", bench_height, "Height of the synthetic image (mm)")->capture_default_str();
  bm->add_option("--runs", bench_runs)->capture_default_str()->check(CLI::PositiveNumber);
  bm->add_option("--warmups", bench_warmups)->capture_default_str()->check(CLI::NonNegativeNumber);
  bm->add_option("--stride", bench_stride)->capture_default_str()->check(CLI::PositiveNumber);
  bm->add_option("-o,--out", bench_out, "CSV of median times");

  // serve
  auto* sv = app.add_subcommand("serve", "Annotation HTTP backend");
  std::string serve_data;
  ServerOptions serve_opts;
  sv->add_option("--data", serve_data, "Data directory")->required()->check(CLI::ExistingDirectory);
  sv->add_option("--port", serve_opts.port)->capture_default_str();
  sv->add_option("--host", serve_opts.host)->capture_default_str();
  sv->add_option("--cors-origin", serve_opts.cors_origin)->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pre) {
      fs::create_directories(pre_out);
      const auto volumes = expand_volumes(pre_inputs);
      if (volumes.empty()) throw IoError("no volumes found");
      for (const auto& path : volumes) {
        MipPair pair = preprocess_cached(path, half_width, out);
        const std::string id = volume_id(path);
        pair.frontal.source_id = pair.sagittal.source_id = id;
        save_mip(pair.frontal, mip_stem(pre_out, id, View::frontal));
        save_mip(pair.sagittal, mip_stem(pre_out, id, View::sagittal));
        out << id << ": " << pair.frontal.rows() << " x " << pair.frontal.cols() << " mm\n";
      }
      return 0;
    }

    if (*gen) {
      write_phantom_dataset(gen_out, gen_n, phantom_cfg, seed, !gen_no_volumes);
      out << "wrote " << gen_n << " phantoms to " << gen_out << '\n';
      return 0;
    }

    if (*tr) {
      ConfigEntries entries;
      if (!config_path.empty()) entries = read_config_file(config_path);
      std::optional<Variant> variant = config_variant(entries);
      if (!variant) {
        if (variant_name.empty()) throw ConfigError("--variant is required (or set 'variant' in the config file)");
        variant = variant_from_string(variant_name);
      }
      ExperimentConfig cfg = ExperimentConfig::defaults(*variant);
      cfg.train.seed = seed;
      cfg.train.augment.seed = seed;
      cfg.model.init_seed = seed;
      if (epochs) cfg.train.epochs = *epochs;
      if (batch) cfg.train.batch_size = *batch;
      if (base_channels) cfg.model.base_channels = *base_channels;
      if (crop_h) cfg.train.crop_h = *crop_h;
      if (crop_w) cfg.train.crop_w = *crop_w;
      if (lr) cfg.train.learning_rate = *lr;
      apply_config(entries, cfg);

      const auto data = load_training_set(train_data, view_from_string(train_view), true, limit.value_or(-1));
      if (data.empty()) throw TrainingError("no annotated images in " + train_data);
      auto model = build_model(cfg.model);
      fs::create_directories(train_out);
      write_config_file(fs::path(train_out) / "config.txt", cfg);
      out << to_string(*variant) << ": " << count_parameters(*model) << " parameters, " << data.size() << " images\n";
      const TrainHistory history = train(*model, data, cfg.train, [&out](const EpochRecord& e) {
        out << "epoch " << e.epoch << " sigma " << e.sigma << " loss " << e.loss << " val_error_mm " << e.val_error_mm
            << std::endl;
      });
      write_history_csv(fs::path(train_out) / "history.csv", history);
      save_checkpoint(*model, fs::path(train_out) / "model.json", {training_config_hash(cfg), history.best_epoch});
      out << "best epoch " << history.best_epoch << "; checkpoint " << (fs::path(train_out) / "model.json").string() << '\n';
      return 0;
    }

    if (*pr) {
      const LoadedCheckpoint ckpt = load_checkpoint(model_path);
      const View view = view_from_string(pred_view);
      fs::create_directories(pred_out);
      std::vector<fs::path> mips;
      std::vector<fs::path> volumes;
      fs::path ann = pred_ann;
      for (const auto& in : pred_inputs) {
        const fs::path p(in);
        if (fs::is_directory(p)) {
          for (const auto& e : fs::directory_iterator(p)) {
            if (ends_with(e.path().filename().string(), "." + to_string(view) + ".json")) mips.push_back(e.path());
          }
          if (ann.empty() && fs::exists(p / "annotations.csv")) ann = p / "annotations.csv";
        } else if (is_mip_path(p)) {
          mips.push_back(p);
        } else if (is_volume_path(p)) {
          volumes.push_back(p);
        } else {
          throw IoError("unrecognised input " + p.string());
        }
      }
      std::sort(mips.begin(), mips.end());
      const auto truth = try_truth(ann);
      auto emit = [&](PredictionResult& r, const MipImage& img) {
        write_prediction_json(fs::path(pred_out) / (r.image_id + ".json"), r);
        if (!no_overlay) {
          std::optional<double> gt;
          if (auto it = truth.find(r.image_id); it != truth.end()) gt = it->second.y_mm;
          write_overlay_png(fs::path(pred_out) / (r.image_id + ".overlay.png"), img, r, gt);
        }
        out << r.image_id << ": y_mm " << r.y_mm << " slice " << r.slice_index << " confidence " << r.confidence
            << (r.low_confidence ? " (low)" : "") << '\n';
      };
      for (const auto& p : mips) {
        const MipImage img = load_mip(p);
        PredictionResult r = predict_any(*ckpt.model, img, stride);
        emit(r, img);
      }
      for (const auto& p : volumes) {
        Volume3D vol = load_volume(p);
        vol.set_id(volume_id(p));
        PredictionResult r = predict_volume(*ckpt.model, vol, view, stride);
        const MipPair pair = preprocess_volume(vol);
        emit(r, view == View::frontal ? pair.frontal : pair.sagittal);
      }
      if (mips.empty() && volumes.empty()) throw IoError("no inputs to predict");
      return 0;
    }

    if (*ev) {
      std::vector<PredictionResult> preds;
      for (const auto& p : prediction_files(eval_pred)) preds.push_back(read_prediction_json(p));
      if (preds.empty()) throw IoError("no prediction JSON files in " + eval_pred);
      const auto truth = merge_annotations(read_annotations_csv(eval_ann));
      const Evaluation result = evaluate_predictions(preds, truth, skip_ambiguous);
      const std::string label = to_string(preds.front().variant);
      out << format_error_table({{label, result.stats}});
      if (!eval_out.empty()) {
        write_eval_csv(eval_out, result.rows);
        fs::path stats = eval_out;
        stats.replace_filename(stats.stem().string() + "_stats.csv");
        write_stats_csv(stats, {{label, result.stats}});
      }
      return 0;
    }

    if (*bm) {
      std::vector<LoadedCheckpoint> ckpts;
      for (const auto& m : bench_models) ckpts.push_back(load_checkpoint(m));
      std::vector<MipImage> images;
      for (const auto& in : bench_inputs) images.push_back(load_mip(in));
      if (images.empty()) {
        PhantomConfig pc;
        pc.fov_height_min = pc.fov_height_max = bench_height;
        Rng rng = make_rng(seed, {0x62656e6368ull});
        images.push_back(generate_phantom(pc, rng, "benchmark").frontal);
      }
      std::vector<BenchmarkSubject> subjects;
      for (std::size_t i = 0; i < ckpts.size(); ++i) {
        subjects.push_back({fs::path(bench_models[i]).stem().string() + ":" + to_string(ckpts[i].model->variant()),
                            ckpts[i].model.get(), bench_stride});
      }
      const BenchmarkReport report = benchmark(subjects, images, bench_runs, bench_warmups);
      out << format_benchmark_table(report);
      if (!bench_out.empty()) {
        std::ofstream csv(bench_out);
        if (!csv) throw IoError("cannot write " + bench_out);
        csv << "model,median_s\n";
        for (const auto& e : report.entries) csv << e.name << ',' << e.median_s << '\n';
      }
      return 0;
    }

    if (*sv) {
      AnnotationServer server(serve_data, serve_opts);
      out << "serving " << serve_data << " on http://" << serve_opts.host << ':' << serve_opts.port << std::endl;
      server.run();
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace mipslice::cli
