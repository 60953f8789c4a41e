#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mipslice/inference.hpp"
#include "mipslice/models.hpp"
#include "mipslice/targets.hpp"

namespace mipslice {

/// Column summary. Even-length medians take the lower central value; std is
/// the population standard deviation.
struct Summary {
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  double max = 0.0;
};
Summary summarize(std::vector<double> values);

struct ErrorStats {
  int n = 0;
  double mean_mm = 0.0;
  double std_mm = 0.0;
  double median_mm = 0.0;
  double max_mm = 0.0;
  double mean_slice = 0.0;
  double std_slice = 0.0;
  double median_slice = 0.0;
  double max_slice = 0.0;
  int count_gt_10 = 0;  ///< images with an error above 10 mm
};

/// err_mm = |pred - gt|, err_slice = err_mm / thickness (unrounded).
/// Throws DomainError on length mismatch or non-positive thickness.
ErrorStats localization_errors(const std::vector<double>& preds_mm, const std::vector<double>& gts_mm,
                               const std::vector<double>& thicknesses_mm);

struct InterraterStats {
  ErrorStats a_vs_b;        ///< |A - B|
  ErrorStats each_vs_mean;  ///< |A - floor(mean)| and |B - floor(mean)|, 2n entries
};

InterraterStats interrater_stats(const std::vector<double>& a_mm, const std::vector<double>& b_mm,
                                 const std::vector<double>& thicknesses_mm);

/// Pairs the two annotators' clicks by image id. Throws DomainError when an id
/// is annotated by only one of them or has no thickness.
InterraterStats interrater_stats(const std::vector<Annotation>& annotations, const std::string& annotator_a,
                                 const std::string& annotator_b, const std::map<std::string, double>& thickness_mm);

struct EvalRow {
  std::string image_id;
  double pred_mm = 0.0;
  double gt_mm = 0.0;
  double thickness_mm = 1.0;
  double err_mm = 0.0;
  double err_slice = 0.0;
  double confidence = 0.0;
  bool low_confidence = false;
};

struct Evaluation {
  std::vector<EvalRow> rows;  ///< sorted by image id
  ErrorStats stats;
};

/// Joins predictions with merged ground truth by image id. Predictions without
/// ground truth throw DomainError; ambiguous cases are skipped when asked.
Evaluation evaluate_predictions(const std::vector<PredictionResult>& predictions,
                                const std::map<std::string, MergedAnnotation>& truth, bool skip_ambiguous = false);

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows);
/// One CSV row per labelled ErrorStats.
void write_stats_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, ErrorStats>>& stats);

/// Fixed-width text table: label, mm (mean, std, median, max), slices (same),
/// and the > 10 mm count.
std::string format_error_table(const std::vector<std::pair<std::string, ErrorStats>>& stats);

struct BenchmarkSubject {
  std::string name;
  const Model* model = nullptr;
  int stride = 1;  ///< sliding-window stride for the regressors
};

struct BenchmarkEntry {
  std::string name;
  double median_s = 0.0;  ///< median over images of the per-image median time
  std::vector<double> per_image_median_s;
};

struct BenchmarkReport {
  std::vector<BenchmarkEntry> entries;

  /// median time of `slower` / median time of `faster`.
  double ratio(const std::string& slower, const std::string& faster) const;
};

BenchmarkReport benchmark(const std::vector<BenchmarkSubject>& subjects, const std::vector<MipImage>& images,
                          int runs = 10, int warmups = 2);
/// Times plus a ratio matrix (row time / column time).
std::string format_benchmark_table(const BenchmarkReport& report);

}  // namespace mipslice
