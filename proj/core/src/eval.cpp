#include "mipslice/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "mipslice/error.hpp"

namespace mipslice {

Summary summarize(std::vector<double> values) {
  Summary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / n;
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / n);
  std::sort(values.begin(), values.end());
  s.median = values[(values.size() - 1) / 2];
  s.max = values.back();
  return s;
}

namespace {

ErrorStats stats_from_errors(const std::vector<double>& err_mm, const std::vector<double>& thickness) {
  std::vector<double> err_slice(err_mm.size());
  ErrorStats st;
  st.n = static_cast<int>(err_mm.size());
  for (std::size_t i = 0; i < err_mm.size(); ++i) {
    if (!(thickness[i] > 0.0)) throw DomainError("slice thickness must be positive");
    err_slice[i] = err_mm[i] / thickness[i];
    if (err_mm[i] > 10.0) ++st.count_gt_10;
  }
  const Summary mm = summarize(err_mm);
  const Summary sl = summarize(err_slice);
  st.mean_mm = mm.mean;
  st.std_mm = mm.std;
  st.median_mm = mm.median;
  st.max_mm = mm.max;
  st.mean_slice = sl.mean;
  st.std_slice = sl.std;
  st.median_slice = sl.median;
  st.max_slice = sl.max;
  return st;
}

}  // namespace

ErrorStats localization_errors(const std::vector<double>& preds, const std::vector<double>& gts,
                               const std::vector<double>& thicknesses) {
  if (preds.size() != gts.size() || preds.size() != thicknesses.size()) {
    throw DomainError("localization_errors: predictions, ground truths and thicknesses differ in length");
  }
  std::vector<double> err(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) err[i] = std::abs(preds[i] - gts[i]);
  return stats_from_errors(err, thicknesses);
}

InterraterStats interrater_stats(const std::vector<double>& a, const std::vector<double>& b,
                                 const std::vector<double>& thicknesses) {
  if (a.size() != b.size() || a.size() != thicknesses.size()) {
    throw DomainError("interrater_stats: annotator lists and thicknesses differ in length");
  }
  std::vector<double> pair_err(a.size());
  std::vector<double> mean_err;
  std::vector<double> mean_thick;
  for (std::size_t i = 0; i < a.size(); ++i) {
    pair_err[i] = std::abs(a[i] - b[i]);
    const double merged = std::floor((a[i] + b[i]) / 2.0);
    mean_err.push_back(std::abs(a[i] - merged));
    mean_err.push_back(std::abs(b[i] - merged));
    mean_thick.push_back(thicknesses[i]);
    mean_thick.push_back(thicknesses[i]);
  }
  return {stats_from_errors(pair_err, thicknesses), stats_from_errors(mean_err, mean_thick)};
}

InterraterStats interrater_stats(const std::vector<Annotation>& annotations, const std::string& annotator_a,
                                 const std::string& annotator_b, const std::map<std::string, double>& thickness_mm) {
  std::map<std::string, double> ya;
  std::map<std::string, double> yb;
  for (const auto& ann : annotations) {
    if (ann.annotator == annotator_a) ya[ann.image_id] = ann.y_mm;
    else if (ann.annotator == annotator_b) yb[ann.image_id] = ann.y_mm;
  }
  std::set<std::string> ids;
  for (const auto& [id, _] : ya) ids.insert(id);
  for (const auto& [id, _] : yb) ids.insert(id);
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> t;
  for (const auto& id : ids) {
    if (!ya.count(id) || !yb.count(id)) throw DomainError("interrater_stats: image '" + id + "' is not annotated by both");
    auto it = thickness_mm.find(id);
    if (it == thickness_mm.end()) throw DomainError("interrater_stats: no slice thickness for '" + id + "'");
    a.push_back(ya[id]);
    b.push_back(yb[id]);
    t.push_back(it->second);
  }
  return interrater_stats(a, b, t);
}

Evaluation evaluate_predictions(const std::vector<PredictionResult>& predictions,
                                const std::map<std::string, MergedAnnotation>& truth, bool skip_ambiguous) {
  Evaluation ev;
  for (const auto& p : predictions) {
    auto it = truth.find(p.image_id);
    if (it == truth.end()) throw DomainError("evaluate: no ground truth for '" + p.image_id + "'");
    if (skip_ambiguous && it->second.ambiguous) continue;
    EvalRow row;
    row.image_id = p.image_id;
    row.pred_mm = p.y_mm;
    row.gt_mm = it->second.y_mm;
    row.thickness_mm = p.slice_thickness_mm;
    row.err_mm = std::abs(row.pred_mm - row.gt_mm);
    if (!(row.thickness_mm > 0.0)) throw DomainError("evaluate: non-positive slice thickness for '" + p.image_id + "'");
    row.err_slice = row.err_mm / row.thickness_mm;
    row.confidence = p.confidence;
    row.low_confidence = p.low_confidence;
    ev.rows.push_back(row);
  }
  std::sort(ev.rows.begin(), ev.rows.end(), [](const EvalRow& x, const EvalRow& y) { return x.image_id < y.image_id; });
  std::vector<double> preds, gts, thick;
  for (const auto& r : ev.rows) {
    preds.push_back(r.pred_mm);
    gts.push_back(r.gt_mm);
    thick.push_back(r.thickness_mm);
  }
  ev.stats = localization_errors(preds, gts, thick);
  return ev;
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image_id,pred_mm,gt_mm,thickness_mm,err_mm,err_slice,confidence,low_confidence\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%d\n", r.pred_mm, r.gt_mm, r.thickness_mm, r.err_mm,
                  r.err_slice, r.confidence, r.low_confidence ? 1 : 0);
    out << r.image_id << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_stats_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, ErrorStats>>& stats) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "label,n,mean_mm,std_mm,median_mm,max_mm,mean_slice,std_slice,median_slice,max_slice,count_gt_10\n";
  char buf[256];
  for (const auto& [label, s] : stats) {
    std::snprintf(buf, sizeof buf, ",%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%d\n", s.n, s.mean_mm, s.std_mm,
                  s.median_mm, s.max_mm, s.mean_slice, s.std_slice, s.median_slice, s.max_slice, s.count_gt_10);
    out << label << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::string format_error_table(const std::vector<std::pair<std::string, ErrorStats>>& stats) {
  std::size_t label_w = 6;
  for (const auto& [label, _] : stats) label_w = std::max(label_w, label.size());
  std::string out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s | %-31s | %-31s | %5s\n", static_cast<int>(label_w), "", "error (mm)",
                "error (slices)", "");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-*s | %7s %7s %7s %7s | %7s %7s %7s %7s | %5s\n", static_cast<int>(label_w), "method",
                "mean", "std", "median", "max", "mean", "std", "median", "max", "> 10");
  out += buf;
  out += std::string(label_w, '-') + "-+-" + std::string(31, '-') + "-+-" + std::string(31, '-') + "-+-" +
         std::string(5, '-') + "\n";
  for (const auto& [label, s] : stats) {
    std::snprintf(buf, sizeof buf, "%-*s | %7.2f %7.2f %7.2f %7.2f | %7.2f %7.2f %7.2f %7.2f | %5d\n",
                  static_cast<int>(label_w), label.c_str(), s.mean_mm, s.std_mm, s.median_mm, s.max_mm, s.mean_slice,
                  s.std_slice, s.median_slice, s.max_slice, s.count_gt_10);
    out += buf;
  }
  return out;
}

double BenchmarkReport::ratio(const std::string& slower, const std::string& faster) const {
  auto find = [&](const std::string& name) -> const BenchmarkEntry& {
    for (const auto& e : entries) {
      if (e.name == name) return e;
    }
    throw DomainError("benchmark: no entry named '" + name + "'");
  };
  const double denom = find(faster).median_s;
  if (!(denom > 0.0)) throw DomainError("benchmark: zero time for '" + faster + "'");
  return find(slower).median_s / denom;
}

BenchmarkReport benchmark(const std::vector<BenchmarkSubject>& subjects, const std::vector<MipImage>& images, int runs,
                          int warmups) {
  if (images.empty()) throw DomainError("benchmark: no images");
  BenchmarkReport report;
  for (const auto& s : subjects) {
    if (!s.model) throw DomainError("benchmark: subject '" + s.name + "' has no model");
    BenchmarkEntry e;
    e.name = s.name;
    for (const auto& img : images) {
      const TimingStats t = time_runs([&] { (void)predict_any(*s.model, img, s.stride); }, runs, warmups);
      e.per_image_median_s.push_back(t.median_s);
    }
    std::vector<double> sorted = e.per_image_median_s;
    std::sort(sorted.begin(), sorted.end());
    e.median_s = sorted[(sorted.size() - 1) / 2];
    report.entries.push_back(std::move(e));
  }
  return report;
}

std::string format_benchmark_table(const BenchmarkReport& report) {
  std::size_t w = 8;
  for (const auto& e : report.entries) w = std::max(w, e.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %12s", static_cast<int>(w), "model", "median (s)");
  out += buf;
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof buf, " %*s", static_cast<int>(std::max<std::size_t>(w, 8)), ("/" + e.name).c_str());
    out += buf;
  }
  out += "\n";
  for (const auto& row : report.entries) {
    std::snprintf(buf, sizeof buf, "%-*s %12.4f", static_cast<int>(w), row.name.c_str(), row.median_s);
    out += buf;
    for (const auto& col : report.entries) {
      const double r = col.median_s > 0.0 ? row.median_s / col.median_s : 0.0;
      std::snprintf(buf, sizeof buf, " %*.2f", static_cast<int>(std::max<std::size_t>(w, 8)), r);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace mipslice
