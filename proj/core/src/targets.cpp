#include "mipslice/targets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mipslice/error.hpp"

namespace mipslice {

namespace {

double gaussian(double d, double sigma) { return std::exp(-(d * d) / (2.0 * sigma * sigma)); }

void check_common(int height, int y_true, double sigma) {
  if (height < 1) throw DomainError("confidence map: height must be >= 1");
  if (y_true < 0 || y_true >= height) throw DomainError("confidence map: y_true outside [0, H)");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("confidence map: sigma must be positive");
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "0" || s == "false" || s == "False" || s == "FALSE" || s.empty()) return false;
  throw FormatError("annotations CSV: bad ambiguous flag '" + s + "'");
}

}  // namespace

ConfidenceMap2D make_confidence_map_2d(int height, int width, int y_true, double sigma, int v, std::optional<int> x0) {
  check_common(height, y_true, sigma);
  if (width < 1) throw DomainError("confidence map: width must be >= 1");
  if (v < 0) throw DomainError("confidence map: plateau half-width must be >= 0");
  const int centre = x0.value_or(width / 2);
  if (centre < 0 || centre >= width) throw DomainError("confidence map: x0 outside [0, W)");

  // The step function is separable (one row times a column interval), so the
  // blurred map is row_profile(y) * column_profile(x).
  std::vector<double> column_profile(width, 0.0);
  const int lo = std::max(0, centre - v);
  const int hi = std::min(width - 1, centre + v);
  for (int x = 0; x < width; ++x) {
    double acc = 0.0;
    for (int xs = lo; xs <= hi; ++xs) acc += gaussian(x - xs, sigma);
    column_profile[x] = acc;
  }
  const double peak = *std::max_element(column_profile.begin(), column_profile.end());

  ConfidenceMap2D map;
  map.values = Image2D(height, width);
  map.sigma = sigma;
  map.v = v;
  map.x0 = centre;
  map.y_true = y_true;
  for (int y = 0; y < height; ++y) {
    const double row = gaussian(y - y_true, sigma);
    auto dst = map.values.row(y);
    for (int x = 0; x < width; ++x) dst[x] = static_cast<float>(row * column_profile[x] / peak);
  }
  return map;
}

ConfidenceMap1D make_confidence_map_1d(int height, int y_true, double sigma) {
  check_common(height, y_true, sigma);
  ConfidenceMap1D map;
  map.values.resize(height);
  map.sigma = sigma;
  map.y_true = y_true;
  for (int y = 0; y < height; ++y) map.values[y] = static_cast<float>(gaussian(y - y_true, sigma));
  return map;
}

double sigma_schedule(int epoch, int total_epochs, double sigma_start, double sigma_end) {
  if (total_epochs < 1) throw DomainError("sigma_schedule: total_epochs must be >= 1");
  if (epoch < 0 || epoch >= total_epochs) throw DomainError("sigma_schedule: epoch outside [0, total_epochs)");
  if (total_epochs == 1) return sigma_start;
  return sigma_start + (sigma_end - sigma_start) * static_cast<double>(epoch) / (total_epochs - 1);
}

std::vector<Annotation> read_annotations_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("annotations CSV: missing header");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"image_id", "annotator", "y_mm", "ambiguous"}) {
    throw FormatError("annotations CSV: header must be image_id,annotator,y_mm,ambiguous");
  }
  std::vector<Annotation> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw FormatError("annotations CSV: line " + std::to_string(line_no) + " needs 4 fields");
    Annotation a;
    a.image_id = f[0];
    a.annotator = f[1];
    try {
      std::size_t used = 0;
      a.y_mm = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
    } catch (const std::exception&) {
      throw FormatError("annotations CSV: line " + std::to_string(line_no) + " has bad y_mm");
    }
    a.ambiguous = parse_bool(f[3]);
    if (a.image_id.empty()) throw FormatError("annotations CSV: empty image_id on line " + std::to_string(line_no));
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Annotation> read_annotations_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open annotations " + path.string());
  return read_annotations_csv(in);
}

void write_annotations_csv(std::ostream& out, const std::vector<Annotation>& annotations) {
  out << "image_id,annotator,y_mm,ambiguous\n";
  for (const auto& a : annotations) {
    std::ostringstream y;
    y.precision(17);
    y << a.y_mm;
    out << a.image_id << ',' << a.annotator << ',' << y.str() << ',' << (a.ambiguous ? 1 : 0) << '\n';
  }
}

void write_annotations_csv(const std::filesystem::path& path, const std::vector<Annotation>& annotations) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write annotations " + path.string());
  write_annotations_csv(out, annotations);
  if (!out) throw IoError("write failed for " + path.string());
}

std::map<std::string, MergedAnnotation> merge_annotations(const std::vector<Annotation>& annotations) {
  std::map<std::string, std::pair<double, MergedAnnotation>> acc;
  for (const auto& a : annotations) {
    auto& [sum, merged] = acc[a.image_id];
    sum += a.y_mm;
    merged.annotator_count += 1;
    merged.ambiguous = merged.ambiguous || a.ambiguous;
  }
  std::map<std::string, MergedAnnotation> out;
  for (auto& [id, entry] : acc) {
    MergedAnnotation m = entry.second;
    m.y_mm = std::floor(entry.first / m.annotator_count);
    out.emplace(id, m);
  }
  return out;
}

}  // namespace mipslice
