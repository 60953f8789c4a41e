#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mipslice/image.hpp"

namespace mipslice {

/// Ground-truth map for the 2D variant: a horizontal plateau of half-width v
/// centred on column x0 at row y_true, blurred by a Gaussian of scale sigma and
/// scaled so its peak is exactly 1.
struct ConfidenceMap2D {
  Image2D values;
  double sigma = 0.0;
  int v = 0;
  int x0 = 0;
  int y_true = 0;
};

/// Ground-truth map for the 1D variant: exp(-(y - y_true)^2 / (2 sigma^2)).
struct ConfidenceMap1D {
  std::vector<float> values;
  double sigma = 0.0;
  int y_true = 0;
};

inline constexpr int kDefaultPlateauHalfWidth = 50;

/// x0 defaults to W / 2. Throws DomainError when y_true is outside [0, H),
/// sigma <= 0, v < 0 or x0 outside [0, W).
ConfidenceMap2D make_confidence_map_2d(int height, int width, int y_true, double sigma,
                                       int v = kDefaultPlateauHalfWidth, std::optional<int> x0 = std::nullopt);

ConfidenceMap1D make_confidence_map_1d(int height, int y_true, double sigma);

/// Linear annealing from sigma_start at epoch 0 to sigma_end at the last epoch.
double sigma_schedule(int epoch, int total_epochs, double sigma_start = 10.0, double sigma_end = 1.5);

/// One annotator's click on one image.
struct Annotation {
  std::string image_id;
  std::string annotator;
  double y_mm = 0.0;
  bool ambiguous = false;

  bool operator==(const Annotation&) const = default;
};

/// CSV with header `image_id,annotator,y_mm,ambiguous`. Throws FormatError on
/// a missing/incorrect header or malformed rows.
std::vector<Annotation> read_annotations_csv(std::istream& in);
std::vector<Annotation> read_annotations_csv(const std::filesystem::path& path);
void write_annotations_csv(std::ostream& out, const std::vector<Annotation>& annotations);
void write_annotations_csv(const std::filesystem::path& path, const std::vector<Annotation>& annotations);

struct MergedAnnotation {
  double y_mm = 0.0;  ///< floor of the mean over annotators
  bool ambiguous = false;  ///< any annotator flagged it
  int annotator_count = 0;
};

/// Ground truth per image: floor(mean(y_mm)) across annotators.
std::map<std::string, MergedAnnotation> merge_annotations(const std::vector<Annotation>& annotations);

}  // namespace mipslice
