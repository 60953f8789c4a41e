#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mipslice/targets.hpp"

namespace mipslice {

struct AnnotationRecord {
  std::string image_id;
  std::string annotator;
  double y_mm = 0.0;
  bool ambiguous = false;
  std::string timestamp;  ///< UTC, ISO 8601

  bool operator==(const AnnotationRecord&) const = default;
};

struct ImageEntry {
  std::string id;
  double height_mm = 0.0;
  bool has_sagittal = false;
  bool has_prediction = false;
  std::vector<std::string> annotators;
};

/// Image sets and click annotations under one data directory:
///   <dir>/<id>.frontal.{png,json}, <dir>/<id>.sagittal.{png,json}
///   <dir>/annotations/<id>.json     records of every annotator of <id>
///   <dir>/predictions/<id>.json     optional prediction
/// Writes go through a temporary file and a rename, serialised per image.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path data_dir);

  const std::filesystem::path& data_dir() const { return dir_; }

  /// Image ids with a frontal MIP, sorted.
  std::vector<ImageEntry> list_images() const;
  std::optional<ImageEntry> find_image(const std::string& id) const;

  std::vector<AnnotationRecord> records(const std::string& id) const;
  std::optional<AnnotationRecord> get(const std::string& id, const std::string& annotator) const;

  /// Replaces the (image, annotator) record and stamps it. Throws DomainError
  /// for an unknown image or empty annotator, RangeError when y_mm is outside
  /// [0, height).
  AnnotationRecord put(AnnotationRecord record);

  /// Every record in the annotation CSV layout, sorted by image then annotator.
  std::vector<Annotation> export_annotations() const;

  std::filesystem::path mip_png(const std::string& id, const std::string& view) const;
  std::filesystem::path prediction_json(const std::string& id) const;

  /// True for ids made of [A-Za-z0-9._-] that do not start with a dot.
  static bool valid_id(const std::string& id);

 private:
  std::mutex& image_mutex(const std::string& id);

  std::filesystem::path dir_;
  std::mutex table_mutex_;
  std::unordered_map<std::string, std::unique_ptr<std::mutex>> image_mutexes_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  ///< 0 picks a free port
  std::string cors_origin = "*";
};

/// HTTP/JSON front end of an AnnotationStore:
///   GET  /api/images
///   GET  /api/images/{id}/mip/{frontal|sagittal}
///   GET  /api/images/{id}/annotation?annotator=X
///   PUT  /api/images/{id}/annotation?annotator=X   body {"y_mm": .., "ambiguous": ..}
///   GET  /api/images/{id}/prediction
///   GET  /api/export/annotations.csv
/// Unknown ids give 404, malformed requests 400, out-of-range y_mm 422.
class AnnotationServer {
 public:
  AnnotationServer(std::filesystem::path data_dir, ServerOptions options = {});
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const { return port_; }
  AnnotationStore& store();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace mipslice
