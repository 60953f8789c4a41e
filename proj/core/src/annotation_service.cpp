#include "mipslice/annotation_service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include <httplib.h>
#include <json.hpp>

#include "mipslice/error.hpp"

namespace mipslice {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFrontalSuffix = ".frontal.json";

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json record_to_json(const AnnotationRecord& r) {
  return {{"image_id", r.image_id}, {"annotator", r.annotator}, {"y_mm", r.y_mm}, {"ambiguous", r.ambiguous},
          {"timestamp", r.timestamp}};
}

AnnotationRecord record_from_json(const json& j) {
  AnnotationRecord r;
  r.image_id = j.at("image_id").get<std::string>();
  r.annotator = j.at("annotator").get<std::string>();
  r.y_mm = j.at("y_mm").get<double>();
  r.ambiguous = j.value("ambiguous", false);
  r.timestamp = j.value("timestamp", std::string());
  return r;
}

std::optional<json> read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    throw FormatError("corrupt JSON file " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

AnnotationStore::AnnotationStore(fs::path data_dir) : dir_(std::move(data_dir)) {
  if (!fs::is_directory(dir_)) throw IoError("data directory does not exist: " + dir_.string());
}

bool AnnotationStore::valid_id(const std::string& id) {
  if (id.empty() || id.front() == '.' || id.size() > 200) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
  });
}

std::optional<ImageEntry> AnnotationStore::find_image(const std::string& id) const {
  if (!valid_id(id)) return std::nullopt;
  const auto meta = read_json(dir_ / (id + kFrontalSuffix));
  if (!meta || !fs::exists(dir_ / (id + ".frontal.png"))) return std::nullopt;
  ImageEntry e;
  e.id = id;
  e.height_mm = meta->value("height_mm", 0.0);
  e.has_sagittal = fs::exists(dir_ / (id + ".sagittal.png"));
  e.has_prediction = fs::exists(prediction_json(id));
  for (const auto& r : records(id)) e.annotators.push_back(r.annotator);
  return e;
}

std::vector<ImageEntry> AnnotationStore::list_images() const {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = kFrontalSuffix;
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  std::vector<ImageEntry> out;
  for (const auto& id : ids) {
    if (auto e = find_image(id)) out.push_back(std::move(*e));
  }
  return out;
}

std::vector<AnnotationRecord> AnnotationStore::records(const std::string& id) const {
  std::vector<AnnotationRecord> out;
  if (!valid_id(id)) return out;
  const auto doc = read_json(dir_ / "annotations" / (id + ".json"));
  if (!doc) return out;
  try {
    for (const auto& r : doc->at("records")) out.push_back(record_from_json(r));
  } catch (const json::exception& e) {
    throw FormatError("corrupt annotation file for " + id + ": " + e.what());
  }
  return out;
}

std::optional<AnnotationRecord> AnnotationStore::get(const std::string& id, const std::string& annotator) const {
  for (auto& r : records(id)) {
    if (r.annotator == annotator) return r;
  }
  return std::nullopt;
}

std::mutex& AnnotationStore::image_mutex(const std::string& id) {
  std::lock_guard lock(table_mutex_);
  auto& m = image_mutexes_[id];
  if (!m) m = std::make_unique<std::mutex>();
  return *m;
}

AnnotationRecord AnnotationStore::put(AnnotationRecord record) {
  const auto image = find_image(record.image_id);
  if (!image) throw DomainError("unknown image '" + record.image_id + "'");
  if (record.annotator.empty()) throw DomainError("annotator must not be empty");
  if (!std::isfinite(record.y_mm) || record.y_mm < 0.0 || record.y_mm >= image->height_mm) {
    throw RangeError("y_mm must be within [0, " + std::to_string(image->height_mm) + ")");
  }
  record.timestamp = utc_now();

  std::lock_guard lock(image_mutex(record.image_id));
  std::vector<AnnotationRecord> all = records(record.image_id);
  auto it = std::find_if(all.begin(), all.end(), [&](const auto& r) { return r.annotator == record.annotator; });
  if (it != all.end()) *it = record;
  else all.push_back(record);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.annotator < b.annotator; });

  json doc = {{"image_id", record.image_id}, {"records", json::array()}};
  for (const auto& r : all) doc["records"].push_back(record_to_json(r));
  const fs::path folder = dir_ / "annotations";
  fs::create_directories(folder);
  const fs::path target = folder / (record.image_id + ".json");
  std::ostringstream tid;
  tid << std::this_thread::get_id();
  const fs::path tmp = folder / ("." + record.image_id + ".json.tmp" + tid.str());
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
  return record;
}

std::vector<Annotation> AnnotationStore::export_annotations() const {
  std::vector<Annotation> out;
  for (const auto& image : list_images()) {
    for (const auto& r : records(image.id)) out.push_back({r.image_id, r.annotator, r.y_mm, r.ambiguous});
  }
  return out;
}

fs::path AnnotationStore::mip_png(const std::string& id, const std::string& view) const {
  return dir_ / (id + "." + view + ".png");
}

fs::path AnnotationStore::prediction_json(const std::string& id) const {
  return dir_ / "predictions" / (id + ".json");
}

struct AnnotationServer::Impl {
  Impl(fs::path dir, ServerOptions opts) : store(std::move(dir)), options(std::move(opts)) {}

  AnnotationStore store;
  ServerOptions options;
  httplib::Server server;
  std::thread thread;
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

void send_json(httplib::Response& res, const json& body) { res.set_content(body.dump(), "application/json"); }

}  // namespace

AnnotationServer::AnnotationServer(fs::path data_dir, ServerOptions options)
    : impl_(std::make_unique<Impl>(std::move(data_dir), std::move(options))) {
  auto& svr = impl_->server;
  AnnotationStore& store = impl_->store;

  svr.set_default_headers({{"Access-Control-Allow-Origin", impl_->options.cors_origin},
                           {"Access-Control-Allow-Methods", "GET, PUT, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  svr.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "internal error");
    }
  });

  svr.Get("/api/images", [&store](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const auto& e : store.list_images()) {
      list.push_back({{"id", e.id},
                      {"height_mm", e.height_mm},
                      {"has_sagittal", e.has_sagittal},
                      {"has_prediction", e.has_prediction},
                      {"annotated", !e.annotators.empty()},
                      {"annotators", e.annotators}});
    }
    send_json(res, list);
  });

  svr.Get(R"(/api/images/([^/]+)/mip/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const std::string view = req.matches[2];
    if (view != "frontal" && view != "sagittal") return send_error(res, 404, "unknown view '" + view + "'");
    if (!store.find_image(id)) return send_error(res, 404, "unknown image '" + id + "'");
    const fs::path png = store.mip_png(id, view);
    if (!fs::exists(png)) return send_error(res, 404, "no " + view + " MIP for '" + id + "'");
    res.set_content(read_file(png), "image/png");
  });

  svr.Get(R"(/api/images/([^/]+)/annotation)", [&store](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store.find_image(id)) return send_error(res, 404, "unknown image '" + id + "'");
    if (!req.has_param("annotator")) {
      json list = json::array();
      for (const auto& r : store.records(id)) list.push_back(record_to_json(r));
      return send_json(res, list);
    }
    const auto rec = store.get(id, req.get_param_value("annotator"));
    if (!rec) return send_error(res, 404, "no annotation by '" + req.get_param_value("annotator") + "'");
    send_json(res, record_to_json(*rec));
  });

  svr.Put(R"(/api/images/([^/]+)/annotation)", [&store](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store.find_image(id)) return send_error(res, 404, "unknown image '" + id + "'");
    AnnotationRecord rec;
    rec.image_id = id;
    try {
      const json body = json::parse(req.body);
      if (!body.is_object() || !body.contains("y_mm") || !body["y_mm"].is_number()) {
        return send_error(res, 400, "body must be an object with a numeric y_mm");
      }
      rec.y_mm = body["y_mm"].get<double>();
      if (body.contains("ambiguous")) {
        if (!body["ambiguous"].is_boolean()) return send_error(res, 400, "ambiguous must be a boolean");
        rec.ambiguous = body["ambiguous"].get<bool>();
      }
      rec.annotator = req.has_param("annotator") ? req.get_param_value("annotator") : body.value("annotator", "");
    } catch (const json::exception& e) {
      return send_error(res, 400, std::string("malformed JSON: ") + e.what());
    }
    if (rec.annotator.empty()) return send_error(res, 400, "annotator is required");
    try {
      send_json(res, record_to_json(store.put(rec)));
    } catch (const RangeError& e) {
      send_error(res, 422, e.what());
    } catch (const DomainError& e) {
      send_error(res, 400, e.what());
    }
  });

  svr.Get(R"(/api/images/([^/]+)/prediction)", [&store](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store.find_image(id)) return send_error(res, 404, "unknown image '" + id + "'");
    const fs::path path = store.prediction_json(id);
    if (!fs::exists(path)) return send_error(res, 404, "no prediction for '" + id + "'");
    res.set_content(read_file(path), "application/json");
  });

  svr.Get("/api/export/annotations.csv", [&store](const httplib::Request&, httplib::Response& res) {
    std::ostringstream out;
    write_annotations_csv(out, store.export_annotations());
    res.set_content(out.str(), "text/csv");
  });
}

AnnotationServer::~AnnotationServer() { stop(); }

AnnotationStore& AnnotationServer::store() { return impl_->store; }

int AnnotationServer::start() {
  auto& svr = impl_->server;
  const auto& o = impl_->options;
  port_ = o.port == 0 ? svr.bind_to_any_port(o.host) : (svr.bind_to_port(o.host, o.port) ? o.port : -1);
  if (port_ < 0) throw IoError("cannot bind " + o.host + ":" + std::to_string(o.port));
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return port_;
}

void AnnotationServer::run() {
  auto& svr = impl_->server;
  const auto& o = impl_->options;
  port_ = o.port == 0 ? svr.bind_to_any_port(o.host) : (svr.bind_to_port(o.host, o.port) ? o.port : -1);
  if (port_ < 0) throw IoError("cannot bind " + o.host + ":" + std::to_string(o.port));
  svr.listen_after_bind();
}

void AnnotationServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace mipslice
