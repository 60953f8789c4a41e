#include "mipslice/config_file.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

#include "mipslice/error.hpp"

namespace mipslice {

ExperimentConfig ExperimentConfig::defaults(Variant v) {
  return {ModelConfig::defaults(v), TrainConfig::defaults(v)};
}

namespace {

using Field = std::variant<int*, double*, std::uint64_t*>;

std::vector<std::pair<std::string, Field>> fields(ExperimentConfig& c) {
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  AugmentConfig& a = c.train.augment;
  return {
      {"seed", &t.seed},
      {"model.depth", &m.depth},
      {"model.base_channels", &m.base_channels},
      {"model.leaky_relu_alpha", &m.leaky_relu_alpha},
      {"model.dropout_p", &m.dropout_p},
      {"model.final_pool", &m.final_pool},
      {"model.init_seed", &m.init_seed},
      {"train.crop_h", &t.crop_h},
      {"train.crop_w", &t.crop_w},
      {"train.batch_size", &t.batch_size},
      {"train.epochs", &t.epochs},
      {"train.learning_rate", &t.learning_rate},
      {"train.beta1", &t.beta1},
      {"train.beta2", &t.beta2},
      {"train.adam_epsilon", &t.adam_epsilon},
      {"train.sigma_start", &t.sigma_start},
      {"train.sigma_end", &t.sigma_end},
      {"train.plateau_half_width", &t.plateau_half_width},
      {"train.validation_fraction", &t.validation_fraction},
      {"train.validation_stride", &t.validation_stride},
      {"augment.flip_h_prob", &a.flip_h_prob},
      {"augment.scale_min", &a.scale_min},
      {"augment.scale_max", &a.scale_max},
      {"augment.intensity_offset_min", &a.intensity_offset_min},
      {"augment.intensity_offset_max", &a.intensity_offset_max},
      {"augment.piecewise_affine_prob", &a.piecewise_affine_prob},
      {"augment.piecewise_affine_grid", &a.piecewise_affine_grid},
      {"augment.piecewise_affine_jitter_px", &a.piecewise_affine_jitter_px},
      {"augment.dropout_prob", &a.dropout_prob},
      {"augment.dropout_count_min", &a.dropout_count_min},
      {"augment.dropout_count_max", &a.dropout_count_max},
      {"augment.dropout_size_min", &a.dropout_size_min},
      {"augment.dropout_size_max", &a.dropout_size_max},
      {"augment.overexposure_prob", &a.overexposure_prob},
      {"augment.overexposure_count_min", &a.overexposure_count_min},
      {"augment.overexposure_count_max", &a.overexposure_count_max},
      {"augment.overexposure_size_min", &a.overexposure_size_min},
      {"augment.overexposure_size_max", &a.overexposure_size_max},
      {"augment.thickness_prob", &a.thickness_prob},
      {"augment.max_simulated_thickness_mm", &a.max_simulated_thickness_mm},
      {"augment.seed", &a.seed},
  };
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ConfigEntries parse_config_text(std::string_view text) {
  ConfigEntries entries;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(content).substr(0, eq));
    std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
    }
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

ConfigEntries read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::optional<Variant> config_variant(const ConfigEntries& entries) {
  std::optional<Variant> v;
  for (const auto& [key, value] : entries) {
    if (key == "variant") {
      try {
        v = variant_from_string(value);
      } catch (const DomainError& e) {
        throw ConfigError(e.what());
      }
    }
  }
  return v;
}

void apply_config(const ConfigEntries& entries, ExperimentConfig& cfg) {
  auto table = fields(cfg);
  for (const auto& [key, value] : entries) {
    if (key == "variant") {
      const Variant v = *config_variant({{key, value}});
      if (v != cfg.model.variant) {
        throw ConfigError("config variant '" + value + "' differs from the configured " + to_string(cfg.model.variant) +
                          "; start from that variant's defaults");
      }
      continue;
    }
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    const bool ok = std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          return parse_number<T>(value, *p);
        },
        it->second);
    if (!ok) throw ConfigError("bad value '" + value + "' for config key '" + key + "'");
  }
}

std::string to_config_text(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  std::string out = "variant = " + to_string(cfg.model.variant) + "\n";
  for (const auto& [key, field] : fields(cfg)) {
    const std::string value = std::visit(
        [](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, double>) return format_double(*p);
          else return std::to_string(*p);
        },
        field);
    out += key + " = " + value + "\n";
  }
  return out;
}

void write_config_file(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_config_text(cfg);
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t training_config_hash(const ExperimentConfig& cfg) { return fnv1a64(to_config_text(cfg)); }

}  // namespace mipslice
