#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mipslice/models.hpp"
#include "mipslice/training.hpp"

namespace mipslice {

/// Everything a training run depends on.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;

  static ExperimentConfig defaults(Variant v);
  bool operator==(const ExperimentConfig&) const = default;
};

/// Experiment files are UTF-8 text with one `key = value` per line. `#` starts
/// a comment; blank lines are ignored. Keys are `variant`, `seed`, `model.*`,
/// `train.*` and `augment.*` (see to_config_text for the full list).
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Syntax only; throws ConfigError with the line number on malformed lines.
ConfigEntries parse_config_text(std::string_view text);
ConfigEntries read_config_file(const std::filesystem::path& path);

/// The `variant` entry, if present.
std::optional<Variant> config_variant(const ConfigEntries& entries);

/// Overrides fields of `cfg`. Unknown keys and unparsable values throw ConfigError.
void apply_config(const ConfigEntries& entries, ExperimentConfig& cfg);

/// Canonical text listing every key; parse + apply on defaults round-trips.
std::string to_config_text(const ExperimentConfig& cfg);
void write_config_file(const std::filesystem::path& path, const ExperimentConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);
/// Hash of the canonical text.
std::uint64_t training_config_hash(const ExperimentConfig& cfg);

}  // namespace mipslice
