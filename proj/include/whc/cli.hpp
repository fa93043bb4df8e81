#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "whc/density.hpp"
#include "whc/ingest.hpp"
#include "whc/traineval.hpp"

namespace whc::cli {

struct SynthSettings {
  int n = 4;
  int image_size = 64;
  int max_objects = 10;
  std::uint64_t seed = 0;
};

struct SplitSettings {
  SplitRatios ratios;
  std::uint64_t seed = 0;
};

/// Parsed `--config` document. Relative paths are resolved against the
/// directory holding the config file.
struct RunConfig {
  // data
  std::filesystem::path annotations;
  std::filesystem::path images_dir;
  std::filesystem::path train_source;
  std::filesystem::path val_source;
  std::filesystem::path pretrained_frontend;
  std::optional<SplitSettings> split;
  SynthSettings synth;
  // kernel
  KernelParams kernel;
  // train
  TrainConfig train;
  // eval
  std::filesystem::path test_source;
  std::filesystem::path whole_source;
  int eval_threads = 1;
  // output
  std::filesystem::path output_dir = "out";

  /// Effective configuration with every default filled in.
  nlohmann::json effective;
};

/// Strict parse: unknown sections or keys and mistyped values raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// 64-bit FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& effective);

/// Entry point shared by the `whcount` binary and the tests. Returns the
/// process exit code; failures print `error: <class>: <message>` on `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace whc::cli
