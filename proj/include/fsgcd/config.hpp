#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsgcd/data_model.hpp"
#include "fsgcd/encoder.hpp"
#include "fsgcd/trainer.hpp"

namespace fsgcd {

// Everything one experiment run needs. Layering order: built-in defaults,
// FSGCD_SEED, preset, config file, explicit flags (each later layer is a
// plain set() on top of the previous one).
struct ExperimentConfig {
  std::string preset;
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = all available cores

  std::string features_path;
  std::string views_path;
  std::string split_path;
  std::string frozen_block_path;
  std::string out_dir;

  double c_l = 0.2;
  double p_l = 0.1;
  std::optional<std::uint64_t> split_seed;  // falls back to seed

  bool synthetic = false;  // generate features instead of loading them
  SyntheticConfig synthetic_cfg;
  std::optional<std::uint64_t> synthetic_seed;

  TrainConfig train;
  EncoderShape encoder;  // input_dim comes from the data
  double adapter_scale = 0.1;
  bool train_scale = false;
  HeadInit head_init = HeadInit::Mirrored;

  EvalOptions eval;

  void set(const std::string& key, const std::string& value);
  void apply_preset(const std::string& name);
  void load_file(const std::string& path);
  // Reads FSGCD_SEED if present.
  void apply_env();

  std::uint64_t effective_split_seed() const { return split_seed.value_or(seed); }
  std::uint64_t effective_synthetic_seed() const { return synthetic_seed.value_or(seed); }
  std::size_t effective_workers() const;
  // TrainConfig with seed and workers resolved.
  TrainConfig resolved_train() const;

  // Effective configuration, keys in a fixed order. Worker count is left out
  // because it never changes results.
  nlohmann::json to_json() const;
  void validate() const;
};

std::vector<std::string> preset_names();
std::vector<std::string> config_keys();

}  // namespace fsgcd
