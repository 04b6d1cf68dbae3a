#pragma once

#include <istream>
#include <map>
#include <string>

#include "drsl/model.hpp"

namespace drsl {

/// Flat `key = value` config text. `#` starts a comment, blank lines are
/// ignored, keys are unique. Unknown keys are rejected so typos fail fast.
std::map<std::string, std::string> parse_flat_config(std::istream& in);
std::map<std::string, std::string> parse_flat_config_file(
    const std::string& path);
std::string dump_flat_config(const std::map<std::string, std::string>& kv);

struct TrainerConfig {
  std::string dataset_path;
  std::string out_dir;
  std::uint64_t seed = 1;
  std::string mode = "dual";  // "dual" (the method) or "ce" (baseline)

  HyperParams hp;

  // backbone sizes; input_dim/classes come from the dataset
  int trunk_hidden = 64;
  int feature_dim = 64;
  int proj_hidden = 64;
  int proj_dim = 32;

  AugmentationPolicy aug;
  bool aug_scale_by_std = true;  // scale sigmas by the train feature std

  bool enable_pu = true;
  bool enable_con = true;
  bool enable_bcl = true;

  int save_every = 0;  // 0: only the final checkpoint
  bool write_ident_reports = true;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static TrainerConfig from_map(const std::map<std::string, std::string>& kv);
};

TrainerConfig load_trainer_config(const std::string& path);

/// Output root for relative out_dir values; overridden by the
/// DRSL_OUT_ROOT environment variable.
std::string resolve_out_dir(const std::string& out_dir);

}  // namespace drsl
