#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "dtpn/model.hpp"
#include "dtpn/postprocess.hpp"
#include "dtpn/sampling.hpp"
#include "dtpn/train.hpp"

namespace dtpn {

/// Everything a pipeline run needs. Model S and K_1 always follow `sampling`.
struct RunConfig {
  SamplingConfig sampling{};
  ModelConfig model{};
  TrainConfig train{};
  NmsConfig nms{};
  std::uint64_t backbone_seed = 1;
  int frame_dim = 16;

  RunConfig();

  /// Model config with S, K_1 taken from sampling and M from the argument.
  ModelConfig model_for(int num_classes) const;

  /// Applies one `section.key = value` assignment. Throws ConfigError.
  void set(std::string_view key, std::string_view value);
  /// Cross-field checks (K_1 power of two, positive sizes, ...). Throws ConfigError.
  void validate() const;
  std::string to_text() const;
};

/// Parses `section.key = value` lines over `base`; '#' starts a comment.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace dtpn
