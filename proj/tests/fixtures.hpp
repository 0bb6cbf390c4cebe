// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers that build ready-to-train synthetic panels and scratch
// directories for tests.

#pragma once

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "condlstmq/panel.hpp"
#include "condlstmq/synth.hpp"

namespace fixtures {

/// Hole-filled, standardized synthetic panel with its generating structure.
struct ReadyPanel {
  condlstmq::CountyPanel panel;
  condlstmq::SynthStructure structure;
};

inline ReadyPanel ready_synth(const condlstmq::SynthConfig& cfg, std::size_t holdout_days = 21) {
  auto out = condlstmq::synth_generate(cfg);
  condlstmq::fill_panel_holes(out.panel);
  return {condlstmq::standardize(out.panel, out.panel.n_dates() - holdout_days), std::move(out.structure)};
}

inline condlstmq::SynthConfig small_synth(std::size_t counties, std::size_t dates, std::uint64_t seed) {
  condlstmq::SynthConfig c;
  c.n_counties = counties;
  c.n_dates = dates;
  c.seed = seed;
  return c;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("condlstmq_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name) << text;
    return file(name);
  }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace fixtures
