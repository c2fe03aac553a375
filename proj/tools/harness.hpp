// Copyright 2026 The ShiftMatch Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment driver behind the shiftmatch command line: configuration,
// the train / stats / eval / theory commands and report formats.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftmatch/covstats.hpp"
#include "shiftmatch/datacorrupt.hpp"
#include "shiftmatch/matcher.hpp"
#include "shiftmatch/netmodel.hpp"

namespace shiftmatch::harness {

/// Raised when a run completes but misses a configured threshold.
class ThresholdError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int { kOk = 0, kOther = 1, kConfigError = 2, kNumericError = 3, kThresholdFailure = 4 };

struct ExperimentConfig {
  std::filesystem::path graph;
  std::filesystem::path images;
  std::filesystem::path labels;
  std::size_t classes = 10;
  std::size_t train_count = 8000;  // first rows train, the rest test
  std::size_t test_count = 0;      // 0: all remaining rows

  std::vector<std::string> corruptions{"blur"};
  std::vector<int> intensities{1, 2, 3, 4, 5};
  bool include_clean = true;
  std::vector<std::string> methods{"plain", "shiftmatch"};

  CovKind spec = CovKind::KroneckerHW;
  std::string placement = "pre";
  double eps = kDefaultEps;
  std::size_t stats_batch = 10000;

  std::size_t members = 5;
  TrainConfig train;
  std::uint64_t seed = 1;

  std::filesystem::path out = "out";
  bool record_timing = false;
  std::size_t theory_samples = 50000;

  /// key = value lines; relative paths resolve against `base`.
  static ExperimentConfig parse(std::string_view text, const std::filesystem::path& base = {});
  static ExperimentConfig load(const std::filesystem::path& path);

  std::string canonical() const;
  std::uint64_t hash() const;
};

/// Command-line overrides; unset fields keep the config value.
struct Overrides {
  std::optional<std::vector<std::string>> methods;
  std::optional<std::filesystem::path> out;
  std::optional<double> eps;
  std::optional<std::string> spec;
  std::optional<std::string> placement;
  std::optional<std::uint64_t> seed;

  void apply(ExperimentConfig& cfg) const;
};

struct MethodSetup {
  std::string name;
  bool matched = false;
  CovKind kind = CovKind::KroneckerHW;
  std::string placement;  // pre | post | input-only

  /// Directory name for this method's statistics, e.g. "kron-pre".
  std::string stats_key() const;
};

/// plain, meanvar, shiftmatch, input-only, channel-joint, full-cov, post-activation.
MethodSetup method_setup(std::string_view name, const ExperimentConfig& cfg);

struct Workspace {
  LayerGraph graph;
  Dataset train;
  Dataset test;
};

Workspace load_workspace(const ExperimentConfig& cfg);

std::filesystem::path weights_path(const ExperimentConfig& cfg, std::size_t member);
std::filesystem::path stats_path(const ExperimentConfig& cfg, const MethodSetup& m, std::size_t member);

struct ReportRow {
  std::string method;
  std::string corruption;
  int intensity = 0;
  double accuracy = 0.0;
  double nll = 0.0;
  std::size_t examples = 0;
  double ms = 0.0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct Report {
  std::uint64_t config_hash = 0;
  std::string version;
  std::vector<ReportRow> rows;

  const ReportRow* find(std::string_view method, std::string_view corruption, int intensity) const;

  friend bool operator==(const Report&, const Report&) = default;
};

inline constexpr std::string_view kCsvHeader = "method,corruption,intensity,accuracy,nll,examples,ms";

std::string to_csv(const Report& r);
/// Header and rows only; config hash and version are not part of the CSV.
Report from_csv(std::string_view text);
nlohmann::json to_json(const Report& r);
Report from_json(const nlohmann::json& j);

std::string version();

// Commands. Progress goes to `log`.
SampleSet cmd_train(const ExperimentConfig& cfg, std::ostream& log);
SampleSet load_samples(const ExperimentConfig& cfg);
/// Statistics per stats_key(), one entry per ensemble member.
using StatsTable = std::map<std::string, std::vector<TrainStats>>;

/// Acquires statistics for every matched method in the config and writes
/// them, overwriting earlier files.
StatsTable cmd_stats(const ExperimentConfig& cfg, std::ostream& log);
Report cmd_eval(const ExperimentConfig& cfg, std::ostream& log);

struct TheoryRow {
  std::string mode;  // population | empirical
  double sigma = 0.0;
  double error = 0.0;  // NaN when the check could not be evaluated
  double threshold = 0.0;
  std::string note;
  bool pass() const;
};

/// Exact-removal suite on 8x8 stationary signals across sigma {0.5, 1, 2}.
std::vector<TheoryRow> cmd_theory(const ExperimentConfig& cfg, std::ostream& log);

int run_cli(int argc, char** argv);

}  // namespace shiftmatch::harness
