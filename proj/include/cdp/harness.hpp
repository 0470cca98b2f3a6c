#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdp/config.hpp"

namespace cdp {

inline constexpr int kArtifactFormatVersion = 1;
inline const std::vector<std::string> kStages = {"exploration", "discovery", "skills"};

// $CDP_RUNS_ROOT, or ./runs.
std::filesystem::path default_runs_root();

struct RunOptions {
  std::filesystem::path runs_root = default_runs_root();
  // Return right after this stage completes, as if the process had been killed.
  std::optional<std::string> stop_after;
  bool make_plots = true;
  LabelSource* labels = nullptr;  // overrides the configured label mode
};

struct Manifest {
  std::string run_id;
  std::string config_hash;
  int format_version = kArtifactFormatVersion;
  std::vector<std::string> completed;
  std::size_t metrics_rows = 0;
  std::map<std::string, std::uint64_t> stage_seeds;
  std::string status = "running";  // running | complete | failed
  std::optional<std::string> failed_stage;
  std::optional<std::string> error;
  std::size_t scatter_stride = 1;

  bool done(const std::string& stage) const;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);
Manifest read_manifest(const std::filesystem::path& run_dir);

// Versioned binary envelope around a JSON payload; load rejects other format
// versions and other config hashes.
void save_artifact(const std::filesystem::path& file, const std::string& config_hash, const nlohmann::json& payload);
nlohmann::json load_artifact(const std::filesystem::path& file, const std::string& expected_hash);

// Runs exploration -> discovery -> skills, skipping stages the manifest already
// lists as complete. Returns the run directory.
std::filesystem::path run_pipeline(const RunConfig& config, const RunOptions& options = {});
std::filesystem::path resume_run(const std::filesystem::path& run_dir, const RunOptions& options = {});

std::vector<std::string> metrics_columns(int num_skills);

// checkpoints/<stage>-<epoch>.cbor, where epoch is the last epoch the stage ran
// (exploration) or 0 for the single-pass stages.
std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, const RunConfig& config,
                                      const std::string& stage);

struct SweepCell {
  double beta = 0.0;
  std::filesystem::path run_dir;
  bool ok = false;
  std::string error;
  double mean_centroid_to_goal = 0.0;
  double velocity_variance = 0.0;
};

struct SweepReport {
  std::vector<SweepCell> cells;
  std::filesystem::path table;
};

// One pipeline per beta (exploration and discovery beta both set), same seed.
SweepReport beta_sweep(const RunConfig& config, const std::vector<double>& betas, const RunOptions& options = {});

}  // namespace cdp
