#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sae/analysis.hpp"
#include "sae/dataset.hpp"
#include "sae/model.hpp"
#include "sae/trainer.hpp"

namespace sae::runner {

inline constexpr const char* kToolVersion = "sae 0.1.0";
inline constexpr const char* kOutRootEnv = "SAE_OUT_ROOT";

struct DatasetSpec {
  enum class Kind { Mnist, Synthetic };
  Kind kind = Kind::Synthetic;

  std::string images;     // mnist
  std::string labels;     // mnist
  std::size_t limit = 0;  // keep the first N rows; 0 = all

  SyntheticSpec synth;  // synthetic (d filled from model.d)
  std::uint64_t data_seed = 0;
};

// One grid cell: the training recipe that varies across a sweep.
struct SweepCell {
  std::string name;
  SparsityMechanism mechanism;
  WeightPenalty penalty;
  TrainingFlags flags;
};

struct ExperimentConfig {
  DatasetSpec data;
  std::size_t d = 0;
  std::size_t m = 0;
  TrainConfig train;  // per-seed runs override train.seed
  std::vector<std::uint64_t> seeds;
  double tau = 0.7;
  std::size_t threads = 1;

  // Sweep axes; an empty axis falls back to the base value from train.
  std::vector<SparsityMechanism> mech_axis;
  std::vector<WeightPenalty> penalty_axis;
  std::vector<TrainingFlags> flags_axis;

  std::string out_dir;

  bool has_axes() const {
    return !mech_axis.empty() || !penalty_axis.empty() || !flags_axis.empty();
  }
  std::vector<SweepCell> cells() const;  // cartesian product, declaration order
  void validate() const;
};

// Strict JSON parse: unknown fields are rejected with the offending name.
// Accepts either a config file or a previously written manifest (whose
// embedded config snapshot is then used), which makes re-runs one command.
ExperimentConfig load_config(const std::filesystem::path& path);

Dataset load_dataset(const DatasetSpec& spec, std::size_t d);

struct RunRecord {
  std::string cell;
  std::uint64_t seed = 0;
  std::string weights, sidecar, history, alignment, alignment_hist, stats;
  double wall_seconds = 0.0;
};

struct FailureRecord {
  std::string cell;
  std::uint64_t seed = 0;
  std::string error;
};

struct RunManifest {
  std::filesystem::path out_dir;
  ExperimentConfig config;
  std::vector<SweepCell> cells;
  std::vector<RunRecord> runs;
  std::vector<FailureRecord> failures;  // isolated per (cell, seed)
};

// Trains every cell x seed, writes weights/sidecar/history/alignment/stats
// under out_dir/cell-*/seed-*/ plus manifest.json (and index.json when the
// config has sweep axes). Tasks run on config.threads workers; each run is
// single-threaded and deterministic, so outputs are independent of
// scheduling. A NaN blow-up or I/O failure aborts only its own (cell, seed)
// task and is recorded under failures.
RunManifest run_experiment(const ExperimentConfig& config);

RunManifest load_manifest(const std::filesystem::path& out_dir);

struct PairRow {
  std::string cell;
  std::string pair;  // "seedA-seedB"
  ConsistencyReport report;
};

struct CellSummary {
  std::string cell;
  std::size_t pairs = 0;
  double mean_max_cos = 0.0;
  double frac_paired = 0.0;
  double frac_shared_all = 0.0;
  double frac_shared_alive = 0.0;
  double frac_paired_alive = 0.0;
};

struct ConsistencyTable {
  std::vector<PairRow> pairs;
  std::vector<CellSummary> cells;  // across-pairs mean per cell
};

// Consistency for every unordered seed pair of every cell with at least two
// completed runs, plus per-cell means. Derives everything from the stored
// weight files. Throws ConfigError when no cell has two runs and
// FormatError when weight files are missing.
ConsistencyTable compare_runs(const RunManifest& manifest, double tau = 0.7);

void write_consistency_csv(const std::filesystem::path& path,
                           const ConsistencyTable& table);
void write_consistency_json(const std::filesystem::path& path,
                            const ConsistencyTable& table);

// Loads one stored run and measures reconstruction under the four latent
// selections on the first `limit` dataset rows.
AblationReport run_ablation(const RunManifest& manifest,
                            const std::string& cell, std::uint64_t seed,
                            std::size_t n, std::size_t limit,
                            std::uint64_t ablation_seed);

}  // namespace sae::runner
