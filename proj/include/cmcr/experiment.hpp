#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmcr/eval.hpp"
#include "cmcr/synth.hpp"
#include "cmcr/trainer.hpp"

namespace cmcr {

/// Writes the training side of `split` (texts, memories) under `dir` and
/// points the corpus/bank paths of `cfg` at those files.
TrainConfig attach_split(const SplitResult& split, const std::filesystem::path& dir, TrainConfig cfg);

struct ExperimentResult {
  std::string name;
  TrainRun run;
  /// Held-out audio (space 2) vs image (space 1) after projection.
  RetrievalReport report;
  /// Gap between projected held-out text and image of space 1.
  double gap_space1 = 0.0;
  /// Same pair before projection.
  double gap_space1_raw = 0.0;
};

void to_json(nlohmann::json& j, const DirectionMetrics& m);
void to_json(nlohmann::json& j, const RetrievalReport& r);
void to_json(nlohmann::json& j, const ExperimentResult& r);

/// Trains `cfg` (paths already attached) and evaluates on the held-out side.
ExperimentResult run_experiment(const SynthWorld& world, const SplitResult& split, const TrainConfig& cfg,
                                std::string name);

struct SuiteOptions {
  double train_fraction = 0.5;
  std::vector<std::uint64_t> seeds = {0};
};

/// Rows A..K of the ablation table on one world; one run per (row, seed).
nlohmann::json ablate_table5(const SynthWorld& world, const TrainConfig& base, const std::filesystem::path& out,
                             const SuiteOptions& opts);

/// Noise-variance sweep of the full method.
nlohmann::json ablate_noise(const SynthWorld& world, const TrainConfig& base, const std::filesystem::path& out,
                            const SuiteOptions& opts, const std::vector<double>& sigma2_values);

inline const std::vector<double> kNoiseSweep = {0.0, 0.001, 0.002, 0.004, 0.008, 0.016};

}  // namespace cmcr
