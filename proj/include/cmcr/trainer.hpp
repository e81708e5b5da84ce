#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cmcr/embed_store.hpp"
#include "cmcr/losses.hpp"
#include "cmcr/optim.hpp"
#include "cmcr/projector.hpp"
#include "cmcr/semantic_enhancement.hpp"

namespace cmcr {

/// Switches that remove one ingredient of the method (Table-5 style rows).
struct Ablation {
  bool no_ttc = false;
  bool no_avc = false;
  bool no_intra_space1 = false;
  bool no_intra_space2 = false;
  bool no_noise = false;
  bool no_renorm = false;
  ConsistencyMode consistency = ConsistencyMode::Softmax;

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct TrainConfig {
  // Inputs: paired overlapping-modality texts and the two memories.
  std::filesystem::path corpus_left;   // texts in space 1
  std::filesystem::path corpus_right;  // texts in space 2
  std::filesystem::path bank1;         // space-1 memory (e.g. images)
  std::filesystem::path bank2;         // space-2 memory (e.g. audio)
  std::filesystem::path out_dir = "run";

  double tau1 = 0.01;
  double tau2 = 0.01;
  double tau3 = 0.01;
  double sigma2 = 0.004;
  double lambda = 0.1;
  std::size_t batch_size = 10240;
  std::size_t epochs = 36;
  double lr_init = 1e-3;
  std::uint64_t seed = 0;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  /// 0 means twice the input dim.
  std::size_t hidden_dim = 1024;
  bool final_relu = true;
  bool intra_squared = false;
  std::size_t precompute_chunk = 4096;
  /// Write per-epoch checkpoints every N epochs; 0 keeps only the final pair.
  std::size_t checkpoint_every = 1;

  Ablation ablation;

  void validate() const;
  LossConfig loss_config() const;
  /// Hash of every setting that influences results (paths excluded).
  std::string settings_hash() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Overlays the keys of `j` onto `c`; unknown keys throw ConfigInvalid.
void apply_json(const nlohmann::json& j, TrainConfig& c);
/// Applies one `key=value` override (value parsed as JSON, else as string).
void apply_override(std::string_view assignment, TrainConfig& c);

/// "paper", "paper-3d", "synthetic", "ablation-A" .. "ablation-K".
TrainConfig preset(std::string_view name);
std::vector<std::string> preset_names();
/// Ablation switches of Table-5 row `row` ('A'..'K'); 'K' is the full method.
Ablation ablation_row(char row);

struct PreparedCorpus {
  EmbeddingMatrix text1;
  EmbeddingMatrix consistent1;  // memory-1 counterpart of each text1 row
  EmbeddingMatrix text2;
  EmbeddingMatrix consistent2;
  std::string fingerprint;
  bool reused = false;
};

/// Loads texts and memories, precomputes the consistent embeddings and
/// persists all four under out_dir/prepared. Reuses the cache when the
/// fingerprint (inputs + enhancement settings) matches.
PreparedCorpus prepare(const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ttc = 0.0;
  double avc = 0.0;
  double intra = 0.0;
  double lr = 0.0;
};

void to_json(nlohmann::json& j, const EpochLog& e);

struct TrainRun {
  std::vector<EpochLog> epochs;
  std::filesystem::path f1_checkpoint;
  std::filesystem::path f2_checkpoint;
  ProjectorParams f1;
  ProjectorParams f2;
  std::uint64_t steps = 0;
};

/// Runs prepare, then optimizes both projectors. Writes train_log.jsonl,
/// checkpoints and manifest.json under out_dir.
TrainRun train(const TrainConfig& cfg);

/// Eval-mode projection; no noise, no enhancement.
EmbeddingMatrix infer(const ProjectorParams& params, const EmbeddingMatrix& inputs);
EmbeddingMatrix infer(const std::filesystem::path& checkpoint, const EmbeddingMatrix& inputs);

}  // namespace cmcr
