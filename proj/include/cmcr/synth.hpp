#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmcr/embed_store.hpp"
#include "cmcr/semantic_enhancement.hpp"

namespace cmcr {

/// Two synthetic contrastive spaces that share a text modality.
///
/// Every item i has a latent z_i on the unit sphere. Space s embeds
/// modality m as normalize(W_s z_i + g * b_sm + eps) where W_s is a random
/// column-orthonormal map shared by the modalities of that space, b_sm a
/// random unit offset per modality (the modality gap), and eps iid
/// N(0, noise_sigma^2). The two spaces use independent maps, so they are
/// unrelated rotations of the same semantics.
struct SynthConfig {
  std::size_t n_items = 2000;
  std::size_t d_latent = 32;
  std::size_t d_space1 = 64;
  std::size_t d_space2 = 64;
  double noise_sigma = 0.05;
  double gap_magnitude = 0.5;
  std::uint64_t seed = 7;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
/// Rejects unknown keys; missing keys keep their defaults.
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SynthWorld {
  SynthConfig config;
  EmbeddingMatrix latent;
  EmbeddingMatrix text1;   // space 1, overlapping modality
  EmbeddingMatrix image1;  // space 1, non-overlapping modality
  EmbeddingMatrix text2;   // space 2, overlapping modality
  EmbeddingMatrix audio2;  // space 2, non-overlapping modality

  /// FNV-1a over the serialized bytes of all five matrices.
  std::string fingerprint() const;
};

SynthWorld generate(const SynthConfig& cfg);

/// Writes the five CMCR-EMB files and manifest.json into `dir`.
void save_world(const SynthWorld& world, const std::filesystem::path& dir);
SynthWorld load_world(const std::filesystem::path& dir);

/// Training side sees only texts and the two memories; evaluation side sees
/// held-out image/audio pairs with identity ground truth.
struct SplitResult {
  std::vector<std::size_t> train_items;
  std::vector<std::size_t> eval_items;
  PairedCorpus train_texts;
  MemoryBank image_bank;
  MemoryBank audio_bank;
  EmbeddingMatrix eval_image;
  EmbeddingMatrix eval_audio;
};

/// Seeded split. The first half of the (shuffled) training items supplies
/// the image memory and the second half the audio memory, so the memories
/// are disjoint from each other and from the evaluation items.
SplitResult split(const SynthWorld& world, double train_fraction, std::uint64_t seed);

}  // namespace cmcr
