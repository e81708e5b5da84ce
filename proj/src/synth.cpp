#include "cmcr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "cmcr/error.hpp"
#include "cmcr/hash.hpp"
#include "cmcr/rng.hpp"

namespace cmcr {

namespace {

constexpr const char* kFiles[] = {"latent.emb", "space1_text.emb", "space1_image.emb", "space2_text.emb",
                                  "space2_audio.emb"};

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    m.data()[k] = rng.normal();
  }
  return m;
}

// d_space x d_latent with orthonormal columns.
Matrix orthonormal_map(std::size_t d_space, std::size_t d_latent, Rng& rng) {
  const Matrix g = gaussian(static_cast<Eigen::Index>(d_space), static_cast<Eigen::Index>(d_latent), rng);
  const Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
  return q;
}

RowVector unit_vector(std::size_t dim, Rng& rng) {
  RowVector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    v[k] = rng.normal();
  }
  return v / v.norm();
}

EmbeddingMatrix embed(const Matrix& latent, const Matrix& map, const RowVector& offset, const SynthConfig& cfg,
                      Rng& rng) {
  Matrix e = latent * map.transpose();
  e.rowwise() += cfg.gap_magnitude * offset;
  if (cfg.noise_sigma > 0.0) {
    for (Eigen::Index k = 0; k < e.size(); ++k) {
      e.data()[k] += cfg.noise_sigma * rng.normal();
    }
  }
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    e.row(i) /= e.row(i).norm();
  }
  return EmbeddingMatrix::from_matrix(e, true);
}

}  // namespace

void SynthConfig::validate() const {
  if (n_items < 2 || d_latent < 2 || d_space1 < 2 || d_space2 < 2) {
    throw Error(ErrorCode::ConfigInvalid, "all synth counts must be >= 2");
  }
  if (d_latent > std::min(d_space1, d_space2)) {
    throw Error(ErrorCode::ConfigInvalid, "d_latent must not exceed either space dim");
  }
  if (!(noise_sigma >= 0.0) || !(gap_magnitude >= 0.0) || !std::isfinite(noise_sigma) ||
      !std::isfinite(gap_magnitude)) {
    throw Error(ErrorCode::ConfigInvalid, "noise_sigma and gap_magnitude must be non-negative");
  }
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"n_items", c.n_items},         {"d_latent", c.d_latent},
                     {"d_space1", c.d_space1},       {"d_space2", c.d_space2},
                     {"noise_sigma", c.noise_sigma}, {"gap_magnitude", c.gap_magnitude},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  if (!j.is_object()) {
    throw Error(ErrorCode::ConfigInvalid, "synth config must be a JSON object");
  }
  static const std::set<std::string> known = {"n_items",     "d_latent",      "d_space1", "d_space2",
                                              "noise_sigma", "gap_magnitude", "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) {
      throw Error(ErrorCode::ConfigInvalid, "unknown synth config key '" + key + "'");
    }
  }
  try {
    c.n_items = j.value("n_items", c.n_items);
    c.d_latent = j.value("d_latent", c.d_latent);
    c.d_space1 = j.value("d_space1", c.d_space1);
    c.d_space2 = j.value("d_space2", c.d_space2);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.gap_magnitude = j.value("gap_magnitude", c.gap_magnitude);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("synth config: ") + e.what());
  }
}

std::string SynthWorld::fingerprint() const {
  Fnv1a h;
  for (const EmbeddingMatrix* m : {&latent, &text1, &image1, &text2, &audio2}) {
    const auto bytes = encode(*m);
    h.update(bytes);
  }
  return h.hex();
}

SynthWorld generate(const SynthConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Rng latent_rng = root.fork(1);
  Rng map_rng = root.fork(2);
  Rng offset_rng = root.fork(3);

  Matrix z = gaussian(static_cast<Eigen::Index>(cfg.n_items), static_cast<Eigen::Index>(cfg.d_latent), latent_rng);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    z.row(i) /= z.row(i).norm();
  }
  const Matrix w1 = orthonormal_map(cfg.d_space1, cfg.d_latent, map_rng);
  const Matrix w2 = orthonormal_map(cfg.d_space2, cfg.d_latent, map_rng);
  const RowVector b_text1 = unit_vector(cfg.d_space1, offset_rng);
  const RowVector b_image1 = unit_vector(cfg.d_space1, offset_rng);
  const RowVector b_text2 = unit_vector(cfg.d_space2, offset_rng);
  const RowVector b_audio2 = unit_vector(cfg.d_space2, offset_rng);

  SynthWorld world;
  world.config = cfg;
  world.latent = EmbeddingMatrix::from_matrix(z, true);
  Rng n1 = root.fork(10);
  Rng n2 = root.fork(11);
  Rng n3 = root.fork(12);
  Rng n4 = root.fork(13);
  world.text1 = embed(z, w1, b_text1, cfg, n1);
  world.image1 = embed(z, w1, b_image1, cfg, n2);
  world.text2 = embed(z, w2, b_text2, cfg, n3);
  world.audio2 = embed(z, w2, b_audio2, cfg, n4);
  return world;
}

void save_world(const SynthWorld& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const EmbeddingMatrix* mats[] = {&world.latent, &world.text1, &world.image1, &world.text2, &world.audio2};
  for (std::size_t k = 0; k < 5; ++k) {
    save(*mats[k], dir / kFiles[k]);
  }
  nlohmann::json manifest;
  manifest["config"] = world.config;
  manifest["fingerprint"] = world.fingerprint();
  manifest["files"] = std::vector<std::string>(std::begin(kFiles), std::end(kFiles));
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) {
    throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "manifest.json").string());
  }
}

SynthWorld load_world(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw Error(ErrorCode::IoFailure, "no manifest.json in " + dir.string());
  }
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("world manifest: ") + e.what());
  }
  SynthWorld world;
  from_json(manifest.at("config"), world.config);
  world.latent = load(dir / kFiles[0]);
  world.text1 = load(dir / kFiles[1]);
  world.image1 = load(dir / kFiles[2]);
  world.text2 = load(dir / kFiles[3]);
  world.audio2 = load(dir / kFiles[4]);
  if (manifest.contains("fingerprint") && manifest["fingerprint"].get<std::string>() != world.fingerprint()) {
    throw Error(ErrorCode::ConfigInvalid, "world files do not match the manifest fingerprint");
  }
  return world;
}

SplitResult split(const SynthWorld& world, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::FractionInvalid, "train fraction must lie in (0, 1)");
  }
  const std::size_t n = world.text1.rows();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train < 2 || n_train >= n) {
    throw Error(ErrorCode::FractionInvalid, "split leaves " + std::to_string(n_train) + " of " +
                                                std::to_string(n) + " items for training");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = Rng(seed).fork(0x5117);
  rng.shuffle(std::span<std::size_t>(perm));

  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> eval(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  const std::size_t half = n_train / 2;
  std::vector<std::size_t> image_rows(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(half));
  std::vector<std::size_t> audio_rows(train.begin() + static_cast<std::ptrdiff_t>(half), train.end());
  std::sort(train.begin(), train.end());
  std::sort(eval.begin(), eval.end());
  std::sort(image_rows.begin(), image_rows.end());
  std::sort(audio_rows.begin(), audio_rows.end());

  return SplitResult{
      train,
      eval,
      PairedCorpus(world.text1.gather(train), world.text2.gather(train)),
      MemoryBank(world.image1.gather(image_rows), "image"),
      MemoryBank(world.audio2.gather(audio_rows), "audio"),
      world.image1.gather(eval),
      world.audio2.gather(eval),
  };
}

}  // namespace cmcr
