#include "cmcr/experiment.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "cmcr/error.hpp"

namespace cmcr {

namespace fs = std::filesystem;

namespace {

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  if (v.empty()) {
    return s;
  }
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (const double x : v) {
      ss += (x - s.mean) * (x - s.mean);
    }
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) {
    throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  }
}

}  // namespace

TrainConfig attach_split(const SplitResult& split, const fs::path& dir, TrainConfig cfg) {
  fs::create_directories(dir);
  cfg.corpus_left = dir / "train_text1.emb";
  cfg.corpus_right = dir / "train_text2.emb";
  cfg.bank1 = dir / "bank_image1.emb";
  cfg.bank2 = dir / "bank_audio2.emb";
  save(split.train_texts.left, cfg.corpus_left);
  save(split.train_texts.right, cfg.corpus_right);
  save(split.image_bank.matrix(), cfg.bank1);
  save(split.audio_bank.matrix(), cfg.bank2);
  save(split.eval_image, dir / "eval_image1.emb");
  save(split.eval_audio, dir / "eval_audio2.emb");
  return cfg;
}

void to_json(nlohmann::json& j, const DirectionMetrics& m) {
  j = nlohmann::json{{"mAP", m.map}, {"R@1", m.r1}, {"R@5", m.r5}, {"queries", m.queries}, {"gallery", m.gallery}};
}

void to_json(nlohmann::json& j, const RetrievalReport& r) { j = nlohmann::json{{"A2I", r.a2i}, {"I2A", r.i2a}}; }

void to_json(nlohmann::json& j, const ExperimentResult& r) {
  j = nlohmann::json{{"name", r.name},
                     {"retrieval", r.report},
                     {"gap_space1", r.gap_space1},
                     {"gap_space1_raw", r.gap_space1_raw},
                     {"final_epoch", r.run.epochs.empty() ? nlohmann::json() : nlohmann::json(r.run.epochs.back())}};
}

ExperimentResult run_experiment(const SynthWorld& world, const SplitResult& split, const TrainConfig& cfg,
                                std::string name) {
  ExperimentResult r;
  r.name = std::move(name);
  r.run = train(cfg);
  const Matrix image = forward_eval(r.run.f1, split.eval_image.to_matrix());
  const Matrix audio = forward_eval(r.run.f2, split.eval_audio.to_matrix());
  r.report = bidirectional_retrieval(audio, image);
  const EmbeddingMatrix eval_text1 = world.text1.gather(split.eval_items);
  const Matrix text = forward_eval(r.run.f1, eval_text1.to_matrix());
  r.gap_space1 = modality_gap(text, image);
  r.gap_space1_raw = modality_gap(eval_text1, split.eval_image);
  return r;
}

nlohmann::json ablate_table5(const SynthWorld& world, const TrainConfig& base, const fs::path& out,
                             const SuiteOptions& opts) {
  const SplitResult sp = split(world, opts.train_fraction, world.config.seed);
  const TrainConfig attached = attach_split(sp, out / "data", base);
  nlohmann::json rows = nlohmann::json::array();
  for (char row = 'A'; row <= 'K'; ++row) {
    std::vector<double> a2i;
    std::vector<double> i2a;
    nlohmann::json runs = nlohmann::json::array();
    for (const std::uint64_t seed : opts.seeds) {
      TrainConfig cfg = attached;
      cfg.ablation = ablation_row(row);
      cfg.seed = seed;
      cfg.out_dir = out / (std::string("row_") + row) / ("seed_" + std::to_string(seed));
      const ExperimentResult r = run_experiment(world, sp, cfg, std::string(1, row));
      a2i.push_back(r.report.a2i.map);
      i2a.push_back(r.report.i2a.map);
      nlohmann::json jr = r;
      jr["seed"] = seed;
      runs.push_back(jr);
    }
    const Summary sa = summarize(a2i);
    const Summary si = summarize(i2a);
    const Ablation a = ablation_row(row);
    rows.push_back({{"row", std::string(1, row)},
                    {"consistency", a.consistency == ConsistencyMode::Random ? std::string("none") : std::string(to_string(a.consistency))},
                    {"renorm", !a.no_renorm},
                    {"noise", !a.no_noise},
                    {"L_ttc", !a.no_ttc},
                    {"L_avc", !a.no_avc},
                    {"intra_space2", !a.no_intra_space2},
                    {"intra_space1", !a.no_intra_space1},
                    {"A2I_mAP", sa.mean},
                    {"I2A_mAP", si.mean},
                    {"A2I_mAP_sd", sa.sd},
                    {"I2A_mAP_sd", si.sd},
                    {"runs", runs}});
  }
  const double n_eval = static_cast<double>(sp.eval_items.size());
  nlohmann::json report{{"suite", "table5"},
                        {"world_fingerprint", world.fingerprint()},
                        {"train_fraction", opts.train_fraction},
                        {"eval_items", sp.eval_items.size()},
                        {"random_R@1", 100.0 / n_eval},
                        {"seeds", opts.seeds},
                        {"rows", rows}};
  write_json(out / "table5.json", report);
  return report;
}

nlohmann::json ablate_noise(const SynthWorld& world, const TrainConfig& base, const fs::path& out,
                            const SuiteOptions& opts, const std::vector<double>& sigma2_values) {
  const SplitResult sp = split(world, opts.train_fraction, world.config.seed);
  const TrainConfig attached = attach_split(sp, out / "data", base);
  nlohmann::json points = nlohmann::json::array();
  for (const double s2 : sigma2_values) {
    std::vector<double> avg;
    for (const std::uint64_t seed : opts.seeds) {
      TrainConfig cfg = attached;
      cfg.sigma2 = s2;
      cfg.seed = seed;
      cfg.out_dir = out / ("sigma2_" + std::to_string(s2)) / ("seed_" + std::to_string(seed));
      const ExperimentResult r = run_experiment(world, sp, cfg, "sigma2=" + std::to_string(s2));
      avg.push_back(r.report.mean_map());
    }
    const Summary s = summarize(avg);
    points.push_back({{"sigma2", s2}, {"average_mAP", s.mean}, {"average_mAP_sd", s.sd}});
  }
  nlohmann::json report{{"suite", "noise"},
                        {"world_fingerprint", world.fingerprint()},
                        {"seeds", opts.seeds},
                        {"points", points}};
  write_json(out / "noise.json", report);
  return report;
}

}  // namespace cmcr
