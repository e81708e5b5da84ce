#include "cmcr/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cmcr/checkpoint.hpp"
#include "cmcr/error.hpp"
#include "cmcr/hash.hpp"
#include "cmcr/rng.hpp"

namespace cmcr {

namespace fs = std::filesystem;

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "corpus_left", "corpus_right", "bank1",  "bank2",       "out_dir",        "tau1",
      "tau2",        "tau3",         "sigma2", "lambda",      "batch_size",     "epochs",
      "lr_init",     "seed",         "beta1",  "beta2",       "eps",            "weight_decay",
      "hidden_dim",  "final_relu",   "intra_squared",         "precompute_chunk", "checkpoint_every",
      "consistency", "disable"};
  return keys;
}

const std::set<std::string>& known_disable_keys() {
  static const std::set<std::string> keys = {"ttc", "avc", "intra_space1", "intra_space2", "noise", "renorm"};
  return keys;
}

nlohmann::json settings_json(const TrainConfig& c) {
  nlohmann::json j = c;
  for (const char* k : {"corpus_left", "corpus_right", "bank1", "bank2", "out_dir", "checkpoint_every"}) {
    j.erase(k);
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) {
    throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  }
}

std::string ckpt_name(const char* which, std::size_t epoch) {
  std::ostringstream ss;
  ss << "epoch_" << std::setw(3) << std::setfill('0') << epoch << "_" << which << ".ckpt";
  return ss.str();
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(idx[r]));
  }
  return out;
}

Matrix stack(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) {
    throw Error(ErrorCode::ConfigInvalid, "batch_size must be >= 2 (batch norm)");
  }
  if (epochs < 1) {
    throw Error(ErrorCode::ConfigInvalid, "epochs must be >= 1");
  }
  if (!(tau1 > 0.0)) {
    throw Error(ErrorCode::ConfigInvalid, "tau1 must be positive");
  }
  if (!(sigma2 >= 0.0)) {
    throw Error(ErrorCode::ConfigInvalid, "sigma2 must be non-negative");
  }
  if (precompute_chunk == 0) {
    throw Error(ErrorCode::ConfigInvalid, "precompute_chunk must be positive");
  }
  loss_config().validate();
  AdamWConfig{lr_init, beta1, beta2, eps, weight_decay, 1}.validate();
}

LossConfig TrainConfig::loss_config() const {
  LossConfig l;
  l.tau2 = tau2;
  l.tau3 = tau3;
  l.lambda = lambda;
  l.intra_squared = intra_squared;
  l.use_ttc = !ablation.no_ttc;
  l.use_avc = !ablation.no_avc;
  l.intra_space1 = !ablation.no_intra_space1;
  l.intra_space2 = !ablation.no_intra_space2;
  return l;
}

std::string TrainConfig::settings_hash() const {
  Fnv1a h;
  h.update(settings_json(*this).dump());
  return h.hex();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"corpus_left", c.corpus_left.string()},
      {"corpus_right", c.corpus_right.string()},
      {"bank1", c.bank1.string()},
      {"bank2", c.bank2.string()},
      {"out_dir", c.out_dir.string()},
      {"tau1", c.tau1},
      {"tau2", c.tau2},
      {"tau3", c.tau3},
      {"sigma2", c.sigma2},
      {"lambda", c.lambda},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"lr_init", c.lr_init},
      {"seed", c.seed},
      {"beta1", c.beta1},
      {"beta2", c.beta2},
      {"eps", c.eps},
      {"weight_decay", c.weight_decay},
      {"hidden_dim", c.hidden_dim},
      {"final_relu", c.final_relu},
      {"intra_squared", c.intra_squared},
      {"precompute_chunk", c.precompute_chunk},
      {"checkpoint_every", c.checkpoint_every},
      {"consistency", std::string(to_string(c.ablation.consistency))},
      {"disable",
       {{"ttc", c.ablation.no_ttc},
        {"avc", c.ablation.no_avc},
        {"intra_space1", c.ablation.no_intra_space1},
        {"intra_space2", c.ablation.no_intra_space2},
        {"noise", c.ablation.no_noise},
        {"renorm", c.ablation.no_renorm}}},
  };
}

void apply_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) {
    throw Error(ErrorCode::ConfigInvalid, "train config must be a JSON object");
  }
  for (const auto& [key, _] : j.items()) {
    if (!known_keys().contains(key)) {
      throw Error(ErrorCode::ConfigInvalid, "unknown train config key '" + key + "'");
    }
  }
  try {
    auto path = [&](const char* key, fs::path& field) {
      if (j.contains(key)) field = j.at(key).get<std::string>();
    };
    auto num = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    path("corpus_left", c.corpus_left);
    path("corpus_right", c.corpus_right);
    path("bank1", c.bank1);
    path("bank2", c.bank2);
    path("out_dir", c.out_dir);
    num("tau1", c.tau1);
    num("tau2", c.tau2);
    num("tau3", c.tau3);
    num("sigma2", c.sigma2);
    num("lambda", c.lambda);
    num("batch_size", c.batch_size);
    num("epochs", c.epochs);
    num("lr_init", c.lr_init);
    num("seed", c.seed);
    num("beta1", c.beta1);
    num("beta2", c.beta2);
    num("eps", c.eps);
    num("weight_decay", c.weight_decay);
    num("hidden_dim", c.hidden_dim);
    num("final_relu", c.final_relu);
    num("intra_squared", c.intra_squared);
    num("precompute_chunk", c.precompute_chunk);
    num("checkpoint_every", c.checkpoint_every);
    if (j.contains("consistency")) {
      c.ablation.consistency = parse_consistency_mode(j.at("consistency").get<std::string>());
    }
    if (j.contains("disable")) {
      const auto& d = j.at("disable");
      if (!d.is_object()) {
        throw Error(ErrorCode::ConfigInvalid, "'disable' must be an object");
      }
      for (const auto& [key, _] : d.items()) {
        if (!known_disable_keys().contains(key)) {
          throw Error(ErrorCode::ConfigInvalid, "unknown disable key '" + key + "'");
        }
      }
      c.ablation.no_ttc = d.value("ttc", c.ablation.no_ttc);
      c.ablation.no_avc = d.value("avc", c.ablation.no_avc);
      c.ablation.no_intra_space1 = d.value("intra_space1", c.ablation.no_intra_space1);
      c.ablation.no_intra_space2 = d.value("intra_space2", c.ablation.no_intra_space2);
      c.ablation.no_noise = d.value("noise", c.ablation.no_noise);
      c.ablation.no_renorm = d.value("renorm", c.ablation.no_renorm);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("train config: ") + e.what());
  }
}

void apply_override(std::string_view assignment, TrainConfig& c) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorCode::ConfigInvalid, "override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) {
    value = text;
  }
  nlohmann::json patch;
  const auto dot = key.find('.');
  if (dot != std::string::npos) {
    patch[key.substr(0, dot)][key.substr(dot + 1)] = value;
  } else {
    patch[key] = value;
  }
  apply_json(patch, c);
}

Ablation ablation_row(char row) {
  Ablation a;
  switch (row) {
    case 'A': a.no_intra_space2 = true; break;
    case 'B': a.no_intra_space1 = true; break;
    case 'C': a.no_intra_space1 = a.no_intra_space2 = true; break;
    case 'D': a.no_ttc = true; break;
    case 'E': a.no_avc = true; break;
    case 'F': a.no_ttc = a.no_avc = true; break;
    case 'G': a.no_renorm = true; break;
    case 'H': a.no_renorm = a.no_noise = true; break;
    case 'I': a.consistency = ConsistencyMode::Argmax; break;
    case 'J': a.consistency = ConsistencyMode::Random; break;
    case 'K': break;
    default:
      throw Error(ErrorCode::ConfigInvalid, std::string("no ablation row '") + row + "'");
  }
  return a;
}

TrainConfig preset(std::string_view name) {
  TrainConfig c;  // defaults are the CLIP-CLAP settings
  if (name == "paper") {
    return c;
  }
  if (name == "paper-3d") {
    c.sigma2 = 0.002;
    c.lambda = 0.4;
    c.epochs = 24;
    c.batch_size = 8192;
    c.lr_init = 5e-3;
    return c;
  }
  TrainConfig s = c;
  s.batch_size = 256;
  s.epochs = 50;
  s.hidden_dim = 0;
  s.checkpoint_every = 0;
  if (name == "synthetic") {
    return s;
  }
  if (name.size() == std::string_view("ablation-A").size() && name.starts_with("ablation-")) {
    s.ablation = ablation_row(name.back());
    return s;
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names = {"paper", "paper-3d", "synthetic"};
  for (char r = 'A'; r <= 'K'; ++r) {
    names.push_back(std::string("ablation-") + r);
  }
  return names;
}

PreparedCorpus prepare(const TrainConfig& cfg) {
  const fs::path dir = cfg.out_dir / "prepared";
  Fnv1a h;
  for (const auto& p : {cfg.corpus_left, cfg.corpus_right, cfg.bank1, cfg.bank2}) {
    h.update(file_fingerprint(p));
  }
  nlohmann::json enh = {{"tau1", cfg.tau1},
                        {"consistency", std::string(to_string(cfg.ablation.consistency))},
                        {"chunk", cfg.precompute_chunk}};
  if (cfg.ablation.consistency == ConsistencyMode::Random) {
    enh["seed"] = cfg.seed;
  }
  h.update(enh.dump());
  const std::string fingerprint = h.hex();

  const fs::path names[] = {dir / "text1.emb", dir / "consistent1.emb", dir / "text2.emb", dir / "consistent2.emb"};
  const fs::path stamp = dir / "prepared.json";
  if (fs::exists(stamp)) {
    try {
      std::ifstream in(stamp);
      nlohmann::json j;
      in >> j;
      if (j.at("fingerprint").get<std::string>() == fingerprint) {
        PreparedCorpus p{load(names[0]), load(names[1]), load(names[2]), load(names[3]), fingerprint, true};
        return p;
      }
    } catch (const std::exception&) {
      // Stale or partial cache: recompute below.
    }
  }

  PairedCorpus corpus(load(cfg.corpus_left), load(cfg.corpus_right));
  require_normalized(corpus.left, "corpus_left");
  require_normalized(corpus.right, "corpus_right");
  const MemoryBank bank1(load(cfg.bank1), "memory1");
  const MemoryBank bank2(load(cfg.bank2), "memory2");

  EnhancementConfig ecfg;
  ecfg.tau1 = cfg.tau1;
  ecfg.sigma2 = cfg.sigma2;
  ecfg.seed = cfg.seed;
  ecfg.mode = cfg.ablation.consistency;
  ecfg.chunk_rows = cfg.precompute_chunk;
  EnhancementConfig ecfg2 = ecfg;
  ecfg2.seed = splitmix64(cfg.seed ^ 0xA0D10ULL);

  PreparedCorpus p{corpus.left, precompute_consistent(corpus.left, bank1, ecfg), corpus.right,
                   precompute_consistent(corpus.right, bank2, ecfg2), fingerprint, false};
  fs::create_directories(dir);
  save(p.text1, names[0]);
  save(p.consistent1, names[1]);
  save(p.text2, names[2]);
  save(p.consistent2, names[3]);
  write_text(stamp, nlohmann::json{{"fingerprint", fingerprint}, {"enhancement", enh}}.dump(2) + "\n");
  return p;
}

void to_json(nlohmann::json& j, const EpochLog& e) {
  j = nlohmann::json{{"epoch", e.epoch}, {"L", e.loss},         {"L_ttc", e.ttc},
                     {"L_avc", e.avc},   {"L_intra", e.intra}, {"lr", e.lr}};
}

TrainRun train(const TrainConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const PreparedCorpus data = prepare(cfg);
  const std::size_t n = data.text1.rows();
  if (n < 2) {
    throw Error(ErrorCode::ConfigInvalid, "need at least 2 training texts");
  }
  if (data.text1.dim() != data.text2.dim()) {
    throw Error(ErrorCode::DimMismatch, "both spaces must share a dimension to be projected together, got " +
                                            std::to_string(data.text1.dim()) + " and " +
                                            std::to_string(data.text2.dim()));
  }

  const Matrix t1 = data.text1.to_matrix();
  const Matrix c1 = data.consistent1.to_matrix();
  const Matrix t2 = data.text2.to_matrix();
  const Matrix c2 = data.consistent2.to_matrix();

  const std::size_t full = n / cfg.batch_size;
  const std::size_t tail = n % cfg.batch_size;
  const std::size_t batches = full + (tail >= 2 ? 1 : 0);
  const std::size_t batch_rows = std::min(cfg.batch_size, n);

  AdamWConfig acfg{cfg.lr_init, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay,
                   static_cast<std::uint64_t>(cfg.epochs * std::max<std::size_t>(batches, 1))};
  const Rng root(cfg.seed);
  auto dims_for = [&](std::size_t in) {
    return ProjectorDims{in, cfg.hidden_dim == 0 ? 2 * in : cfg.hidden_dim, in};
  };
  TrainRun run;
  run.f1 = init_projector(dims_for(t1.cols()), splitmix64(cfg.seed ^ 0xF1ULL), cfg.final_relu);
  run.f2 = init_projector(dims_for(t2.cols()), splitmix64(cfg.seed ^ 0xF2ULL), cfg.final_relu);
  run.f1.round_to_storage();
  run.f2.round_to_storage();
  AdamW opt1(acfg);
  AdamW opt2(acfg);
  Rng shuffle_rng = root.fork(1);
  Rng noise_rng = root.fork(2);
  const LossConfig lcfg = cfg.loss_config();
  const double sigma2 = cfg.ablation.no_noise ? 0.0 : cfg.sigma2;
  const bool renorm = !cfg.ablation.no_renorm;
  const std::string hash = cfg.settings_hash() + data.fingerprint;

  std::ofstream log(cfg.out_dir / "train_log.jsonl", std::ios::trunc);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    EpochLog rec;
    rec.epoch = epoch;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * batch_rows;
      const std::size_t end = std::min(n, begin + batch_rows);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);

      const Matrix x_t1 = add_noise(gather_rows(t1, idx), sigma2, noise_rng, renorm);
      const Matrix x_c1 = add_noise(gather_rows(c1, idx), sigma2, noise_rng, renorm);
      const Matrix x_t2 = add_noise(gather_rows(t2, idx), sigma2, noise_rng, renorm);
      const Matrix x_c2 = add_noise(gather_rows(c2, idx), sigma2, noise_rng, renorm);

      // Both inputs of a projector share one batch-norm batch.
      const auto rows = static_cast<Eigen::Index>(idx.size());
      ForwardResult y1 = forward(run.f1, stack(x_t1, x_c1), Mode::Train);
      ForwardResult y2 = forward(run.f2, stack(x_t2, x_c2), Mode::Train);
      const BatchEmbeddings emb{y1.output.topRows(rows), y1.output.bottomRows(rows), y2.output.topRows(rows),
                                y2.output.bottomRows(rows)};
      const TotalLoss loss = total_loss(emb, lcfg);
      if (!std::isfinite(loss.total)) {
        std::ostringstream ss;
        ss << "epoch " << epoch << " batch " << b << " rows [";
        for (std::size_t k = 0; k < idx.size(); ++k) {
          ss << (k ? "," : "") << idx[k];
        }
        ss << "]";
        throw Error(ErrorCode::NonFiniteLoss, ss.str());
      }
      const ProjectorGrads g1 = backward(run.f1, y1.cache, stack(loss.grads.t_hat_I, loss.grads.v_hat_I));
      const ProjectorGrads g2 = backward(run.f2, y2.cache, stack(loss.grads.t_hat_A, loss.grads.a_hat_A));
      rec.lr = lr_at(opt1.steps_taken(), acfg);
      opt1.step(param_slots(run.f1, g1), rec.lr);
      opt2.step(param_slots(run.f2, g2), rec.lr);
      run.f1.round_to_storage();
      run.f2.round_to_storage();

      rec.loss += loss.total;
      rec.ttc += loss.ttc;
      rec.avc += loss.avc;
      rec.intra += loss.intra;
    }
    const double inv = batches ? 1.0 / static_cast<double>(batches) : 0.0;
    rec.loss *= inv;
    rec.ttc *= inv;
    rec.avc *= inv;
    rec.intra *= inv;
    run.epochs.push_back(rec);
    log << nlohmann::json(rec).dump() << '\n';
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      save_checkpoint(cfg.out_dir / ckpt_name("f1", epoch), run.f1, opt1.steps_taken(), hash);
      save_checkpoint(cfg.out_dir / ckpt_name("f2", epoch), run.f2, opt2.steps_taken(), hash);
    }
  }
  log.flush();
  if (!log) {
    throw Error(ErrorCode::IoFailure, "cannot write train_log.jsonl");
  }

  run.steps = opt1.steps_taken();
  run.f1_checkpoint = cfg.out_dir / "f1.ckpt";
  run.f2_checkpoint = cfg.out_dir / "f2.ckpt";
  save_checkpoint(run.f1_checkpoint, run.f1, run.steps, hash);
  save_checkpoint(run.f2_checkpoint, run.f2, run.steps, hash);

  nlohmann::json manifest;
  manifest["command"] = "train";
  manifest["config"] = cfg;
  manifest["settings_hash"] = cfg.settings_hash();
  manifest["inputs"] = {{"corpus_left", file_fingerprint(cfg.corpus_left)},
                        {"corpus_right", file_fingerprint(cfg.corpus_right)},
                        {"bank1", file_fingerprint(cfg.bank1)},
                        {"bank2", file_fingerprint(cfg.bank2)}};
  manifest["prepared_fingerprint"] = data.fingerprint;
  manifest["steps"] = run.steps;
  write_text(cfg.out_dir / "manifest.json", manifest.dump(2) + "\n");
  return run;
}

EmbeddingMatrix infer(const ProjectorParams& params, const EmbeddingMatrix& inputs) {
  if (inputs.dim() != params.dims.in) {
    throw Error(ErrorCode::DimMismatch, "checkpoint expects dim " + std::to_string(params.dims.in) + ", got " +
                                            std::to_string(inputs.dim()));
  }
  if (inputs.empty()) {
    return EmbeddingMatrix::empty_of_dim(params.dims.out);
  }
  return EmbeddingMatrix::from_matrix(forward_eval(params, inputs.to_matrix()), true, inputs.ids());
}

EmbeddingMatrix infer(const fs::path& checkpoint, const EmbeddingMatrix& inputs) {
  return infer(load_checkpoint(checkpoint).params, inputs);
}

}  // namespace cmcr
