#include "cmcr/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmcr/checkpoint.hpp"
#include "cmcr/embed_store.hpp"
#include "cmcr/error.hpp"
#include "cmcr/eval.hpp"
#include "cmcr/experiment.hpp"
#include "cmcr/hash.hpp"
#include "cmcr/semantic_enhancement.hpp"
#include "cmcr/synth.hpp"
#include "cmcr/trainer.hpp"

namespace cmcr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Context {
  std::vector<std::string> argv;
  std::ostream& out;
  std::ostream& err;
  int verbosity = 0;

  void log(const std::string& line) const {
    if (verbosity > 0) {
      err << line << '\n';
    }
  }
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) {
    throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  }
}

fs::path manifest_for(const fs::path& output) {
  fs::path p = output;
  p += ".manifest.json";
  return p;
}

void write_manifest(const Context& ctx, const fs::path& where, const std::string& command, const json& config,
                    const std::map<std::string, fs::path>& inputs) {
  json m;
  m["command"] = command;
  m["argv"] = ctx.argv;
  m["config"] = config;
  json in = json::object();
  for (const auto& [name, path] : inputs) {
    in[name] = {{"path", path.string()}, {"fnv1a", file_fingerprint(path)}};
  }
  m["inputs"] = in;
  write_json_file(where, m);
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CMCR_SEED");
  if (s == nullptr || *s == '\0') {
    return std::nullopt;
  }
  std::uint64_t v = 0;
  std::istringstream in(s);
  if (!(in >> v) || !in.eof()) {
    throw Error(ErrorCode::ConfigInvalid, std::string("CMCR_SEED is not an unsigned integer: '") + s + "'");
  }
  return v;
}

std::vector<std::size_t> read_indices(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  }
  std::vector<std::size_t> v;
  std::string tok;
  while (in >> tok) {
    std::size_t pos = 0;
    unsigned long long x = 0;
    try {
      x = std::stoull(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || tok.front() == '-') {
      throw Error(ErrorCode::ConfigInvalid, path.string() + ": bad index '" + tok + "'");
    }
    v.push_back(static_cast<std::size_t>(x));
  }
  return v;
}

bool parse_flag(const std::string& s, bool& v) {
  if (s == "1" || s == "true") {
    v = true;
    return true;
  }
  if (s == "0" || s == "false") {
    v = false;
    return true;
  }
  return false;
}

// has_gt,iou,confidence per line; an optional header line is skipped.
std::vector<DetectionRecord> read_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  }
  std::vector<DetectionRecord> recs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 3) {
      throw Error(ErrorCode::ConfigInvalid, where + ": expected 3 columns");
    }
    DetectionRecord r;
    if (!parse_flag(cells[0], r.has_gt)) {
      if (lineno == 1 && recs.empty()) {
        continue;
      }
      throw Error(ErrorCode::ConfigInvalid, where + ": has_gt must be 0/1");
    }
    try {
      std::size_t p1 = 0;
      std::size_t p2 = 0;
      r.iou = std::stod(cells[1], &p1);
      r.confidence = std::stod(cells[2], &p2);
      if (p1 != cells[1].size() || p2 != cells[2].size()) {
        throw std::invalid_argument("trailing");
      }
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigInvalid, where + ": bad number");
    }
    recs.push_back(r);
  }
  return recs;
}

EmbeddingMatrix read_any_matrix(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  }
  char head[8] = {};
  in.read(head, sizeof head);
  if (in.gcount() == 8 && std::equal(head, head + 8, "CMCREMB1")) {
    return load(path);
  }
  in.clear();
  in.seekg(0);
  return parse_text_matrix(in);
}

// Resolution order: preset, config file, CMCR_SEED, --set overrides.
TrainConfig resolve_train_config(const std::string& preset_name, const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
  TrainConfig cfg = preset(preset_name);
  if (!config_path.empty()) {
    apply_json(read_json_file(config_path), cfg);
  }
  if (const auto s = env_seed()) {
    cfg.seed = *s;
  }
  for (const auto& o : overrides) {
    apply_override(o, cfg);
  }
  return cfg;
}

SynthWorld world_from(const std::string& world_dir, const std::string& synth_config) {
  if (!world_dir.empty()) {
    return load_world(world_dir);
  }
  SynthConfig sc;
  if (!synth_config.empty()) {
    read_json_file(synth_config).get_to(sc);
  }
  return generate(sc);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"cmcr: connect two contrastive embedding spaces through a shared modality"};
  app.name("cmcr");
  app.require_subcommand(1);

  bool json_errors = false;
  int verbosity = 0;
  app.add_flag("--json-errors", json_errors, "Report domain errors as one JSON object on stderr");
  app.add_flag("-v,--verbose", verbosity, "More log lines on stderr");

  // convert
  auto* convert = app.add_subcommand("convert", "Text or CMCR-EMB matrix to CMCR-EMB");
  std::string conv_in;
  std::string conv_out;
  bool conv_norm = false;
  convert->add_option("--input", conv_in, "Whitespace-separated rows or a CMCR-EMB file")->required();
  convert->add_option("--out", conv_out, "Output .emb path")->required();
  convert->add_flag("--normalize", conv_norm, "L2-normalize every row");

  // enhance
  auto* enhance = app.add_subcommand("enhance", "Precompute memory-consistent counterparts of texts");
  std::string enh_texts;
  std::string enh_bank;
  std::string enh_out;
  std::string enh_mode = "softmax";
  EnhancementConfig enh;
  enhance->add_option("--texts", enh_texts)->required();
  enhance->add_option("--bank", enh_bank)->required();
  enhance->add_option("--out", enh_out)->required();
  enhance->add_option("--tau1", enh.tau1)->capture_default_str();
  enhance->add_option("--mode", enh_mode)->check(CLI::IsMember({"softmax", "argmax", "random"}))->capture_default_str();
  enhance->add_option("--seed", enh.seed)->capture_default_str();
  enhance->add_option("--chunk", enh.chunk_rows)->capture_default_str();
  enhance->add_option("--top-k", enh.top_k)->capture_default_str();
  enhance->add_option("--threads", enh.threads)->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic two-space world");
  std::string synth_cfg;
  std::string synth_out;
  synth->add_option("--config", synth_cfg, "JSON with SynthConfig fields");
  synth->add_option("--out", synth_out)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train both projectors");
  std::string tr_config;
  std::string tr_preset = "paper";
  std::string tr_world;
  std::string tr_out;
  double tr_fraction = 0.5;
  std::vector<std::string> tr_set;
  train_cmd->add_option("--config", tr_config, "JSON with TrainConfig fields");
  train_cmd->add_option("--preset", tr_preset)->capture_default_str();
  train_cmd->add_option("--world", tr_world, "Synthetic world dir; split it, train and evaluate");
  train_cmd->add_option("--fraction", tr_fraction, "Training share of the world")->capture_default_str();
  train_cmd->add_option("--out", tr_out, "Output dir (overrides out_dir)");
  train_cmd->add_option("--set", tr_set, "key=value override")->allow_extra_args(false);

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Project embeddings with a trained projector");
  std::string inf_ckpt;
  std::string inf_in;
  std::string inf_out;
  infer_cmd->add_option("--ckpt", inf_ckpt)->required();
  infer_cmd->add_option("--inputs", inf_in)->required();
  infer_cmd->add_option("--out", inf_out)->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Zero-shot metrics");
  eval_cmd->require_subcommand(1);
  auto* ev_ret = eval_cmd->add_subcommand("retrieval", "mAP and R@K of queries against a gallery");
  std::string ev_q;
  std::string ev_g;
  std::string ev_gt;
  std::string ev_report;
  ev_ret->add_option("--queries", ev_q)->required();
  ev_ret->add_option("--gallery", ev_g)->required();
  ev_ret->add_option("--gt", ev_gt, "Relevant gallery row per query (default: identity)");
  ev_ret->add_option("--report", ev_report)->required();

  auto* ev_cf = eval_cmd->add_subcommand("counterfactual", "AP and Max-F1 of detection records");
  std::string cf_records;
  std::string cf_report;
  CounterfactualConfig cf_cfg;
  ev_cf->add_option("--records", cf_records, "CSV has_gt,iou,confidence")->required();
  ev_cf->add_option("--gamma", cf_cfg.gamma)->capture_default_str();
  ev_cf->add_option("--report", cf_report)->required();

  auto* ev_cls = eval_cmd->add_subcommand("classify", "Top-k zero-shot classification");
  std::string cls_samples;
  std::string cls_protos;
  std::string cls_labels;
  std::string cls_report;
  std::vector<std::size_t> cls_k = {1, 3, 5};
  ev_cls->add_option("--samples", cls_samples)->required();
  ev_cls->add_option("--protos", cls_protos)->required();
  ev_cls->add_option("--labels", cls_labels)->required();
  ev_cls->add_option("--k", cls_k)->capture_default_str();
  ev_cls->add_option("--report", cls_report)->required();

  auto* ev_gap = eval_cmd->add_subcommand("gap", "Distance between the row means of two matrices");
  std::string gap_x;
  std::string gap_y;
  std::string gap_report;
  ev_gap->add_option("--x", gap_x)->required();
  ev_gap->add_option("--y", gap_y)->required();
  ev_gap->add_option("--report", gap_report)->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Ablation suites on a synthetic world");
  std::string ab_suite;
  std::string ab_world;
  std::string ab_synth;
  std::string ab_out;
  std::string ab_preset = "synthetic";
  std::vector<std::string> ab_set;
  std::vector<std::uint64_t> ab_seeds = {0};
  std::vector<double> ab_sigma = kNoiseSweep;
  double ab_fraction = 0.5;
  ablate->add_option("--suite", ab_suite)->required()->check(CLI::IsMember({"table5", "noise"}));
  ablate->add_option("--world", ab_world, "World dir (default: generate the default world)");
  ablate->add_option("--synth-config", ab_synth, "SynthConfig JSON used when --world is absent");
  ablate->add_option("--out", ab_out)->required();
  ablate->add_option("--preset", ab_preset)->capture_default_str();
  ablate->add_option("--set", ab_set, "key=value override of the base config");
  ablate->add_option("--seeds", ab_seeds)->capture_default_str();
  ablate->add_option("--sigma2", ab_sigma, "Noise values of the noise suite")->capture_default_str();
  ablate->add_option("--fraction", ab_fraction)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) {
      return kExitOk;
    }
    err << app.help();
    return kExitUsage;
  }

  Context ctx{std::vector<std::string>(argv, argv + argc), out, err, verbosity};

  auto fail = [&](std::string_view code, const std::string& message) {
    if (json_errors) {
      err << json{{"error", code}, {"message", message}}.dump() << '\n';
    } else {
      err << "cmcr: " << message << '\n';
    }
    return kExitDomain;
  };

  try {
    if (convert->parsed()) {
      EmbeddingMatrix m = read_any_matrix(conv_in);
      if (conv_norm) {
        m = normalize(m);
      }
      save(m, conv_out);
      write_manifest(ctx, manifest_for(conv_out), "convert", {{"normalize", conv_norm}}, {{"input", conv_in}});
      out << json{{"rows", m.rows()}, {"dim", m.dim()}, {"normalized", m.normalized()}}.dump() << '\n';
    } else if (enhance->parsed()) {
      enh.mode = parse_consistency_mode(enh_mode);
      if (const auto s = env_seed()) {
        enh.seed = *s;
      }
      enh.validate();
      const EmbeddingMatrix texts = load(enh_texts);
      require_normalized(texts, "texts");
      const MemoryBank bank(load(enh_bank), fs::path(enh_bank).stem().string());
      const EmbeddingMatrix c = precompute_consistent(texts, bank, enh);
      save(c, enh_out);
      write_manifest(ctx, manifest_for(enh_out), "enhance",
                     {{"tau1", enh.tau1},
                      {"mode", enh_mode},
                      {"seed", enh.seed},
                      {"chunk", enh.chunk_rows},
                      {"top_k", enh.top_k}},
                     {{"texts", enh_texts}, {"bank", enh_bank}});
      out << json{{"rows", c.rows()}, {"dim", c.dim()}}.dump() << '\n';
    } else if (synth->parsed()) {
      SynthConfig sc;
      if (!synth_cfg.empty()) {
        read_json_file(synth_cfg).get_to(sc);
      }
      if (const auto s = env_seed()) {
        sc.seed = *s;
      }
      sc.validate();
      const SynthWorld w = generate(sc);
      save_world(w, synth_out);
      out << json{{"fingerprint", w.fingerprint()}, {"n_items", sc.n_items}}.dump() << '\n';
    } else if (train_cmd->parsed()) {
      TrainConfig cfg = resolve_train_config(tr_preset, tr_config, tr_set);
      if (!tr_out.empty()) {
        cfg.out_dir = tr_out;
      }
      if (!tr_world.empty()) {
        const SynthWorld w = load_world(tr_world);
        const SplitResult sp = split(w, tr_fraction, w.config.seed);
        cfg = attach_split(sp, cfg.out_dir / "data", cfg);
        cfg.validate();
        const ExperimentResult r = run_experiment(w, sp, cfg, tr_preset);
        json report = r;
        report["world_fingerprint"] = w.fingerprint();
        report["train_fraction"] = tr_fraction;
        report["random_R@1"] = 100.0 / static_cast<double>(sp.eval_items.size());
        write_json_file(cfg.out_dir / "report.json", report);
        for (const auto& e : r.run.epochs) {
          ctx.log(json(e).dump());
        }
        out << report.dump() << '\n';
      } else {
        cfg.validate();
        const TrainRun r = train(cfg);
        for (const auto& e : r.epochs) {
          ctx.log(json(e).dump());
        }
        out << json{{"f1", r.f1_checkpoint.string()},
                    {"f2", r.f2_checkpoint.string()},
                    {"steps", r.steps},
                    {"final", r.epochs.empty() ? json() : json(r.epochs.back())}}
                   .dump()
            << '\n';
      }
    } else if (infer_cmd->parsed()) {
      const EmbeddingMatrix in = load(inf_in);
      const EmbeddingMatrix y = infer(fs::path(inf_ckpt), in);
      save(y, inf_out);
      write_manifest(ctx, manifest_for(inf_out), "infer", json::object(), {{"ckpt", inf_ckpt}, {"inputs", inf_in}});
      out << json{{"rows", y.rows()}, {"dim", y.dim()}}.dump() << '\n';
    } else if (ev_ret->parsed()) {
      const EmbeddingMatrix q = load(ev_q);
      const EmbeddingMatrix g = load(ev_g);
      std::vector<std::size_t> gt;
      std::map<std::string, fs::path> inputs{{"queries", ev_q}, {"gallery", ev_g}};
      if (ev_gt.empty()) {
        gt.resize(q.rows());
        for (std::size_t i = 0; i < gt.size(); ++i) {
          gt[i] = i;
        }
      } else {
        gt = read_indices(ev_gt);
        inputs["gt"] = ev_gt;
      }
      const DirectionMetrics m = retrieval(q, g, gt);
      write_json_file(ev_report, json(m));
      write_manifest(ctx, manifest_for(ev_report), "eval retrieval", json::object(), inputs);
      out << json(m).dump() << '\n';
    } else if (ev_cf->parsed()) {
      const auto recs = read_records(cf_records);
      const CounterfactualResult r = counterfactual_metrics(recs, cf_cfg);
      const json j{{"AP", r.ap}, {"Max-F1", r.max_f1}, {"best_delta", r.best_delta}, {"records", recs.size()}};
      write_json_file(cf_report, j);
      write_manifest(ctx, manifest_for(cf_report), "eval counterfactual", {{"gamma", cf_cfg.gamma}},
                     {{"records", cf_records}});
      out << j.dump() << '\n';
    } else if (ev_cls->parsed()) {
      const EmbeddingMatrix s = load(cls_samples);
      const EmbeddingMatrix p = load(cls_protos);
      const auto labels = read_indices(cls_labels);
      const TopKReport r = zero_shot_classify(s, p, labels, cls_k);
      json acc = json::object();
      for (std::size_t i = 0; i < r.ks.size(); ++i) {
        acc["top" + std::to_string(r.ks[i])] = r.accuracy[i];
      }
      write_json_file(cls_report, acc);
      write_manifest(ctx, manifest_for(cls_report), "eval classify", {{"k", cls_k}},
                     {{"samples", cls_samples}, {"protos", cls_protos}, {"labels", cls_labels}});
      out << acc.dump() << '\n';
    } else if (ev_gap->parsed()) {
      const double g = modality_gap(load(gap_x), load(gap_y));
      const json j{{"gap", g}};
      write_json_file(gap_report, j);
      write_manifest(ctx, manifest_for(gap_report), "eval gap", json::object(), {{"x", gap_x}, {"y", gap_y}});
      out << j.dump() << '\n';
    } else if (ablate->parsed()) {
      TrainConfig base = resolve_train_config(ab_preset, "", ab_set);
      base.validate();
      const SynthWorld w = world_from(ab_world, ab_synth);
      SuiteOptions opts;
      opts.train_fraction = ab_fraction;
      opts.seeds = ab_seeds;
      if (const auto s = env_seed(); s && ab_seeds.size() == 1) {
        opts.seeds = {*s};
      }
      const fs::path dir = ab_out;
      fs::create_directories(dir);
      json report = ab_suite == "table5" ? ablate_table5(w, base, dir, opts) : ablate_noise(w, base, dir, opts, ab_sigma);
      json cfg = base;
      cfg["suite"] = ab_suite;
      cfg["world"] = w.config;
      cfg["seeds"] = opts.seeds;
      cfg["train_fraction"] = opts.train_fraction;
      std::map<std::string, fs::path> inputs;
      if (!ab_world.empty()) {
        inputs["world_manifest"] = fs::path(ab_world) / "manifest.json";
      }
      write_manifest(ctx, dir / "manifest.json", "ablate", cfg, inputs);
      out << json{{"suite", ab_suite}, {"report", (dir / (ab_suite + ".json")).string()}}.dump() << '\n';
    }
  } catch (const Error& e) {
    return fail(to_string(e.code()), e.what());
  } catch (const json::exception& e) {
    return fail("ConfigInvalid", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("IoFailure", e.what());
  } catch (const std::exception& e) {
    return fail("Internal", e.what());
  }
  return kExitOk;
}

}  // namespace cmcr::cli
