// Copyright 2026 The moelink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "moelink/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "moelink/checkpoint.hpp"
#include "moelink/config.hpp"
#include "moelink/data.hpp"
#include "moelink/dme.hpp"
#include "moelink/error.hpp"
#include "moelink/eval.hpp"
#include "moelink/gradcheck.hpp"
#include "moelink/training.hpp"

namespace moelink::cli {

namespace fs = std::filesystem;

namespace {

// Flags every subcommand accepts.
struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir;
  int jobs = 1;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
};

void AddCommon(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration file (JSON)")
      ->check(CLI::ExistingFile);
  c.seed_opt = app->add_option("--seed", c.seed,
                               "Seed for all randomness (required unless the "
                               "config sets one)");
  c.out_opt = app->add_option("--out-dir", c.out_dir, "Directory for outputs");
  c.jobs_opt = app->add_option("--jobs", c.jobs, "Parallelism cap")
                   ->check(CLI::PositiveNumber);
}

bool ConfigHasSeed(const std::string& path) {
  std::ifstream in(path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception&) {
    return false;  // LoadFile reports the parse error
  }
  return doc.is_object() && doc.contains("seed");
}

// Config file (or `base`), then flag overrides.
RunConfig Resolve(const Common& c, const RunConfig* base = nullptr) {
  RunConfig cfg = base ? *base : RunConfig();
  bool seeded = base != nullptr;
  if (!c.config.empty()) {
    cfg = RunConfig::LoadFile(c.config, cfg);
    seeded = seeded || ConfigHasSeed(c.config);
  }
  if (c.seed_opt->count() > 0) {
    cfg.seed = c.seed;
    seeded = true;
  }
  if (!seeded) {
    throw CLI::RequiredError("--seed (or a config file that sets \"seed\")");
  }
  if (c.out_opt->count() > 0) cfg.out_dir = c.out_dir;
  if (c.jobs_opt->count() > 0) cfg.jobs = c.jobs;
  cfg.Validate();
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::string OutPath(const RunConfig& cfg, const std::string& name) {
  fs::path p(name);
  if (p.is_absolute()) return p.string();
  return (fs::path(cfg.out_dir) / p).string();
}

void WriteJson(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

const std::string& RequirePath(const std::string& p, const char* what) {
  if (p.empty()) throw ArgumentError(std::string("no ") + what + " path configured");
  return p;
}

DatasetSplit LoadOptional(const std::string& path, SplitName name) {
  if (path.empty()) return DatasetSplit(name, {});
  return LoadDataset(path, name);
}

std::vector<std::string> SplitCsv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string Fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

// Training overrides shared by train, ablate and grid.
struct TrainFlags {
  int epochs = 0;
  double lr = 0;
  int batch = 0;
  int patience = 0;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* batch_opt = nullptr;
  CLI::Option* patience_opt = nullptr;

  void Add(CLI::App* app) {
    epochs_opt = app->add_option("--epochs", epochs, "Training epochs")
                     ->check(CLI::NonNegativeNumber);
    lr_opt = app->add_option("--learning-rate", lr, "AdamW learning rate");
    batch_opt = app->add_option("--batch-size", batch, "Mini-batch size")
                    ->check(CLI::PositiveNumber);
    patience_opt = app->add_option("--patience", patience,
                                   "Early-stopping patience (0 = off)")
                       ->check(CLI::NonNegativeNumber);
  }
  void Apply(RunConfig& cfg) const {
    if (epochs_opt->count()) cfg.epochs = epochs;
    if (lr_opt->count()) cfg.learning_rate = lr;
    if (batch_opt->count()) cfg.batch_size = batch;
    if (patience_opt->count()) cfg.patience = patience;
    cfg.Validate();
  }
};

// --- subcommands ---------------------------------------------------------------

int CmdPrepare(const Common& c, const std::string& manifest_path,
               double fraction, bool fraction_set, std::ostream& out) {
  RunConfig cfg = Resolve(c);
  EntityCatalog catalog = BuildEntityCatalog(RequirePath(cfg.catalog_path, "catalog"));
  std::optional<DatasetManifest> manifest;
  if (!manifest_path.empty()) manifest = DatasetManifest::Load(manifest_path);

  nlohmann::json report;
  report["catalog"] = {{"entities", catalog.size()},
                       {"entities_with_image", catalog.with_image()},
                       {"image_coverage", catalog.image_coverage()}};
  bool pass = true;
  if (manifest) {
    auto check = [&](const char* key, const std::optional<std::int64_t>& want,
                     std::int64_t got) {
      if (want && *want != got) {
        pass = false;
        report["failures"].push_back(std::string(key) + ": expected " +
                                     std::to_string(*want) + ", got " +
                                     std::to_string(got));
      }
    };
    check("entities", manifest->entities,
          static_cast<std::int64_t>(catalog.size()));
    check("entities_with_image", manifest->entities_with_image,
          static_cast<std::int64_t>(catalog.with_image()));
  }
  std::int64_t img_total = 0;
  const std::pair<SplitName, const std::string*> splits[] = {
      {SplitName::kTrain, &cfg.train_path},
      {SplitName::kValid, &cfg.valid_path},
      {SplitName::kTest, &cfg.test_path}};
  std::optional<DatasetSplit> train;
  for (const auto& [name, path] : splits) {
    if (path->empty()) continue;
    DatasetSplit split = LoadDataset(*path, name);
    StatsSpec spec;
    if (manifest) {
      auto it = manifest->splits.find(ToString(name));
      if (it != manifest->splits.end()) spec = it->second;
    }
    StatsReport r = ValidateDataset(split, catalog, spec);
    pass = pass && r.pass;
    img_total += r.mentions_with_image;
    report["splits"][ToString(name)] = r.ToJson();
    out << ToString(name) << ": " << r.mentions << " mentions, "
        << r.mentions_with_image << " with image, " << r.unresolved_gold
        << " unresolved" << (r.pass ? "" : "  [FAIL]") << "\n";
    if (name == SplitName::kTrain) train = std::move(split);
  }
  if (manifest && manifest->mentions_with_image &&
      *manifest->mentions_with_image != img_total) {
    pass = false;
    report["failures"].push_back("mentions_with_image: expected " +
                                 std::to_string(*manifest->mentions_with_image) +
                                 ", got " + std::to_string(img_total));
  }
  if (fraction_set) {
    if (!train) throw ArgumentError("--fraction needs a training split");
    DatasetSplit sub = SubsampleLowResource(*train, fraction, cfg.seed);
    const std::string path = OutPath(cfg, "train.lowres.jsonl");
    SaveDataset(sub, path);
    report["subsample"] = {{"fraction", fraction},
                           {"mentions", sub.size()},
                           {"path", path}};
    out << "subsample: " << sub.size() << " mentions -> " << path << "\n";
  }
  report["pass"] = pass;
  WriteJson(OutPath(cfg, "prepare_report.json"), report);
  out << (pass ? "statistics match" : "statistics MISMATCH") << "\n";
  return pass ? kExitOk : kExitDomain;
}

std::unique_ptr<dme::LlmBackend> MakeBackend(const RunConfig& cfg) {
  if (cfg.backend == "http") {
    return std::make_unique<dme::HttpBackend>(cfg.endpoint, cfg.model,
                                              cfg.backend_seed);
  }
  return std::make_unique<dme::MockBackend>(cfg.backend_seed);
}

int CmdEnhance(const Common& c, const std::string& in_path,
               const std::string& out_name, const std::string& kb_flag,
               const std::string& cache_flag, std::ostream& out) {
  RunConfig cfg = Resolve(c);
  if (!kb_flag.empty()) cfg.kb_path = kb_flag;
  if (!cache_flag.empty()) cfg.cache_path = cache_flag;
  DatasetSplit split = LoadDataset(in_path, SplitName::kTrain);
  dme::FixtureKb kb = dme::FixtureKb::Load(RequirePath(cfg.kb_path, "kb"));
  auto backend = MakeBackend(cfg);
  dme::EnhancementCache cache;
  if (!cfg.cache_path.empty() && fs::exists(cfg.cache_path)) {
    cache.Load(cfg.cache_path);
  }
  dme::EnhanceOptions opts;
  opts.separator = cfg.separator;
  opts.max_inflight = c.jobs_opt->count() > 0
                          ? std::min(cfg.max_inflight, cfg.jobs)
                          : cfg.max_inflight;
  opts.max_error_fraction = cfg.max_error_fraction;
  opts.retry.attempts = cfg.retry_attempts;
  opts.retry.base_delay = std::chrono::milliseconds(cfg.retry_base_ms);
  dme::EnhancementReport report;
  DatasetSplit enhanced = dme::EnhanceSplit(split, kb, *backend, cache, opts, &report);
  const std::string out_path = OutPath(cfg, out_name);
  SaveDataset(enhanced, out_path);
  WriteJson(OutPath(cfg, "enhancement_report.json"), report.ToJson());
  if (!cfg.cache_path.empty()) cache.Save(cfg.cache_path);
  out << "enhanced " << report.enhanced << "/" << report.total
      << " mentions (cache hits " << report.cache_hits << ", fallbacks "
      << report.fallbacks << ", errors " << report.errors << ") -> "
      << out_path << "\n";
  return kExitOk;
}

int CmdTrain(const Common& c, const TrainFlags& tf, std::ostream& out) {
  RunConfig cfg = Resolve(c);
  tf.Apply(cfg);
  EntityCatalog catalog = BuildEntityCatalog(RequirePath(cfg.catalog_path, "catalog"));
  DatasetSplit train = LoadDataset(RequirePath(cfg.train_path, "train"), SplitName::kTrain);
  DatasetSplit valid = LoadOptional(cfg.valid_path, SplitName::kValid);

  const std::string log_path = OutPath(cfg, "train_log.jsonl");
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path);
  training::TrainHooks hooks;
  hooks.on_epoch = [&](const training::EpochRecord& r) {
    log << r.ToJson().dump() << "\n";
    log.flush();
    out << "epoch " << r.epoch << "  loss " << Fixed(r.train_loss);
    if (r.val_mrr) out << "  val_mrr " << Fixed(*r.val_mrr);
    out << "\n";
  };
  auto result = training::Train(cfg, train, valid, catalog, hooks);
  const std::string ck = OutPath(cfg, "model.ckpt");
  SaveCheckpoint(result.model.params(), cfg, ck);
  cfg.SaveFile(OutPath(cfg, "config.json"));
  out << "best epoch " << result.best_epoch;
  if (result.best_val_mrr) out << " (val_mrr " << Fixed(*result.best_val_mrr) << ")";
  out << "; checkpoint " << ck << "\n";
  return kExitOk;
}

int CmdEval(const Common& c, const std::string& checkpoint,
            const std::string& split_name, const std::string& candidates,
            std::ostream& out) {
  Checkpoint ck = ReadCheckpoint(checkpoint);
  // Without --config the checkpoint's own configuration is the base.
  RunConfig cfg = Resolve(c, c.config.empty() ? &ck.config : nullptr);
  ModelParams params = LoadCheckpoint(checkpoint, cfg);
  Model model(cfg, std::move(params));
  EntityCatalog catalog = BuildEntityCatalog(RequirePath(cfg.catalog_path, "catalog"));
  const SplitName which = ParseSplitName(split_name);
  const std::string& path = which == SplitName::kTrain   ? cfg.train_path
                            : which == SplitName::kValid ? cfg.valid_path
                                                         : cfg.test_path;
  DatasetSplit split = LoadDataset(RequirePath(path, split_name.c_str()), which);
  eval::CandidateMap cands;
  eval::EvalOptions opts;
  opts.jobs = cfg.jobs;
  if (!candidates.empty()) {
    cands = eval::LoadCandidates(candidates);
    opts.candidates = &cands;
  }
  auto ev = eval::EvaluateSplit(model, split, catalog, opts);
  eval::WriteMetrics(ev.report, OutPath(cfg, "metrics_" + split_name + ".json"));
  eval::WritePredictions(ev.results,
                         OutPath(cfg, "predictions_" + split_name + ".jsonl"));
  out << split_name << ": MRR " << Fixed(ev.report.mrr) << "  H@1 "
      << Fixed(ev.report.hits1) << "  H@3 " << Fixed(ev.report.hits3)
      << "  H@5 " << Fixed(ev.report.hits5) << "  (n=" << ev.report.n_mentions
      << ")\n";
  return kExitOk;
}

int CmdAblate(const Common& c, const TrainFlags& tf, const std::string& toggles,
              std::ostream& out) {
  RunConfig cfg = Resolve(c);
  tf.Apply(cfg);
  std::vector<std::string> list =
      toggles.empty() ? std::vector<std::string>{"L_T", "L_V", "L_C", "L_O",
                                                 "IntraMoE-T", "IntraMoE-V",
                                                 "InterMoE"}
                      : SplitCsv(toggles);
  for (const auto& t : list) ApplyToggle(cfg, t);  // reject unknown names early
  EntityCatalog catalog = BuildEntityCatalog(RequirePath(cfg.catalog_path, "catalog"));
  DatasetSplit train = LoadDataset(RequirePath(cfg.train_path, "train"), SplitName::kTrain);
  DatasetSplit valid = LoadOptional(cfg.valid_path, SplitName::kValid);
  DatasetSplit test = cfg.test_path.empty()
                          ? LoadDataset(RequirePath(cfg.valid_path, "valid"),
                                        SplitName::kValid)
                          : LoadDataset(cfg.test_path, SplitName::kTest);
  auto table = eval::AblationSweep(cfg, list, train, valid, test, catalog);
  WriteJson(OutPath(cfg, "ablation.json"), table.ToJson());
  const std::string text = table.ToText();
  WriteText(OutPath(cfg, "ablation.txt"), text);
  out << text;
  return kExitOk;
}

int CmdGrid(const Common& c, const TrainFlags& tf, const std::string& space_path,
            std::size_t budget, std::ostream& out) {
  RunConfig cfg = Resolve(c);
  tf.Apply(cfg);
  training::GridSpace space =
      space_path.empty() ? training::GridSpace::Full({cfg.learning_rate})
                         : training::GridSpace::LoadFile(space_path, cfg.learning_rate);
  EntityCatalog catalog = BuildEntityCatalog(RequirePath(cfg.catalog_path, "catalog"));
  DatasetSplit train = LoadDataset(RequirePath(cfg.train_path, "train"), SplitName::kTrain);
  DatasetSplit valid = LoadDataset(RequirePath(cfg.valid_path, "valid"), SplitName::kValid);
  auto result = training::GridSearch(cfg, space, train, valid, catalog, budget);
  WriteJson(OutPath(cfg, "grid.json"), result.ToJson());
  std::size_t failed = 0;
  for (const auto& e : result.leaderboard) failed += !e.val_mrr.has_value();
  out << "candidates " << result.leaderboard.size() << ", failed " << failed
      << "\n";
  if (result.best) {
    const auto& b = *result.best;
    out << "best: K=" << b.experts_K << " k=" << b.top_k << " d=" << b.embed_dim
        << " len=" << b.max_text_len << " lr=" << b.learning_rate << " (MRR "
        << Fixed(*result.leaderboard.front().val_mrr) << ")\n";
    b.SaveFile(OutPath(cfg, "best_config.json"));
  }
  return result.best ? kExitOk : kExitDomain;
}

int CmdReport(const Common& c, const std::string& checkpoint, std::ostream& out) {
  std::optional<Checkpoint> ck;
  if (!checkpoint.empty()) ck = ReadCheckpoint(checkpoint);
  RunConfig cfg = Resolve(c, ck && c.config.empty() ? &ck->config : nullptr);
  ModelParams params = ck ? LoadCheckpoint(checkpoint, cfg)
                          : ModelParams::Initialize(cfg);
  auto report = eval::MakeComplexityReport(params, cfg);
  nlohmann::json j = report.ToJson();
  if (ck) j["checkpoint_elements"] = ck->ElementCount();
  WriteJson(OutPath(cfg, "complexity.json"), j);
  const std::string text = report.ToText();
  WriteText(OutPath(cfg, "complexity.txt"), text);
  out << text;
  return kExitOk;
}

int CmdGradcheck(const Common& c, const std::string& component,
                 const GradCheckOptions& base, std::ostream& out) {
  RunConfig cfg = Resolve(c);
  GradCheckOptions o = base;
  o.seed = cfg.seed;
  std::vector<GradComponent> comps;
  if (component == "all") {
    comps = AllGradComponents();
  } else {
    comps.push_back(ParseGradComponent(component));
  }
  constexpr double kTolerance = 1e-4;
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  for (auto comp : comps) {
    GradCheckResult r = GradCheck(comp, o);
    const bool pass = r.max_rel_error < kTolerance;
    ok = ok && pass;
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.max_rel_error;
    out << ToString(comp) << ": max relative error " << err.str() << " over "
        << r.checked << " entries" << (pass ? "" : "  [FAIL at " + r.worst + "]")
        << "\n";
    j.push_back({{"component", ToString(comp)},
                 {"max_rel_error", r.max_rel_error},
                 {"checked", r.checked},
                 {"worst", r.worst}});
  }
  WriteJson(OutPath(cfg, "gradcheck.json"), j);
  return ok ? kExitOk : kExitDomain;
}

}  // namespace

int Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal entity linking with mixture-of-experts matching",
               "moelink"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "moelink 0.1.0");

  Common prep_c, enh_c, train_c, eval_c, abl_c, grid_c, rep_c, grad_c;

  auto* prepare = app.add_subcommand("prepare", "Validate dataset files and build splits");
  AddCommon(prepare, prep_c);
  std::string manifest;
  double fraction = 1.0;
  prepare->add_option("--manifest", manifest, "Expected statistics manifest")
      ->check(CLI::ExistingFile);
  auto* fraction_opt =
      prepare->add_option("--fraction", fraction, "Low-resource training fraction in (0,1]");

  auto* enhance = app.add_subcommand("enhance", "Append ranked KB descriptions to contexts");
  AddCommon(enhance, enh_c);
  std::string enh_in, enh_out, enh_kb, enh_cache;
  enhance->add_option("--in", enh_in, "Input mention file")->required()->check(CLI::ExistingFile);
  enhance->add_option("--out", enh_out, "Output mention file (under --out-dir)")->required();
  enhance->add_option("--kb", enh_kb, "Knowledge-base fixture file");
  enhance->add_option("--cache", enh_cache, "Enhancement cache file");

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  AddCommon(train, train_c);
  TrainFlags train_tf;
  train_tf.Add(train);

  auto* evalc = app.add_subcommand("eval", "Rank the catalog for a split and report metrics");
  AddCommon(evalc, eval_c);
  std::string eval_ck, eval_split = "test", eval_cands;
  evalc->add_option("--checkpoint", eval_ck, "Checkpoint file")->required()->check(CLI::ExistingFile);
  evalc->add_option("--split", eval_split, "train|valid|test")
      ->check(CLI::IsMember({"train", "valid", "test"}));
  evalc->add_option("--candidates", eval_cands, "Per-mention candidate file")
      ->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate loss/module ablations");
  AddCommon(ablate, abl_c);
  TrainFlags abl_tf;
  abl_tf.Add(ablate);
  std::string toggles;
  ablate->add_option("--toggles", toggles, "Comma-separated toggles to remove");

  auto* grid = app.add_subcommand("grid", "Grid search over the hyperparameter lattice");
  AddCommon(grid, grid_c);
  TrainFlags grid_tf;
  grid_tf.Add(grid);
  std::string space;
  std::size_t budget = 0;
  grid->add_option("--space", space, "Search space file (JSON)")->check(CLI::ExistingFile);
  grid->add_option("--budget", budget, "Maximum candidates to train (0 = all)");

  auto* report = app.add_subcommand("report", "Parameter and FLOP complexity report");
  AddCommon(report, rep_c);
  std::string rep_ck;
  report->add_option("--checkpoint", rep_ck, "Checkpoint file")->check(CLI::ExistingFile);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  AddCommon(gradcheck, grad_c);
  std::string component = "all";
  GradCheckOptions gopts;
  gradcheck->add_option("--component", component,
                        "projection|coarse_match|fine_match|gated_fuse|"
                        "contrastive_loss|smoe|all");
  gradcheck->add_option("--dim", gopts.dim, "Feature width")->check(CLI::Range(1, 64));
  gradcheck->add_option("--rows", gopts.rows, "Token rows")->check(CLI::Range(1, 64));
  gradcheck->add_option("--experts", gopts.experts, "SMoE experts")->check(CLI::Range(1, 16));
  gradcheck->add_option("--top-k", gopts.top_k, "SMoE top-k")->check(CLI::Range(1, 16));
  gradcheck->add_option("--eps", gopts.eps, "Finite-difference step")
      ->check(CLI::Range(1e-6, 1e-3));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*prepare) return CmdPrepare(prep_c, manifest, fraction, fraction_opt->count() > 0, out);
    if (*enhance) return CmdEnhance(enh_c, enh_in, enh_out, enh_kb, enh_cache, out);
    if (*train) return CmdTrain(train_c, train_tf, out);
    if (*evalc) return CmdEval(eval_c, eval_ck, eval_split, eval_cands, out);
    if (*ablate) return CmdAblate(abl_c, abl_tf, toggles, out);
    if (*grid) return CmdGrid(grid_c, grid_tf, space, budget, out);
    if (*report) return CmdReport(rep_c, rep_ck, out);
    if (*gradcheck) return CmdGradcheck(grad_c, component, gopts, out);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitUsage;
}

}  // namespace moelink::cli
