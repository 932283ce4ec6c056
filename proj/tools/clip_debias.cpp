// clip_debias: command-line front end.
//
//   gen-synth     synthetic embeddings, manifest and score matrix
//   proxy         pseudo groups from prompt scores, with an ARI report
//   simulate-ari  groups with a controlled ARI to the true attributes
//   train         fit a classifier, optionally with loss-balanced sampling
//   eval          accuracy and group metrics of saved models
//   sweep         ARI / cluster-count / theta experiments on synthetic data
//
// Exit codes: 0 ok, 1 runtime or data error, 2 usage or configuration error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clipdebias/clipdebias.hpp"
#include "clipdebias/run_manifest.hpp"

namespace fs = std::filesystem;
using namespace clipdebias;

namespace {

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) { detail::write_file_bytes(p, text, "cli"); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cli: cannot create output directory " + dir.string() + ": " + ec.message());
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"n", c.n},
          {"dim", c.dim},
          {"targets", c.targets},
          {"groups", c.groups},
          {"joint", c.joint},
          {"separation", c.separation},
          {"group_signal", c.group_signal},
          {"score_noise_sigma", c.score_noise_sigma},
          {"seed", c.seed}};
}

// Flags shared by every command that consumes a dataset.
struct DataFlags {
  std::string embeddings;
  std::string manifest;

  void add(CLI::App* cmd) {
    cmd->add_option("--embeddings", embeddings, "FEMB image embeddings")->required()->check(CLI::ExistingFile);
    cmd->add_option("--manifest", manifest, "manifest TSV")->required()->check(CLI::ExistingFile);
  }
  Dataset load(RunManifest& rm) const {
    rm.add_input(embeddings);
    rm.add_input(manifest);
    return bind_dataset(load_embeddings(embeddings), load_manifest(manifest));
  }
};

struct TrainFlags {
  TrainConfig cfg;
  std::string model = "linear";

  void add(CLI::App* cmd) {
    cmd->add_option("--alpha", cfg.alpha, "sampling probability step size")->capture_default_str();
    cmd->add_option("--theta", cfg.theta, "epochs between probability updates")->capture_default_str();
    cmd->add_option("--epochs", cfg.epochs)->capture_default_str();
    cmd->add_option("--lr", cfg.lr, "initial learning rate")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    cmd->add_option("--momentum", cfg.momentum)->capture_default_str();
    cmd->add_option("--weight-decay", cfg.weight_decay)->capture_default_str();
    cmd->add_option("--jitter-sigma", cfg.jitter_sigma,
                    "embedding noise, fraction of the mean training-row norm")
        ->capture_default_str();
    cmd->add_option("--model", model, "linear or mlp")->capture_default_str();
    cmd->add_option("--hidden", cfg.hidden_dim, "hidden width for --model mlp");
    cmd->add_flag("--no-prob-floor{false}", cfg.prob_floor, "disable the 0.01/K probability floor");
  }
  TrainConfig resolve(std::uint64_t seed) {
    cfg.model = parse_model_kind(model);
    cfg.seed = seed;
    return cfg;
  }
};

struct SynthFlags {
  SynthConfig cfg;
  std::vector<double> joint;
  std::optional<double> correlation;

  void add(CLI::App* cmd, bool n_required) {
    auto* n = cmd->add_option("--n", cfg.n, "number of samples");
    if (n_required) {
      n->required();
    } else {
      n->capture_default_str();
    }
    cmd->add_option("--dim", cfg.dim)->capture_default_str();
    cmd->add_option("--targets", cfg.targets)->capture_default_str();
    cmd->add_option("--groups", cfg.groups)->capture_default_str();
    auto* j = cmd->add_option("--joint", joint, "targets x groups cell proportions, row-major")
                  ->delimiter(',');
    cmd->add_option("--correlation", correlation, "2x2 joint with this attribute/target Pearson r")
        ->excludes(j);
    cmd->add_option("--separation", cfg.separation)->capture_default_str();
    cmd->add_option("--group-signal", cfg.group_signal)->capture_default_str();
    cmd->add_option("--score-noise", cfg.score_noise_sigma)->capture_default_str();
  }
  SynthConfig resolve(std::uint64_t seed) {
    if (correlation) {
      if (cfg.targets != 2 || cfg.groups != 2) {
        throw ConfigError("cli: --correlation needs --targets 2 --groups 2");
      }
      cfg.joint = joint_with_correlation(*correlation);
    } else if (!joint.empty()) {
      cfg.joint = joint;
    } else if (cfg.targets != 2 || cfg.groups != 2) {
      // no default joint beyond 2x2: spread uniformly
      cfg.joint.assign(cfg.targets * cfg.groups, 1.0 / static_cast<double>(cfg.targets * cfg.groups));
    }
    cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

// ---------------------------------------------------------------------------

int cmd_gen_synth(SynthFlags& sf, std::uint64_t seed, const fs::path& out) {
  const SynthConfig cfg = sf.resolve(seed);
  ensure_dir(out);
  const SynthData data = gen_synthetic(cfg);
  RunManifest rm{"gen-synth", to_json(cfg), seed, {}, {}};
  const fs::path emb = out / "embeddings.femb", man = out / "manifest.tsv", sc = out / "scores.femb";
  write_embeddings(emb, data.dataset.embeddings());
  write_manifest(man, data.dataset.manifest());
  write_embeddings(sc, data.scores.to_embedding());
  for (const auto& p : {emb, man, sc}) rm.add_output(p);
  rm.write(out / kRunManifestName);
  std::cout << "wrote " << cfg.n << " samples (" << cfg.targets << " targets x " << cfg.groups
            << " groups, dim " << cfg.dim << ") to " << out.string() << '\n';
  return 0;
}

struct ProxyFlags {
  DataFlags data;
  std::string scores, prompt_embeddings, prompts;
  std::optional<std::size_t> k;
};

int cmd_proxy(ProxyFlags& pf, std::uint64_t seed, const fs::path& out) {
  RunManifest rm;
  rm.command = "proxy";
  rm.seed = seed;
  const Dataset ds = pf.data.load(rm);

  std::optional<PromptSet> prompts;
  if (!pf.prompts.empty()) {
    rm.add_input(pf.prompts);
    prompts = load_prompt_set(pf.prompts);
  }
  std::optional<ScoreMatrix> scores;
  bool computed = false;
  if (!pf.scores.empty()) {
    rm.add_input(pf.scores);
    scores = ScoreMatrix(load_embeddings(pf.scores));
  } else {
    if (pf.prompt_embeddings.empty() || !prompts) {
      throw ConfigError("cli: proxy needs --scores, or --prompt-embeddings with --prompts");
    }
    rm.add_input(pf.prompt_embeddings);
    scores = similarity_matrix(load_embeddings(pf.prompt_embeddings), ds.embeddings());
    computed = true;
  }
  if (scores->samples() != ds.size()) {
    throw DataError("cli: score matrix covers " + std::to_string(scores->samples()) +
                    " samples, dataset has " + std::to_string(ds.size()));
  }
  const std::size_t C = scores->prompts();
  if (prompts && prompts->prompts.size() != C) {
    throw DataError("cli: prompt set lists " + std::to_string(prompts->prompts.size()) +
                    " prompts, score matrix has " + std::to_string(C) + " rows");
  }
  const std::size_t A = prompts ? prompts->attribute_count() : C;
  const std::size_t K = pf.k.value_or(default_cluster_count(A, ds.num_targets()));
  if (K == 0 || K % ds.num_targets() != 0) {
    throw ConfigError("cli: --k " + std::to_string(K) + " is not a multiple of the " +
                      std::to_string(ds.num_targets()) + " target classes");
  }
  rm.config = {{"k", K}, {"attribute_classes", A}, {"prompts", C}, {"seed", seed}};

  ensure_dir(out);
  const PseudoGrouping groups = build_pseudo_groups(ds, *scores, K, seed);
  const bool have_truth = ds.manifest().has_attributes(Split::train);
  std::optional<Partition> truth;
  if (have_truth) truth = cell_partition(ds.manifest(), groups.samples());

  auto ari_of = [&](const PseudoGrouping& g) {
    Partition found{{g.assignments().begin(), g.assignments().end()}};
    return adjusted_rand_index(found, *truth);
  };
  std::ostringstream report;
  report << "# pseudo groups: K=" << K << " (" << K / ds.num_targets() << " per target class), "
         << groups.samples().size() << " training samples\n";
  if (!have_truth) {
    report << "# ARI: unavailable (training split has no attribute labels)\n";
  } else {
    report << "# ARI against (target, attribute) cells of the training split\n";
    report << "prompt\tari\n";
    for (std::size_t i = 0; i < C; ++i) {
      const std::string name = prompts ? prompts->render(i) : "prompt_" + std::to_string(i);
      report << name << '\t' << fixed(ari_of(build_pseudo_groups(ds, scores->select_prompt(i), K, seed)), 3)
             << '\n';
    }
    if (C > 1) {
      report << "ensemble\t"
             << fixed(ari_of(build_pseudo_groups(ds, ensemble_scores(*scores), K, seed)), 3) << '\n';
    }
    report << "all_prompts\t" << fixed(ari_of(groups), 3) << '\n';
  }

  const fs::path clusters = out / "clusters.tsv", rep = out / "proxy_report.tsv";
  write_text(clusters, format_clusters(ds, groups));
  write_text(rep, report.str());
  rm.add_output(clusters);
  rm.add_output(rep);
  if (computed) {
    const fs::path sc = out / "scores.femb";
    write_embeddings(sc, scores->to_embedding());
    rm.add_output(sc);
  }
  rm.write(out / kRunManifestName);
  std::cout << report.str();
  return 0;
}

struct SimulateFlags {
  DataFlags data;
  double ari = 1.0;
  double tol = 0.02;
};

int cmd_simulate_ari(SimulateFlags& sf, std::uint64_t seed, const fs::path& out) {
  RunManifest rm;
  rm.command = "simulate-ari";
  rm.seed = seed;
  rm.config = {{"ari", sf.ari}, {"tol", sf.tol}, {"seed", seed}};
  const Dataset ds = sf.data.load(rm);
  const auto& rows = ds.indices(Split::train);
  const Partition truth = attribute_partition(ds.manifest(), rows);
  const double r = calibrate_ari(truth, sf.ari, sf.tol, derive_seed(seed, "cli.calibrate"));
  const Partition noisy = corrupt_partition(truth, r, derive_seed(seed, "cli.corrupt"));
  const PseudoGrouping g = grouping_from_labels(ds, rows, noisy.labels);

  ensure_dir(out);
  std::ostringstream report;
  report << "target_ari\tfraction\tari_attribute\tari_cells\tclusters\n"
         << fixed(sf.ari) << '\t' << fixed(r) << '\t' << fixed(adjusted_rand_index(noisy, truth)) << '\t'
         << fixed(adjusted_rand_index(Partition{{g.assignments().begin(), g.assignments().end()}},
                                      cell_partition(ds.manifest(), g.samples())))
         << '\t' << g.num_clusters() << '\n';
  const fs::path clusters = out / "clusters.tsv", rep = out / "simulate_report.tsv";
  write_text(clusters, format_clusters(ds, g));
  write_text(rep, report.str());
  rm.add_output(clusters);
  rm.add_output(rep);
  rm.write(out / kRunManifestName);
  std::cout << report.str();
  return 0;
}

struct TrainCmdFlags {
  DataFlags data;
  TrainFlags train;
  std::string clusters;
  bool debias = true;
};

int cmd_train(TrainCmdFlags& tf, std::uint64_t seed, const fs::path& out) {
  TrainConfig cfg = tf.train.resolve(seed);
  cfg.debias = tf.debias;
  cfg.validate();
  if (cfg.debias && tf.clusters.empty()) throw ConfigError("cli: --debias needs --clusters");
  RunManifest rm;
  rm.command = "train";
  rm.seed = seed;
  rm.config = clipdebias::to_json(cfg);
  const Dataset ds = tf.data.load(rm);
  PseudoGrouping g;
  if (!tf.clusters.empty()) {
    rm.add_input(tf.clusters);
    g = load_clusters(tf.clusters, ds);
  } else {
    g = class_grouping(ds);
  }
  const TrainedModel m = train(ds, g, cfg);

  ensure_dir(out);
  nlohmann::json echo = rm.config;
  echo["best_epoch"] = m.best_epoch;
  echo["selection_metric"] = m.selection_metric;
  echo["jitter_abs"] = m.jitter_abs;
  for (const auto& p : save_model(out / "model.json", m.model, echo)) rm.add_output(p);
  const fs::path hist = out / "history.tsv";
  write_text(hist, format_history(m));
  rm.add_output(hist);
  rm.write(out / kRunManifestName);

  std::cout << (cfg.debias ? "debiased" : "baseline") << " training: " << cfg.epochs << " epochs, K="
            << g.num_clusters() << ", best epoch " << m.best_epoch << " by " << m.selection_metric << '\n';
  const auto& last = m.history.back();
  std::cout << "final probs:";
  for (double p : last.probs) std::cout << ' ' << fixed(p, 4);
  std::cout << '\n';
  return 0;
}

struct EvalFlags {
  DataFlags data;
  std::vector<std::string> models;
  std::string split = "test";
};

int cmd_eval(EvalFlags& ef, const fs::path& out) {
  const Split split = parse_split(ef.split);
  RunManifest rm;
  rm.command = "eval";
  rm.config = {{"split", ef.split}};
  const Dataset ds = ef.data.load(rm);
  const auto& rows = ds.indices(split);
  if (rows.empty()) throw DataError("cli: split '" + ef.split + "' is empty");
  std::vector<int> targets(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) targets[i] = ds.target(rows[i]);

  std::ostringstream summary, groups;
  summary << "model\taccuracy\tunbiased_acc\tworst_group_acc\tgroup_std\n";
  groups << "model\ttarget\tattribute\tcorrect\ttotal\taccuracy\n";
  for (const auto& path : ef.models) {
    rm.add_input(path);
    const Classifier model = load_model(path);
    const auto preds = predict_rows(model, ds.embeddings(), rows);
    const GroupAccuracyTable table = group_accuracies(preds, ds.manifest(), split);
    const FairnessSummary fair = fairness_summary(table);
    const std::string name = fs::path(path).parent_path().filename().string() + "/" +
                             fs::path(path).filename().string();
    summary << name << '\t' << fixed(overall_accuracy(preds, targets)) << '\t' << fixed(fair.unbiased_acc)
            << '\t' << fixed(fair.worst_group_acc) << '\t' << fixed(fair.group_std) << '\n';
    for (const auto& [key, cell] : table) {
      groups << name << '\t' << key.first << '\t' << key.second << '\t' << cell.correct << '\t'
             << cell.total << '\t' << fixed(cell.accuracy()) << '\n';
    }
  }
  ensure_dir(out);
  const fs::path p = out / "eval.tsv";
  write_text(p, summary.str() + "\n" + groups.str());
  rm.add_output(p);
  rm.write(out / kRunManifestName);
  std::cout << summary.str() << '\n' << groups.str();
  return 0;
}

struct SweepFlags {
  SynthFlags synth;
  TrainFlags train;
  std::string kind;
  std::vector<double> ari_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::size_t> ks = {4, 6, 8, 10};
  std::vector<std::size_t> thetas = {1, 3, 5, 10, 20};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t threads = 0;
};

int cmd_sweep(SweepFlags& sw, std::uint64_t seed, const fs::path& out) {
  const SynthConfig scfg = sw.synth.resolve(seed);
  const TrainConfig tcfg = sw.train.resolve(seed);
  SweepOptions opts;
  opts.threads = sw.threads;
  SweepResult res;
  nlohmann::json cfg = {{"kind", sw.kind}, {"synth", to_json(scfg)}, {"train", clipdebias::to_json(tcfg)},
                        {"seeds", sw.seeds}};
  if (sw.kind == "ari") {
    cfg["ari_grid"] = sw.ari_grid;
    res = run_ari_sweep(scfg, sw.ari_grid, sw.seeds, tcfg, opts);
  } else if (sw.kind == "cluster") {
    cfg["ks"] = sw.ks;
    res = run_cluster_sweep(scfg, sw.ks, sw.seeds, tcfg, opts);
  } else {
    cfg["thetas"] = sw.thetas;
    res = run_theta_sweep(scfg, sw.thetas, sw.seeds, tcfg, opts);
  }
  ensure_dir(out);
  RunManifest rm{"sweep", cfg, seed, {}, {}};
  const std::string table = format_sweep(res);
  const fs::path p = out / ("sweep_" + sw.kind + ".tsv");
  write_text(p, table);
  rm.add_output(p);
  rm.write(out / kRunManifestName);
  std::cout << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fairness-aware training with attribute proxies from vision-language scores"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::uint64_t seed = 0;
  std::string out;
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "root seed for every random stream")->capture_default_str();
    cmd->add_option("-o,--out", out, "output directory")->required();
  };

  SynthFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-synth", "write a synthetic biased dataset");
  gen.add(gen_cmd, true);
  common(gen_cmd);

  ProxyFlags proxy;
  auto* proxy_cmd = app.add_subcommand("proxy", "cluster samples into pseudo attribute groups");
  proxy.data.add(proxy_cmd);
  proxy_cmd->add_option("--scores", proxy.scores, "FEMB score matrix (prompts x samples)")
      ->check(CLI::ExistingFile);
  proxy_cmd->add_option("--prompt-embeddings", proxy.prompt_embeddings, "FEMB text embeddings")
      ->check(CLI::ExistingFile);
  proxy_cmd->add_option("--prompts", proxy.prompts, "prompt set JSON")->check(CLI::ExistingFile);
  proxy_cmd->add_option("--k", proxy.k, "total cluster count (default: attributes x targets)");
  common(proxy_cmd);

  SimulateFlags sim;
  auto* sim_cmd = app.add_subcommand("simulate-ari", "groups at a chosen ARI to the true attributes");
  sim.data.add(sim_cmd);
  sim_cmd->add_option("--ari", sim.ari, "target ARI in [0, 1]")->required();
  sim_cmd->add_option("--tol", sim.tol)->capture_default_str();
  common(sim_cmd);

  TrainCmdFlags tr;
  auto* train_cmd = app.add_subcommand("train", "train a classifier");
  tr.data.add(train_cmd);
  tr.train.add(train_cmd);
  train_cmd->add_option("--clusters", tr.clusters, "cluster TSV from proxy or simulate-ari")
      ->check(CLI::ExistingFile);
  train_cmd->add_flag("--debias,!--no-debias", tr.debias, "loss-balanced cluster sampling (default on)");
  common(train_cmd);

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate saved models");
  ev.data.add(eval_cmd);
  eval_cmd->add_option("--model", ev.models, "model header JSON (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", ev.split)->capture_default_str()->check(
      CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("-o,--out", out, "output directory")->required();

  SweepFlags sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "synthetic experiments");
  sweep_cmd->add_option("--kind", sw.kind)->required()->check(CLI::IsMember({"ari", "cluster", "theta"}));
  sw.synth.add(sweep_cmd, false);
  sw.train.add(sweep_cmd);
  sweep_cmd->add_option("--ari-grid", sw.ari_grid)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--ks", sw.ks)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--thetas", sw.thetas)->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--seeds", sw.seeds, "training seeds")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--threads", sw.threads, "worker threads, 0 = hardware")->capture_default_str();
  common(sweep_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) return cmd_gen_synth(gen, seed, out);
    if (*proxy_cmd) return cmd_proxy(proxy, seed, out);
    if (*sim_cmd) return cmd_simulate_ari(sim, seed, out);
    if (*train_cmd) return cmd_train(tr, seed, out);
    if (*eval_cmd) return cmd_eval(ev, out);
    if (*sweep_cmd) return cmd_sweep(sw, seed, out);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
