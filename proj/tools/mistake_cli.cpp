// Command-line front end for the answer-mistake toolkit: corpus ingestion,
// analysis, synthetic-corpus generation, detector training, evaluation, and
// VLM prompt construction. Every command reads declared inputs, writes its
// outputs plus a manifest (config snapshot, seed, input hashes), and is
// re-runnable: identical inputs and seed give byte-identical outputs.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "mistake/corpus.hpp"
#include "mistake/detector.hpp"
#include "mistake/eval.hpp"
#include "mistake/experiment.hpp"
#include "mistake/fixtures.hpp"
#include "mistake/nn.hpp"
#include "mistake/prompts.hpp"
#include "mistake/qtype.hpp"
#include "mistake/stats.hpp"
#include "mistake/synth.hpp"
#include "mistake/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mistake;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerification = 3;

struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void write(const fs::path& out_dir) const {
    json j;
    j["schema"] = "mistake-manifest/1";
    j["command"] = command;
    j["seed"] = seed;
    json cfg = json::object();
    for (const auto& [k, v] : config) cfg[k] = v;
    j["config"] = std::move(cfg);
    json ins = json::array();
    for (const auto& p : inputs) {
      json e;
      e["path"] = p;
      e["fnv1a64"] = util::hex64(util::hash_file(p));
      ins.push_back(std::move(e));
    }
    j["inputs"] = std::move(ins);
    j["outputs"] = outputs;
    util::write_file_atomic((out_dir / (command + ".manifest.json")).string(), j.dump(2) + "\n");
  }
};

fs::path prepare_out_dir(const std::string& out_dir) {
  fs::path p(out_dir);
  fs::create_directories(p);
  for (const auto& entry : fs::directory_iterator(p)) {
    if (entry.path().extension() == ".partial") {
      std::cerr << "warning: removing stale partial output " << entry.path() << "\n";
      fs::remove(entry.path());
    }
  }
  return p;
}

std::vector<corpus::GameRecord> load_or_die(const std::string& path, bool strict) {
  corpus::ParseResult res = corpus::load_games(path, {strict});
  for (const auto& e : res.errors) {
    std::cerr << "warning: " << path << ":" << e.line << ": skipped record"
              << (e.field.empty() ? "" : " (field " + e.field + ")") << ": " << e.message << "\n";
  }
  return std::move(res.games);
}

qtype::KeywordTable load_table(const std::string& keywords_path) {
  return keywords_path.empty() ? qtype::KeywordTable::defaults()
                               : qtype::KeywordTable::load_file(keywords_path);
}

detector::FeatureStore open_store(const std::string& features_path, std::size_t pseudo_dim,
                                  std::uint64_t seed) {
  if (!features_path.empty()) return detector::FeatureStore::load(features_path);
  return detector::FeatureStore::pseudo(pseudo_dim, seed);
}

json confusion_json(const eval::Confusion& c) {
  return json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

eval::Confusion confusion_from_json(const json& j) {
  return {j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(),
          j.at("fn").get<std::uint64_t>(), j.at("tn").get<std::uint64_t>()};
}

std::string run_metrics_lines(std::span<const eval::RunMetrics> runs) {
  std::ostringstream out;
  for (const auto& r : runs) {
    json j;
    j["model"] = r.model;
    j["dataset"] = r.dataset;
    j["learning"] = r.learning;
    j["overall"] = confusion_json(r.overall);
    if (r.last_turn) j["last_turn"] = confusion_json(*r.last_turn);
    if (r.other_turns) j["other_turns"] = confusion_json(*r.other_turns);
    j["flags"] = r.flags;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::vector<eval::RunMetrics> load_run_metrics(const std::string& path) {
  std::vector<eval::RunMetrics> out;
  util::LineReader reader(path);
  std::string line;
  while (reader.next(line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    eval::RunMetrics r;
    r.model = j.at("model").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.learning = j.at("learning").get<std::string>();
    r.overall = confusion_from_json(j.at("overall"));
    if (j.contains("last_turn")) r.last_turn = confusion_from_json(j.at("last_turn"));
    if (j.contains("other_turns")) r.other_turns = confusion_from_json(j.at("other_turns"));
    if (j.contains("flags")) r.flags = j.at("flags").get<std::vector<std::string>>();
    out.push_back(std::move(r));
  }
  return out;
}

std::string analysis_report(std::span<const corpus::GameRecord> games, const qtype::KeywordTable& table,
                            std::size_t n_bins, const std::string& method, std::uint64_t replicates,
                            std::uint64_t enum_cap, std::uint64_t seed) {
  std::ostringstream out;
  out << "schema = mistake-analysis/1\n";
  out << "seed = " << seed << "\n";
  out << "games = " << games.size() << "\n";

  stats::TurnHistogram hist = stats::mistake_turn_histogram(games, n_bins);
  double last_frac = stats::last_turn_fraction(games);
  std::uint64_t total_mistakes = hist.total();
  std::uint64_t last_mistakes = 0;
  for (const auto& g : games) {
    if (!g.qas.empty() && g.qas.back().mistake_label.value_or(false)) ++last_mistakes;
  }
  out << "total_mistakes = " << total_mistakes << "\n";
  out << "last_turn_mistakes = " << last_mistakes << "\n";
  out << "last_turn_fraction = " << util::format_fixed(last_frac, 6) << "\n";
  out << "histogram_bins = " << hist.n_bins << "\n";
  out << "histogram =";
  for (auto c : hist.counts) out << " " << c;
  out << "\n";

  out << "\n[mistake-rate-by-type]\n";
  for (const auto& [type, rate] : stats::mistake_rate_by_type(games, table)) {
    out << qtype::to_string(type) << " = mistakes=" << rate.mistakes << " total=" << rate.total
        << " rate=" << (rate.rate ? util::format_fixed(*rate.rate, 6) : "absent") << "\n";
  }

  stats::ContingencyTable ct = stats::build_contingency(games, table);
  out << "\n[contingency]\n";
  out << "columns =";
  for (const auto& l : ct.col_labels) out << " " << l;
  out << "\n";
  out << "incorrect =";
  for (auto v : ct.cells[0]) out << " " << v;
  out << "\n";
  out << "correct =";
  for (auto v : ct.cells[1]) out << " " << v;
  out << "\n";

  out << "\n[fisher]\n";
  double p = 1.0;
  std::string used = method;
  if (method == "exact" || method == "auto") {
    try {
      p = stats::fisher_exact(ct, {enum_cap});
      used = "exact";
    } catch (const stats::EnumerationCapExceeded&) {
      if (method == "exact") throw;
      used = "mc";
    }
  }
  if (used == "mc") {
    stats::McResult mc = stats::fisher_mc(ct, replicates, seed);
    if (mc.degenerate) std::cerr << "warning: degenerate contingency margins; p forced to 1.0\n";
    p = mc.p;
    out << "replicates = " << replicates << "\n";
  }
  out << "method = " << used << "\n";
  char pbuf[32];
  std::snprintf(pbuf, sizeof(pbuf), "%.7g", p);
  out << "p_value = " << pbuf << "\n";
  out << "significant_at_0.01 = " << (p < 0.01 ? "true" : "false") << "\n";
  return out.str();
}

detector::TrainConfig train_config_from(std::uint64_t seed, double pretrain_lr, double finetune_lr,
                                        std::size_t k, std::size_t pre_epochs, std::size_t fin_epochs,
                                        std::size_t batch, const std::string& oversample,
                                        std::size_t patience) {
  detector::TrainConfig t;
  t.seed = seed;
  t.pretrain_lr = pretrain_lr;
  t.finetune_lr = finetune_lr;
  t.k = k;
  t.pretrain_epochs = pre_epochs;
  t.finetune_epochs = fin_epochs;
  t.batch_size = batch;
  t.patience = patience;
  auto mode = detector::oversample_from_string(oversample);
  if (!mode) throw std::runtime_error("unknown oversample mode " + oversample);
  t.oversample_mode = *mode;
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Answer-mistake detection toolkit for goal-oriented visual dialogue"};
  app.require_subcommand(1);
  app.fallthrough();  // global --seed/--out may follow the subcommand name
  app.set_config("--config", "", "Plain-text key=value configuration file; flags override it");

  std::uint64_t seed = 42;
  app.add_option("--seed", seed,
                 "Global seed recorded in every manifest (MISTAKE_SEED overrides the config file)")
      ->capture_default_str();

  std::string out_dir = "out";
  app.add_option("--out", out_dir, "Output directory")->capture_default_str();

  // ---- ingest ----------------------------------------------------------
  auto* c_ingest = app.add_subcommand("ingest", "Parse and validate a dialogue corpus");
  std::string ingest_in;
  bool ingest_strict = false;
  c_ingest->add_option("--in", ingest_in, "Corpus file (.jsonl or .jsonl.gz)")->required();
  c_ingest->add_flag("--strict", ingest_strict, "Abort on the first invalid record");

  // ---- filter ----------------------------------------------------------
  auto* c_filter = app.add_subcommand("filter", "Drop games with small targets");
  std::string filter_in;
  double tau = 0.01;
  c_filter->add_option("--in", filter_in, "Corpus file")->required();
  c_filter->add_option("--tau", tau, "Minimum target-area / image-area ratio")->capture_default_str();

  // ---- label-types -----------------------------------------------------
  auto* c_label = app.add_subcommand("label-types", "Classify every question by keyword");
  std::string label_in, keywords_path;
  c_label->add_option("--in", label_in, "Corpus file")->required();
  c_label->add_option("--keywords", keywords_path, "Keyword table file (default: built-in)");

  // ---- analyze ---------------------------------------------------------
  auto* c_analyze = app.add_subcommand("analyze", "Mistake statistics and Fisher test");
  std::string analyze_in, analyze_keywords, fisher_method = "auto";
  std::size_t n_bins = 10;
  std::uint64_t mc_replicates = 2000, enum_cap = 10'000'000;
  c_analyze->add_option("--in", analyze_in, "Labeled corpus file")->required();
  c_analyze->add_option("--keywords", analyze_keywords, "Keyword table file");
  c_analyze->add_option("--bins", n_bins, "Histogram bins")->capture_default_str();
  c_analyze->add_option("--method", fisher_method, "Fisher method: auto | exact | mc")
      ->check(CLI::IsMember({"auto", "exact", "mc"}))
      ->capture_default_str();
  c_analyze->add_option("--replicates", mc_replicates, "Monte Carlo replicates")->capture_default_str();
  c_analyze->add_option("--enum-cap", enum_cap, "Exact enumeration cap")->capture_default_str();

  // ---- synth -----------------------------------------------------------
  auto* c_synth = app.add_subcommand("synth", "Flip answers of Success games into a synthetic corpus");
  std::string synth_in;
  double p_flip = 0.15;
  std::size_t min_flips = 0;
  c_synth->add_option("--in", synth_in, "Success-collection corpus file")->required();
  c_synth->add_option("--p-flip", p_flip, "Per-answer flip probability")->capture_default_str();
  c_synth->add_option("--min-flips", min_flips, "Per-game flip floor")->capture_default_str();

  // ---- shared model/training options ------------------------------------
  std::string arch = "baseline", features_path, oversample = "qtype-balance";
  std::size_t pseudo_dim = 64;
  detector::ModelConfig proto;
  double pretrain_lr = 1e-4, finetune_lr = 1e-5;
  std::size_t kfolds = 4, pretrain_epochs = 5, finetune_epochs = 20, batch_size = 64, patience = 3;
  auto add_model_opts = [&](CLI::App* cmd) {
    cmd->add_option("--features", features_path, "Feature store file (absent: pseudo features)");
    cmd->add_option("--pseudo-dim", pseudo_dim, "Pseudo feature dimension")->capture_default_str();
    cmd->add_option("--word-emb", proto.word_emb_dim)->capture_default_str();
    cmd->add_option("--lstm-hidden", proto.lstm_hidden_dim)->capture_default_str();
    cmd->add_option("--batch", batch_size)->capture_default_str();
    cmd->add_option("--patience", patience, "Early-stop patience in epochs; 0 disables")
        ->capture_default_str();
  };

  // ---- pretrain ----------------------------------------------------------
  auto* c_pretrain = app.add_subcommand("pretrain", "Train a detector on the synthetic corpus");
  std::string pretrain_synth;
  c_pretrain->add_option("--synthetic", pretrain_synth, "Synthetic corpus file")->required();
  c_pretrain->add_option("--arch", arch, "baseline | qa-turn | question-type")->capture_default_str();
  c_pretrain->add_option("--lr", pretrain_lr, "Pretraining learning rate")->capture_default_str();
  c_pretrain->add_option("--epochs", pretrain_epochs)->capture_default_str();
  add_model_opts(c_pretrain);

  // ---- finetune ----------------------------------------------------------
  auto* c_finetune = app.add_subcommand("finetune", "K-fold fine-tune on the human-mistake pool");
  std::string ft_pool, ft_same, ft_diff, ft_checkpoint, ft_synth, ft_keywords, ft_human;
  double ft_test_fraction = 0.25;
  bool ft_experiment = false;
  c_finetune->add_option("--human", ft_human,
                         "Full labeled human corpus; derives same/different by image against "
                         "--synthetic and splits the same-image part into pool and test");
  c_finetune->add_option("--test-fraction", ft_test_fraction,
                         "Held-out share of the same-image set (with --human)")
      ->capture_default_str();
  c_finetune->add_option("--pool", ft_pool, "Fine-tune pool corpus");
  c_finetune->add_option("--same-test", ft_same, "Same-image test corpus");
  c_finetune->add_option("--diff-test", ft_diff, "Different-image test corpus");
  c_finetune->add_option("--checkpoint", ft_checkpoint,
                         "Pretrained checkpoint (absent: fresh initialization)");
  c_finetune->add_option("--synthetic", ft_synth, "Synthetic corpus (vocabulary / --experiment)");
  c_finetune->add_option("--keywords", ft_keywords, "Keyword table file");
  c_finetune->add_option("--arch", arch, "baseline | qa-turn | question-type")->capture_default_str();
  c_finetune->add_option("--lr", finetune_lr, "Fine-tuning learning rate")->capture_default_str();
  c_finetune->add_option("--epochs", finetune_epochs)->capture_default_str();
  c_finetune->add_option("--k", kfolds, "Cross-validation folds")->capture_default_str();
  c_finetune->add_option("--oversample", oversample, "none | class-balance | qtype-balance")
      ->capture_default_str();
  c_finetune->add_flag("--experiment", ft_experiment,
                       "Run all three architectures plus the no-pretraining ablation");
  add_model_opts(c_finetune);

  // ---- eval --------------------------------------------------------------
  auto* c_eval = app.add_subcommand("eval", "Assemble report grids from run metrics");
  std::vector<std::string> eval_runs;
  c_eval->add_option("--runs", eval_runs, "Run-metrics JSONL files")->required()->expected(-1);

  // ---- prompts -----------------------------------------------------------
  auto* c_prompts = app.add_subcommand("prompts", "Build VLM requests or score VLM responses");
  std::string prompts_mode = "build", prompts_in, prompts_context, prompts_type = "normal";
  std::string prompts_requests, prompts_responses, prompts_keywords;
  bool prompts_history = false;
  c_prompts->add_option("--mode", prompts_mode, "build | score")
      ->check(CLI::IsMember({"build", "score"}))
      ->capture_default_str();
  c_prompts->add_option("--in", prompts_in, "Corpus of queries to judge (build mode)");
  c_prompts->add_option("--context-pool", prompts_context, "Corpus supplying few-shot examples");
  c_prompts->add_option("--type", prompts_type, "normal | qtype-hint | time-hint")
      ->check(CLI::IsMember({"normal", "qtype-hint", "time-hint"}))
      ->capture_default_str();
  c_prompts->add_flag("--history", prompts_history, "Include dialogue history");
  c_prompts->add_option("--keywords", prompts_keywords, "Keyword table file");
  c_prompts->add_option("--requests", prompts_requests, "Requests file (score mode)");
  c_prompts->add_option("--responses", prompts_responses, "Responses file (score mode)");

  // ---- gradcheck -----------------------------------------------------------
  auto* c_gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every architecture");
  std::size_t gc_trials = 5;
  double gc_eps = 1e-5, gc_tol = 1e-4;
  c_gradcheck->add_option("--trials", gc_trials, "Random seeds per architecture")->capture_default_str();
  c_gradcheck->add_option("--eps", gc_eps, "Central-difference step")->capture_default_str();
  c_gradcheck->add_option("--tol", gc_tol, "Maximum allowed relative error")->capture_default_str();

  // ---- make-fixtures --------------------------------------------------------
  auto* c_fixtures = app.add_subcommand("make-fixtures", "Write the shipped test corpora");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  // MISTAKE_SEED overrides the config file but never an explicit --seed flag.
  bool seed_flag_given = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string_view(argv[i]) == "--seed" || std::string_view(argv[i]).rfind("--seed=", 0) == 0)
      seed_flag_given = true;
  }
  if (const char* env_seed = std::getenv("MISTAKE_SEED"); env_seed && !seed_flag_given) {
    try {
      seed = std::stoull(env_seed);
    } catch (const std::exception&) {
      std::cerr << "error: MISTAKE_SEED is not an integer: " << env_seed << "\n";
      return kExitUsage;
    }
  }

  try {
    const fs::path out = prepare_out_dir(out_dir);
    Manifest manifest;
    manifest.seed = seed;

    if (c_ingest->parsed()) {
      manifest.command = "ingest";
      manifest.config = {{"strict", ingest_strict ? "true" : "false"}};
      manifest.inputs = {ingest_in};
      corpus::ParseResult res = corpus::load_games(ingest_in, {ingest_strict});
      for (const auto& e : res.errors)
        std::cerr << "warning: line " << e.line << ": " << e.message << "\n";
      std::ostringstream body;
      corpus::write_games(body, res.games);
      util::write_file_atomic((out / "games.jsonl").string(), body.str());
      manifest.outputs = {"games.jsonl"};
      manifest.write(out);
      std::cerr << "ingested " << res.games.size() << " games, skipped " << res.errors.size() << "\n";
    } else if (c_filter->parsed()) {
      manifest.command = "filter";
      manifest.config = {{"tau", util::format_fixed(tau, 6)}};
      manifest.inputs = {filter_in};
      auto games = load_or_die(filter_in, false);
      auto kept = corpus::filter_by_target_size(games, tau);
      corpus::save_games((out / "filtered.jsonl").string(), kept);
      manifest.outputs = {"filtered.jsonl"};
      manifest.write(out);
      std::cerr << "kept " << kept.size() << " of " << games.size() << " games\n";
    } else if (c_label->parsed()) {
      manifest.command = "label-types";
      manifest.inputs = {label_in};
      if (!keywords_path.empty()) manifest.inputs.push_back(keywords_path);
      auto games = load_or_die(label_in, false);
      auto table = load_table(keywords_path);
      std::ostringstream body;
      for (const auto& g : games) {
        for (std::size_t t = 0; t < g.qas.size(); ++t) {
          json j;
          j["game_id"] = g.game_id;
          j["turn"] = t + 1;
          j["question"] = g.qas[t].question;
          j["qtype"] = std::string(qtype::to_string(qtype::classify_question(g.qas[t].question, table)));
          body << j.dump() << "\n";
        }
      }
      util::write_file_atomic((out / "question_types.jsonl").string(), body.str());
      manifest.outputs = {"question_types.jsonl"};
      manifest.write(out);
    } else if (c_analyze->parsed()) {
      manifest.command = "analyze";
      manifest.config = {{"bins", std::to_string(n_bins)},
                         {"method", fisher_method},
                         {"replicates", std::to_string(mc_replicates)}};
      manifest.inputs = {analyze_in};
      if (!analyze_keywords.empty()) manifest.inputs.push_back(analyze_keywords);
      auto games = load_or_die(analyze_in, false);
      auto table = load_table(analyze_keywords);
      util::write_file_atomic(
          (out / "analysis.txt").string(),
          analysis_report(games, table, n_bins, fisher_method, mc_replicates, enum_cap, seed));
      manifest.outputs = {"analysis.txt"};
      manifest.write(out);
    } else if (c_synth->parsed()) {
      manifest.command = "synth";
      manifest.config = {{"p_flip", util::format_fixed(p_flip, 6)},
                         {"min_flips", std::to_string(min_flips)}};
      manifest.inputs = {synth_in};
      auto games = load_or_die(synth_in, false);
      synth::FlipPolicy policy{p_flip, min_flips, seed};
      synth::SynthResult res = synth::generate_synthetic(games, policy);
      for (const auto& s : res.skipped)
        std::cerr << "warning: skipped " << s.game_id << ": " << s.reason << "\n";
      corpus::save_games((out / "synthetic.jsonl").string(), res.games);
      util::write_file_atomic((out / "synthetic.policy.json").string(),
                              synth::policy_manifest_json(policy, games.size(), res.games.size(),
                                                          res.skipped.size()));
      manifest.outputs = {"synthetic.jsonl", "synthetic.policy.json"};
      manifest.write(out);
      std::cerr << "generated " << res.games.size() << " synthetic games\n";
    } else if (c_pretrain->parsed()) {
      manifest.command = "pretrain";
      manifest.config = {{"arch", arch},
                         {"lr", util::format_fixed(pretrain_lr, 8)},
                         {"epochs", std::to_string(pretrain_epochs)},
                         {"batch", std::to_string(batch_size)}};
      manifest.inputs = {pretrain_synth};
      if (!features_path.empty()) manifest.inputs.push_back(features_path);
      auto games = load_or_die(pretrain_synth, false);
      auto table = qtype::KeywordTable::defaults();
      auto store = open_store(features_path, pseudo_dim, seed);
      auto a = detector::architecture_from_string(arch);
      if (!a) throw std::runtime_error("unknown architecture " + arch);
      detector::ModelConfig cfg = proto;
      cfg.architecture = *a;
      cfg.feature_dim = store.dim();
      detector::Vocabulary vocab = detector::Vocabulary::build(games);
      detector::DetectorModel model(cfg, vocab, seed);
      detector::TrainConfig tc = train_config_from(seed, pretrain_lr, finetune_lr, kfolds,
                                                   pretrain_epochs, finetune_epochs, batch_size,
                                                   oversample, patience);
      detector::PretrainResult res = detector::pretrain(model, games, store, table, tc);
      res.model.save_file((out / "checkpoint.txt").string());
      std::ostringstream metrics;
      metrics << "schema = pretrain-metrics/1\nseed = " << seed << "\nbest_epoch = " << res.best_epoch
              << "\n";
      for (const auto& e : res.epochs)
        metrics << "epoch " << e.epoch << " loss=" << util::format_fixed(e.train_loss, 6)
                << " val_f=" << util::format_fixed(e.val_f, 6) << "\n";
      util::write_file_atomic((out / "pretrain_metrics.txt").string(), metrics.str());
      manifest.outputs = {"checkpoint.txt", "pretrain_metrics.txt"};
      manifest.write(out);
      std::cerr << "best epoch " << res.best_epoch << "\n";
    } else if (c_finetune->parsed()) {
      manifest.command = "finetune";
      manifest.config = {{"arch", ft_experiment ? "all" : arch},
                         {"lr", util::format_fixed(finetune_lr, 8)},
                         {"k", std::to_string(kfolds)},
                         {"oversample", oversample},
                         {"experiment", ft_experiment ? "true" : "false"}};
      std::vector<corpus::GameRecord> pool, same_test, diff_test;
      if (!ft_human.empty()) {
        if (ft_synth.empty())
          throw std::runtime_error("--human needs --synthetic to know the pretraining images");
        manifest.inputs = {ft_human, ft_synth};
        manifest.config["test_fraction"] = util::format_fixed(ft_test_fraction, 4);
        auto human = load_or_die(ft_human, false);
        auto synthetic_games = load_or_die(ft_synth, false);
        std::set<std::string> pretrain_ids;
        for (const auto& g : synthetic_games) pretrain_ids.insert(g.image.image_id);
        auto [same_all, diff_all] = corpus::split_same_different(human, pretrain_ids);
        diff_test = std::move(diff_all);
        // Seeded split of the same-image set into the fine-tune pool and the
        // held-out test share.
        std::vector<std::size_t> order(same_all.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        util::Rng rng(util::hash_mix(seed, 0x5e7));
        rng.shuffle(order);
        const auto n_test =
            static_cast<std::size_t>(std::floor(ft_test_fraction * static_cast<double>(order.size())));
        for (std::size_t i = 0; i < order.size(); ++i)
          (i < n_test ? same_test : pool).push_back(same_all[order[i]]);
        std::cerr << "same-image " << same_all.size() << " (pool " << pool.size() << ", test "
                  << same_test.size() << "), different-image " << diff_test.size() << "\n";
      } else {
        if (ft_pool.empty() || ft_same.empty() || ft_diff.empty())
          throw std::runtime_error("need --human or all of --pool, --same-test, --diff-test");
        manifest.inputs = {ft_pool, ft_same, ft_diff};
        pool = load_or_die(ft_pool, false);
        same_test = load_or_die(ft_same, false);
        diff_test = load_or_die(ft_diff, false);
      }
      auto table = load_table(ft_keywords);
      auto store = open_store(features_path, pseudo_dim, seed);
      detector::TrainConfig tc = train_config_from(seed, pretrain_lr, finetune_lr, kfolds,
                                                   pretrain_epochs, finetune_epochs, batch_size,
                                                   oversample, patience);
      if (ft_experiment) {
        if (ft_synth.empty()) throw std::runtime_error("--experiment requires --synthetic");
        manifest.inputs.push_back(ft_synth);
        auto synthetic = load_or_die(ft_synth, false);
        detector::ModelConfig cfg = proto;
        cfg.feature_dim = store.dim();
        experiment::ExperimentInput in{synthetic, pool, same_test, diff_test};
        experiment::ExperimentOutput res = experiment::run_experiment(in, store, table, cfg, tc);
        util::write_file_atomic((out / "report.txt").string(), res.report);
        util::write_file_atomic((out / "run_metrics.jsonl").string(), run_metrics_lines(res.runs));
        manifest.outputs = {"report.txt", "run_metrics.jsonl"};
      } else {
        std::optional<detector::DetectorModel> model;
        std::string learning;
        if (!ft_checkpoint.empty()) {
          manifest.inputs.push_back(ft_checkpoint);
          model = detector::DetectorModel::load_file(ft_checkpoint);
          learning = "synthetic+human-mistake";
        } else {
          if (ft_synth.empty())
            throw std::runtime_error("need --checkpoint or --synthetic (for the vocabulary)");
          manifest.inputs.push_back(ft_synth);
          auto synthetic = load_or_die(ft_synth, false);
          auto a = detector::architecture_from_string(arch);
          if (!a) throw std::runtime_error("unknown architecture " + arch);
          detector::ModelConfig cfg = proto;
          cfg.architecture = *a;
          cfg.feature_dim = store.dim();
          model.emplace(cfg, detector::Vocabulary::build(synthetic), seed);
          learning = "human-mistake";
        }
        detector::KfoldResult kf =
            detector::finetune_kfold(*model, pool, same_test, diff_test, store, table, tc);
        std::string model_tag(to_string(model->config().architecture));
        std::vector<eval::RunMetrics> runs;
        runs.push_back({model_tag, "same-image", learning, kf.same_test, kf.same_last, kf.same_other,
                        kf.flags});
        runs.push_back({model_tag, "different-image", learning, kf.diff_test, kf.diff_last,
                        kf.diff_other, kf.flags});
        util::write_file_atomic((out / "run_metrics.jsonl").string(), run_metrics_lines(runs));
        std::ostringstream folds;
        folds << "schema = finetune-metrics/1\nseed = " << seed << "\nmean_val_f = "
              << util::format_fixed(kf.mean_val_f, 6) << "\nmean_same_f = "
              << util::format_fixed(kf.mean_same_f, 6) << "\nmean_diff_f = "
              << util::format_fixed(kf.mean_diff_f, 6) << "\n";
        for (const auto& flag : kf.flags) folds << "flag = " << flag << "\n";
        util::write_file_atomic((out / "finetune_metrics.txt").string(), folds.str());
        manifest.outputs = {"run_metrics.jsonl", "finetune_metrics.txt"};
      }
      manifest.write(out);
    } else if (c_eval->parsed()) {
      manifest.command = "eval";
      manifest.inputs = eval_runs;
      std::vector<eval::RunMetrics> runs;
      for (const auto& path : eval_runs) {
        auto part = load_run_metrics(path);
        runs.insert(runs.end(), part.begin(), part.end());
      }
      std::string config_hash = util::hex64(util::fnv1a64(run_metrics_lines(runs)));
      util::write_file_atomic((out / "report.txt").string(),
                              eval::assemble_report(runs, seed, config_hash));
      manifest.outputs = {"report.txt"};
      manifest.write(out);
    } else if (c_prompts->parsed()) {
      manifest.command = "prompts";
      if (prompts_mode == "build") {
        if (prompts_in.empty() || prompts_context.empty())
          throw std::runtime_error("prompts build mode needs --in and --context-pool");
        manifest.config = {{"type", prompts_type},
                           {"history", prompts_history ? "true" : "false"}};
        manifest.inputs = {prompts_in, prompts_context};
        auto queries = load_or_die(prompts_in, false);
        auto pool = load_or_die(prompts_context, false);
        auto table = load_table(prompts_keywords);

        prompts::PromptType type;
        type.with_history = prompts_history;
        if (prompts_type == "normal") type.kind = prompts::PromptKind::Normal;
        if (prompts_type == "qtype-hint") type.kind = prompts::PromptKind::QTypeHint;
        if (prompts_type == "time-hint") type.kind = prompts::PromptKind::TimeHint;

        auto example_at = [&](const corpus::GameRecord& g, std::size_t turn) {
          prompts::PromptExample ex;
          ex.image_id = g.image.image_id;
          ex.overlay_bbox = g.target().bbox;
          ex.category_name = g.target().category_name;
          ex.history.assign(g.qas.begin(), g.qas.begin() + static_cast<std::ptrdiff_t>(turn));
          ex.question = g.qas[turn].question;
          ex.answer = g.qas[turn].answer;
          ex.question_type = qtype::classify_question(g.qas[turn].question, table);
          ex.normalized_turn = stats::normalized_turn(turn + 1, g.total_turns());
          ex.gold_mistake = g.qas[turn].mistake_label;
          return ex;
        };

        // Context candidates: labeled Yes/No answers; history variants also
        // need at least one prior turn.
        std::vector<prompts::PromptExample> candidates;
        std::vector<std::string> candidate_ids;
        for (const auto& g : pool) {
          for (std::size_t t = 0; t < g.qas.size(); ++t) {
            if (g.qas[t].answer == corpus::Answer::NA || !g.qas[t].mistake_label) continue;
            if (type.with_history && t == 0) continue;
            candidates.push_back(example_at(g, t));
            candidate_ids.push_back(g.game_id + "#" + std::to_string(t + 1));
          }
        }
        if (candidates.size() < 8)
          throw std::runtime_error("context pool provides fewer than 8 usable examples");

        std::ostringstream body;
        std::size_t made = 0;
        for (const auto& g : queries) {
          for (std::size_t t = 0; t < g.qas.size(); ++t) {
            if (g.qas[t].answer == corpus::Answer::NA) continue;
            if (type.with_history && t == 0) continue;
            const std::string query_id = g.game_id + "#" + std::to_string(t + 1);
            // The query never appears in its own context, even when --in and
            // --context-pool overlap.
            std::vector<std::size_t> usable;
            for (std::size_t i = 0; i < candidates.size(); ++i) {
              if (candidate_ids[i] != query_id) usable.push_back(i);
            }
            if (usable.size() < 8) {
              std::cerr << "warning: skipping " << query_id << ": fewer than 8 context examples\n";
              continue;
            }
            util::Rng rng(util::hash_mix(seed, util::fnv1a64(query_id)));
            std::vector<prompts::PromptExample> ctx;
            std::vector<std::size_t> picked;
            while (ctx.size() < 8) {
              std::size_t i = usable[static_cast<std::size_t>(rng.below(usable.size()))];
              if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
              picked.push_back(i);
              ctx.push_back(candidates[i]);
            }
            prompts::PromptExample query = example_at(g, t);
            prompts::VlmRequest req;
            req.id = g.game_id + "#" + std::to_string(t + 1);
            req.prompt = prompts::assemble_fewshot(ctx, query, type);
            req.image_id = g.image.image_id;
            req.overlay_bbox = g.target().bbox;
            for (const auto& c : ctx) req.context_image_ids.push_back(c.image_id);
            req.type = type;
            req.label = g.qas[t].mistake_label.value_or(false) ? 1 : 0;
            body << prompts::request_to_json_line(req) << "\n";
            ++made;
          }
        }
        util::write_file_atomic((out / "requests.jsonl").string(), body.str());
        manifest.outputs = {"requests.jsonl"};
        manifest.write(out);
        std::cerr << "built " << made << " requests\n";
      } else {
        if (prompts_requests.empty() || prompts_responses.empty())
          throw std::runtime_error("prompts score mode needs --requests and --responses");
        manifest.inputs = {prompts_requests, prompts_responses};
        auto requests = prompts::load_requests(prompts_requests);
        auto responses = prompts::load_responses(prompts_responses);
        prompts::VlmScore score = prompts::score_vlm_run(requests, responses);
        for (const auto& id : score.missing_ids) std::cerr << "warning: no response for " << id << "\n";
        util::write_file_atomic((out / "vlm_report.txt").string(),
                                prompts::render_vlm_report(score, seed));
        manifest.outputs = {"vlm_report.txt"};
        manifest.write(out);
      }
    } else if (c_gradcheck->parsed()) {
      double worst = 0.0;
      for (detector::Architecture a : {detector::Architecture::Baseline, detector::Architecture::QATurn,
                                       detector::Architecture::QuestionType}) {
        for (std::size_t trial = 0; trial < gc_trials; ++trial) {
          const std::uint64_t s = util::hash_mix(seed, util::hash_mix(static_cast<std::uint64_t>(a), trial));
          detector::ModelConfig cfg = detector::ModelConfig::tiny(a);
          detector::Vocabulary vocab;
          vocab.tokens = {"<unk>", "is", "it", "red", "left"};
          for (std::size_t i = 0; i < vocab.tokens.size(); ++i) vocab.index[vocab.tokens[i]] = i;
          detector::DetectorModel model(cfg, vocab, s);
          util::Rng rng(util::hash_mix(s, 999));
          std::vector<double> i_emb(cfg.feature_dim), s_emb(cfg.feature_dim);
          for (double& v : i_emb) v = rng.uniform(-1, 1);
          for (double& v : s_emb) v = rng.uniform(-1, 1);
          detector::SpatialFeatures sf =
              detector::spatial_features({10, 10, 50, 40}, {"img", 100, 100, std::nullopt});
          std::vector<std::string> tokens{"is", "it", "red"};
          detector::Extra extra;
          if (a == detector::Architecture::QATurn) extra = 0.5;
          if (a == detector::Architecture::QuestionType) extra = qtype::QuestionType::Color;
          const double label = trial % 2 == 0 ? 1.0 : 0.0;
          auto run = [&]() {
            nn::Tape tape(model.params());
            nn::Tape::Node p = model.build_forward(tape, i_emb, s_emb, sf, tokens,
                                                   corpus::Answer::Yes, extra);
            nn::Tape::Node loss = tape.bce_loss(p, label);
            tape.backward(loss);
            return tape.scalar(loss);
          };
          nn::GradCheckResult r = nn::gradient_check(run, model.params(), gc_eps);
          worst = std::max(worst, r.max_rel_err);
        }
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3e", worst);
      std::cout << "max relative error: " << buf << " (tolerance " << gc_tol << ")\n";
      return worst <= gc_tol ? kExitOk : kExitVerification;
    } else if (c_fixtures->parsed()) {
      manifest.command = "make-fixtures";
      auto turn_games = fixtures::turn_analysis_fixture();
      corpus::save_games((out / "turn_fixture.jsonl").string(), turn_games);
      fixtures::PlantedConfig pc;
      pc.seed = seed;
      fixtures::PlantedFixture fx = fixtures::planted_fixture(pc);
      corpus::save_games((out / "planted_pretrain.jsonl").string(), fx.pretrain);
      corpus::save_games((out / "planted_pool.jsonl").string(), fx.pool);
      corpus::save_games((out / "planted_same_test.jsonl").string(), fx.same_test);
      corpus::save_games((out / "planted_diff.jsonl").string(), fx.diff);
      fx.store.save((out / "planted_features.jsonl").string());
      manifest.outputs = {"turn_fixture.jsonl",      "planted_pretrain.jsonl",
                          "planted_pool.jsonl",      "planted_same_test.jsonl",
                          "planted_diff.jsonl",      "planted_features.jsonl"};
      manifest.write(out);
      std::cerr << "fixtures written to " << out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
