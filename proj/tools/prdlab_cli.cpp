#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "prdlab.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Failure {
  int code;
  std::string message;
};

void check(prdlab_status status, const std::string& context) {
  if (status == PRDLAB_OK) return;
  throw Failure{status == PRDLAB_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime,
                context + ": " + prdlab_last_error()};
}

struct StringDeleter {
  void operator()(char* s) const { prdlab_string_free(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

struct CorpusDeleter {
  void operator()(prdlab_corpus* c) const { prdlab_corpus_free(c); }
};
using Corpus = std::unique_ptr<prdlab_corpus, CorpusDeleter>;

struct ModelDeleter {
  void operator()(prdlab_model* m) const { prdlab_model_free(m); }
};
using Model = std::unique_ptr<prdlab_model, ModelDeleter>;

struct TrainerDeleter {
  void operator()(prdlab_trainer* t) const { prdlab_trainer_free(t); }
};
using Trainer = std::unique_ptr<prdlab_trainer, TrainerDeleter>;

template <typename F>
std::string take_string(F&& call, const std::string& context) {
  char* raw = nullptr;
  check(call(&raw), context);
  OwnedString owned(raw);
  return raw == nullptr ? std::string() : std::string(raw);
}

json parse_json(const std::string& text) { return json::parse(text); }

std::string data_dir() {
  const char* env = std::getenv("ARTIFACT_DATA_DIR");
  return env != nullptr && *env != '\0' ? std::string(env) : std::string("data/synthetic");
}

std::string default_corpus() { return (fs::path(data_dir()) / "corpus.jsonl").string(); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Failure{kExitRuntime, "cannot write " + path.string()};
  out << text;
  if (!out) throw Failure{kExitRuntime, "failed writing " + path.string()};
}

void write_json_file(const fs::path& path, const json& value) { write_text(path, value.dump(2) + "\n"); }

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Failure{kExitUsage, "cannot read config " + path.string()};
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Failure{kExitUsage, path.string() + ": " + e.what()};
  }
}

// Every run directory gets a manifest; the "config" section can be fed back
// through --config.
void write_manifest(const fs::path& dir, const std::string& subcommand, const json& config, const json& inputs,
                    const json& outputs) {
  write_json_file(dir / "manifest.json", {{"subcommand", subcommand},
                                          {"artifact_version", prdlab_version()},
                                          {"config", config},
                                          {"inputs", inputs},
                                          {"outputs", outputs}});
}

Corpus load_corpus(const std::string& path, std::size_t first, std::optional<std::size_t> count) {
  prdlab_corpus* raw = nullptr;
  check(prdlab_corpus_load(path.c_str(), &raw), "loading corpus " + path);
  Corpus full(raw);
  const std::size_t size = prdlab_corpus_size(full.get());
  if (first == 0 && (!count || *count == size)) return full;
  if (first >= size) throw Failure{kExitUsage, "--first is past the end of the corpus"};
  prdlab_corpus* slice = nullptr;
  check(prdlab_corpus_slice(full.get(), first, count.value_or(size - first), &slice), "slicing corpus");
  return Corpus(slice);
}

Model load_model(const std::string& path) {
  prdlab_model* raw = nullptr;
  check(prdlab_model_load(path.c_str(), &raw), "loading model " + path);
  return Model(raw);
}

// Options shared by the evaluation subcommands.
struct EvalOptions {
  std::string model;
  std::string corpus = default_corpus();
  std::size_t first = 0;
  std::optional<std::size_t> count;
  std::uint64_t seed = 0;
  std::string out = "runs/eval";
};

void add_eval_options(CLI::App* cmd, EvalOptions& o, const std::string& seed_help) {
  cmd->add_option("--model", o.model, "Encoder or training checkpoint")->required();
  cmd->add_option("--corpus", o.corpus, "corpus.jsonl to evaluate on ($ARTIFACT_DATA_DIR/corpus.jsonl)")
      ->capture_default_str();
  cmd->add_option("--first", o.first, "Index of the first pair used")->capture_default_str();
  cmd->add_option("--count", o.count, "Number of pairs used (default: all remaining)");
  cmd->add_option("--seed", o.seed, seed_help)->capture_default_str();
  cmd->add_option("--out", o.out, "Run directory")->capture_default_str();
}

json eval_inputs(const EvalOptions& o) {
  json inputs = {{"model", o.model}, {"corpus", o.corpus}, {"first", o.first}};
  inputs["count"] = o.count ? json(*o.count) : json();
  return inputs;
}

int run_gen_data(std::size_t n, std::size_t side, std::uint64_t seed, std::uint64_t first_id, const std::string& out) {
  prdlab_corpus* raw = nullptr;
  check(prdlab_corpus_generate(n, side, seed, first_id, &raw), "generating corpus");
  Corpus corpus(raw);
  check(prdlab_corpus_save(corpus.get(), out.c_str()), "saving corpus");
  write_manifest(out, "gen-data", {{"n", n}, {"side", side}, {"seed", seed}, {"first_id", first_id}}, json::object(),
                 {{"corpus", (fs::path(out) / "corpus.jsonl").string()}});
  std::cout << "wrote " << n << " pairs to " << (fs::path(out) / "corpus.jsonl").string() << "\n";
  return 0;
}

int run_perturb(const std::string& in, const std::vector<std::string>& reports, std::uint64_t seed,
                const std::string& out) {
  std::vector<std::string> lines = reports;
  if (!in.empty()) {
    std::ifstream file(in);
    if (!file) throw Failure{kExitUsage, "cannot read " + in};
    for (std::string line; std::getline(file, line);) {
      if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
    }
  }
  if (lines.empty()) throw Failure{kExitUsage, "no reports given (use --in or --report)"};
  std::ostringstream jsonl;
  for (const auto& line : lines) {
    jsonl << take_string([&](char** s) { return prdlab_perturb_json(line.c_str(), seed, s); }, "perturbing '" + line + "'")
          << "\n";
  }
  if (out.empty() || out == "-") {
    std::cout << jsonl.str();
  } else {
    write_text(out, jsonl.str());
  }
  return 0;
}

struct TrainOptions {
  std::string config;
  std::string corpus;
  std::string resume;
  std::string out = "runs/train";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<double> tau;
  std::optional<double> lr;
};

int run_train(const TrainOptions& o) {
  json overrides = json::object();
  std::string corpus_path = o.corpus;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw Failure{kExitUsage, "config file not found: " + o.config};
    json file = read_json_file(o.config);
    if (file.contains("subcommand") && file.contains("config")) file = file["config"];  // a run manifest
    if (!file.is_object()) throw Failure{kExitUsage, o.config + ": config must be a JSON object"};
    overrides = file;
    if (corpus_path.empty() && file.contains("data.corpus")) corpus_path = file["data.corpus"].get<std::string>();
  }
  if (corpus_path.empty()) corpus_path = default_corpus();
  if (o.seed) {
    overrides["encoder.init_seed"] = *o.seed;
    overrides["train.data_seed"] = *o.seed + 1;
    overrides["train.perturb_seed"] = *o.seed + 2;
  }
  if (o.epochs) overrides["train.epochs"] = *o.epochs;
  if (o.batch_size) overrides["train.batch_size"] = *o.batch_size;
  if (o.alpha) overrides["loss.alpha"] = *o.alpha;
  if (o.beta) overrides["loss.beta"] = *o.beta;
  if (o.tau) overrides["loss.tau"] = *o.tau;
  if (o.lr) overrides["train.lr"] = *o.lr;
  overrides.erase("data.corpus");

  Corpus corpus = load_corpus(corpus_path, 0, std::nullopt);
  prdlab_trainer* raw = nullptr;
  if (o.resume.empty()) {
    check(prdlab_trainer_create(overrides.dump().c_str(), corpus.get(), &raw), "configuring training");
  } else {
    check(prdlab_trainer_resume(o.resume.c_str(), corpus.get(), &raw), "resuming from " + o.resume);
  }
  Trainer trainer(raw);

  const fs::path dir(o.out);
  const fs::path metrics_path = dir / "metrics.jsonl";
  json config = parse_json(take_string([&](char** s) { return prdlab_trainer_config_json(trainer.get(), s); },
                                       "reading config"));
  config["data.corpus"] = corpus_path;
  const std::size_t checkpoint_every = config["train.checkpoint_every"].get<std::size_t>();
  fs::create_directories(dir / "checkpoints");
  write_manifest(dir, "train", config, {{"corpus", corpus_path}, {"resume", o.resume}},
                 {{"metrics", metrics_path.string()},
                  {"checkpoint", (dir / "checkpoints" / "final.json").string()},
                  {"model", (dir / "model.json").string()},
                  {"results", (dir / "results.json").string()}});
  if (o.resume.empty()) write_text(metrics_path, "");

  json last_epoch;
  const std::size_t total = prdlab_trainer_epochs_total(trainer.get());
  while (prdlab_trainer_epochs_done(trainer.get()) < total) {
    const std::string rows =
        take_string([&](char** s) { return prdlab_trainer_run_epoch(trainer.get(), s); }, "training");
    std::ofstream(metrics_path, std::ios::app) << rows;
    const std::size_t epoch = prdlab_trainer_epochs_done(trainer.get());
    double sums[4] = {0, 0, 0, 0};
    std::size_t steps = 0;
    std::istringstream lines(rows);
    for (std::string line; std::getline(lines, line); ++steps) {
      const json row = json::parse(line);
      sums[0] += row["global"].get<double>();
      sums[1] += row["local"].get<double>();
      sums[2] += row["pert"].get<double>();
      sums[3] += row["total"].get<double>();
    }
    last_epoch = {{"epoch", epoch},
                  {"global", sums[0] / steps},
                  {"local", sums[1] / steps},
                  {"pert", sums[2] / steps},
                  {"total", sums[3] / steps}};
    std::cerr << "epoch " << epoch << "/" << total << " total " << last_epoch["total"].get<double>() << "\n";
    if (checkpoint_every > 0 && epoch % checkpoint_every == 0 && epoch < total) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch-%04zu.json", epoch);
      const auto path = (dir / "checkpoints" / name).string();
      check(prdlab_trainer_save_checkpoint(trainer.get(), path.c_str()), "writing checkpoint");
    }
  }
  const auto final_path = (dir / "checkpoints" / "final.json").string();
  check(prdlab_trainer_save_checkpoint(trainer.get(), final_path.c_str()), "writing checkpoint");
  prdlab_model* model = nullptr;
  check(prdlab_trainer_model(trainer.get(), &model), "snapshotting model");
  Model owned(model);
  const auto model_path = (dir / "model.json").string();
  check(prdlab_model_save(owned.get(), model_path.c_str()), "writing model");

  write_json_file(dir / "results.json", {{"final_epoch_mean", last_epoch}});
  std::ostringstream csv;
  csv << "epoch,global,local,pert,total\n";
  if (!last_epoch.is_null()) {
    csv << last_epoch["epoch"] << ',' << last_epoch["global"] << ',' << last_epoch["local"] << ','
        << last_epoch["pert"] << ',' << last_epoch["total"] << '\n';
  }
  write_text(dir / "results.csv", csv.str());
  std::cout << "run written to " << dir.string() << "\n";
  return 0;
}

int run_eval_structure(const EvalOptions& o) {
  Corpus corpus = load_corpus(o.corpus, o.first, o.count);
  Model model = load_model(o.model);
  const json result = parse_json(take_string(
      [&](char** s) { return prdlab_eval_structure(model.get(), corpus.get(), o.seed, s); }, "structure evaluation"));
  const fs::path dir(o.out);
  write_json_file(dir / "results.json", result);
  std::ostringstream csv;
  csv << "n_samples,n_correct,accuracy,random_baseline,random_baseline_sd";
  for (auto it = result["confusion"].begin(); it != result["confusion"].end(); ++it) csv << ",wrong_" << it.key();
  csv << '\n'
      << result["n_samples"] << ',' << result["n_correct"] << ',' << result["accuracy"] << ','
      << result["random_baseline"] << ',' << result["random_baseline_sd"];
  for (const auto& count : result["confusion"]) csv << ',' << count;
  csv << '\n';
  write_text(dir / "results.csv", csv.str());
  write_manifest(dir, "eval-structure", {{"eval.seed", o.seed}}, eval_inputs(o),
                 {{"results", (dir / "results.json").string()}, {"csv", (dir / "results.csv").string()}});
  for (const auto& w : result["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
  std::cout << "structure accuracy " << result["accuracy"].get<double>() << " (" << result["n_correct"] << "/"
            << result["n_samples"] << "), random baseline " << result["random_baseline"].get<double>() << "\n";
  return 0;
}

int run_eval_retrieval(const EvalOptions& o, const std::vector<std::size_t>& k_values) {
  Corpus corpus = load_corpus(o.corpus, o.first, o.count);
  Model model = load_model(o.model);
  const json result = parse_json(take_string(
      [&](char** s) {
        return prdlab_eval_retrieval(model.get(), corpus.get(), k_values.data(), k_values.size(), s);
      },
      "retrieval evaluation"));
  const fs::path dir(o.out);
  write_json_file(dir / "results.json", result);
  std::ostringstream csv;
  csv << "direction,k,recall\n";
  for (const char* direction : {"image_to_text", "text_to_image"}) {
    for (auto it = result[direction].begin(); it != result[direction].end(); ++it) {
      csv << direction << ',' << it.key() << ',' << it.value() << '\n';
    }
  }
  write_text(dir / "results.csv", csv.str());
  write_manifest(dir, "eval-retrieval", {{"eval.k", k_values}}, eval_inputs(o),
                 {{"results", (dir / "results.json").string()}, {"csv", (dir / "results.csv").string()}});
  std::cout << result.dump(2) << "\n";
  return 0;
}

int run_probe(const EvalOptions& o) {
  Corpus corpus = load_corpus(o.corpus, o.first, o.count);
  Model model = load_model(o.model);
  const json result = parse_json(
      take_string([&](char** s) { return prdlab_probe(model.get(), corpus.get(), o.seed, s); }, "linear probe"));
  const fs::path dir(o.out);
  write_json_file(dir / "results.json", result);
  std::ostringstream csv;
  csv << "finding,accuracy,n_test\n";
  for (auto it = result["accuracy"].begin(); it != result["accuracy"].end(); ++it) {
    csv << it.key() << ',' << it.value() << ',' << result["n_test"] << '\n';
  }
  write_text(dir / "results.csv", csv.str());
  write_manifest(dir, "probe", {{"eval.split_seed", o.seed}}, eval_inputs(o),
                 {{"results", (dir / "results.json").string()}, {"csv", (dir / "results.csv").string()}});
  std::cout << result.dump(2) << "\n";
  return 0;
}

int run_gradcheck(std::size_t instances, std::uint64_t seed, double tolerance, const std::string& out) {
  int passed = 0;
  const json report = parse_json(take_string(
      [&](char** s) { return prdlab_gradcheck(instances, seed, tolerance, &passed, s); }, "gradient check"));
  for (const auto& c : report["cases"]) {
    std::printf("%-4s %-18s instances %-4zu max rel err %.3e %s\n", c["kind"].get<std::string>().c_str(),
                c["name"].get<std::string>().c_str(), c["instances"].get<std::size_t>(),
                c["max_relative_error"].get<double>(), c["passed"].get<bool>() ? "ok" : "FAIL");
  }
  std::printf("%s (tolerance %.1e, h %.1e)\n", passed ? "all gradients match" : "gradient check FAILED", tolerance,
              report["step"].get<double>());
  if (!out.empty()) {
    write_json_file(fs::path(out) / "results.json", report);
    write_manifest(out, "gradcheck", {{"seeds", instances}, {"seed", seed}, {"tolerance", tolerance}}, json::object(),
                   {{"results", (fs::path(out) / "results.json").string()}});
  }
  return passed ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-report alignment toolkit: synthetic data, perturbations, training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(prdlab_version()));

  std::size_t gen_n = 512;
  std::size_t gen_side = 32;
  std::uint64_t gen_seed = 7;
  std::uint64_t gen_first = 0;
  std::string gen_out = data_dir();
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic image/report corpus");
  gen->add_option("--n", gen_n, "Number of pairs")->capture_default_str();
  gen->add_option("--side", gen_side, "Image side in pixels")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Corpus seed")->capture_default_str();
  gen->add_option("--first-id", gen_first, "Id of the first pair; later ids give disjoint splits")
      ->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory ($ARTIFACT_DATA_DIR or data/synthetic)")->capture_default_str();

  std::string perturb_in;
  std::vector<std::string> perturb_reports;
  std::uint64_t perturb_seed = 0;
  std::string perturb_out;
  auto* perturb = app.add_subcommand("perturb", "Print the nine perturbations of each report as JSONL");
  perturb->add_option("--in", perturb_in, "Text file with one report per line");
  perturb->add_option("--report", perturb_reports, "Report text (repeatable)");
  perturb->add_option("--seed", perturb_seed, "Perturbation seed")->capture_default_str();
  perturb->add_option("--out", perturb_out, "Output JSONL file (default: stdout)");

  // Defaults shown in --help come from the library configuration.
  json defaults;
  {
    char* raw = nullptr;
    if (prdlab_default_config_json(&raw) == PRDLAB_OK) defaults = json::parse(OwnedString(raw).get());
  }
  auto dflt = [&](const char* key) { return defaults.contains(key) ? defaults[key].dump() : std::string("?"); };
  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "Train the encoders on a corpus");
  train->add_option("--config", train_opts.config, "JSON config with flat dotted keys, or a run manifest");
  train->add_option("--corpus", train_opts.corpus, "corpus.jsonl (default: data.corpus, else $ARTIFACT_DATA_DIR)");
  train->add_option("--resume", train_opts.resume, "Training checkpoint to continue from");
  train->add_option("--out", train_opts.out, "Run directory")->capture_default_str();
  train->add_option("--seed", train_opts.seed,
                    "Sets encoder.init_seed, train.data_seed, train.perturb_seed to S, S+1, S+2 (defaults " +
                        dflt("encoder.init_seed") + ", " + dflt("train.data_seed") + ", " +
                        dflt("train.perturb_seed") + ")");
  train->add_option("--epochs", train_opts.epochs, "Epochs [" + dflt("train.epochs") + "]");
  train->add_option("--batch-size", train_opts.batch_size, "Batch size [" + dflt("train.batch_size") + "]");
  train->add_option("--alpha", train_opts.alpha, "Local loss weight [" + dflt("loss.alpha") + "]");
  train->add_option("--beta", train_opts.beta, "Perturbation loss weight [" + dflt("loss.beta") + "]");
  train->add_option("--tau", train_opts.tau, "Contrastive temperature [" + dflt("loss.tau") + "]");
  train->add_option("--lr", train_opts.lr,
                    "Learning rate [" + dflt("train.lr") + "]; momentum " + dflt("train.momentum") +
                        ", weight decay " + dflt("train.weight_decay"));

  EvalOptions structure_opts;
  structure_opts.out = "runs/eval-structure";
  auto* structure = app.add_subcommand("eval-structure", "Rank each original report against its perturbations");
  add_eval_options(structure, structure_opts, "Perturbation seed for the evaluation");

  EvalOptions retrieval_opts;
  retrieval_opts.out = "runs/eval-retrieval";
  std::vector<std::size_t> k_values{1, 5, 10};
  auto* retrieval = app.add_subcommand("eval-retrieval", "Image/text recall@k");
  add_eval_options(retrieval, retrieval_opts, "Unused; kept for a uniform interface");
  retrieval->add_option("--k", k_values, "Cut-offs")->capture_default_str()->delimiter(',');

  EvalOptions probe_opts;
  probe_opts.out = "runs/probe";
  auto* probe = app.add_subcommand("probe", "Linear probe of the findings on frozen image embeddings");
  add_eval_options(probe, probe_opts, "Train/test split seed");

  std::size_t gc_instances = 50;
  std::uint64_t gc_seed = 0;
  double gc_tolerance = 1e-4;
  std::string gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare autodiff gradients with central differences");
  gradcheck->add_option("--seeds", gc_instances, "Random instances per loss and op")->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "Base seed")->capture_default_str();
  gradcheck->add_option("--tolerance", gc_tolerance, "Maximum relative error")->capture_default_str();
  gradcheck->add_option("--out", gc_out, "Run directory for the JSON report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return 0;
    const auto parsed = app.get_subcommands();
    std::cerr << (parsed.empty() ? app.help() : parsed.front()->help());
    return kExitUsage;
  }

  try {
    if (*gen) return run_gen_data(gen_n, gen_side, gen_seed, gen_first, gen_out);
    if (*perturb) return run_perturb(perturb_in, perturb_reports, perturb_seed, perturb_out);
    if (*train) return run_train(train_opts);
    if (*structure) return run_eval_structure(structure_opts);
    if (*retrieval) return run_eval_retrieval(retrieval_opts, k_values);
    if (*probe) return run_probe(probe_opts);
    if (*gradcheck) return run_gradcheck(gc_instances, gc_seed, gc_tolerance, gc_out);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
