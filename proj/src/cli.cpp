#include "usersim/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "usersim/dpo.hpp"
#include "usersim/errors.hpp"
#include "usersim/loop.hpp"
#include "usersim/metrics.hpp"
#include "usersim/report.hpp"
#include "usersim/reward_mining.hpp"
#include "usersim/rng.hpp"

namespace usersim {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kGroundTruthSeed = 20251015;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void write_curve(const fs::path& path, const char* column, std::span<const double> curve) {
  std::string text = std::string("epoch,") + column + "\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f\n", i, curve[i]);
    text += buf;
  }
  write_text(path, text);
}

fs::path out_dir(const ExperimentConfig& cfg) { return cfg.out_dir; }

// Input artifact of an earlier stage, either named on the command line or at
// its default place under the output directory.
fs::path input(const std::optional<fs::path>& given, const fs::path& fallback, const char* what) {
  const fs::path p = given ? *given : fallback;
  if (!fs::exists(p)) {
    throw MissingFixture(std::string("missing ") + what + " " + p.string());
  }
  return p;
}

void save_config(const ExperimentConfig& cfg) { write_text(out_dir(cfg) / "config.json", emit_config(cfg)); }

ExperimentInputs inputs(const ExperimentConfig& cfg) { return prepare_experiment(cfg, load_world(cfg)); }

PolicyParams stage_policy(const ExperimentConfig& cfg, const CliOptions& opt) {
  return load_policy(input(opt.policy, out_dir(cfg) / "sft" / "policy.ckpt", "policy checkpoint"));
}

std::uint64_t first_iteration(const ExperimentConfig& cfg) { return iteration_seed(cfg.seed, 1); }

}  // namespace

ExperimentConfig resolve_config(const CliOptions& opt) {
  ExperimentConfig cfg = opt.config ? load_config(*opt.config) : ExperimentConfig{};
  std::vector<std::string> ov = opt.overrides;
  if (opt.seed) ov.push_back("seed=" + std::to_string(*opt.seed));
  if (opt.workers) ov.push_back("workers=" + std::to_string(*opt.workers));
  if (opt.iterations) ov.push_back("loop.n_iterations=" + std::to_string(*opt.iterations));
  if (!ov.empty()) cfg = apply_overrides(cfg, ov);
  if (opt.out) {
    if (opt.out->empty()) throw ValidationError("must be non-empty", "out_dir");
    cfg.out_dir = *opt.out;
  } else if (const char* root = std::getenv(kOutEnv); root && *root && fs::path(cfg.out_dir).is_relative()) {
    cfg.out_dir = (fs::path(root) / cfg.out_dir).string();
  }
  cfg.validate();
  return cfg;
}

std::string cmd_init_fixtures(const ExperimentConfig& cfg) {
  const auto agents = default_agent_grid();
  const fs::path ap = cfg.world.agents_path;
  const fs::path gp = cfg.world.ground_truth_path;
  if (ap.has_parent_path()) fs::create_directories(ap.parent_path());
  if (gp.has_parent_path()) fs::create_directories(gp.parent_path());
  write_agent_configs(agents, ap);
  save_ground_truth_user(make_ground_truth_user(kGroundTruthSeed), gp);
  return "init-fixtures: " + std::to_string(agents.size()) + " agents -> " + ap.string() +
         ", ground-truth user -> " + gp.string();
}

std::string cmd_generate(const ExperimentConfig& cfg) {
  const auto in = inputs(cfg);
  save_config(cfg);
  fs::create_directories(out_dir(cfg) / "real");
  write_sessions(in.real, out_dir(cfg) / "real" / "sessions.jsonl");
  const auto rate = issue_rate(in.real);
  return "generate: " + std::to_string(in.real.size()) + " real sessions, issue rate " +
         fmt("%.3f", rate.percent) + "% -> " + (out_dir(cfg) / "real").string();
}

std::string cmd_sft(const ExperimentConfig& cfg) {
  const auto in = inputs(cfg);
  save_config(cfg);
  const SftResult res = train_sft(cfg, in);
  const fs::path dir = out_dir(cfg) / "sft";
  fs::create_directories(dir);
  save_policy(res.params, dir / "policy.ckpt", ordered_json{{"stage", "sft"}});
  write_curve(dir / "loss.csv", "loss", res.loss_curve);
  return "sft: " + cfg.sft.family + " family, loss " + fmt("%.4f", res.loss_curve.front()) + " -> " +
         fmt("%.4f", res.loss_curve.back()) + " -> " + (dir / "policy.ckpt").string();
}

std::string cmd_disc(const ExperimentConfig& cfg, const CliOptions& opt) {
  const PolicyParams policy = stage_policy(cfg, opt);
  const auto in = inputs(cfg);
  save_config(cfg);
  const std::uint64_t seed = first_iteration(cfg);
  const auto sim = generate_simulated(cfg, in, policy, "sft", derive_seed(seed, "generate"));

  DiscFeatureSpec dspec;
  dspec.vocab_size = cfg.world.vocab_size;
  DiscTrainConfig dc;
  dc.lr = cfg.disc.lr;
  dc.epochs = cfg.disc.epochs;
  dc.seed = derive_seed(seed, "disc");
  dc.workers = cfg.workers;
  const auto real_val = in.real_validation();
  const auto sim_train = gather<Session>(sim, in.split.train);
  const auto sim_val = gather<Session>(sim, in.split.validation);
  const auto disc = disc_train(DiscriminatorParams(dspec), in.real_train(), sim_train, dc);
  const auto eval = disc_evaluate(disc.params, real_val, sim_val, cfg.eval.turn_points, cfg.workers);

  const fs::path dir = out_dir(cfg) / "disc";
  fs::create_directories(dir);
  write_sessions(sim, dir / "sessions.jsonl");
  save_discriminator(disc.params, dir / "disc.ckpt");
  write_disc_eval_csv(eval, dir / "disc_eval.csv");
  write_curve(dir / "loss.csv", "loss", disc.loss_curve);
  double acc = 0.0;
  for (const auto& m : eval) {
    if (!m.turn) acc = m.acc;
  }
  return "disc: held-out accuracy " + fmt("%.4f", acc) + " on " + std::to_string(real_val.size() + sim_val.size()) +
         " sessions -> " + (dir / "disc.ckpt").string();
}

std::string cmd_mine(const ExperimentConfig& cfg, const CliOptions& opt) {
  const PolicyParams policy = stage_policy(cfg, opt).with_family(Family::full);
  const auto disc = load_discriminator(input(opt.disc, out_dir(cfg) / "disc" / "disc.ckpt", "discriminator"));
  const Vocabulary vocab(cfg.world.vocab_size);
  const auto sim = read_sessions(input(std::nullopt, out_dir(cfg) / "disc" / "sessions.jsonl", "simulated corpus"), vocab);
  save_config(cfg);
  MiningConfig mc;
  mc.k_alternatives = cfg.mining.k_alternatives;
  mc.max_utterance_len = cfg.world.max_utterance_len;
  mc.seed = derive_seed(first_iteration(cfg), "mine");
  mc.workers = cfg.workers;
  const auto mined = mine_pairs(policy, disc, sim, mc);
  const auto kept = filter_pairs(mined);
  const fs::path dir = out_dir(cfg) / "mine";
  fs::create_directories(dir);
  write_pairs(mined, dir / "pairs_unfiltered.jsonl");
  write_pairs(kept, dir / "pairs.jsonl");
  return "mine: " + std::to_string(mined.size()) + " pairs mined, " + std::to_string(kept.size()) +
         " kept -> " + (dir / "pairs.jsonl").string();
}

std::string cmd_dpo(const ExperimentConfig& cfg, const CliOptions& opt) {
  const PolicyParams policy = stage_policy(cfg, opt).with_family(Family::full);
  const Vocabulary vocab(cfg.world.vocab_size);
  const auto pairs = read_pairs(input(opt.pairs, out_dir(cfg) / "mine" / "pairs.jsonl", "preference pairs"), vocab);
  if (pairs.empty()) throw ValidationError("preference file holds no pairs", "pairs");
  save_config(cfg);
  DpoConfig pc;
  pc.beta = cfg.dpo.beta;
  pc.lr = cfg.dpo.lr;
  pc.epochs = cfg.dpo.epochs;
  pc.warmup_ratio = cfg.dpo.warmup_ratio;
  pc.batch_size = cfg.dpo.batch_size;
  pc.seed = derive_seed(first_iteration(cfg), "dpo");
  const DpoResult res = dpo_train(policy, pairs, pc);
  const fs::path dir = out_dir(cfg) / "dpo";
  fs::create_directories(dir);
  save_policy(res.params, dir / "policy.ckpt", ordered_json{{"stage", "dpo"}});
  std::string curve = "epoch,loss,margin\n";
  char buf[96];
  for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%.9f\n", i, res.loss_curve[i], res.margin_curve[i]);
    curve += buf;
  }
  write_text(dir / "loss.csv", curve);
  return "dpo: " + std::to_string(pairs.size()) + " pairs, loss " + fmt("%.4f", res.loss_curve.front()) +
         " -> " + fmt("%.4f", res.loss_curve.back()) + " -> " + (dir / "policy.ckpt").string();
}

std::string cmd_loop(const ExperimentConfig& cfg, const CliOptions& opt) {
  const auto in = inputs(cfg);
  save_config(cfg);
  PolicyParams start = [&] {
    if (opt.policy) return load_policy(input(opt.policy, {}, "policy checkpoint"));
    const SftResult sft = train_sft(cfg, in);
    const fs::path dir = out_dir(cfg) / "sft";
    fs::create_directories(dir);
    save_policy(sft.params, dir / "policy.ckpt", ordered_json{{"stage", "sft"}});
    write_curve(dir / "loss.csv", "loss", sft.loss_curve);
    return sft.params;
  }();
  const LoopResult res = run_loop(start, cfg, in, out_dir(cfg) / "loop");
  std::string acc;
  for (const auto& r : res.records) acc += (acc.empty() ? "" : " ") + fmt("%.4f", r.overall_accuracy());
  return "loop: " + std::to_string(res.records.size()) + " iterations, discriminator accuracy [" + acc +
         "] -> " + (out_dir(cfg) / "loop").string();
}

namespace {

fs::path corpus_path(const fs::path& dir, const std::string& name) {
  return dir / "corpora" / (name + ".jsonl");
}

void check_name(const std::string& name) {
  if (name.empty() || name == "real" || name.find_first_of("/\\.") != std::string::npos) {
    throw ValidationError("simulator name must be non-empty, not \"real\", without '/', '\\' or '.'", "sim");
  }
}

std::vector<DiscTable> loop_disc_tables(const ExperimentConfig& cfg) {
  std::vector<DiscTable> out;
  for (int k = 1;; ++k) {
    const fs::path rec = out_dir(cfg) / "loop" / ("iter_" + std::to_string(k)) / "record.json";
    if (!fs::exists(rec)) break;
    std::ifstream in(rec, std::ios::binary);
    ordered_json j;
    try {
      j = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("bad iteration record " + rec.string() + ": " + e.what(), "record");
    }
    out.push_back({"iter_" + std::to_string(k), disc_eval_from_json(j.at("disc_eval"))});
  }
  return out;
}

std::string report_summary(const SuiteReport& r, const fs::path& dir) {
  std::string s;
  for (const auto& row : r.correlation.rows) {
    s += (s.empty() ? "" : ", ") + row.simulator + " r=" + fmt("%.3f", row.pearson.r);
  }
  return std::to_string(r.simulators.size()) + " simulators (" + s + ") -> " + dir.string();
}

std::vector<std::string> agent_ids(const ExperimentConfig& cfg) {
  std::vector<std::string> ids;
  for (const auto& a : read_agent_configs(input(std::nullopt, cfg.world.agents_path, "agent fixture"))) {
    ids.push_back(a.agent_id);
  }
  return ids;
}

}  // namespace

std::string cmd_eval(const ExperimentConfig& cfg, const CliOptions& opt) {
  const World world = load_world(cfg);
  const fs::path dir = out_dir(cfg) / "eval";

  // simulators: the SFT start and every loop iteration, plus any --sim
  std::vector<std::pair<std::string, fs::path>> sims;
  if (fs::exists(out_dir(cfg) / "sft" / "policy.ckpt")) sims.emplace_back("sft", out_dir(cfg) / "sft" / "policy.ckpt");
  for (int k = 1;; ++k) {
    const fs::path p = out_dir(cfg) / "loop" / ("iter_" + std::to_string(k)) / "policy.ckpt";
    if (!fs::exists(p)) break;
    sims.emplace_back("it" + std::to_string(k), p);
  }
  for (const auto& s : opt.sims) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ValidationError("--sim expects name=path", "sim");
    const std::string name = s.substr(0, eq);
    check_name(name);
    for (const auto& [n, p] : sims) {
      if (n == name) throw ValidationError("duplicate simulator name " + name, "sim");
    }
    sims.emplace_back(name, input(fs::path(s.substr(eq + 1)), {}, "simulator"));
  }
  if (sims.empty()) {
    throw MissingFixture("nothing to evaluate: no " + (out_dir(cfg) / "sft" / "policy.ckpt").string() +
                         ", no loop iterations and no --sim");
  }

  const auto plan = plan_rollouts(cfg.eval.n_contexts, cfg.eval.sims_per_context, world.agents.size(),
                                  derive_seed(cfg.seed, "eval"));
  NamedCorpus real{"real", {}};
  if (opt.real) {
    real.sessions = read_sessions(input(opt.real, {}, "real corpus"), world.vocab);
  } else {
    real.sessions = run_rollouts(world, make_user_policy(world.user.params, world.max_utterance_len),
                                 kGroundTruthPolicyId, plan, cfg.workers);
  }
  const auto sim_plan = reseed(plan, derive_seed(cfg.seed, "eval-simulators"));
  std::vector<NamedCorpus> corpora;
  for (const auto& [name, path] : sims) {
    NamedCorpus c{name, {}};
    if (path.extension() == ".jsonl") {
      c.sessions = read_sessions(path, world.vocab);
    } else {
      c.sessions = run_rollouts(world, make_user_policy(load_policy(path), world.max_utterance_len), name,
                                sim_plan, cfg.workers);
    }
    corpora.push_back(std::move(c));
  }

  save_config(cfg);
  fs::create_directories(dir / "corpora");
  write_sessions(real.sessions, corpus_path(dir, "real"));
  ordered_json manifest{{"real", "real"}, {"simulators", ordered_json::array()}};
  for (const auto& c : corpora) {
    write_sessions(c.sessions, corpus_path(dir, c.name));
    manifest["simulators"].push_back(c.name);
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::vector<std::string> ids;
  for (const auto& a : world.agents) ids.push_back(a.agent_id);
  const SuiteReport report = build_report(real, corpora, ids, default_ab_pairs(), loop_disc_tables(cfg));
  write_report(report, dir);
  return "eval: " + report_summary(report, dir);
}

std::string cmd_report(const ExperimentConfig& cfg) {
  const fs::path eval_dir = out_dir(cfg) / "eval";
  const fs::path mpath = input(std::nullopt, eval_dir / "manifest.json", "eval manifest (run eval first)");
  ordered_json manifest;
  try {
    std::ifstream in(mpath, std::ios::binary);
    manifest = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad eval manifest: ") + e.what(), "manifest");
  }
  const Vocabulary vocab(cfg.world.vocab_size);
  NamedCorpus real{"real", read_sessions(input(std::nullopt, corpus_path(eval_dir, "real"), "real corpus"), vocab)};
  std::vector<NamedCorpus> corpora;
  for (const auto& n : manifest.at("simulators")) {
    const std::string name = n.get<std::string>();
    corpora.push_back({name, read_sessions(input(std::nullopt, corpus_path(eval_dir, name), "simulator corpus"), vocab)});
  }
  const fs::path dir = out_dir(cfg) / "report";
  const SuiteReport report = build_report(real, corpora, agent_ids(cfg), default_ab_pairs(), loop_disc_tables(cfg));
  write_report(report, dir);
  return "report: " + report_summary(report, dir);
}

int run_command(const std::string& command, const CliOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig cfg = resolve_config(opt);
    std::string line;
    if (command == "init-fixtures") {
      line = cmd_init_fixtures(cfg);
    } else if (command == "generate") {
      line = cmd_generate(cfg);
    } else if (command == "sft") {
      line = cmd_sft(cfg);
    } else if (command == "disc") {
      line = cmd_disc(cfg, opt);
    } else if (command == "mine") {
      line = cmd_mine(cfg, opt);
    } else if (command == "dpo") {
      line = cmd_dpo(cfg, opt);
    } else if (command == "loop") {
      line = cmd_loop(cfg, opt);
    } else if (command == "eval") {
      line = cmd_eval(cfg, opt);
    } else if (command == "report") {
      line = cmd_report(cfg);
    } else {
      err << "error: unknown command " << command << '\n';
      return kExitError;
    }
    out << line << '\n';
    return kExitOk;
  } catch (const ValidationError& e) {
    err << "error: " << e.what();
    if (!e.field().empty()) err << " [field: " << e.field() << "]";
    err << '\n';
    return kExitInvalidConfig;
  } catch (const MissingFixture& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingFixture;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarially trained user simulators on a synthetic dialogue world"};
  app.require_subcommand(1);
  CliOptions opt;
  std::string config, outdir, policy, disc, pairs, real;
  std::uint64_t seed = 0;
  int workers = 1, iterations = 1;

  struct Spec {
    const char* name;
    const char* help;
  };
  const Spec specs[] = {
      {"init-fixtures", "write the agent grid and ground-truth user fixtures"},
      {"generate", "roll out the real corpus"},
      {"sft", "supervised fine-tuning on the real training split"},
      {"disc", "train a discriminator against the SFT policy"},
      {"mine", "mine and filter preference pairs"},
      {"dpo", "one DPO update on mined pairs"},
      {"loop", "SFT followed by the adversarial iterations"},
      {"eval", "evaluate simulators against a fresh real corpus"},
      {"report", "rebuild the report tables from an eval directory"},
  };
  for (const auto& s : specs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config, "JSON config file");
    sub->add_option("--seed", seed, "root seed");
    sub->add_option("--out", outdir, "output directory");
    sub->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--iterations", iterations, "adversarial iterations")->check(CLI::PositiveNumber);
    sub->add_option("--policy", policy, "policy checkpoint");
    sub->add_option("--disc", disc, "discriminator checkpoint");
    sub->add_option("--pairs", pairs, "preference pairs (JSONL)");
    sub->add_option("--real", real, "real corpus for eval (JSONL)");
    sub->add_option("--sim", opt.sims, "extra simulator for eval, name=path");
    sub->add_option("overrides", opt.overrides, "dotted config overrides, key.path=value");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, er;
    const int code = app.exit(e, o, er);
    out << o.str();
    err << er.str();
    return code == 0 ? kExitOk : kExitInvalidConfig;
  }
  CLI::App* sub = app.get_subcommands().front();
  auto given = [&](const char* flag) { return sub->get_option(flag)->count() > 0; };
  if (given("--config")) opt.config = config;
  if (given("--seed")) opt.seed = seed;
  if (given("--out")) opt.out = outdir;
  if (given("--workers")) opt.workers = workers;
  if (given("--iterations")) opt.iterations = iterations;
  if (given("--policy")) opt.policy = policy;
  if (given("--disc")) opt.disc = disc;
  if (given("--pairs")) opt.pairs = pairs;
  if (given("--real")) opt.real = real;
  return run_command(sub->get_name(), opt, out, err);
}

}  // namespace usersim
