#include "usersim/loop.hpp"

#include <cstdio>
#include <fstream>

#include "usersim/dpo.hpp"
#include "usersim/metrics.hpp"
#include "usersim/reward_mining.hpp"
#include "usersim/rng.hpp"

namespace usersim {

using nlohmann::ordered_json;

World load_world(const ExperimentConfig& cfg) {
  const std::filesystem::path agents = cfg.world.agents_path;
  const std::filesystem::path gt = cfg.world.ground_truth_path;
  if (!std::filesystem::exists(agents)) throw MissingFixture("missing fixture " + agents.string());
  if (!std::filesystem::exists(gt)) throw MissingFixture("missing fixture " + gt.string());
  World w;
  w.vocab = Vocabulary(cfg.world.vocab_size);
  w.agents = read_agent_configs(agents);
  w.user = load_ground_truth_user(gt);
  w.max_utterance_len = cfg.world.max_utterance_len;
  if (w.user.params.vocab_size() != cfg.world.vocab_size) {
    throw ValidationError("ground-truth user vocabulary differs from world.vocab_size",
                          "world.vocab_size");
  }
  return w;
}

ExperimentInputs prepare_experiment(const ExperimentConfig& cfg, World world) {
  ExperimentInputs in{std::move(world), {}, {}, {}};
  in.plan = plan_rollouts(cfg.corpus.n_contexts, cfg.corpus.sims_per_context, in.world.agents.size(),
                          derive_seed(cfg.seed, "real"));
  in.real = run_rollouts(in.world, make_user_policy(in.world.user.params, in.world.max_utterance_len),
                         kGroundTruthPolicyId, in.plan, cfg.workers);
  in.split = split_indices(in.real.size(), cfg.corpus.train_fraction, cfg.seed);
  return in;
}

SftResult train_sft(const ExperimentConfig& cfg, const ExperimentInputs& in) {
  FeatureSpec spec;
  spec.vocab_size = cfg.world.vocab_size;
  spec.family = family_from_string(cfg.sft.family);
  SftConfig sc;
  sc.lr = cfg.sft.lr;
  sc.epochs = cfg.sft.epochs;
  sc.batch_size = cfg.sft.batch_size;
  sc.seed = derive_seed(cfg.seed, "sft");
  const auto train = in.real_train();
  return sft_train(PolicyParams(spec), train, sc);
}

double IterationRecord::overall_accuracy() const {
  for (const auto& m : disc_eval) {
    if (!m.turn) return m.acc;
  }
  return 0.0;
}

namespace {

ordered_json metrics_json(std::span<const TurnMetrics> rows) {
  ordered_json out = ordered_json::array();
  for (const auto& m : rows) {
    ordered_json j;
    j["turn"] = m.label();
    j["n"] = m.n;
    if (m.present) {
      j["acc"] = m.acc;
      j["f1"] = m.f1;
      j["mcc"] = m.mcc;
    } else {
      j["acc"] = nullptr;
      j["f1"] = nullptr;
      j["mcc"] = nullptr;
    }
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace

ordered_json to_json(const IterationRecord& r) {
  ordered_json j;
  j["iteration"] = r.iteration;
  j["policy_checkpoint"] = r.policy_checkpoint;
  j["disc_checkpoint"] = r.disc_checkpoint;
  j["n_sessions_generated"] = r.n_sessions_generated;
  j["n_pairs_mined"] = r.n_pairs_mined;
  j["n_pairs_retained"] = r.n_pairs_retained;
  j["disc_eval"] = metrics_json(r.disc_eval);
  j["disc_loss_curve"] = r.disc_loss_curve;
  j["dpo_loss_curve"] = r.dpo_loss_curve;
  j["dpo_margin_curve"] = r.dpo_margin_curve;
  j["metric_summary"] = r.metric_summary;
  return j;
}

std::uint64_t iteration_seed(std::uint64_t root, int k) {
  return mix_seed(derive_seed(root, "iteration"), static_cast<std::uint64_t>(k));
}

std::vector<Session> generate_simulated(const ExperimentConfig& cfg, const ExperimentInputs& in,
                                        const PolicyParams& policy, const std::string& policy_id,
                                        std::uint64_t seed) {
  const auto plan = reseed(in.plan, seed);
  return run_rollouts(in.world, make_user_policy(policy, in.world.max_utterance_len), policy_id, plan,
                      cfg.workers);
}

IterationResult run_iteration(const PolicyParams& policy, const ExperimentConfig& cfg,
                              const ExperimentInputs& in, int k, const std::filesystem::path& dir) {
  if (k < 1) throw ValidationError("iterations are numbered from 1", "iteration");
  const std::uint64_t seed = iteration_seed(cfg.seed, k);
  const std::string policy_id = k == 1 ? "sft" : "it" + std::to_string(k - 1);

  IterationRecord rec;
  rec.iteration = k;
  const auto sim = generate_simulated(cfg, in, policy, policy_id, derive_seed(seed, "generate"));
  rec.n_sessions_generated = sim.size();

  // fresh discriminator, on-policy data only, same split as the real corpus
  const auto real_train = in.real_train();
  const auto real_val = in.real_validation();
  const auto sim_train = gather<Session>(sim, in.split.train);
  const auto sim_val = gather<Session>(sim, in.split.validation);
  DiscFeatureSpec dspec;
  dspec.vocab_size = cfg.world.vocab_size;
  DiscTrainConfig dc;
  dc.lr = cfg.disc.lr;
  dc.epochs = cfg.disc.epochs;
  dc.seed = derive_seed(seed, "disc");
  dc.workers = cfg.workers;
  const DiscTrainResult disc = disc_train(DiscriminatorParams(dspec), real_train, sim_train, dc);
  rec.disc_loss_curve = disc.loss_curve;
  rec.disc_eval = disc_evaluate(disc.params, real_val, sim_val, cfg.eval.turn_points, cfg.workers);

  const EvalReport report = compare_corpora(real_val, sim_val);
  rec.metric_summary = {
      {"real_issue_rate", report.real.issue_rate.percent},
      {"simulated_issue_rate", report.simulated.issue_rate.percent},
      {"real_entropy_mean", report.real.entropy.mean},
      {"simulated_entropy_mean", report.simulated.entropy.mean},
      {"issue_kl", report.comparison.kl_divergence ? ordered_json(*report.comparison.kl_divergence)
                                                   : ordered_json(nullptr)},
      {"action_bce", report.comparison.bce}};

  MiningConfig mc;
  mc.k_alternatives = cfg.mining.k_alternatives;
  mc.max_utterance_len = cfg.world.max_utterance_len;
  mc.seed = derive_seed(seed, "mine");
  mc.workers = cfg.workers;
  const auto mined = mine_pairs(policy, disc.params, sim, mc);
  const auto kept = filter_pairs(mined);
  rec.n_pairs_mined = mined.size();
  rec.n_pairs_retained = kept.size();

  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    // relative to the iteration directory, so the record does not depend on where it lives
    rec.disc_checkpoint = "disc.ckpt";
    rec.policy_checkpoint = "policy.ckpt";
    write_sessions(sim, dir / "sessions.jsonl");
    write_pairs(kept, dir / "pairs.jsonl");
    save_discriminator(disc.params, dir / "disc.ckpt");
  }
  if (kept.empty()) {
    if (!dir.empty()) {
      std::ofstream(dir / "record.json", std::ios::binary) << to_json(rec).dump(2) << '\n';
    }
    throw IterationAborted(k, std::to_string(mined.size()) +
                                  " pairs mined, none with r_chosen > 0 and r_rejected < 0; the "
                                  "policy is already indistinguishable or filtering is too strict");
  }

  DpoConfig pc;
  pc.beta = cfg.dpo.beta;
  pc.lr = cfg.dpo.lr;
  pc.epochs = cfg.dpo.epochs;
  pc.warmup_ratio = cfg.dpo.warmup_ratio;
  pc.batch_size = cfg.dpo.batch_size;
  pc.seed = derive_seed(seed, "dpo");
  DpoResult upd = dpo_train(policy, kept, pc);
  rec.dpo_loss_curve = upd.loss_curve;
  rec.dpo_margin_curve = upd.margin_curve;

  if (!dir.empty()) {
    save_policy(upd.params, dir / "policy.ckpt", ordered_json{{"iteration", k}});
    std::ofstream out(dir / "record.json", std::ios::binary);
    out << to_json(rec).dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "record.json").string());
  }
  return {std::move(rec), std::move(upd.params)};
}

void write_trend_csv(std::span<const IterationRecord> records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "iteration,overall_acc,n_pairs_mined,n_pairs_retained\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%zu,%zu\n", r.iteration, r.overall_accuracy(),
                  r.n_pairs_mined, r.n_pairs_retained);
    out << buf;
  }
}

LoopResult run_loop(const PolicyParams& start, const ExperimentConfig& cfg,
                    const ExperimentInputs& in, const std::filesystem::path& out_dir) {
  if (cfg.loop.n_iterations < 1) throw ValidationError("must be >= 1", "loop.n_iterations");
  LoopResult res{{}, start.with_family(Family::full)};
  for (int k = 1; k <= cfg.loop.n_iterations; ++k) {
    const auto dir = out_dir.empty() ? std::filesystem::path{} : out_dir / ("iter_" + std::to_string(k));
    IterationResult it = run_iteration(res.final_policy, cfg, in, k, dir);
    res.records.push_back(std::move(it.record));
    res.final_policy = std::move(it.policy);
    if (!out_dir.empty()) write_trend_csv(res.records, out_dir / "trend.csv");
  }
  return res;
}

}  // namespace usersim
