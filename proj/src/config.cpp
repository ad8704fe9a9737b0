#include "usersim/config.hpp"

#include <fstream>
#include <sstream>

#include "usersim/corpus.hpp"
#include "usersim/errors.hpp"

namespace usersim {

using nlohmann::ordered_json;

ordered_json config_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["workers"] = c.workers;
  j["world"] = {{"vocab_size", c.world.vocab_size},
                {"profile_dim", c.world.profile_dim},
                {"summary_dim", c.world.summary_dim},
                {"max_utterance_len", c.world.max_utterance_len},
                {"agents_path", c.world.agents_path},
                {"ground_truth_path", c.world.ground_truth_path}};
  j["corpus"] = {{"n_contexts", c.corpus.n_contexts},
                 {"sims_per_context", c.corpus.sims_per_context},
                 {"train_fraction", c.corpus.train_fraction}};
  j["sft"] = {{"family", c.sft.family},
              {"lr", c.sft.lr},
              {"epochs", c.sft.epochs},
              {"batch_size", c.sft.batch_size}};
  j["disc"] = {{"lr", c.disc.lr}, {"epochs", c.disc.epochs}};
  j["dpo"] = {{"beta", c.dpo.beta},
              {"lr", c.dpo.lr},
              {"epochs", c.dpo.epochs},
              {"warmup_ratio", c.dpo.warmup_ratio},
              {"batch_size", c.dpo.batch_size}};
  j["mining"] = {{"k_alternatives", c.mining.k_alternatives}};
  j["loop"] = {{"n_iterations", c.loop.n_iterations}};
  j["eval"] = {{"turn_points", c.eval.turn_points},
               {"n_contexts", c.eval.n_contexts},
               {"sims_per_context", c.eval.sims_per_context}};
  return j;
}

namespace {

bool same_kind(const ordered_json& want, const ordered_json& got) {
  if (want.is_number_float()) return got.is_number();
  if (want.is_number_unsigned()) return got.is_number_unsigned() || (got.is_number_integer() && got.get<std::int64_t>() >= 0);
  if (want.is_number_integer()) return got.is_number_integer();
  return want.type() == got.type();
}

// Overlays `src` onto the default tree `dst`, rejecting unknown keys and
// values of the wrong JSON type.
void overlay(ordered_json& dst, const ordered_json& src, const std::string& path) {
  if (!src.is_object()) throw ValidationError("expected an object", path.empty() ? "config" : path);
  for (const auto& [k, v] : src.items()) {
    const std::string field = path.empty() ? k : path + "." + k;
    if (!dst.contains(k)) throw ValidationError("unknown config field", field);
    ordered_json& d = dst[k];
    if (d.is_object()) {
      overlay(d, v, field);
    } else {
      if (!same_kind(d, v)) throw ValidationError("wrong type for config field", field);
      if (d.is_array()) {
        for (const auto& e : v) {
          if (!e.is_number_integer()) throw ValidationError("expected a list of integers", field);
        }
      }
      d = v;
    }
  }
}

template <typename T>
T get(const ordered_json& j, const char* section, const char* key) {
  const std::string field = std::string(section) + "." + key;
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("bad config field", field);
  }
}

}  // namespace

ExperimentConfig config_from_json(const ordered_json& j) {
  ordered_json tree = config_to_json(ExperimentConfig{});
  overlay(tree, j, "");
  ExperimentConfig c;
  c.seed = tree.at("seed").get<std::uint64_t>();
  c.out_dir = tree.at("out_dir").get<std::string>();
  c.workers = tree.at("workers").get<int>();
  c.world.vocab_size = get<int>(tree, "world", "vocab_size");
  c.world.profile_dim = get<int>(tree, "world", "profile_dim");
  c.world.summary_dim = get<int>(tree, "world", "summary_dim");
  c.world.max_utterance_len = get<int>(tree, "world", "max_utterance_len");
  c.world.agents_path = get<std::string>(tree, "world", "agents_path");
  c.world.ground_truth_path = get<std::string>(tree, "world", "ground_truth_path");
  c.corpus.n_contexts = get<int>(tree, "corpus", "n_contexts");
  c.corpus.sims_per_context = get<int>(tree, "corpus", "sims_per_context");
  c.corpus.train_fraction = get<double>(tree, "corpus", "train_fraction");
  c.sft.family = get<std::string>(tree, "sft", "family");
  c.sft.lr = get<double>(tree, "sft", "lr");
  c.sft.epochs = get<int>(tree, "sft", "epochs");
  c.sft.batch_size = get<int>(tree, "sft", "batch_size");
  c.disc.lr = get<double>(tree, "disc", "lr");
  c.disc.epochs = get<int>(tree, "disc", "epochs");
  c.dpo.beta = get<double>(tree, "dpo", "beta");
  c.dpo.lr = get<double>(tree, "dpo", "lr");
  c.dpo.epochs = get<int>(tree, "dpo", "epochs");
  c.dpo.warmup_ratio = get<double>(tree, "dpo", "warmup_ratio");
  c.dpo.batch_size = get<int>(tree, "dpo", "batch_size");
  c.mining.k_alternatives = get<int>(tree, "mining", "k_alternatives");
  c.loop.n_iterations = get<int>(tree, "loop", "n_iterations");
  c.eval.turn_points = get<std::vector<int>>(tree, "eval", "turn_points");
  c.eval.n_contexts = get<int>(tree, "eval", "n_contexts");
  c.eval.sims_per_context = get<int>(tree, "eval", "sims_per_context");
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0)) throw ValidationError("must be > 0", field);
  };
  auto non_negative = [](double v, const char* field) {
    if (!(v >= 0)) throw ValidationError("must be >= 0", field);
  };
  if (out_dir.empty()) throw ValidationError("must be non-empty", "out_dir");
  positive(workers, "workers");
  if (world.vocab_size < static_cast<int>(tok::kFirstContent) + kNumTopics + kNumNeutral) {
    throw ValidationError("vocabulary too small", "world.vocab_size");
  }
  if (world.profile_dim != kProfileDim) throw ValidationError("must equal 8", "world.profile_dim");
  if (world.summary_dim != kSummaryDim) throw ValidationError("must equal 8", "world.summary_dim");
  positive(world.max_utterance_len, "world.max_utterance_len");
  if (world.agents_path.empty()) throw ValidationError("must be non-empty", "world.agents_path");
  if (world.ground_truth_path.empty()) {
    throw ValidationError("must be non-empty", "world.ground_truth_path");
  }
  positive(corpus.n_contexts, "corpus.n_contexts");
  positive(corpus.sims_per_context, "corpus.sims_per_context");
  if (!(corpus.train_fraction > 0.0 && corpus.train_fraction < 1.0)) {
    throw ValidationError("must lie in (0,1)", "corpus.train_fraction");
  }
  if (corpus.n_contexts * corpus.sims_per_context < 2) {
    throw ValidationError("corpus needs at least 2 sessions", "corpus.n_contexts");
  }
  if (sft.family != "full" && sft.family != "restricted") {
    throw ValidationError("must be \"full\" or \"restricted\"", "sft.family");
  }
  positive(sft.lr, "sft.lr");
  non_negative(sft.epochs, "sft.epochs");
  non_negative(sft.batch_size, "sft.batch_size");
  positive(disc.lr, "disc.lr");
  non_negative(disc.epochs, "disc.epochs");
  positive(dpo.beta, "dpo.beta");
  positive(dpo.lr, "dpo.lr");
  non_negative(dpo.epochs, "dpo.epochs");
  if (!(dpo.warmup_ratio >= 0.0 && dpo.warmup_ratio <= 1.0)) {
    throw ValidationError("must lie in [0,1]", "dpo.warmup_ratio");
  }
  non_negative(dpo.batch_size, "dpo.batch_size");
  if (mining.k_alternatives < 2) throw ValidationError("must be >= 2", "mining.k_alternatives");
  positive(loop.n_iterations, "loop.n_iterations");
  if (eval.turn_points.empty()) throw ValidationError("must be non-empty", "eval.turn_points");
  for (int t : eval.turn_points) {
    if (t < 1) throw ValidationError("turn points are 1-based", "eval.turn_points");
  }
  positive(eval.n_contexts, "eval.n_contexts");
  positive(eval.sims_per_context, "eval.sims_per_context");
}

std::string emit_config(const ExperimentConfig& c) { return config_to_json(c).dump(2) + "\n"; }

ExperimentConfig parse_config(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what(), "config");
  }
  return config_from_json(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

ExperimentConfig apply_overrides(const ExperimentConfig& c, const std::vector<std::string>& overrides) {
  ordered_json patch = ordered_json::object();
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("override must look like key.path=value", o);
    }
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    ordered_json value;
    try {
      value = ordered_json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      value = raw;
    }
    ordered_json* node = &patch;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ValidationError("empty path component", key);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (!node->is_object()) *node = ordered_json::object();
      start = dot + 1;
    }
  }
  ordered_json tree = config_to_json(c);
  overlay(tree, patch, "");
  return config_from_json(tree);
}

}  // namespace usersim
