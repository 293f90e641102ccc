#include "home/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "home/parallel.hpp"

namespace home {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean '" + std::string(v) + "' for " + std::string(key));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define HOME_INT(KEY, EXPR)                                                                                       \
  Field {                                                                                                         \
    KEY, [](RunConfig& c, std::string_view v) { c.EXPR = parse_number<std::remove_reference_t<decltype(c.EXPR)>>(KEY, v); }, \
        [](const RunConfig& c) { return std::to_string(c.EXPR); }                                                 \
  }
#define HOME_REAL(KEY, EXPR)                                                                      \
  Field {                                                                                         \
    KEY, [](RunConfig& c, std::string_view v) { c.EXPR = parse_number<double>(KEY, v); },         \
        [](const RunConfig& c) { return fmt(c.EXPR); }                                            \
  }
#define HOME_BOOL(KEY, EXPR)                                                                      \
  Field {                                                                                         \
    KEY, [](RunConfig& c, std::string_view v) { c.EXPR = parse_bool(KEY, v); },                   \
        [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); }                 \
  }
#define HOME_STR(KEY, EXPR)                                                                       \
  Field {                                                                                         \
    KEY, [](RunConfig& c, std::string_view v) { c.EXPR = std::string(v); },                       \
        [](const RunConfig& c) { return c.EXPR; }                                                 \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      HOME_INT("run.seed", seed),
      HOME_STR("run.out_dir", out_dir),
      HOME_INT("run.threads", threads),
      HOME_INT("model.d_model", model.d_model),
      HOME_INT("model.n_blocks", model.n_blocks),
      HOME_INT("model.n_heads", model.n_heads),
      HOME_INT("model.d_ffn", model.d_ffn),
      HOME_INT("model.max_seq", model.max_seq),
      HOME_INT("data.seed", data.seed),
      HOME_INT("data.min_depth", data.min_depth),
      HOME_INT("data.max_depth", data.max_depth),
      HOME_INT("data.warmup_size", data.warmup_size),
      HOME_INT("data.rl_pool_size", data.rl_pool_size),
      HOME_INT("data.sft_pool_size", data.sft_pool_size),
      HOME_INT("data.simple_pool_size", data.simple_pool_size),
      HOME_INT("data.bench_size", data.bench_size),
      HOME_INT("data.mixed_size", data.mixed_size),
      HOME_REAL("warmup.lr", warmup.lr),
      HOME_INT("warmup.batch_size", warmup.batch_size),
      HOME_INT("warmup.steps", warmup.steps),
      HOME_INT("warmup.eval_every", warmup.eval_every),
      HOME_INT("rl.G", rl.G),
      HOME_REAL("rl.eps_low", rl.eps_low),
      HOME_REAL("rl.eps_high", rl.eps_high),
      HOME_REAL("rl.lr", rl.lr),
      HOME_INT("rl.inner_epochs", rl.inner_epochs),
      HOME_INT("rl.batch_queries", rl.batch_queries),
      HOME_INT("rl.max_new", rl.max_new),
      HOME_INT("rl.total_steps", rl.total_steps),
      HOME_REAL("rl.max_seconds", rl.max_seconds),
      HOME_REAL("rl.temperature", rl.temperature),
      HOME_INT("rl.top_k", rl.top_k),
      HOME_INT("rl.eval_every", rl.eval_every),
      HOME_BOOL("rl.resample_dropped", rl.resample_dropped),
      HOME_REAL("rl.format_bonus", rl.format_bonus),
      HOME_INT("expand.router_hidden", expand.router_hidden),
      HOME_STR("expand.init", expand.init),
      HOME_INT("curation.n_samples", curation.n_samples),
      HOME_INT("curation.self_distill_cap", curation.self_distill_cap),
      HOME_REAL("sft.lr", sft.lr),
      HOME_INT("sft.batch_size", sft.batch_size),
      HOME_INT("sft.epochs", sft.epochs),
      HOME_INT("sft.max_steps", sft.max_steps),
      HOME_INT("sft.eval_every", sft.eval_every),
      HOME_REAL("sft.mix_thinking", sft.mix_thinking),
      HOME_REAL("sft.mix_nonthinking", sft.mix_nonthinking),
      HOME_REAL("sft.w_prediction", sft.w_prediction),
      HOME_REAL("sft.w_router", sft.w_router),
      HOME_INT("eval.max_new", eval.max_new),
  };
  return f;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.derive_seeds();
  return c;
}

void RunConfig::derive_seeds() {
  model.seed = hash_seed(seed, 0x6d6f64656cULL);
  warmup.seed = hash_seed(seed, 0x7761726dULL);
  rl.seed = hash_seed(seed, 0x726cULL);
  sft.seed = hash_seed(seed, 0x736674ULL);
}

void RunConfig::validate() const {
  model.validate();
  warmup.validate();
  rl.validate();
  sft.validate();
  RouterConfig{expand.router_hidden, "mean_token_embedding"}.validate();
  if (expand.init != "rl" && expand.init != "warmup") throw ConfigError("expand.init must be 'rl' or 'warmup'");
  if (data.min_depth < 2 || data.max_depth > 6 || data.min_depth > data.max_depth) {
    throw ConfigError("data depths must satisfy 2 <= min_depth <= max_depth <= 6");
  }
  if (data.bench_size < 1 || data.mixed_size < 2 || data.mixed_size % 2 != 0) {
    throw ConfigError("data.bench_size must be positive and data.mixed_size even and at least 2");
  }
  if (data.warmup_size < 1 || data.rl_pool_size < 1 || data.sft_pool_size < 1 || data.simple_pool_size < 1) {
    throw ConfigError("data pool sizes must be positive");
  }
  if (curation.n_samples < 1 || curation.self_distill_cap < 1) {
    throw ConfigError("curation.n_samples and curation.self_distill_cap must be positive");
  }
  if (eval.max_new < 1) throw ConfigError("eval.max_new must be positive");
  if (threads < 0) throw ConfigError("run.threads must be nonnegative");
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  const std::uint64_t seed_before = base.seed;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  bool seed_set = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'section.key = value'");
    const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
    if (key.find('.') == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": key '" + key + "' has no section");
    }
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (key == "run.seed") seed_set = true;
  }
  if (seed_set && base.seed != seed_before) base.derive_seeds();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

bool apply_seed_env(RunConfig& cfg) {
  const char* env = std::getenv("HOME_MOE_SEED");
  if (!env || !*env) return false;
  cfg.seed = parse_number<std::uint64_t>("HOME_MOE_SEED", env);
  cfg.derive_seeds();
  return true;
}

}  // namespace home
