#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metadiv/convolution.hpp"
#include "metadiv/genome.hpp"
#include "metadiv/holmes.hpp"
#include "metadiv/serialize.hpp"

namespace metadiv {

// ---------------------------------------------------------------------------
// Flat key-value run configuration. One file per run directory; its FNV-1a
// digest is stamped into the archive header and snapshots, so resuming
// against a different config is refused. The exploration budget is a CLI
// flag, not part of the config (raising it on resume is legitimate).
// ---------------------------------------------------------------------------

struct RunConfig {
  // grid and rollout
  int grid_x = 32, grid_y = 32, grid_z = 32;
  int channels = 4;  // M, air included
  int steps = 50;    // T
  std::string conv_backend = "fft";

  // observation / embedding
  int obs_dim = 16;  // D
  int vae_h1 = 256;
  int vae_h2 = 64;
  int latent = 8;

  // exploration loop
  std::uint64_t seed = 0;
  int bootstrap = 40;   // N_init: iterations sampled uniformly before goals kick in
  int train_every = 20;  // HOLMES cadence, iterations per round
  double goal_margin = 0.1;     // box expansion epsilon
  int max_retries = 5;          // degenerate-rollout retries per iteration

  // genome ranges
  double mu_min = 0.0, mu_max = 1.0;
  double sigma_min = 0.001, sigma_max = 0.3;
  double h_min = 0.1, h_max = 1.0;
  double dt_min = 0.05, dt_max = 0.5;
  int r_max = 5;
  double occupation_min = 0.05, occupation_max = 0.5;
  double c_density = 0.3;
  double i_density = 0.5;

  // CPPN
  int cppn_hidden_min = 1, cppn_hidden_max = 3;
  double cppn_weight_range = 2.0;
  double cppn_weight_clamp = 3.0;
  double cppn_weight_perturb = 0.8;
  double cppn_weight_sigma = 0.1;
  double cppn_add_node = 0.05;
  double cppn_add_connection = 0.1;
  double cppn_toggle = 0.02;

  // theta mutation
  double mut_cont_prob = 0.8;
  double mut_cont_sigma = 0.1;
  double mut_bit_flip = 0.02;
  double mut_radius_step = 0.1;

  // VAE training
  double vae_lr = 1e-3;
  double vae_beta1 = 0.9;
  double vae_beta2 = 0.999;
  double vae_adam_eps = 1e-8;
  int vae_batch = 64;
  double vae_kl_beta = 1.0;

  // HOLMES
  int plateau_window = 10;
  double plateau_threshold = 0.01;
  int min_population = 50;
  int buffer_cap = 500;
  int steps_per_round = 20;
  int kmeans_iters = 100;
  int kmeans_restarts = 8;

  GridDims grid_dims() const { return {grid_x, grid_y, grid_z, channels}; }

  ConvBackend backend() const { return conv_backend_from_string(conv_backend); }

  GenomeRanges genome_ranges() const {
    GenomeRanges r;
    r.m = channels;
    r.grid_x = grid_x;
    r.grid_y = grid_y;
    r.grid_z = grid_z;
    r.mu_min = mu_min;
    r.mu_max = mu_max;
    r.sigma_min = sigma_min;
    r.sigma_max = sigma_max;
    r.h_min = h_min;
    r.h_max = h_max;
    r.dt_min = dt_min;
    r.dt_max = dt_max;
    r.r_max = r_max;
    r.occupation_min = occupation_min;
    r.occupation_max = occupation_max;
    r.c_density = c_density;
    r.i_density = i_density;
    r.cppn = {cppn_hidden_min, cppn_hidden_max, cppn_weight_range, cppn_weight_clamp};
    return r;
  }

  ThetaMutationRates mutation_rates() const {
    ThetaMutationRates rates;
    rates.cont_prob = mut_cont_prob;
    rates.cont_sigma = mut_cont_sigma;
    rates.bit_flip = mut_bit_flip;
    rates.radius_step = mut_radius_step;
    rates.cppn = {cppn_weight_perturb, cppn_weight_sigma, cppn_add_node, cppn_add_connection,
                  cppn_toggle};
    return rates;
  }

  VaeDims vae_dims() const { return {obs_dim * obs_dim * obs_dim, vae_h1, vae_h2, latent}; }

  HolmesConfig holmes_config() const {
    HolmesConfig c;
    c.plateau_window = plateau_window;
    c.plateau_threshold = plateau_threshold;
    c.min_population = min_population;
    c.buffer_cap = buffer_cap;
    c.steps_per_round = steps_per_round;
    c.kmeans_iters = kmeans_iters;
    c.kmeans_restarts = kmeans_restarts;
    c.train = {vae_lr, vae_beta1, vae_beta2, vae_adam_eps, vae_batch, vae_kl_beta};
    return c;
  }
};

namespace detail {

// Key table: single source of truth for parsing, canonical output, and the
// digest. Order here defines the canonical file layout.
struct ConfigKey {
  const char* name;
  enum { kInt, kU64, kDouble, kString } type;
  void* (*ptr)(RunConfig&);
};

#define METADIV_CFG_FIELD(NAME, TYPE) \
  ConfigKey { #NAME, ConfigKey::TYPE, [](RunConfig& c) -> void* { return &c.NAME; } }

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      METADIV_CFG_FIELD(grid_x, kInt),
      METADIV_CFG_FIELD(grid_y, kInt),
      METADIV_CFG_FIELD(grid_z, kInt),
      METADIV_CFG_FIELD(channels, kInt),
      METADIV_CFG_FIELD(steps, kInt),
      METADIV_CFG_FIELD(conv_backend, kString),
      METADIV_CFG_FIELD(obs_dim, kInt),
      METADIV_CFG_FIELD(vae_h1, kInt),
      METADIV_CFG_FIELD(vae_h2, kInt),
      METADIV_CFG_FIELD(latent, kInt),
      METADIV_CFG_FIELD(seed, kU64),
      METADIV_CFG_FIELD(bootstrap, kInt),
      METADIV_CFG_FIELD(train_every, kInt),
      METADIV_CFG_FIELD(goal_margin, kDouble),
      METADIV_CFG_FIELD(max_retries, kInt),
      METADIV_CFG_FIELD(mu_min, kDouble),
      METADIV_CFG_FIELD(mu_max, kDouble),
      METADIV_CFG_FIELD(sigma_min, kDouble),
      METADIV_CFG_FIELD(sigma_max, kDouble),
      METADIV_CFG_FIELD(h_min, kDouble),
      METADIV_CFG_FIELD(h_max, kDouble),
      METADIV_CFG_FIELD(dt_min, kDouble),
      METADIV_CFG_FIELD(dt_max, kDouble),
      METADIV_CFG_FIELD(r_max, kInt),
      METADIV_CFG_FIELD(occupation_min, kDouble),
      METADIV_CFG_FIELD(occupation_max, kDouble),
      METADIV_CFG_FIELD(c_density, kDouble),
      METADIV_CFG_FIELD(i_density, kDouble),
      METADIV_CFG_FIELD(cppn_hidden_min, kInt),
      METADIV_CFG_FIELD(cppn_hidden_max, kInt),
      METADIV_CFG_FIELD(cppn_weight_range, kDouble),
      METADIV_CFG_FIELD(cppn_weight_clamp, kDouble),
      METADIV_CFG_FIELD(cppn_weight_perturb, kDouble),
      METADIV_CFG_FIELD(cppn_weight_sigma, kDouble),
      METADIV_CFG_FIELD(cppn_add_node, kDouble),
      METADIV_CFG_FIELD(cppn_add_connection, kDouble),
      METADIV_CFG_FIELD(cppn_toggle, kDouble),
      METADIV_CFG_FIELD(mut_cont_prob, kDouble),
      METADIV_CFG_FIELD(mut_cont_sigma, kDouble),
      METADIV_CFG_FIELD(mut_bit_flip, kDouble),
      METADIV_CFG_FIELD(mut_radius_step, kDouble),
      METADIV_CFG_FIELD(vae_lr, kDouble),
      METADIV_CFG_FIELD(vae_beta1, kDouble),
      METADIV_CFG_FIELD(vae_beta2, kDouble),
      METADIV_CFG_FIELD(vae_adam_eps, kDouble),
      METADIV_CFG_FIELD(vae_batch, kInt),
      METADIV_CFG_FIELD(vae_kl_beta, kDouble),
      METADIV_CFG_FIELD(plateau_window, kInt),
      METADIV_CFG_FIELD(plateau_threshold, kDouble),
      METADIV_CFG_FIELD(min_population, kInt),
      METADIV_CFG_FIELD(buffer_cap, kInt),
      METADIV_CFG_FIELD(steps_per_round, kInt),
      METADIV_CFG_FIELD(kmeans_iters, kInt),
      METADIV_CFG_FIELD(kmeans_restarts, kInt),
  };
  return keys;
}

#undef METADIV_CFG_FIELD

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parses `key = value` lines; '#' starts a comment. Unknown keys and
// malformed values are reported by name.
inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto eq = line.find('=');
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty())
        throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");

    const detail::ConfigKey* found = nullptr;
    for (const auto& k : detail::config_keys())
      if (key == k.name) found = &k;
    if (!found) throw ConfigError("unknown config key: " + key);
    try {
      void* p = found->ptr(cfg);
      switch (found->type) {
        case detail::ConfigKey::kInt: *static_cast<int*>(p) = std::stoi(value); break;
        case detail::ConfigKey::kU64: *static_cast<std::uint64_t*>(p) = std::stoull(value); break;
        case detail::ConfigKey::kDouble: *static_cast<double*>(p) = std::stod(value); break;
        case detail::ConfigKey::kString: *static_cast<std::string*>(p) = value; break;
      }
    } catch (const std::exception&) {
      throw ConfigError("bad value for config key " + key + ": '" + value + "'");
    }
  }
  return cfg;
}

// Canonical text: every key, fixed order, full precision. Two configs are
// interchangeable exactly when their canonical texts match.
inline std::string canonical_config(const RunConfig& cfg) {
  std::string out;
  RunConfig& c = const_cast<RunConfig&>(cfg);
  for (const auto& k : detail::config_keys()) {
    out += k.name;
    out += " = ";
    void* p = k.ptr(c);
    switch (k.type) {
      case detail::ConfigKey::kInt: out += std::to_string(*static_cast<int*>(p)); break;
      case detail::ConfigKey::kU64: out += std::to_string(*static_cast<std::uint64_t*>(p)); break;
      case detail::ConfigKey::kDouble: out += detail::format_double(*static_cast<double*>(p)); break;
      case detail::ConfigKey::kString: out += *static_cast<std::string*>(p); break;
    }
    out += "\n";
  }
  return out;
}

inline std::uint64_t config_digest(const RunConfig& cfg) {
  return fnv1a64(canonical_config(cfg));
}

// Structural validation; violations name the offending key.
inline std::vector<std::string> validate_config(const RunConfig& cfg) {
  std::vector<std::string> v;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) v.push_back(msg);
  };
  check(cfg.grid_x >= 4 && cfg.grid_y >= 4 && cfg.grid_z >= 4,
        "grid_x/grid_y/grid_z must be at least 4");
  check(cfg.channels >= 2 && cfg.channels <= 256, "channels must be in [2, 256]");
  check(cfg.steps >= 1, "steps must be at least 1");
  check(cfg.conv_backend == "fft" || cfg.conv_backend == "direct",
        "conv_backend must be 'fft' or 'direct'");
  check(cfg.obs_dim >= 2, "obs_dim must be at least 2");
  check(cfg.vae_h1 >= 1 && cfg.vae_h2 >= 1 && cfg.latent >= 1,
        "vae_h1/vae_h2/latent must be positive");
  check(cfg.bootstrap >= 1, "bootstrap must be at least 1");
  check(cfg.train_every >= 1, "train_every must be at least 1");
  check(cfg.goal_margin >= 0.0, "goal_margin must be non-negative");
  check(cfg.max_retries >= 0, "max_retries must be non-negative");
  check(cfg.mu_min <= cfg.mu_max && cfg.mu_min >= 0.0 && cfg.mu_max <= 1.0,
        "mu_min/mu_max must satisfy 0 <= min <= max <= 1");
  check(cfg.sigma_min > 0.0 && cfg.sigma_min <= cfg.sigma_max, "sigma_min/sigma_max invalid");
  check(cfg.h_min > 0.0 && cfg.h_min <= cfg.h_max && cfg.h_max <= 1.0, "h_min/h_max invalid");
  check(cfg.dt_min > 0.0 && cfg.dt_min <= cfg.dt_max && cfg.dt_max <= 1.0, "dt_min/dt_max invalid");
  check(cfg.r_max >= 1, "r_max must be at least 1");
  check(2 * cfg.r_max + 1 <= cfg.grid_x && 2 * cfg.r_max + 1 <= cfg.grid_y &&
            2 * cfg.r_max + 1 <= cfg.grid_z,
        "r_max too large for the grid (2*r_max+1 must fit)");
  check(cfg.occupation_min > 0.0 && cfg.occupation_min <= cfg.occupation_max &&
            cfg.occupation_max <= 1.0,
        "occupation_min/occupation_max invalid");
  check(cfg.c_density >= 0.0 && cfg.c_density <= 1.0, "c_density must be in [0, 1]");
  check(cfg.i_density >= 0.0 && cfg.i_density <= 1.0, "i_density must be in [0, 1]");
  check(cfg.cppn_hidden_min >= 0 && cfg.cppn_hidden_max >= cfg.cppn_hidden_min,
        "cppn_hidden_min/cppn_hidden_max invalid");
  check(cfg.cppn_weight_range > 0.0, "cppn_weight_range must be positive");
  check(cfg.vae_batch >= 1, "vae_batch must be at least 1");
  check(cfg.vae_lr > 0.0, "vae_lr must be positive");
  check(cfg.plateau_window >= 1, "plateau_window must be at least 1");
  check(cfg.min_population >= 1, "min_population must be at least 1");
  check(cfg.buffer_cap >= 1, "buffer_cap must be at least 1");
  check(cfg.steps_per_round >= 1, "steps_per_round must be at least 1");
  check(cfg.kmeans_iters >= 1 && cfg.kmeans_restarts >= 1,
        "kmeans_iters/kmeans_restarts must be at least 1");
  return v;
}

}  // namespace metadiv
