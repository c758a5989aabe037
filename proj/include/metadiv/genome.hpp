#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "metadiv/cppn.hpp"
#include "metadiv/rng.hpp"
#include "metadiv/serialize.hpp"

namespace metadiv {

// ---------------------------------------------------------------------------
// System genome theta = (psi, phi): everything that determines one rollout.
// Channel 0 is air; it is initialized by rule and never a kernel destination.
// ---------------------------------------------------------------------------

struct ChannelInit {
  double occupation_ratio;  // (0, 1]
  CppnGenome genome;
};

struct InitParams {
  std::vector<std::uint8_t> init_mask;  // I, size M; init_mask[0] == 0
  std::map<int, ChannelInit> channels;  // one entry per set bit
};

struct KernelParams {
  double h;           // (0, 1] per-pair update fraction
  int rx, ry, rz;     // kernel radii
  CppnGenome genome;  // renders the kernel tensor
  double mu;          // growth mean, [0, 1]
  double sigma;       // growth width, > 0
};

struct UpdateRuleParams {
  int m = 0;
  std::vector<std::uint8_t> interaction;            // C, m*m row-major [i*m + j]
  std::map<std::pair<int, int>, KernelParams> kernels;  // one entry per set bit
  double dt;                                        // (0, 1] global rate

  bool active(int i, int j) const {
    return interaction[static_cast<std::size_t>(i) * m + j] != 0;
  }
};

struct SystemGenome {
  InitParams psi;
  UpdateRuleParams phi;
};

// Admissible ranges for sampling and mutation clamping.
struct GenomeRanges {
  int m = 4;
  int grid_x = 32, grid_y = 32, grid_z = 32;
  double mu_min = 0.0, mu_max = 1.0;
  double sigma_min = 0.001, sigma_max = 0.3;  // log-uniform
  double h_min = 0.1, h_max = 1.0;
  double dt_min = 0.05, dt_max = 0.5;
  int r_max = 5;
  double occupation_min = 0.05, occupation_max = 0.5;
  double c_density = 0.3;  // Bernoulli rate per interaction bit
  double i_density = 0.5;  // Bernoulli rate per init bit
  CppnConfig cppn;
};

struct ThetaMutationRates {
  double cont_prob = 0.8;       // chance each continuous field is perturbed
  double cont_sigma = 0.1;      // Gaussian step, relative to the field's range
  double bit_flip = 0.02;       // per I/C bit
  double radius_step = 0.1;     // chance of a +-1 radius walk per axis
  CppnMutationRates cppn;

  bool all_zero() const {
    return cont_prob == 0 && bit_flip == 0 && radius_step == 0 &&
           cppn.weight_perturb == 0 && cppn.add_node == 0 && cppn.add_connection == 0 &&
           cppn.toggle == 0;
  }
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace detail {

inline ChannelInit sample_channel_init(Rng& rng, const GenomeRanges& r) {
  ChannelInit ci;
  ci.occupation_ratio = rng.uniform(r.occupation_min, r.occupation_max);
  ci.genome = new_random_genome(rng, r.cppn);
  return ci;
}

inline KernelParams sample_kernel_params(Rng& rng, const GenomeRanges& r) {
  KernelParams kp;
  kp.h = rng.uniform(r.h_min, r.h_max);
  kp.rx = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.r_max)));
  kp.ry = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.r_max)));
  kp.rz = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(r.r_max)));
  kp.genome = new_random_genome(rng, r.cppn);
  kp.mu = rng.uniform(r.mu_min, r.mu_max);
  kp.sigma = rng.log_uniform(r.sigma_min, r.sigma_max);
  return kp;
}

}  // namespace detail

// Uniform draw over the admissible ranges. Repairs keep the draw valid:
// at least one initialized channel, and every initialized channel gets at
// least one incoming kernel.
inline SystemGenome sample_genome(Rng& rng, const GenomeRanges& r) {
  SystemGenome theta;
  int m = r.m;

  theta.psi.init_mask.assign(static_cast<std::size_t>(m), 0);
  for (int j = 1; j < m; ++j)
    theta.psi.init_mask[static_cast<std::size_t>(j)] = rng.bernoulli(r.i_density) ? 1 : 0;
  bool any = std::any_of(theta.psi.init_mask.begin(), theta.psi.init_mask.end(),
                         [](std::uint8_t b) { return b != 0; });
  if (!any) {
    int j = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(m - 1)));
    theta.psi.init_mask[static_cast<std::size_t>(j)] = 1;
  }
  for (int j = 1; j < m; ++j)
    if (theta.psi.init_mask[static_cast<std::size_t>(j)])
      theta.psi.channels.emplace(j, detail::sample_channel_init(rng, r));

  theta.phi.m = m;
  theta.phi.interaction.assign(static_cast<std::size_t>(m) * m, 0);
  for (int i = 0; i < m; ++i)
    for (int j = 1; j < m; ++j)
      theta.phi.interaction[static_cast<std::size_t>(i) * m + j] = rng.bernoulli(r.c_density) ? 1 : 0;
  // repair: every initialized channel needs an incoming kernel to develop
  for (int j = 1; j < m; ++j) {
    if (!theta.psi.init_mask[static_cast<std::size_t>(j)]) continue;
    bool incoming = false;
    for (int i = 0; i < m; ++i) incoming = incoming || theta.phi.active(i, j);
    if (!incoming) {
      int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
      theta.phi.interaction[static_cast<std::size_t>(i) * m + j] = 1;
    }
  }
  for (int i = 0; i < m; ++i)
    for (int j = 1; j < m; ++j)
      if (theta.phi.active(i, j))
        theta.phi.kernels.emplace(std::make_pair(i, j), detail::sample_kernel_params(rng, r));
  theta.phi.dt = rng.uniform(r.dt_min, r.dt_max);
  return theta;
}

inline SystemGenome sample_genome(std::uint64_t seed, const GenomeRanges& r) {
  Rng rng(seed);
  return sample_genome(rng, r);
}

// ---------------------------------------------------------------------------
// Mutation
// ---------------------------------------------------------------------------

namespace detail {

inline double perturb_clamped(Rng& rng, double v, double lo, double hi, double sigma_rel) {
  return std::clamp(v + rng.normal(0.0, sigma_rel * (hi - lo)), lo, hi);
}

inline double perturb_log_clamped(Rng& rng, double v, double lo, double hi, double sigma_rel) {
  double lv = std::log(v) + rng.normal(0.0, sigma_rel * (std::log(hi) - std::log(lo)));
  return std::exp(std::clamp(lv, std::log(lo), std::log(hi)));
}

inline int perturb_radius(Rng& rng, int v, int r_max, double step_prob) {
  if (!rng.bernoulli(step_prob)) return v;
  int step = rng.bernoulli(0.5) ? 1 : -1;
  return std::clamp(v + step, 1, r_max);
}

}  // namespace detail

// Perturbs theta in a fixed field order. Bit flips that would break an
// invariant are repaired rather than rejected, so the operator is total.
inline SystemGenome mutate_genome_theta(const SystemGenome& theta, Rng& rng,
                                        const ThetaMutationRates& rates, const GenomeRanges& r) {
  SystemGenome out = theta;
  int m = r.m;

  if (rng.bernoulli(rates.cont_prob))
    out.phi.dt = detail::perturb_clamped(rng, out.phi.dt, r.dt_min, r.dt_max, rates.cont_sigma);

  // init side: ratios and pattern genomes, then bit flips with repair
  for (auto& [j, ci] : out.psi.channels) {
    if (rng.bernoulli(rates.cont_prob))
      ci.occupation_ratio = detail::perturb_clamped(rng, ci.occupation_ratio, r.occupation_min,
                                                    r.occupation_max, rates.cont_sigma);
    ci.genome = mutate_genome(ci.genome, rng, rates.cppn, r.cppn);
  }
  for (int j = 1; j < m; ++j) {
    if (!rng.bernoulli(rates.bit_flip)) continue;
    auto& bit = out.psi.init_mask[static_cast<std::size_t>(j)];
    if (bit) {
      bit = 0;
      out.psi.channels.erase(j);
    } else {
      bit = 1;
      out.psi.channels.emplace(j, detail::sample_channel_init(rng, r));
    }
  }
  bool any = std::any_of(out.psi.init_mask.begin(), out.psi.init_mask.end(),
                         [](std::uint8_t b) { return b != 0; });
  if (!any) {
    int j = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(m - 1)));
    out.psi.init_mask[static_cast<std::size_t>(j)] = 1;
    out.psi.channels.emplace(j, detail::sample_channel_init(rng, r));
  }

  // update side: per-kernel fields, then interaction bit flips
  for (auto& [pair, kp] : out.phi.kernels) {
    if (rng.bernoulli(rates.cont_prob))
      kp.h = detail::perturb_clamped(rng, kp.h, r.h_min, r.h_max, rates.cont_sigma);
    if (rng.bernoulli(rates.cont_prob))
      kp.mu = detail::perturb_clamped(rng, kp.mu, r.mu_min, r.mu_max, rates.cont_sigma);
    if (rng.bernoulli(rates.cont_prob))
      kp.sigma = detail::perturb_log_clamped(rng, kp.sigma, r.sigma_min, r.sigma_max, rates.cont_sigma);
    kp.rx = detail::perturb_radius(rng, kp.rx, r.r_max, rates.radius_step);
    kp.ry = detail::perturb_radius(rng, kp.ry, r.r_max, rates.radius_step);
    kp.rz = detail::perturb_radius(rng, kp.rz, r.r_max, rates.radius_step);
    kp.genome = mutate_genome(kp.genome, rng, rates.cppn, r.cppn);
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 1; j < m; ++j) {
      if (!rng.bernoulli(rates.bit_flip)) continue;
      auto& bit = out.phi.interaction[static_cast<std::size_t>(i) * m + j];
      if (bit) {
        bit = 0;
        out.phi.kernels.erase(std::make_pair(i, j));
      } else {
        bit = 1;
        out.phi.kernels.emplace(std::make_pair(i, j), detail::sample_kernel_params(rng, r));
      }
    }
  }
  for (int j = 1; j < m; ++j) {
    if (!out.psi.init_mask[static_cast<std::size_t>(j)]) continue;
    bool incoming = false;
    for (int i = 0; i < m; ++i) incoming = incoming || out.phi.active(i, j);
    if (!incoming) {
      int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
      out.phi.interaction[static_cast<std::size_t>(i) * m + j] = 1;
      out.phi.kernels.emplace(std::make_pair(i, j), detail::sample_kernel_params(rng, r));
    }
  }
  return out;
}

inline SystemGenome mutate_genome_theta(const SystemGenome& theta, std::uint64_t seed,
                                        const ThetaMutationRates& rates, const GenomeRanges& r) {
  Rng rng(seed);
  return mutate_genome_theta(theta, rng, rates, r);
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

// Checks every structural invariant; returns human-readable violations
// instead of aborting so callers can report all problems at once.
inline std::vector<std::string> validate(const SystemGenome& theta, const GenomeRanges& r) {
  std::vector<std::string> v;
  int m = r.m;

  if (static_cast<int>(theta.psi.init_mask.size()) != m)
    v.push_back("init mask arity != M");
  else {
    if (theta.psi.init_mask[0] != 0) v.push_back("air channel in init mask");
    bool any = false;
    for (int j = 1; j < m; ++j) {
      bool bit = theta.psi.init_mask[static_cast<std::size_t>(j)] != 0;
      bool entry = theta.psi.channels.count(j) != 0;
      any = any || bit;
      if (bit != entry) v.push_back("init mask / channel entry mismatch at " + std::to_string(j));
    }
    if (!any) v.push_back("no initialized channel");
  }
  for (const auto& [j, ci] : theta.psi.channels) {
    if (!(ci.occupation_ratio > 0.0 && ci.occupation_ratio <= 1.0))
      v.push_back("occupation ratio out of (0,1] at channel " + std::to_string(j));
    if (!is_feed_forward(ci.genome))
      v.push_back("init genome not feed-forward at channel " + std::to_string(j));
  }

  if (theta.phi.m != m || static_cast<int>(theta.phi.interaction.size()) != m * m) {
    v.push_back("interaction matrix arity != M*M");
    return v;
  }
  if (!(theta.phi.dt > 0.0 && theta.phi.dt <= 1.0)) v.push_back("dt out of (0,1]");
  for (int i = 0; i < m; ++i)
    if (theta.phi.active(i, 0)) v.push_back("air as destination from " + std::to_string(i));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      bool bit = theta.phi.active(i, j);
      bool entry = theta.phi.kernels.count(std::make_pair(i, j)) != 0;
      if (bit != entry)
        v.push_back("interaction bit / kernel entry mismatch at (" + std::to_string(i) + "," +
                    std::to_string(j) + ")");
    }
  }
  for (const auto& [pair, kp] : theta.phi.kernels) {
    std::string at = " at (" + std::to_string(pair.first) + "," + std::to_string(pair.second) + ")";
    if (!(kp.h > 0.0 && kp.h <= 1.0)) v.push_back("h out of (0,1]" + at);
    if (!(kp.mu >= 0.0 && kp.mu <= 1.0)) v.push_back("mu out of [0,1]" + at);
    if (!(kp.sigma > 0.0)) v.push_back("sigma not positive" + at);
    if (kp.rx < 1 || kp.ry < 1 || kp.rz < 1) v.push_back("radius below 1" + at);
    if (2 * kp.rx + 1 > r.grid_x || 2 * kp.ry + 1 > r.grid_y || 2 * kp.rz + 1 > r.grid_z)
      v.push_back("kernel too large" + at);
    if (!is_feed_forward(kp.genome)) v.push_back("kernel genome not feed-forward" + at);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Serialization: canonical field order, versioned, bit-exact round trip.
// ---------------------------------------------------------------------------

constexpr std::uint16_t kGenomeFormatVersion = 1;

inline void serialize_genome(const SystemGenome& theta, ByteWriter& w) {
  w.put_u16(kGenomeFormatVersion);
  w.put_u16(static_cast<std::uint16_t>(theta.psi.init_mask.size()));
  for (auto b : theta.psi.init_mask) w.put_u8(b);
  w.put_u32(static_cast<std::uint32_t>(theta.psi.channels.size()));
  for (const auto& [j, ci] : theta.psi.channels) {
    w.put_u16(static_cast<std::uint16_t>(j));
    w.put_f64(ci.occupation_ratio);
    serialize_cppn(ci.genome, w);
  }
  w.put_u16(static_cast<std::uint16_t>(theta.phi.m));
  for (auto b : theta.phi.interaction) w.put_u8(b);
  w.put_u32(static_cast<std::uint32_t>(theta.phi.kernels.size()));
  for (const auto& [pair, kp] : theta.phi.kernels) {
    w.put_u16(static_cast<std::uint16_t>(pair.first));
    w.put_u16(static_cast<std::uint16_t>(pair.second));
    w.put_f64(kp.h);
    w.put_u16(static_cast<std::uint16_t>(kp.rx));
    w.put_u16(static_cast<std::uint16_t>(kp.ry));
    w.put_u16(static_cast<std::uint16_t>(kp.rz));
    serialize_cppn(kp.genome, w);
    w.put_f64(kp.mu);
    w.put_f64(kp.sigma);
  }
  w.put_f64(theta.phi.dt);
}

inline SystemGenome deserialize_genome(ByteReader& r) {
  std::uint16_t version = r.get_u16();
  if (version != kGenomeFormatVersion) throw VersionMismatch("genome format version");
  SystemGenome theta;
  std::uint16_t m_psi = r.get_u16();
  theta.psi.init_mask.resize(m_psi);
  for (auto& b : theta.psi.init_mask) b = r.get_u8();
  std::uint32_t nch = r.get_u32();
  for (std::uint32_t i = 0; i < nch; ++i) {
    int j = r.get_u16();
    ChannelInit ci;
    ci.occupation_ratio = r.get_f64();
    ci.genome = deserialize_cppn(r);
    theta.psi.channels.emplace(j, std::move(ci));
  }
  theta.phi.m = r.get_u16();
  theta.phi.interaction.resize(static_cast<std::size_t>(theta.phi.m) * theta.phi.m);
  for (auto& b : theta.phi.interaction) b = r.get_u8();
  std::uint32_t nk = r.get_u32();
  for (std::uint32_t i = 0; i < nk; ++i) {
    int ki = r.get_u16();
    int kj = r.get_u16();
    KernelParams kp;
    kp.h = r.get_f64();
    kp.rx = r.get_u16();
    kp.ry = r.get_u16();
    kp.rz = r.get_u16();
    kp.genome = deserialize_cppn(r);
    kp.mu = r.get_f64();
    kp.sigma = r.get_f64();
    theta.phi.kernels.emplace(std::make_pair(ki, kj), std::move(kp));
  }
  theta.phi.dt = r.get_f64();
  return theta;
}

inline bool operator==(const SystemGenome& a, const SystemGenome& b) {
  ByteWriter wa, wb;
  serialize_genome(a, wa);
  serialize_genome(b, wb);
  return wa.bytes() == wb.bytes();
}

}  // namespace metadiv
