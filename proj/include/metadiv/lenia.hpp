#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "metadiv/convolution.hpp"
#include "metadiv/cppn.hpp"
#include "metadiv/errors.hpp"
#include "metadiv/field.hpp"
#include "metadiv/genome.hpp"

namespace metadiv {

// ---------------------------------------------------------------------------
// State: M chemical-potential channels on a torus grid. Channel 0 is air,
// pinned to 0.1; cells whose non-air potentials all fall below the air level
// are considered empty and cleared.
// ---------------------------------------------------------------------------

constexpr double kAirPotential = 0.1;

struct GridState {
  int m = 0;
  std::vector<Field3> a;  // a[j], j in [0, m)

  GridState() = default;
  GridState(int sx, int sy, int sz, int channels) : m(channels) {
    a.reserve(static_cast<std::size_t>(channels));
    for (int j = 0; j < channels; ++j) a.emplace_back(sx, sy, sz);
  }

  int sx() const { return a.empty() ? 0 : a[0].sx; }
  int sy() const { return a.empty() ? 0 : a[0].sy; }
  int sz() const { return a.empty() ? 0 : a[0].sz; }

  bool operator==(const GridState& o) const { return m == o.m && a == o.a; }
};

struct VoxelFrame {
  int sx = 0, sy = 0, sz = 0;
  std::vector<std::uint8_t> blocks;  // channel index per cell, x-fastest

  bool operator==(const VoxelFrame&) const = default;
};

struct Artifact {
  std::vector<VoxelFrame> frames;  // length T+1
  GridState final_potentials;
};

struct ArtifactStats {
  std::vector<double> channel_mass;  // sum of final potentials per channel
  std::int64_t non_air_count = 0;    // final frame
  bool empty = true;                 // no non-air voxel in the final frame
  std::array<int, 3> bbox_min{0, 0, 0};
  std::array<int, 3> bbox_max{-1, -1, -1};
  std::array<double, 3> center_of_mass{0.0, 0.0, 0.0};  // defined when !empty
  std::vector<std::int64_t> per_frame_non_air;
};

// ---------------------------------------------------------------------------
// Physics steps
// ---------------------------------------------------------------------------

// Growth mapping: 2*exp(-(u - mu)^2 / (2 sigma^2)) - 1, elementwise in [-1, 1].
inline double growth_scalar(double u, double mu, double sigma) {
  double d = u - mu;
  return 2.0 * std::exp(-d * d / (2.0 * sigma * sigma)) - 1.0;
}

inline Field3 growth(const Field3& u, double mu, double sigma) {
  if (!(sigma > 0.0)) throw InvalidSigma("sigma must be positive");
  Field3 out(u.sx, u.sy, u.sz);
  for (std::size_t i = 0; i < u.data.size(); ++i) out.data[i] = growth_scalar(u.data[i], mu, sigma);
  return out;
}

// Pins air to 0.1 and clears cells whose non-air potentials are all below
// the air level. Idempotent.
inline void alive_mask_inplace(GridState& s) {
  const std::size_t n = s.a[0].data.size();
  for (std::size_t i = 0; i < n; ++i) s.a[0].data[i] = kAirPotential;
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    for (int j = 1; j < s.m; ++j) best = std::max(best, s.a[static_cast<std::size_t>(j)].data[i]);
    if (best < kAirPotential)
      for (int j = 1; j < s.m; ++j) s.a[static_cast<std::size_t>(j)].data[i] = 0.0;
  }
}

inline GridState alive_mask(GridState s) {
  alive_mask_inplace(s);
  return s;
}

inline void clip_inplace(GridState& s) {
  for (auto& field : s.a)
    for (double& v : field.data) v = std::clamp(v, 0.0, 1.0);
}

// Block per cell = argmax over all channels, air included at its pinned
// level; ties resolve to the lowest channel index.
inline VoxelFrame materialize(const GridState& s) {
  VoxelFrame frame;
  frame.sx = s.sx();
  frame.sy = s.sy();
  frame.sz = s.sz();
  const std::size_t n = s.a[0].data.size();
  frame.blocks.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int best_j = 0;
    double best = s.a[0].data[i];
    for (int j = 1; j < s.m; ++j) {
      double v = s.a[static_cast<std::size_t>(j)].data[i];
      if (v > best) {
        best = v;
        best_j = j;
      }
    }
    frame.blocks[i] = static_cast<std::uint8_t>(best_j);
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

struct GridDims {
  int sx, sy, sz;
  int m;
};

inline GridState init_state(const InitParams& psi, const GridDims& dims) {
  if (static_cast<int>(psi.init_mask.size()) != dims.m)
    throw ConfigMismatch("init params arity != M");
  GridState s(dims.sx, dims.sy, dims.sz, dims.m);
  for (const auto& [j, ci] : psi.channels)
    s.a[static_cast<std::size_t>(j)] =
        render_init_pattern(ci.genome, dims.sx, dims.sy, dims.sz, ci.occupation_ratio);
  clip_inplace(s);
  alive_mask_inplace(s);
  return s;
}

// ---------------------------------------------------------------------------
// Update step
// ---------------------------------------------------------------------------

using KernelTable = std::map<std::pair<int, int>, Kernel>;

inline KernelTable render_kernels(const UpdateRuleParams& phi) {
  KernelTable table;
  for (const auto& [pair, kp] : phi.kernels)
    table.emplace(pair, render_kernel(kp.genome, kp.rx, kp.ry, kp.rz));
  return table;
}

// Shared per-rollout convolution state: backend choice plus cached kernel
// spectra when the FFT route is active.
class ConvolutionEngine {
 public:
  ConvolutionEngine(ConvBackend backend, int sx, int sy, int sz, const KernelTable& kernels)
      : backend_(backend) {
    if (backend_ == ConvBackend::fft) {
      fft_.emplace(sx, sy, sz);
      for (const auto& [pair, k] : kernels) {
        check_kernel_fits(Field3(sx, sy, sz), k);
        kernel_spectra_.emplace(pair, fft_->kernel_spectrum(k));
      }
    }
  }

  ConvBackend backend() const { return backend_; }

  // All weighted sums for one synchronous step, ordered by (i, j).
  // Source-channel spectra are computed once per step.
  std::map<std::pair<int, int>, Field3> weighted_sums(const GridState& state,
                                                      const KernelTable& kernels) {
    std::map<std::pair<int, int>, Field3> sums;
    if (backend_ == ConvBackend::direct) {
      for (const auto& [pair, k] : kernels)
        sums.emplace(pair, convolve_torus(state.a[static_cast<std::size_t>(pair.first)], k));
    } else {
      std::map<int, FieldSpectrum> source_spectra;
      for (const auto& [pair, k] : kernels) {
        auto it = source_spectra.find(pair.first);
        if (it == source_spectra.end())
          it = source_spectra.emplace(pair.first, fft_->forward(state.a[static_cast<std::size_t>(pair.first)])).first;
        sums.emplace(pair, fft_->correlate(it->second, kernel_spectra_.at(pair)));
      }
    }
    return sums;
  }

 private:
  ConvBackend backend_;
  std::optional<FftConvolver> fft_;
  std::map<std::pair<int, int>, FieldSpectrum> kernel_spectra_;
};

// One synchronous update: all growth terms read the pre-step state and
// accumulate in (i, j) lexicographic order, then clip, then alive-mask.
inline GridState step(const GridState& state, const UpdateRuleParams& phi,
                      const KernelTable& kernels, ConvolutionEngine& engine) {
  GridState next = state;
  auto sums = engine.weighted_sums(state, kernels);
  for (const auto& [pair, u] : sums) {
    const KernelParams& kp = phi.kernels.at(pair);
    if (!(kp.sigma > 0.0)) throw InvalidSigma("sigma must be positive");
    Field3& dst = next.a[static_cast<std::size_t>(pair.second)];
    const double scale = phi.dt * kp.h;
    const double inv_two_sigma_sq = 1.0 / (2.0 * kp.sigma * kp.sigma);
    for (std::size_t i = 0; i < dst.data.size(); ++i) {
      double d = u.data[i] - kp.mu;
      dst.data[i] += scale * (2.0 * std::exp(-d * d * inv_two_sigma_sq) - 1.0);
    }
  }
  clip_inplace(next);
  alive_mask_inplace(next);
  return next;
}

// Convenience overload with the direct reference backend.
inline GridState step(const GridState& state, const UpdateRuleParams& phi,
                      const KernelTable& kernels) {
  ConvolutionEngine engine(ConvBackend::direct, state.sx(), state.sy(), state.sz(), kernels);
  return step(state, phi, kernels, engine);
}

// ---------------------------------------------------------------------------
// Rollout and statistics
// ---------------------------------------------------------------------------

inline std::int64_t count_non_air(const VoxelFrame& f) {
  std::int64_t n = 0;
  for (auto b : f.blocks) n += (b != 0);
  return n;
}

inline ArtifactStats compute_stats(const Artifact& artifact) {
  ArtifactStats st;
  const GridState& fin = artifact.final_potentials;
  st.channel_mass.resize(static_cast<std::size_t>(fin.m), 0.0);
  for (int j = 0; j < fin.m; ++j) {
    double mass = 0.0;
    for (double v : fin.a[static_cast<std::size_t>(j)].data) mass += v;
    st.channel_mass[static_cast<std::size_t>(j)] = mass;
  }
  for (const auto& f : artifact.frames) st.per_frame_non_air.push_back(count_non_air(f));

  const VoxelFrame& last = artifact.frames.back();
  st.bbox_min = {last.sx, last.sy, last.sz};
  st.bbox_max = {-1, -1, -1};
  double cx = 0, cy = 0, cz = 0;
  std::int64_t n = 0;
  for (int z = 0; z < last.sz; ++z)
    for (int y = 0; y < last.sy; ++y)
      for (int x = 0; x < last.sx; ++x) {
        std::size_t i = static_cast<std::size_t>(x) +
                        static_cast<std::size_t>(last.sx) * (y + static_cast<std::size_t>(last.sy) * z);
        if (last.blocks[i] == 0) continue;
        ++n;
        cx += x;
        cy += y;
        cz += z;
        st.bbox_min = {std::min(st.bbox_min[0], x), std::min(st.bbox_min[1], y),
                       std::min(st.bbox_min[2], z)};
        st.bbox_max = {std::max(st.bbox_max[0], x), std::max(st.bbox_max[1], y),
                       std::max(st.bbox_max[2], z)};
      }
  st.non_air_count = n;
  st.empty = (n == 0);
  if (!st.empty)
    st.center_of_mass = {cx / static_cast<double>(n), cy / static_cast<double>(n),
                         cz / static_cast<double>(n)};
  else
    st.bbox_min = {0, 0, 0};  // empty box marker, paired with bbox_max {-1,-1,-1}
  return st;
}

// Full deterministic rollout: render kernels and the initial state from
// theta, run T synchronous steps, materialize every frame.
inline std::pair<Artifact, ArtifactStats> rollout(const SystemGenome& theta, int t_steps,
                                                  const GridDims& dims,
                                                  ConvBackend backend = ConvBackend::direct) {
  KernelTable kernels = render_kernels(theta.phi);
  GridState state = init_state(theta.psi, dims);
  ConvolutionEngine engine(backend, dims.sx, dims.sy, dims.sz, kernels);

  Artifact artifact;
  artifact.frames.reserve(static_cast<std::size_t>(t_steps) + 1);
  artifact.frames.push_back(materialize(state));
  for (int t = 0; t < t_steps; ++t) {
    state = step(state, theta.phi, kernels, engine);
    artifact.frames.push_back(materialize(state));
  }
  artifact.final_potentials = std::move(state);
  ArtifactStats stats = compute_stats(artifact);
  return {std::move(artifact), std::move(stats)};
}

// ---------------------------------------------------------------------------
// Stats serialization (stored inside archive records)
// ---------------------------------------------------------------------------

inline void serialize_stats(const ArtifactStats& st, ByteWriter& w) {
  w.put_u32(static_cast<std::uint32_t>(st.channel_mass.size()));
  for (double v : st.channel_mass) w.put_f64(v);
  w.put_i64(st.non_air_count);
  w.put_u8(st.empty ? 1 : 0);
  for (int v : st.bbox_min) w.put_i64(v);
  for (int v : st.bbox_max) w.put_i64(v);
  for (double v : st.center_of_mass) w.put_f64(v);
  w.put_u32(static_cast<std::uint32_t>(st.per_frame_non_air.size()));
  for (auto v : st.per_frame_non_air) w.put_i64(v);
}

inline ArtifactStats deserialize_stats(ByteReader& r) {
  ArtifactStats st;
  st.channel_mass.resize(r.get_u32());
  for (double& v : st.channel_mass) v = r.get_f64();
  st.non_air_count = r.get_i64();
  st.empty = r.get_u8() != 0;
  for (int& v : st.bbox_min) v = static_cast<int>(r.get_i64());
  for (int& v : st.bbox_max) v = static_cast<int>(r.get_i64());
  for (double& v : st.center_of_mass) v = r.get_f64();
  st.per_frame_non_air.resize(r.get_u32());
  for (auto& v : st.per_frame_non_air) v = r.get_i64();
  return st;
}

}  // namespace metadiv
