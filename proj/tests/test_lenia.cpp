#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "metadiv/lenia.hpp"

using namespace metadiv;

namespace {

// Independent O(S^3 K^3) reference: explicit modulo arithmetic, no padding.
Field3 brute_force_correlate(const Field3& f, const Kernel& k) {
  Field3 out(f.sx, f.sy, f.sz);
  for (int z = 0; z < f.sz; ++z)
    for (int y = 0; y < f.sy; ++y)
      for (int x = 0; x < f.sx; ++x) {
        double acc = 0.0;
        for (int oz = -k.rz; oz <= k.rz; ++oz)
          for (int oy = -k.ry; oy <= k.ry; ++oy)
            for (int ox = -k.rx; ox <= k.rx; ++ox)
              acc += k.weights.at(ox + k.rx, oy + k.ry, oz + k.rz) *
                     f.at(wrap(x + ox, f.sx), wrap(y + oy, f.sy), wrap(z + oz, f.sz));
        out.at(x, y, z) = acc;
      }
  return out;
}

Field3 random_field(int sx, int sy, int sz, Rng& rng) {
  Field3 f(sx, sy, sz);
  for (double& v : f.data) v = rng.uniform01();
  return f;
}

Kernel random_kernel(int r, Rng& rng, bool normalize = true) {
  Kernel k;
  k.rx = k.ry = k.rz = r;
  k.weights = Field3(2 * r + 1, 2 * r + 1, 2 * r + 1);
  double sum = 0;
  for (double& v : k.weights.data) {
    v = rng.uniform01();
    sum += v;
  }
  if (normalize)
    for (double& v : k.weights.data) v /= sum;
  return k;
}

Kernel delta_kernel(int r) {
  Kernel k;
  k.rx = k.ry = k.rz = r;
  k.weights = Field3(2 * r + 1, 2 * r + 1, 2 * r + 1);
  k.weights.at(r, r, r) = 1.0;
  return k;
}

double max_abs_diff(const Field3& a, const Field3& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// A no-interaction rule for the given channel count.
UpdateRuleParams empty_phi(int m, double dt = 0.3) {
  UpdateRuleParams phi;
  phi.m = m;
  phi.interaction.assign(static_cast<std::size_t>(m) * m, 0);
  phi.dt = dt;
  return phi;
}

}  // namespace

// ---------------------------------------------------------------------------
// convolve_torus
// ---------------------------------------------------------------------------

TEST_CASE("delta kernel is the identity") {
  Rng rng(1);
  Field3 f = random_field(6, 5, 4, rng);
  Field3 out = convolve_torus(f, delta_kernel(1));
  REQUIRE(max_abs_diff(out, f) == 0.0);
}

TEST_CASE("normalized kernels preserve constant fields") {
  Rng rng(2);
  Kernel k = random_kernel(2, rng);
  Field3 f(8, 8, 8, 0.37);
  Field3 out = convolve_torus(f, k);
  for (double v : out.data) REQUIRE(v == Catch::Approx(0.37).margin(1e-12));
}

TEST_CASE("wrap-around matches the explicit modulo oracle on a line") {
  // field [1,0,0] with an off-center 3x1x1 kernel: pure wrap behavior
  Field3 f(3, 1, 1);
  f.at(0, 0, 0) = 1.0;
  Kernel k;
  k.rx = 1;
  k.ry = k.rz = 0;
  k.weights = Field3(3, 1, 1);
  k.weights.at(2, 0, 0) = 1.0;  // offset +1 only
  Field3 out = convolve_torus(f, k);
  Field3 expect = brute_force_correlate(f, k);
  REQUIRE(max_abs_diff(out, expect) == 0.0);
  // out(x) = f(x+1 mod 3): [0, 0, 1]
  REQUIRE(out.at(0, 0, 0) == 0.0);
  REQUIRE(out.at(1, 0, 0) == 0.0);
  REQUIRE(out.at(2, 0, 0) == 1.0);
}

TEST_CASE("direct and fft paths match brute force on random cases") {
  Rng rng(3);
  FftConvolver fft(8, 8, 8);
  for (int i = 0; i < 25; ++i) {
    Field3 f = random_field(8, 8, 8, rng);
    Kernel k = random_kernel(i % 2 == 0 ? 1 : 2, rng);
    Field3 expect = brute_force_correlate(f, k);
    REQUIRE(max_abs_diff(convolve_torus(f, k), expect) < 1e-10);
    REQUIRE(max_abs_diff(fft.convolve(f, k), expect) < 1e-10);
  }
}

TEST_CASE("oversized kernels are rejected") {
  Field3 f(3, 3, 3);
  REQUIRE_THROWS_AS(convolve_torus(f, delta_kernel(2)), KernelTooLarge);
  FftConvolver fft(3, 3, 3);
  REQUIRE_THROWS_AS(fft.convolve(f, delta_kernel(2)), KernelTooLarge);
}

// ---------------------------------------------------------------------------
// growth
// ---------------------------------------------------------------------------

TEST_CASE("growth analytics") {
  const double mu = 0.15, sigma = 0.015;

  SECTION("peak at mu is exactly 1") { REQUIRE(growth_scalar(mu, mu, sigma) == 1.0); }

  SECTION("zero crossing at mu + sigma*sqrt(2 ln 2)") {
    double u = mu + sigma * std::sqrt(2.0 * std::log(2.0));
    REQUIRE(std::abs(growth_scalar(u, mu, sigma)) < 1e-12);
    u = mu - sigma * std::sqrt(2.0 * std::log(2.0));
    REQUIRE(std::abs(growth_scalar(u, mu, sigma)) < 1e-12);
  }

  SECTION("high-precision spot value") {
    // u = mu + sigma: 2*exp(-1/2) - 1
    double expect = 2.0 * std::exp(-0.5) - 1.0;
    REQUIRE(growth_scalar(0.165, mu, sigma) == Catch::Approx(expect).margin(1e-15));
    REQUIRE(growth_scalar(0.165, mu, sigma) == Catch::Approx(0.2130613194252668).margin(1e-12));
  }

  SECTION("range is [-1, 1]") {
    Rng rng(4);
    for (int i = 0; i < 100000; ++i) {
      double g = growth_scalar(rng.uniform(-5, 5), rng.uniform01(), rng.uniform(0.001, 0.3));
      REQUIRE(g >= -1.0);
      REQUIRE(g <= 1.0);
    }
  }

  SECTION("invalid sigma") {
    Field3 u(2, 2, 2);
    REQUIRE_THROWS_AS(growth(u, 0.5, 0.0), InvalidSigma);
    REQUIRE_THROWS_AS(growth(u, 0.5, -1.0), InvalidSigma);
  }
}

// ---------------------------------------------------------------------------
// alive_mask / materialize
// ---------------------------------------------------------------------------

TEST_CASE("alive mask clears sub-threshold cells and pins air") {
  GridState s(2, 2, 2, 3);
  s.a[1].at(0, 0, 0) = 0.09;
  s.a[2].at(0, 0, 0) = 0.05;  // max non-air < 0.1: cleared
  s.a[1].at(1, 0, 0) = 0.5;   // above threshold: kept
  s.a[2].at(1, 0, 0) = 0.02;  // rides along: kept
  s.a[1].at(0, 1, 0) = 0.1;   // exactly the threshold: kept

  GridState masked = alive_mask(s);
  for (double v : masked.a[0].data) REQUIRE(v == kAirPotential);
  REQUIRE(masked.a[1].at(0, 0, 0) == 0.0);
  REQUIRE(masked.a[2].at(0, 0, 0) == 0.0);
  REQUIRE(masked.a[1].at(1, 0, 0) == 0.5);
  REQUIRE(masked.a[2].at(1, 0, 0) == 0.02);
  REQUIRE(masked.a[1].at(0, 1, 0) == 0.1);

  REQUIRE(alive_mask(masked) == masked);  // idempotent
}

TEST_CASE("materialize takes the argmax with lowest-index ties") {
  GridState s(1, 1, 1, 3);
  s.a[0].at(0, 0, 0) = 0.1;

  SECTION("clear maximum") {
    s.a[1].at(0, 0, 0) = 0.6;
    s.a[2].at(0, 0, 0) = 0.3;
    REQUIRE(materialize(s).blocks[0] == 1);
  }
  SECTION("air wins when everything is below its level") {
    s.a[1].at(0, 0, 0) = 0.05;
    s.a[2].at(0, 0, 0) = 0.09;
    REQUIRE(materialize(s).blocks[0] == 0);
  }
  SECTION("ties break to the lowest channel") {
    s.a[1].at(0, 0, 0) = 0.6;
    s.a[2].at(0, 0, 0) = 0.6;
    REQUIRE(materialize(s).blocks[0] == 1);
  }
}

// ---------------------------------------------------------------------------
// init_state
// ---------------------------------------------------------------------------

TEST_CASE("empty init mask gives an all-air state") {
  InitParams psi;
  psi.init_mask.assign(4, 0);
  GridState s = init_state(psi, {8, 8, 8, 4});
  for (double v : s.a[0].data) REQUIRE(v == kAirPotential);
  for (int j = 1; j < 4; ++j)
    for (double v : s.a[(std::size_t)j].data) REQUIRE(v == 0.0);
}

TEST_CASE("init confines mass to the occupation sub-box") {
  InitParams psi;
  psi.init_mask.assign(4, 0);
  psi.init_mask[1] = 1;
  ChannelInit ci;
  ci.occupation_ratio = 1.0 / 8.0;
  ci.genome = new_random_genome(9, CppnConfig{});
  psi.channels.emplace(1, ci);

  GridState s = init_state(psi, {32, 32, 32, 4});
  for (int z = 0; z < 32; ++z)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        bool inside = x >= 8 && x < 24 && y >= 8 && y < 24 && z >= 8 && z < 24;
        if (!inside)
          for (int j = 1; j < 4; ++j) REQUIRE(s.a[(std::size_t)j].at(x, y, z) == 0.0);
      }

  GridState again = init_state(psi, {32, 32, 32, 4});
  REQUIRE(s == again);
}

TEST_CASE("init rejects arity mismatches") {
  InitParams psi;
  psi.init_mask.assign(3, 0);
  REQUIRE_THROWS_AS(init_state(psi, {8, 8, 8, 4}), ConfigMismatch);
}

// ---------------------------------------------------------------------------
// step
// ---------------------------------------------------------------------------

TEST_CASE("no interactions leave a valid state unchanged") {
  InitParams psi;
  psi.init_mask.assign(3, 0);
  psi.init_mask[1] = 1;
  ChannelInit ci;
  ci.occupation_ratio = 0.5;
  ci.genome = new_random_genome(12, CppnConfig{});
  psi.channels.emplace(1, ci);
  GridState s = init_state(psi, {8, 8, 8, 3});

  UpdateRuleParams phi = empty_phi(3);
  KernelTable kernels;
  GridState next = step(s, phi, kernels);
  REQUIRE(next == s);
}

TEST_CASE("dt = 0 freezes the dynamics") {
  InitParams psi;
  psi.init_mask.assign(3, 0);
  psi.init_mask[1] = 1;
  ChannelInit ci;
  ci.occupation_ratio = 0.4;
  ci.genome = new_random_genome(13, CppnConfig{});
  psi.channels.emplace(1, ci);
  GridState s = init_state(psi, {8, 8, 8, 3});

  UpdateRuleParams phi = empty_phi(3, 0.0);
  phi.interaction[1 * 3 + 1] = 1;
  KernelParams kp;
  kp.h = 1.0;
  kp.rx = kp.ry = kp.rz = 1;
  kp.genome = new_random_genome(14, CppnConfig{});
  kp.mu = 0.2;
  kp.sigma = 0.05;
  phi.kernels.emplace(std::make_pair(1, 1), kp);

  KernelTable kernels = render_kernels(phi);
  REQUIRE(step(s, phi, kernels) == s);
}

TEST_CASE("single-cell update matches the closed form") {
  // one active pair (1 -> 2) with a hand-built delta kernel: the weighted
  // sum at each cell is A_1(cell), so
  //   A_2' = mask(clip(A_2 + dt*h*G(A_1(cell))))
  const int m = 3;
  GridState s(8, 8, 8, m);
  for (double& v : s.a[0].data) v = kAirPotential;
  s.a[1].at(2, 3, 4) = 0.62;
  s.a[2].at(2, 3, 4) = 0.40;

  UpdateRuleParams phi = empty_phi(m, 0.25);
  phi.interaction[1 * m + 2] = 1;
  KernelParams kp;
  kp.h = 0.8;
  kp.rx = kp.ry = kp.rz = 1;
  kp.genome = new_random_genome(15, CppnConfig{});  // placeholder, table overrides
  kp.mu = 0.6;
  kp.sigma = 0.05;
  phi.kernels.emplace(std::make_pair(1, 2), kp);

  KernelTable kernels;
  kernels.emplace(std::make_pair(1, 2), delta_kernel(1));

  GridState next = step(s, phi, kernels);

  auto closed_form = [&](double a1, double a2) {
    double g = 2.0 * std::exp(-(a1 - kp.mu) * (a1 - kp.mu) / (2 * kp.sigma * kp.sigma)) - 1.0;
    return std::clamp(a2 + 0.25 * 0.8 * g, 0.0, 1.0);
  };
  // the loaded cell: growth is near the peak (u = 0.62, mu = 0.6)
  double expect = closed_form(0.62, 0.40);
  REQUIRE(expect > 0.1);  // stays alive
  REQUIRE(next.a[2].at(2, 3, 4) == Catch::Approx(expect).margin(1e-15));
  // empty cells: u = 0 far from mu, growth = -1, all potentials clipped to 0
  REQUIRE(next.a[2].at(0, 0, 0) == 0.0);
  REQUIRE(next.a[1].at(0, 0, 0) == 0.0);
  // source channel had no incoming kernel: after the step the loaded source
  // cell keeps its value only if it survives the alive mask
  REQUIRE(next.a[1].at(2, 3, 4) == 0.62);
}

TEST_CASE("physics invariants hold over random rollouts") {
  GenomeRanges r;
  r.m = 4;
  r.grid_x = r.grid_y = r.grid_z = 12;
  r.r_max = 2;
  GridDims dims{12, 12, 12, 4};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto theta = sample_genome(seed, r);
    auto [artifact, stats] = rollout(theta, 10, dims, ConvBackend::fft);
    for (const auto& field : artifact.final_potentials.a)
      for (double v : field.data) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
    for (double v : artifact.final_potentials.a[0].data) REQUIRE(v == kAirPotential);
    for (const auto& frame : artifact.frames)
      for (auto b : frame.blocks) REQUIRE(b < 4);
  }
}

TEST_CASE("rollouts are translation equivariant on the torus") {
  GenomeRanges r;
  r.m = 3;
  r.grid_x = r.grid_y = r.grid_z = 8;
  r.r_max = 2;
  Rng shift_rng(21);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    auto theta = sample_genome(seed, r);
    KernelTable kernels = render_kernels(theta.phi);
    GridState state = init_state(theta.psi, {8, 8, 8, 3});
    int dx = (int)shift_rng.below(8), dy = (int)shift_rng.below(8), dz = (int)shift_rng.below(8);

    GridState shifted;
    shifted.m = state.m;
    for (const auto& f : state.a) shifted.a.push_back(roll(f, dx, dy, dz));

    for (int t = 0; t < 5; ++t) {
      state = step(state, theta.phi, kernels);
      shifted = step(shifted, theta.phi, kernels);
    }
    for (int j = 0; j < 3; ++j) {
      Field3 rolled = roll(state.a[(std::size_t)j], dx, dy, dz);
      REQUIRE(rolled == shifted.a[(std::size_t)j]);  // bit-exact
    }
  }
}

// ---------------------------------------------------------------------------
// rollout / stats
// ---------------------------------------------------------------------------

TEST_CASE("a rule with no interactions yields a static artifact") {
  GenomeRanges r;
  r.m = 3;
  r.grid_x = r.grid_y = r.grid_z = 8;
  auto theta = sample_genome(11, r);
  theta.phi.interaction.assign(9, 0);
  theta.phi.kernels.clear();
  auto [artifact, stats] = rollout(theta, 1, {8, 8, 8, 3});
  REQUIRE(artifact.frames.size() == 2);
  REQUIRE(artifact.frames[0] == artifact.frames[1]);
}

TEST_CASE("rollout is deterministic") {
  GenomeRanges r;
  r.m = 3;
  r.grid_x = r.grid_y = r.grid_z = 8;
  r.r_max = 2;
  auto theta = sample_genome(19, r);
  auto [a1, s1] = rollout(theta, 6, {8, 8, 8, 3}, ConvBackend::fft);
  auto [a2, s2] = rollout(theta, 6, {8, 8, 8, 3}, ConvBackend::fft);
  REQUIRE(a1.frames == a2.frames);
  REQUIRE(a1.final_potentials == a2.final_potentials);
}

TEST_CASE("stats: empty, single-voxel, and two-voxel artifacts") {
  Artifact artifact;
  artifact.final_potentials = GridState(5, 5, 5, 2);
  VoxelFrame frame;
  frame.sx = frame.sy = frame.sz = 5;
  frame.blocks.assign(125, 0);

  SECTION("all air") {
    artifact.frames.push_back(frame);
    auto st = compute_stats(artifact);
    REQUIRE(st.empty);
    REQUIRE(st.non_air_count == 0);
    REQUIRE(st.channel_mass[1] == 0.0);
    REQUIRE(st.bbox_max[0] < st.bbox_min[0]);  // empty box marker
  }

  SECTION("single voxel at (2,3,4)") {
    frame.blocks[2 + 5 * (3 + 5 * 4)] = 1;
    artifact.frames.push_back(frame);
    auto st = compute_stats(artifact);
    REQUIRE_FALSE(st.empty);
    REQUIRE(st.non_air_count == 1);
    REQUIRE(st.center_of_mass == std::array<double, 3>{2.0, 3.0, 4.0});
    REQUIRE(st.bbox_min == std::array<int, 3>{2, 3, 4});
    REQUIRE(st.bbox_max == std::array<int, 3>{2, 3, 4});
  }

  SECTION("two voxels average to their midpoint") {
    frame.blocks[0] = 1;                  // (0,0,0)
    frame.blocks[2] = 1;                  // (2,0,0)
    artifact.frames.push_back(frame);
    auto st = compute_stats(artifact);
    REQUIRE(st.non_air_count == 2);
    REQUIRE(st.center_of_mass == std::array<double, 3>{1.0, 0.0, 0.0});
  }
}

TEST_CASE("per-frame counts track the frames") {
  Artifact artifact;
  artifact.final_potentials = GridState(3, 3, 3, 2);
  for (int t = 0; t < 3; ++t) {
    VoxelFrame f;
    f.sx = f.sy = f.sz = 3;
    f.blocks.assign(27, 0);
    for (int i = 0; i <= t; ++i) f.blocks[(std::size_t)i] = 1;
    artifact.frames.push_back(f);
  }
  auto st = compute_stats(artifact);
  REQUIRE(st.per_frame_non_air == std::vector<std::int64_t>{1, 2, 3});
}
