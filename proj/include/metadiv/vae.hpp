#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "metadiv/field.hpp"
#include "metadiv/lenia.hpp"
#include "metadiv/rng.hpp"
#include "metadiv/serialize.hpp"

namespace metadiv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Observation: the artifact's final potentials collapsed to a fixed-size
// occupancy cube, independent of M and grid size.
// ---------------------------------------------------------------------------

struct Observation {
  int d = 0;                   // cube side
  std::vector<double> values;  // d^3, x-fastest, entries in [0, 1]
};

// occupancy(cell) = max over non-air channels, average-pooled to d^3 with
// fractional (overlap-weighted) bins so any grid size divides cleanly.
inline Observation make_observation(const GridState& final_potentials, int d) {
  const int sx = final_potentials.sx(), sy = final_potentials.sy(), sz = final_potentials.sz();
  Field3 occ(sx, sy, sz);
  for (std::size_t i = 0; i < occ.data.size(); ++i) {
    double best = 0.0;
    for (int j = 1; j < final_potentials.m; ++j)
      best = std::max(best, final_potentials.a[static_cast<std::size_t>(j)].data[i]);
    occ.data[i] = best;
  }

  // per-axis bin weights: cell c overlaps output bin i on [i*s/d, (i+1)*s/d)
  auto axis_weights = [d](int s) {
    std::vector<std::vector<std::pair<int, double>>> bins(static_cast<std::size_t>(d));
    double w = static_cast<double>(s) / d;
    for (int i = 0; i < d; ++i) {
      double lo = i * w, hi = (i + 1) * w;
      for (int c = static_cast<int>(std::floor(lo)); c < s && c < hi; ++c) {
        double overlap = std::min(hi, static_cast<double>(c + 1)) - std::max(lo, static_cast<double>(c));
        if (overlap > 0) bins[static_cast<std::size_t>(i)].push_back({c, overlap});
      }
    }
    return bins;
  };
  auto bx = axis_weights(sx), by = axis_weights(sy), bz = axis_weights(sz);

  Observation obs;
  obs.d = d;
  obs.values.assign(static_cast<std::size_t>(d) * d * d, 0.0);
  const double bin_volume = (static_cast<double>(sx) / d) * (static_cast<double>(sy) / d) *
                            (static_cast<double>(sz) / d);
  for (int iz = 0; iz < d; ++iz)
    for (int iy = 0; iy < d; ++iy)
      for (int ix = 0; ix < d; ++ix) {
        double acc = 0.0;
        for (const auto& [cz, wz] : bz[static_cast<std::size_t>(iz)])
          for (const auto& [cy, wy] : by[static_cast<std::size_t>(iy)])
            for (const auto& [cx, wx] : bx[static_cast<std::size_t>(ix)])
              acc += wx * wy * wz * occ.at(cx, cy, cz);
        obs.values[static_cast<std::size_t>(ix) +
                   static_cast<std::size_t>(d) * (iy + static_cast<std::size_t>(d) * iz)] =
            acc / bin_volume;
      }
  return obs;
}

inline Observation make_observation(const Artifact& artifact, int d) {
  return make_observation(artifact.final_potentials, d);
}

// ---------------------------------------------------------------------------
// Parameters. Two tanh hidden layers on each side, Gaussian latent head,
// sigmoid reconstruction. The decoder mirrors the encoder widths.
//
//   encoder: input -> h1 -> h2 -> (mean | logvar), latent z
//   decoder: z -> h2 -> h1 -> input
// ---------------------------------------------------------------------------

struct VaeDims {
  int input;
  int h1;
  int h2;
  int latent;

  bool operator==(const VaeDims&) const = default;
};

struct VaeParams {
  VaeDims dims{};
  MatrixXd w1, b1;  // h1 x in, h1 x 1
  MatrixXd w2, b2;  // h2 x h1
  MatrixXd wm, bm;  // z x h2
  MatrixXd wv, bv;  // z x h2
  MatrixXd u1, c1;  // h2 x z
  MatrixXd u2, c2;  // h1 x h2
  MatrixXd u3, c3;  // in x h1
};

// Additive skip weights from a frozen parent's hidden features into the
// child's same-depth pre-activations. Zero-initialized, so a fresh child
// starts at exactly its standalone function.
struct LateralConnection {
  MatrixXd enc1;  // h1 x h1
  MatrixXd enc2;  // h2 x h2
  MatrixXd dec1;  // h2 x h2
  MatrixXd dec2;  // h1 x h1
};

// Per-batch hidden features of the parent (columns = data).
struct ParentFeatures {
  MatrixXd enc_h1;  // h1 x B
  MatrixXd enc_h2;  // h2 x B
  MatrixXd dec_h1;  // h2 x B
  MatrixXd dec_h2;  // h1 x B
};

struct LateralInputs {
  const LateralConnection* weights;
  const ParentFeatures* features;
};

// Uniform traversal over every parameter tensor, in a fixed order shared by
// gradients, Adam state, and serialization.
template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  f(p.w1); f(p.b1); f(p.w2); f(p.b2); f(p.wm); f(p.bm); f(p.wv); f(p.bv);
  f(p.u1); f(p.c1); f(p.u2); f(p.c2); f(p.u3); f(p.c3);
}

template <typename L, typename F>
void for_each_lateral_tensor(L& l, F&& f) {
  f(l.enc1); f(l.enc2); f(l.dec1); f(l.dec2);
}

inline VaeParams zero_vae_params(const VaeDims& d) {
  VaeParams p;
  p.dims = d;
  p.w1 = MatrixXd::Zero(d.h1, d.input);  p.b1 = MatrixXd::Zero(d.h1, 1);
  p.w2 = MatrixXd::Zero(d.h2, d.h1);     p.b2 = MatrixXd::Zero(d.h2, 1);
  p.wm = MatrixXd::Zero(d.latent, d.h2); p.bm = MatrixXd::Zero(d.latent, 1);
  p.wv = MatrixXd::Zero(d.latent, d.h2); p.bv = MatrixXd::Zero(d.latent, 1);
  p.u1 = MatrixXd::Zero(d.h2, d.latent); p.c1 = MatrixXd::Zero(d.h2, 1);
  p.u2 = MatrixXd::Zero(d.h1, d.h2);     p.c2 = MatrixXd::Zero(d.h1, 1);
  p.u3 = MatrixXd::Zero(d.input, d.h1);  p.c3 = MatrixXd::Zero(d.input, 1);
  return p;
}

// Glorot-uniform weights, zero biases.
inline VaeParams init_vae_params(const VaeDims& d, Rng& rng) {
  VaeParams p = zero_vae_params(d);
  for_each_tensor(p, [&](MatrixXd& t) {
    if (t.cols() == 1) return;  // biases stay zero
    double s = std::sqrt(6.0 / (static_cast<double>(t.rows()) + static_cast<double>(t.cols())));
    for (Eigen::Index c = 0; c < t.cols(); ++c)
      for (Eigen::Index r = 0; r < t.rows(); ++r) t(r, c) = rng.uniform(-s, s);
  });
  return p;
}

inline LateralConnection zero_laterals(const VaeDims& d) {
  LateralConnection l;
  l.enc1 = MatrixXd::Zero(d.h1, d.h1);
  l.enc2 = MatrixXd::Zero(d.h2, d.h2);
  l.dec1 = MatrixXd::Zero(d.h2, d.h2);
  l.dec2 = MatrixXd::Zero(d.h1, d.h1);
  return l;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

// Everything the backward pass (or a child's laterals) needs to revisit.
struct ForwardCache {
  MatrixXd x;            // in x B
  MatrixXd h1, h2;       // post-tanh encoder hiddens
  MatrixXd mean, logvar; // z x B
  MatrixXd eps, z;       // z x B
  MatrixXd g1, g2;       // post-tanh decoder hiddens
  MatrixXd logits;       // in x B
};

namespace detail {

inline MatrixXd broadcast_add(const MatrixXd& a, const MatrixXd& bias) {
  return a.colwise() + VectorXd(bias.col(0));
}

// Deterministic encoder/decoder pass; eps == nullptr decodes from the mean.
inline ForwardCache vae_forward(const VaeParams& p, const MatrixXd& x,
                                const std::optional<LateralInputs>& lat, const MatrixXd* eps) {
  ForwardCache c;
  c.x = x;
  MatrixXd a1 = detail::broadcast_add(p.w1 * x, p.b1);
  if (lat) a1 += lat->weights->enc1 * lat->features->enc_h1;
  c.h1 = a1.array().tanh();
  MatrixXd a2 = detail::broadcast_add(p.w2 * c.h1, p.b2);
  if (lat) a2 += lat->weights->enc2 * lat->features->enc_h2;
  c.h2 = a2.array().tanh();
  c.mean = detail::broadcast_add(p.wm * c.h2, p.bm);
  c.logvar = detail::broadcast_add(p.wv * c.h2, p.bv);
  if (eps) {
    c.eps = *eps;
    c.z = c.mean + ((c.logvar * 0.5).array().exp() * c.eps.array()).matrix();
  } else {
    c.eps = MatrixXd::Zero(c.mean.rows(), c.mean.cols());
    c.z = c.mean;
  }
  MatrixXd a3 = detail::broadcast_add(p.u1 * c.z, p.c1);
  if (lat) a3 += lat->weights->dec1 * lat->features->dec_h1;
  c.g1 = a3.array().tanh();
  MatrixXd a4 = detail::broadcast_add(p.u2 * c.g1, p.c2);
  if (lat) a4 += lat->weights->dec2 * lat->features->dec_h2;
  c.g2 = a4.array().tanh();
  c.logits = detail::broadcast_add(p.u3 * c.g2, p.c3);
  return c;
}

}  // namespace detail

inline MatrixXd obs_to_column(const Observation& obs) {
  return Eigen::Map<const VectorXd>(obs.values.data(), static_cast<Eigen::Index>(obs.values.size()));
}

// Deterministic encoding (mean, logvar); pure, no sampling involved.
inline std::pair<VectorXd, VectorXd> encode(const VaeParams& p, const Observation& obs,
                                            const std::optional<LateralInputs>& lat = std::nullopt) {
  ForwardCache c = detail::vae_forward(p, obs_to_column(obs), lat, nullptr);
  return {c.mean.col(0), c.logvar.col(0)};
}

// Sigmoid reconstruction from a latent vector.
inline VectorXd decode(const VaeParams& p, const VectorXd& z,
                       const std::optional<LateralInputs>& lat = std::nullopt) {
  MatrixXd a3 = p.u1 * z + p.c1;
  if (lat) a3 += lat->weights->dec1 * lat->features->dec_h1;
  MatrixXd g1 = a3.array().tanh();
  MatrixXd a4 = p.u2 * g1 + p.c2;
  if (lat) a4 += lat->weights->dec2 * lat->features->dec_h2;
  MatrixXd g2 = a4.array().tanh();
  MatrixXd logits = p.u3 * g2 + p.c3;
  return (1.0 / (1.0 + (-logits.array()).exp())).matrix().col(0);
}

// Hidden features exposed to a child's laterals: a full deterministic pass
// through this node's autoencoder with z = mean.
inline ParentFeatures forward_features(const VaeParams& p, const MatrixXd& x,
                                       const std::optional<LateralInputs>& lat = std::nullopt) {
  ForwardCache c = detail::vae_forward(p, x, lat, nullptr);
  return {c.h1, c.h2, c.g1, c.g2};
}

// ---------------------------------------------------------------------------
// Loss and exact gradients
//
// loss = mean over batch of [ BCE(logits, x) + beta * KL(N(mean, e^logvar) ||
// N(0, I)) ], reparameterized with one eps draw per datum. Gradients are the
// pathwise derivative through that same eps; parent features are constants,
// so a frozen parent receives no gradient by construction.
// ---------------------------------------------------------------------------

struct VaeGradients {
  VaeParams params;  // same shapes, gradient values
  std::optional<LateralConnection> laterals;
};

inline double bce_with_logits(const MatrixXd& logits, const MatrixXd& x) {
  // max(o,0) - o*x + log(1 + exp(-|o|)), stable for large |o|
  return (logits.array().max(0.0) - logits.array() * x.array() +
          (1.0 + (-logits.array().abs()).exp()).log())
      .sum();
}

inline std::pair<double, VaeGradients> loss_and_gradients(
    const VaeParams& p, const MatrixXd& x, Rng& rng, double beta,
    const std::optional<LateralInputs>& lat = std::nullopt) {
  const auto batch = x.cols();
  MatrixXd eps(p.dims.latent, batch);
  for (Eigen::Index c = 0; c < batch; ++c)
    for (Eigen::Index r = 0; r < p.dims.latent; ++r) eps(r, c) = rng.normal();

  ForwardCache f = detail::vae_forward(p, x, lat, &eps);
  const double inv_b = 1.0 / static_cast<double>(batch);

  double bce = bce_with_logits(f.logits, x);
  double kl = 0.5 * (f.mean.array().square() + f.logvar.array().exp() - 1.0 - f.logvar.array()).sum();
  double loss = (bce + beta * kl) * inv_b;

  VaeGradients g;
  g.params = zero_vae_params(p.dims);
  if (lat) g.laterals = zero_laterals(p.dims);

  MatrixXd sig = (1.0 / (1.0 + (-f.logits.array()).exp())).matrix();
  MatrixXd d_logits = (sig - x) * inv_b;
  g.params.u3 = d_logits * f.g2.transpose();
  g.params.c3 = d_logits.rowwise().sum();
  MatrixXd d_g2 = p.u3.transpose() * d_logits;
  MatrixXd d_a4 = (d_g2.array() * (1.0 - f.g2.array().square())).matrix();
  g.params.u2 = d_a4 * f.g1.transpose();
  g.params.c2 = d_a4.rowwise().sum();
  if (lat) g.laterals->dec2 = d_a4 * lat->features->dec_h2.transpose();
  MatrixXd d_g1 = p.u2.transpose() * d_a4;
  MatrixXd d_a3 = (d_g1.array() * (1.0 - f.g1.array().square())).matrix();
  g.params.u1 = d_a3 * f.z.transpose();
  g.params.c1 = d_a3.rowwise().sum();
  if (lat) g.laterals->dec1 = d_a3 * lat->features->dec_h1.transpose();
  MatrixXd d_z = p.u1.transpose() * d_a3;

  MatrixXd d_mean = d_z + (beta * inv_b) * f.mean;
  MatrixXd d_logvar = (0.5 * d_z.array() * f.eps.array() * (f.logvar * 0.5).array().exp() +
                       (beta * inv_b) * 0.5 * (f.logvar.array().exp() - 1.0))
                          .matrix();
  g.params.wm = d_mean * f.h2.transpose();
  g.params.bm = d_mean.rowwise().sum();
  g.params.wv = d_logvar * f.h2.transpose();
  g.params.bv = d_logvar.rowwise().sum();
  MatrixXd d_h2 = p.wm.transpose() * d_mean + p.wv.transpose() * d_logvar;
  MatrixXd d_a2 = (d_h2.array() * (1.0 - f.h2.array().square())).matrix();
  g.params.w2 = d_a2 * f.h1.transpose();
  g.params.b2 = d_a2.rowwise().sum();
  if (lat) g.laterals->enc2 = d_a2 * lat->features->enc_h2.transpose();
  MatrixXd d_h1 = p.w2.transpose() * d_a2;
  MatrixXd d_a1 = (d_h1.array() * (1.0 - f.h1.array().square())).matrix();
  g.params.w1 = d_a1 * f.x.transpose();
  g.params.b1 = d_a1.rowwise().sum();
  if (lat) g.laterals->enc1 = d_a1 * lat->features->enc_h1.transpose();

  return {loss, std::move(g)};
}

// ---------------------------------------------------------------------------
// Adam training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 64;
  double kl_beta = 1.0;
};

struct AdamState {
  VaeParams m, v;
  std::optional<LateralConnection> lm, lv;
  std::int64_t t = 0;
};

inline AdamState zero_adam_state(const VaeDims& d, bool with_laterals) {
  AdamState s;
  s.m = zero_vae_params(d);
  s.v = zero_vae_params(d);
  if (with_laterals) {
    s.lm = zero_laterals(d);
    s.lv = zero_laterals(d);
  }
  return s;
}

namespace detail {

inline void adam_update_tensor(MatrixXd& param, const MatrixXd& grad, MatrixXd& m, MatrixXd& v,
                               double lr, double b1, double b2, double eps, std::int64_t t) {
  m = b1 * m + (1.0 - b1) * grad;
  v = (b2 * v.array() + (1.0 - b2) * grad.array().square()).matrix();
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace detail

// One Adam step over the VAE parameters and, when present, the laterals.
inline void adam_step(VaeParams& p, LateralConnection* laterals, const VaeGradients& g,
                      AdamState& state, const TrainConfig& cfg) {
  ++state.t;
  auto* gm = &state.m;
  auto* gv = &state.v;
  // walk the three structures in lockstep through the fixed tensor order
  std::vector<MatrixXd*> params, ms, vs;
  std::vector<const MatrixXd*> grads;
  for_each_tensor(p, [&](MatrixXd& t) { params.push_back(&t); });
  for_each_tensor(const_cast<VaeParams&>(g.params), [&](MatrixXd& t) { grads.push_back(&t); });
  for_each_tensor(*gm, [&](MatrixXd& t) { ms.push_back(&t); });
  for_each_tensor(*gv, [&](MatrixXd& t) { vs.push_back(&t); });
  if (laterals && g.laterals && state.lm && state.lv) {
    for_each_lateral_tensor(*laterals, [&](MatrixXd& t) { params.push_back(&t); });
    for_each_lateral_tensor(const_cast<LateralConnection&>(*g.laterals),
                            [&](MatrixXd& t) { grads.push_back(&t); });
    for_each_lateral_tensor(*state.lm, [&](MatrixXd& t) { ms.push_back(&t); });
    for_each_lateral_tensor(*state.lv, [&](MatrixXd& t) { vs.push_back(&t); });
  }
  for (std::size_t i = 0; i < params.size(); ++i)
    detail::adam_update_tensor(*params[i], *grads[i], *ms[i], *vs[i], cfg.lr, cfg.beta1, cfg.beta2,
                               cfg.adam_eps, state.t);
}

// Runs `steps` Adam steps over a buffer (columns = observations). Batches
// are distinct uniform draws when the buffer exceeds the batch size, the
// whole buffer otherwise. Parent features, when given, must be aligned with
// the buffer columns. Returns the per-step losses.
inline std::vector<double> train_steps(VaeParams& p, LateralConnection* laterals,
                                       const MatrixXd& buffer,
                                       const ParentFeatures* parent_features, int steps,
                                       AdamState& state, Rng& rng, const TrainConfig& cfg) {
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(steps));
  const auto n = buffer.cols();
  if (n == 0 || steps == 0) return losses;
  const auto batch = std::min<Eigen::Index>(cfg.batch, n);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int s = 0; s < steps; ++s) {
    // partial Fisher-Yates: first `batch` entries become the minibatch
    for (Eigen::Index i = 0; i < batch; ++i) {
      auto j = i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    MatrixXd x(buffer.rows(), batch);
    for (Eigen::Index i = 0; i < batch; ++i) x.col(i) = buffer.col(order[static_cast<std::size_t>(i)]);

    std::optional<LateralInputs> lat;
    ParentFeatures batch_features;
    if (laterals && parent_features) {
      batch_features.enc_h1.resize(parent_features->enc_h1.rows(), batch);
      batch_features.enc_h2.resize(parent_features->enc_h2.rows(), batch);
      batch_features.dec_h1.resize(parent_features->dec_h1.rows(), batch);
      batch_features.dec_h2.resize(parent_features->dec_h2.rows(), batch);
      for (Eigen::Index i = 0; i < batch; ++i) {
        auto src = order[static_cast<std::size_t>(i)];
        batch_features.enc_h1.col(i) = parent_features->enc_h1.col(src);
        batch_features.enc_h2.col(i) = parent_features->enc_h2.col(src);
        batch_features.dec_h1.col(i) = parent_features->dec_h1.col(src);
        batch_features.dec_h2.col(i) = parent_features->dec_h2.col(src);
      }
      lat = LateralInputs{laterals, &batch_features};
    }

    auto [loss, grads] = loss_and_gradients(p, x, rng, cfg.kl_beta, lat);
    adam_step(p, laterals, grads, state, cfg);
    losses.push_back(loss);
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Serialization (inside hierarchy snapshots): shapes header + row-major
// values, versioned by the snapshot container.
// ---------------------------------------------------------------------------

inline void serialize_matrix(const MatrixXd& m, ByteWriter& w) {
  w.put_u32(static_cast<std::uint32_t>(m.rows()));
  w.put_u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.put_f64(m(r, c));
}

inline MatrixXd deserialize_matrix(ByteReader& r) {
  std::uint32_t rows = r.get_u32();
  std::uint32_t cols = r.get_u32();
  MatrixXd m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.get_f64();
  return m;
}

inline void serialize_vae_params(const VaeParams& p, ByteWriter& w) {
  w.put_u32(static_cast<std::uint32_t>(p.dims.input));
  w.put_u32(static_cast<std::uint32_t>(p.dims.h1));
  w.put_u32(static_cast<std::uint32_t>(p.dims.h2));
  w.put_u32(static_cast<std::uint32_t>(p.dims.latent));
  for_each_tensor(const_cast<VaeParams&>(p), [&](MatrixXd& t) { serialize_matrix(t, w); });
}

inline VaeParams deserialize_vae_params(ByteReader& r) {
  VaeDims d;
  d.input = static_cast<int>(r.get_u32());
  d.h1 = static_cast<int>(r.get_u32());
  d.h2 = static_cast<int>(r.get_u32());
  d.latent = static_cast<int>(r.get_u32());
  VaeParams p = zero_vae_params(d);
  for_each_tensor(p, [&](MatrixXd& t) { t = deserialize_matrix(r); });
  return p;
}

inline void serialize_laterals(const LateralConnection& l, ByteWriter& w) {
  for_each_lateral_tensor(const_cast<LateralConnection&>(l),
                          [&](MatrixXd& t) { serialize_matrix(t, w); });
}

inline LateralConnection deserialize_laterals(ByteReader& r) {
  LateralConnection l;
  for_each_lateral_tensor(l, [&](MatrixXd& t) { t = deserialize_matrix(r); });
  return l;
}

inline void serialize_observation(const Observation& o, ByteWriter& w) {
  w.put_u16(static_cast<std::uint16_t>(o.d));
  for (double v : o.values) w.put_f64(v);
}

inline Observation deserialize_observation(ByteReader& r) {
  Observation o;
  o.d = r.get_u16();
  o.values.resize(static_cast<std::size_t>(o.d) * o.d * o.d);
  for (double& v : o.values) v = r.get_f64();
  return o;
}

}  // namespace metadiv
