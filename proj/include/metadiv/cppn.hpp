#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metadiv/errors.hpp"
#include "metadiv/field.hpp"
#include "metadiv/rng.hpp"
#include "metadiv/serialize.hpp"

namespace metadiv {

// ---------------------------------------------------------------------------
// Genome representation
//
// Feed-forward function network over inputs (x, y, z, r), each in [-1, 1],
// r = |(x,y,z)|. Nodes live in an explicit topological order: inputs first,
// hidden nodes in vector order, the single output last. Every connection goes
// from a lower position to a higher one, for enabled and disabled links
// alike, so no mutation sequence can introduce a cycle.
// ---------------------------------------------------------------------------

enum class Activation : std::uint8_t {
  identity = 0,
  sine = 1,
  gaussian = 2,
  sigmoid = 3,
  abs = 4,
  tanh_fn = 5,
};

constexpr int kNumActivations = 6;

inline double apply_activation(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::sine: return std::sin(x);
    case Activation::gaussian: return std::exp(-x * x);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::abs: return std::abs(x);
    case Activation::tanh_fn: return std::tanh(x);
  }
  return x;
}

struct CppnNode {
  std::uint32_t id;
  Activation activation;
};

struct CppnConnection {
  std::uint32_t src;
  std::uint32_t dst;
  double weight;
  bool enabled;

  bool operator==(const CppnConnection&) const = default;
};

struct CppnGenome {
  static constexpr int kNumInputs = 4;  // x, y, z, r
  static constexpr std::uint32_t kOutputId = 4;

  std::vector<CppnNode> hidden;  // topological order; ids minted from innovation_counter
  std::vector<CppnConnection> connections;
  double output_bias = 0.0;
  std::uint32_t innovation_counter = kNumInputs + 1;  // next fresh node id

  // Position of a node in the fixed evaluation order, or -1 if unknown.
  int position_of(std::uint32_t id) const {
    if (id < kNumInputs) return static_cast<int>(id);
    if (id == kOutputId) return kNumInputs + static_cast<int>(hidden.size());
    for (std::size_t i = 0; i < hidden.size(); ++i)
      if (hidden[i].id == id) return kNumInputs + static_cast<int>(i);
    return -1;
  }
};

struct CppnConfig {
  int min_hidden = 1;
  int max_hidden = 3;
  double weight_range = 2.0;  // fresh weights ~ U[-range, range]
  double weight_clamp = 3.0;  // mutation clamp
};

struct CppnMutationRates {
  double weight_perturb = 0.8;  // chance to jitter all weights
  double weight_sigma = 0.1;
  double add_node = 0.05;
  double add_connection = 0.1;
  double toggle = 0.02;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Compiled form of a genome: node-id lookups resolved to dense slots so the
// per-coordinate loop stays allocation-free. Construction validates the
// genome (known ids, forward-only edges).
class CppnEvaluator {
 public:
  explicit CppnEvaluator(const CppnGenome& g) {
    num_slots_ = CppnGenome::kNumInputs + static_cast<int>(g.hidden.size()) + 1;
    output_slot_ = num_slots_ - 1;
    output_bias_ = g.output_bias;
    activations_.reserve(g.hidden.size());
    for (const auto& n : g.hidden) activations_.push_back(n.activation);
    incoming_.assign(static_cast<std::size_t>(num_slots_), {});
    for (const auto& c : g.connections) {
      if (!c.enabled) continue;
      int sp = g.position_of(c.src);
      int dp = g.position_of(c.dst);
      if (sp < 0 || dp < 0) throw std::logic_error("cppn connection references unknown node");
      if (sp >= dp) throw std::logic_error("cppn connection is not feed-forward");
      incoming_[static_cast<std::size_t>(dp)].push_back({sp, c.weight});
    }
    values_.assign(static_cast<std::size_t>(num_slots_), 0.0);
  }

  // Output in [0, 1]: sigmoid squash of the output node's weighted sum.
  double eval(double x, double y, double z, double r) {
    values_[0] = x;
    values_[1] = y;
    values_[2] = z;
    values_[3] = r;
    for (int slot = CppnGenome::kNumInputs; slot < output_slot_; ++slot) {
      double sum = 0.0;
      for (const auto& [src, w] : incoming_[static_cast<std::size_t>(slot)])
        sum += w * values_[static_cast<std::size_t>(src)];
      values_[static_cast<std::size_t>(slot)] =
          apply_activation(activations_[static_cast<std::size_t>(slot - CppnGenome::kNumInputs)], sum);
    }
    double sum = output_bias_;
    for (const auto& [src, w] : incoming_[static_cast<std::size_t>(output_slot_)])
      sum += w * values_[static_cast<std::size_t>(src)];
    return 1.0 / (1.0 + std::exp(-sum));
  }

 private:
  struct InEdge {
    int src;
    double weight;
  };

  int num_slots_ = 0;
  int output_slot_ = 0;
  double output_bias_ = 0.0;
  std::vector<Activation> activations_;
  std::vector<std::vector<InEdge>> incoming_;  // by slot
  std::vector<double> values_;
};

inline std::vector<double> evaluate(const CppnGenome& g,
                                    const std::vector<std::array<double, 4>>& coords) {
  CppnEvaluator ev(g);
  std::vector<double> out;
  out.reserve(coords.size());
  for (const auto& c : coords) out.push_back(ev.eval(c[0], c[1], c[2], c[3]));
  return out;
}

// True when every connection is forward in the node order and references
// known nodes; the representation keeps this invariant, mutations rely on it.
inline bool is_feed_forward(const CppnGenome& g) {
  for (const auto& c : g.connections) {
    int sp = g.position_of(c.src);
    int dp = g.position_of(c.dst);
    if (sp < 0 || dp < 0 || sp >= dp) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Generation and mutation
// ---------------------------------------------------------------------------

inline Activation random_activation(Rng& rng) {
  return static_cast<Activation>(rng.below(kNumActivations));
}

// Fresh random genome: all four inputs wired straight to the output, plus
// min..max hidden nodes each with one incoming and one outgoing link. With
// zero hidden nodes this degenerates to a squashed weighted sum of inputs.
inline CppnGenome new_random_genome(Rng& rng, const CppnConfig& cfg) {
  CppnGenome g;
  double wr = cfg.weight_range;
  for (std::uint32_t i = 0; i < CppnGenome::kNumInputs; ++i)
    g.connections.push_back({i, CppnGenome::kOutputId, rng.uniform(-wr, wr), true});
  g.output_bias = rng.uniform(-wr, wr);

  int n_hidden = cfg.min_hidden +
                 static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_hidden - cfg.min_hidden + 1)));
  for (int i = 0; i < n_hidden; ++i) {
    std::uint32_t id = g.innovation_counter++;
    g.hidden.push_back({id, random_activation(rng)});
    // incoming: any input or earlier hidden node
    std::uint64_t n_earlier = CppnGenome::kNumInputs + static_cast<std::uint64_t>(i);
    std::uint64_t src_pos = rng.below(n_earlier);
    std::uint32_t src = src_pos < CppnGenome::kNumInputs
                            ? static_cast<std::uint32_t>(src_pos)
                            : g.hidden[static_cast<std::size_t>(src_pos - CppnGenome::kNumInputs)].id;
    g.connections.push_back({src, id, rng.uniform(-wr, wr), true});
    // outgoing resolved once all nodes exist (kept forward by construction)
  }
  for (int i = 0; i < n_hidden; ++i) {
    std::uint64_t n_later = static_cast<std::uint64_t>(n_hidden - 1 - i) + 1;  // later hiddens + output
    std::uint64_t pick = rng.below(n_later);
    std::uint32_t dst = pick + 1 < n_later
                            ? g.hidden[static_cast<std::size_t>(i + 1 + pick)].id
                            : CppnGenome::kOutputId;
    g.connections.push_back({g.hidden[static_cast<std::size_t>(i)].id, dst, rng.uniform(-wr, wr), true});
  }
  return g;
}

inline CppnGenome new_random_genome(std::uint64_t seed, const CppnConfig& cfg) {
  Rng rng(seed);
  return new_random_genome(rng, cfg);
}

namespace detail {

// Candidate (src,dst) pairs for add-connection: forward in node order, dst
// not an input, src not the output, and no existing link (enabled or not)
// between the pair. Deterministically ordered.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> open_pairs(const CppnGenome& g) {
  std::vector<std::uint32_t> order;
  for (std::uint32_t i = 0; i < CppnGenome::kNumInputs; ++i) order.push_back(i);
  for (const auto& n : g.hidden) order.push_back(n.id);
  order.push_back(CppnGenome::kOutputId);

  auto connected = [&](std::uint32_t a, std::uint32_t b) {
    for (const auto& c : g.connections)
      if (c.src == a && c.dst == b) return true;
    return false;
  };

  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i] == CppnGenome::kOutputId) continue;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (order[j] < CppnGenome::kNumInputs) continue;  // inputs take no edges
      if (!connected(order[i], order[j])) pairs.emplace_back(order[i], order[j]);
    }
  }
  return pairs;
}

}  // namespace detail

// Structural mutation in a fixed draw order (weights, add-node,
// add-connection, toggle) so a seed fully determines the result.
inline CppnGenome mutate_genome(const CppnGenome& g, Rng& rng, const CppnMutationRates& rates,
                                const CppnConfig& cfg) {
  CppnGenome out = g;
  double clamp = cfg.weight_clamp;

  if (rng.bernoulli(rates.weight_perturb)) {
    for (auto& c : out.connections)
      c.weight = std::clamp(c.weight + rng.normal(0.0, rates.weight_sigma), -clamp, clamp);
    out.output_bias = std::clamp(out.output_bias + rng.normal(0.0, rates.weight_sigma), -clamp, clamp);
  }

  if (rng.bernoulli(rates.add_node)) {
    std::vector<std::size_t> enabled;
    for (std::size_t i = 0; i < out.connections.size(); ++i)
      if (out.connections[i].enabled) enabled.push_back(i);
    if (!enabled.empty()) {
      std::size_t ci = enabled[rng.below(enabled.size())];
      CppnConnection split = out.connections[ci];
      out.connections[ci].enabled = false;
      std::uint32_t id = out.innovation_counter++;
      // insert immediately before dst so both new edges stay forward
      int dst_pos = out.position_of(split.dst);
      std::size_t insert_at = static_cast<std::size_t>(dst_pos - CppnGenome::kNumInputs);
      insert_at = std::min(insert_at, out.hidden.size());
      out.hidden.insert(out.hidden.begin() + static_cast<std::ptrdiff_t>(insert_at),
                        {id, random_activation(rng)});
      out.connections.push_back({split.src, id, 1.0, true});
      out.connections.push_back({id, split.dst, split.weight, true});
    }
  }

  if (rng.bernoulli(rates.add_connection)) {
    auto pairs = detail::open_pairs(out);
    if (!pairs.empty()) {
      auto [src, dst] = pairs[rng.below(pairs.size())];
      out.connections.push_back({src, dst, rng.uniform(-cfg.weight_range, cfg.weight_range), true});
    }
  }

  if (rng.bernoulli(rates.toggle) && !out.connections.empty()) {
    auto& c = out.connections[rng.below(out.connections.size())];
    c.enabled = !c.enabled;
  }

  return out;
}

inline CppnGenome mutate_genome(const CppnGenome& g, std::uint64_t seed,
                                const CppnMutationRates& rates, const CppnConfig& cfg) {
  Rng rng(seed);
  return mutate_genome(g, rng, rates, cfg);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct Kernel {
  int rx = 0, ry = 0, rz = 0;  // box is (2rx+1) x (2ry+1) x (2rz+1)
  Field3 weights;
};

// Kernel tensor sampled on the box [-R, R]^3, axes normalized to [-1, 1],
// entries normalized to sum 1. Throws DegenerateKernel when the genome
// renders identically zero (possible when the output sigmoid underflows).
inline Kernel render_kernel(const CppnGenome& g, int rx, int ry, int rz) {
  Kernel k;
  k.rx = rx;
  k.ry = ry;
  k.rz = rz;
  k.weights = Field3(2 * rx + 1, 2 * ry + 1, 2 * rz + 1);
  CppnEvaluator ev(g);
  double sum = 0.0;
  for (int iz = -rz; iz <= rz; ++iz)
    for (int iy = -ry; iy <= ry; ++iy)
      for (int ix = -rx; ix <= rx; ++ix) {
        double x = static_cast<double>(ix) / rx;
        double y = static_cast<double>(iy) / ry;
        double z = static_cast<double>(iz) / rz;
        double r = std::sqrt(x * x + y * y + z * z);
        double v = ev.eval(x, y, z, r);
        k.weights.at(ix + rx, iy + ry, iz + rz) = v;
        sum += v;
      }
  if (sum == 0.0) throw DegenerateKernel("kernel rendered identically zero");
  for (double& v : k.weights.data) v /= sum;
  return k;
}

// Initial pattern: CPPN output inside a centered sub-box, zero outside. The
// sub-box is the largest axis-proportional box with volume fraction at most
// occupation_ratio (at least one cell per axis). Coordinates are normalized
// over the sub-box so a pattern keeps its shape across ratios.
inline Field3 render_init_pattern(const CppnGenome& g, int sx, int sy, int sz,
                                  double occupation_ratio) {
  double alpha = std::cbrt(occupation_ratio);
  auto side = [&](int s) {
    return std::max(1, static_cast<int>(std::floor(alpha * s + 1e-9)));
  };
  int nx = side(sx), ny = side(sy), nz = side(sz);
  int x0 = (sx - nx) / 2, y0 = (sy - ny) / 2, z0 = (sz - nz) / 2;

  auto coord = [](int i, int n) {
    return n > 1 ? 2.0 * i / (n - 1) - 1.0 : 0.0;
  };

  Field3 field(sx, sy, sz);
  CppnEvaluator ev(g);
  for (int iz = 0; iz < nz; ++iz)
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix) {
        double x = coord(ix, nx), y = coord(iy, ny), z = coord(iz, nz);
        double r = std::sqrt(x * x + y * y + z * z);
        field.at(x0 + ix, y0 + iy, z0 + iz) = ev.eval(x, y, z, r);
      }
  return field;
}

// ---------------------------------------------------------------------------
// Serialization (used inside archived genomes; versioned by the container)
// ---------------------------------------------------------------------------

inline void serialize_cppn(const CppnGenome& g, ByteWriter& w) {
  w.put_u32(static_cast<std::uint32_t>(g.hidden.size()));
  for (const auto& n : g.hidden) {
    w.put_u32(n.id);
    w.put_u8(static_cast<std::uint8_t>(n.activation));
  }
  w.put_u32(static_cast<std::uint32_t>(g.connections.size()));
  for (const auto& c : g.connections) {
    w.put_u32(c.src);
    w.put_u32(c.dst);
    w.put_f64(c.weight);
    w.put_u8(c.enabled ? 1 : 0);
  }
  w.put_f64(g.output_bias);
  w.put_u32(g.innovation_counter);
}

inline CppnGenome deserialize_cppn(ByteReader& r) {
  CppnGenome g;
  std::uint32_t nh = r.get_u32();
  g.hidden.reserve(nh);
  for (std::uint32_t i = 0; i < nh; ++i) {
    std::uint32_t id = r.get_u32();
    std::uint8_t act = r.get_u8();
    if (act >= kNumActivations) throw CorruptFile("bad activation id");
    g.hidden.push_back({id, static_cast<Activation>(act)});
  }
  std::uint32_t nc = r.get_u32();
  g.connections.reserve(nc);
  for (std::uint32_t i = 0; i < nc; ++i) {
    CppnConnection c;
    c.src = r.get_u32();
    c.dst = r.get_u32();
    c.weight = r.get_f64();
    c.enabled = r.get_u8() != 0;
    g.connections.push_back(c);
  }
  g.output_bias = r.get_f64();
  g.innovation_counter = r.get_u32();
  return g;
}

inline bool operator==(const CppnGenome& a, const CppnGenome& b) {
  if (a.hidden.size() != b.hidden.size() || a.connections.size() != b.connections.size())
    return false;
  for (std::size_t i = 0; i < a.hidden.size(); ++i)
    if (a.hidden[i].id != b.hidden[i].id || a.hidden[i].activation != b.hidden[i].activation)
      return false;
  return a.connections == b.connections && a.output_bias == b.output_bias &&
         a.innovation_counter == b.innovation_counter;
}

}  // namespace metadiv
