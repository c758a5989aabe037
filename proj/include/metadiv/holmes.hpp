#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metadiv/errors.hpp"
#include "metadiv/rng.hpp"
#include "metadiv/serialize.hpp"
#include "metadiv/vae.hpp"

namespace metadiv {

// ---------------------------------------------------------------------------
// Growing binary hierarchy of VAE nodes. Node ids are bit paths from the
// root (""). Internal nodes are frozen and carry a 2-centroid boundary in
// their latent space; leaves train. Children reach back into their frozen
// parent's hidden features through lateral connections.
// ---------------------------------------------------------------------------

struct HolmesConfig {
  int plateau_window = 10;       // training rounds per comparison window
  double plateau_threshold = 0.01;
  int min_population = 50;
  int buffer_cap = 500;          // replay buffer: most recent N observations
  int steps_per_round = 20;
  int kmeans_iters = 100;
  int kmeans_restarts = 8;
  TrainConfig train;
};

struct HolmesNode {
  std::string id;
  VaeParams vae;
  bool frozen = false;
  std::optional<std::array<VectorXd, 2>> boundary;  // set when frozen for split
  std::optional<LateralConnection> laterals;        // absent on the root
  AdamState adam;
  std::vector<double> loss_history;        // one windowed mean per round
  std::vector<std::uint64_t> members;      // record ids routed here (leaves)
  std::uint32_t created_round = 0;
};

using ObservationLookup = std::function<const Observation&(std::uint64_t)>;

struct HolmesHierarchy {
  std::map<std::string, HolmesNode> nodes;  // key order: parents before children
  VaeDims dims{};
  HolmesConfig cfg;

  bool has_children(const std::string& id) const { return nodes.count(id + "0") != 0; }

  bool is_leaf(const std::string& id) const { return !has_children(id); }

  std::vector<std::string> leaf_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, node] : nodes)
      if (is_leaf(id)) out.push_back(id);
    return out;
  }

  std::int64_t population(const std::string& id) const {
    std::int64_t n = 0;
    for (const auto& [nid, node] : nodes)
      if (nid.size() >= id.size() && nid.compare(0, id.size(), id) == 0)
        n += static_cast<std::int64_t>(node.members.size());
    return n;
  }
};

inline HolmesHierarchy create_hierarchy(const VaeDims& dims, const HolmesConfig& cfg,
                                        std::uint64_t root_seed) {
  HolmesHierarchy h;
  h.dims = dims;
  h.cfg = cfg;
  HolmesNode root;
  root.id = "";
  Rng rng(root_seed);
  root.vae = init_vae_params(dims, rng);
  root.adam = zero_adam_state(dims, false);
  h.nodes.emplace("", std::move(root));
  return h;
}

// ---------------------------------------------------------------------------
// Forward passes along ancestor chains
// ---------------------------------------------------------------------------

namespace detail {

inline ForwardCache node_forward(const HolmesNode& node, const MatrixXd& x,
                                 const ParentFeatures* parent) {
  std::optional<LateralInputs> lat;
  if (node.laterals && parent) lat = LateralInputs{&*node.laterals, parent};
  return vae_forward(node.vae, x, lat, nullptr);
}

}  // namespace detail

// Hidden features of node `id` for a batch, laterals applied down the whole
// ancestor chain. Used to feed a child's laterals during training.
inline ParentFeatures chain_features(const HolmesHierarchy& h, const std::string& id,
                                     const MatrixXd& x) {
  ParentFeatures feats;
  bool have = false;
  for (std::size_t len = 0; len <= id.size(); ++len) {
    auto it = h.nodes.find(id.substr(0, len));
    if (it == h.nodes.end()) throw UnknownNode("no node '" + id.substr(0, len) + "'");
    ForwardCache c = detail::node_forward(it->second, x, have ? &feats : nullptr);
    feats = {c.h1, c.h2, c.g1, c.g2};
    have = true;
  }
  return feats;
}

// Root-to-leaf descent: at each frozen internal node, encode and follow the
// nearest boundary centroid (ties to centroid 0). Returns the full path with
// this observation's latent mean in every node's space.
inline std::vector<std::pair<std::string, VectorXd>> route_and_encode(const HolmesHierarchy& h,
                                                                      const Observation& obs) {
  MatrixXd x = obs_to_column(obs);
  std::vector<std::pair<std::string, VectorXd>> path;
  ParentFeatures feats;
  bool have = false;
  std::string id = "";
  for (;;) {
    const HolmesNode& node = h.nodes.at(id);
    ForwardCache c = detail::node_forward(node, x, have ? &feats : nullptr);
    path.emplace_back(id, c.mean.col(0));
    if (!h.has_children(id)) return path;
    const auto& b = *node.boundary;
    double d0 = (c.mean.col(0) - b[0]).squaredNorm();
    double d1 = (c.mean.col(0) - b[1]).squaredNorm();
    feats = {c.h1, c.h2, c.g1, c.g2};
    have = true;
    id += (d1 < d0) ? '1' : '0';
  }
}

inline std::vector<std::string> route(const HolmesHierarchy& h, const Observation& obs) {
  std::vector<std::string> ids;
  for (auto& [id, mean] : route_and_encode(h, obs)) ids.push_back(id);
  return ids;
}

// Latent mean of `obs` in the BC space of `node_id`.
inline VectorXd encode_bc(const HolmesHierarchy& h, const std::string& node_id,
                          const Observation& obs) {
  if (h.nodes.count(node_id) == 0) throw UnknownNode("no node '" + node_id + "'");
  MatrixXd x = obs_to_column(obs);
  ParentFeatures feats;
  bool have = false;
  VectorXd mean;
  for (std::size_t len = 0; len <= node_id.size(); ++len) {
    const HolmesNode& node = h.nodes.at(node_id.substr(0, len));
    ForwardCache c = detail::node_forward(node, x, have ? &feats : nullptr);
    mean = c.mean.col(0);
    feats = {c.h1, c.h2, c.g1, c.g2};
    have = true;
  }
  return mean;
}

// ---------------------------------------------------------------------------
// K-means (k-means++ seeding, Lloyd to a fixpoint, best of `restarts`)
// ---------------------------------------------------------------------------

struct KmeansResult {
  std::vector<VectorXd> centroids;
  std::vector<int> assignment;
  double wcss = 0.0;
};

namespace detail {

inline std::vector<int> kmeans_assign(const std::vector<VectorXd>& points,
                                      const std::vector<VectorXd>& centroids) {
  std::vector<int> assign(points.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = (points[i] - centroids[0]).squaredNorm();
    for (std::size_t c = 1; c < centroids.size(); ++c) {
      double d = (points[i] - centroids[c]).squaredNorm();
      if (d < best) {
        best = d;
        assign[i] = static_cast<int>(c);
      }
    }
  }
  return assign;
}

// An empty cluster takes the point farthest from its current centroid.
inline void kmeans_fix_empty(const std::vector<VectorXd>& points,
                             const std::vector<VectorXd>& centroids, std::vector<int>& assign,
                             int k) {
  for (int c = 0; c < k; ++c) {
    if (std::count(assign.begin(), assign.end(), c) > 0) continue;
    std::size_t worst = 0;
    double worst_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (std::count(assign.begin(), assign.end(), assign[i]) <= 1) continue;  // keep clusters nonempty
      double d = (points[i] - centroids[static_cast<std::size_t>(assign[i])]).squaredNorm();
      if (d > worst_d) {
        worst_d = d;
        worst = i;
      }
    }
    if (worst_d >= 0.0) assign[worst] = c;
  }
}

inline std::vector<VectorXd> kmeans_means(const std::vector<VectorXd>& points,
                                          const std::vector<int>& assign, int k) {
  std::vector<VectorXd> means(static_cast<std::size_t>(k),
                              VectorXd::Zero(points[0].size()));
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    means[static_cast<std::size_t>(assign[i])] += points[i];
    counts[static_cast<std::size_t>(assign[i])]++;
  }
  for (int c = 0; c < k; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0)
      means[static_cast<std::size_t>(c)] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  return means;
}

inline KmeansResult kmeans_single(const std::vector<VectorXd>& points, int k, Rng& rng,
                                  int iters) {
  const std::size_t n = points.size();
  std::vector<VectorXd> centroids;
  centroids.push_back(points[rng.below(n)]);
  while (static_cast<int>(centroids.size()) < k) {
    std::vector<double> d2(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = (points[i] - centroids[0]).squaredNorm();
      for (std::size_t c = 1; c < centroids.size(); ++c)
        best = std::min(best, (points[i] - centroids[c]).squaredNorm());
      d2[i] = best;
      total += best;
    }
    double r = rng.uniform01() * total;
    std::size_t pick = n - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (r < acc) {
        pick = i;
        break;
      }
    }
    centroids.push_back(points[pick]);
  }

  std::vector<int> assign = kmeans_assign(points, centroids);
  kmeans_fix_empty(points, centroids, assign, k);
  centroids = kmeans_means(points, assign, k);
  for (int it = 0; it < iters; ++it) {
    std::vector<int> next = kmeans_assign(points, centroids);
    kmeans_fix_empty(points, centroids, next, k);
    if (next == assign) break;
    assign = next;
    centroids = kmeans_means(points, assign, k);
  }

  KmeansResult res;
  res.centroids = std::move(centroids);
  res.assignment = std::move(assign);
  for (std::size_t i = 0; i < n; ++i)
    res.wcss += (points[i] - res.centroids[static_cast<std::size_t>(res.assignment[i])]).squaredNorm();
  return res;
}

}  // namespace detail

// Returns nullopt (degenerate split) when there are fewer than k distinct
// points. At termination each centroid is exactly the mean of its cluster.
inline std::optional<KmeansResult> kmeans_fit(const std::vector<VectorXd>& points, int k,
                                              Rng& rng, int iters, int restarts = 1) {
  if (static_cast<int>(points.size()) < k) return std::nullopt;
  std::vector<const VectorXd*> distinct;
  for (const auto& p : points) {
    bool seen = false;
    for (const auto* q : distinct) seen = seen || (*q == p);
    if (!seen) distinct.push_back(&p);
    if (static_cast<int>(distinct.size()) >= k) break;
  }
  if (static_cast<int>(distinct.size()) < k) return std::nullopt;

  std::optional<KmeansResult> best;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KmeansResult res = detail::kmeans_single(points, k, rng, iters);
    if (!best || res.wcss < best->wcss) best = std::move(res);
  }
  return best;
}

inline std::optional<KmeansResult> kmeans_fit(const std::vector<VectorXd>& points, int k,
                                              std::uint64_t seed, int iters, int restarts = 1) {
  Rng rng(seed);
  return kmeans_fit(points, k, rng, iters, restarts);
}

// ---------------------------------------------------------------------------
// Saturation and splitting
// ---------------------------------------------------------------------------

// A leaf saturates once it holds enough records and the windowed mean of its
// round losses stopped improving: comparing the last `window` rounds against
// the `window` before them, relative improvement below the threshold.
inline bool check_saturation(const HolmesNode& node, std::int64_t population,
                             const HolmesConfig& cfg) {
  if (population < cfg.min_population) return false;
  const std::size_t w = static_cast<std::size_t>(cfg.plateau_window);
  const auto& hist = node.loss_history;
  if (hist.size() < 2 * w) return false;
  double recent = 0.0, previous = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    recent += hist[hist.size() - 1 - i];
    previous += hist[hist.size() - 1 - w - i];
  }
  recent /= static_cast<double>(w);
  previous /= static_cast<double>(w);
  double improvement = (previous - recent) / std::max(std::abs(previous), 1e-12);
  return improvement < cfg.plateau_threshold;
}

// Freezes a saturated leaf: fits a k=2 boundary on its members' encodings,
// spawns two fresh children with zero laterals, and re-routes the members.
// Returns false (hierarchy unchanged) when the encodings are degenerate.
inline bool split_node(HolmesHierarchy& h, const std::string& node_id,
                       const ObservationLookup& lookup, Rng& rng, std::uint32_t round) {
  auto it = h.nodes.find(node_id);
  if (it == h.nodes.end()) throw UnknownNode("no node '" + node_id + "'");
  HolmesNode& node = it->second;

  std::vector<VectorXd> encodings;
  encodings.reserve(node.members.size());
  for (auto rid : node.members) encodings.push_back(encode_bc(h, node_id, lookup(rid)));

  auto km = kmeans_fit(encodings, 2, rng, h.cfg.kmeans_iters, h.cfg.kmeans_restarts);
  if (!km) return false;

  node.frozen = true;
  node.boundary = {km->centroids[0], km->centroids[1]};

  std::array<HolmesNode, 2> children;
  for (int c = 0; c < 2; ++c) {
    children[static_cast<std::size_t>(c)].id = node_id + static_cast<char>('0' + c);
    children[static_cast<std::size_t>(c)].vae = init_vae_params(h.dims, rng);
    children[static_cast<std::size_t>(c)].laterals = zero_laterals(h.dims);
    children[static_cast<std::size_t>(c)].adam = zero_adam_state(h.dims, true);
    children[static_cast<std::size_t>(c)].created_round = round;
  }
  for (std::size_t i = 0; i < node.members.size(); ++i)
    children[static_cast<std::size_t>(km->assignment[i])].members.push_back(node.members[i]);
  node.members.clear();
  for (auto& child : children) h.nodes.emplace(child.id, std::move(child));
  return true;
}

// ---------------------------------------------------------------------------
// Training round
// ---------------------------------------------------------------------------

// Trains every populated leaf on its replay buffer, records the round loss,
// then performs at most one split (deepest saturated leaf first; equal depth
// resolves to the lexicographically smallest id). Returns the id of the
// split node, if any.
inline std::optional<std::string> train_hierarchy_round(HolmesHierarchy& h,
                                                        const ObservationLookup& lookup,
                                                        std::uint64_t round_seed,
                                                        std::uint32_t round) {
  for (auto& [id, node] : h.nodes) {
    if (!h.is_leaf(id) || node.members.empty()) continue;
    const std::size_t take =
        std::min<std::size_t>(static_cast<std::size_t>(h.cfg.buffer_cap), node.members.size());
    const std::size_t start = node.members.size() - take;

    MatrixXd buffer(h.dims.input, static_cast<Eigen::Index>(take));
    for (std::size_t i = 0; i < take; ++i) {
      const Observation& obs = lookup(node.members[start + i]);
      buffer.col(static_cast<Eigen::Index>(i)) = obs_to_column(obs);
    }

    ParentFeatures parent_feats;
    const ParentFeatures* pf = nullptr;
    if (!id.empty() && node.laterals) {
      parent_feats = chain_features(h, id.substr(0, id.size() - 1), buffer);
      pf = &parent_feats;
    }

    Rng rng(derive_seed(round_seed, 10, fnv1a64(id)));
    auto losses = train_steps(node.vae, node.laterals ? &*node.laterals : nullptr, buffer, pf,
                              h.cfg.steps_per_round, node.adam, rng, h.cfg.train);
    if (!losses.empty()) {
      double mean = 0.0;
      for (double l : losses) mean += l;
      node.loss_history.push_back(mean / static_cast<double>(losses.size()));
    }
  }

  std::vector<std::string> candidates;
  for (auto& [id, node] : h.nodes)
    if (h.is_leaf(id) && check_saturation(node, h.population(id), h.cfg)) candidates.push_back(id);
  std::sort(candidates.begin(), candidates.end(), [](const std::string& a, const std::string& b) {
    return a.size() != b.size() ? a.size() > b.size() : a < b;
  });
  for (const auto& id : candidates) {
    Rng rng(derive_seed(round_seed, 11, fnv1a64(id)));
    if (split_node(h, id, lookup, rng, round)) return id;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Snapshot payload (topology + params + centroids + optimizer state)
// ---------------------------------------------------------------------------

inline void serialize_hierarchy(const HolmesHierarchy& h, ByteWriter& w) {
  w.put_u32(static_cast<std::uint32_t>(h.dims.input));
  w.put_u32(static_cast<std::uint32_t>(h.dims.h1));
  w.put_u32(static_cast<std::uint32_t>(h.dims.h2));
  w.put_u32(static_cast<std::uint32_t>(h.dims.latent));
  w.put_u32(static_cast<std::uint32_t>(h.cfg.plateau_window));
  w.put_f64(h.cfg.plateau_threshold);
  w.put_u32(static_cast<std::uint32_t>(h.cfg.min_population));
  w.put_u32(static_cast<std::uint32_t>(h.cfg.buffer_cap));
  w.put_u32(static_cast<std::uint32_t>(h.cfg.steps_per_round));
  w.put_u32(static_cast<std::uint32_t>(h.cfg.kmeans_iters));
  w.put_u32(static_cast<std::uint32_t>(h.cfg.kmeans_restarts));
  w.put_f64(h.cfg.train.lr);
  w.put_f64(h.cfg.train.beta1);
  w.put_f64(h.cfg.train.beta2);
  w.put_f64(h.cfg.train.adam_eps);
  w.put_u32(static_cast<std::uint32_t>(h.cfg.train.batch));
  w.put_f64(h.cfg.train.kl_beta);

  w.put_u32(static_cast<std::uint32_t>(h.nodes.size()));
  for (const auto& [id, node] : h.nodes) {
    w.put_string(id);
    w.put_u8(node.frozen ? 1 : 0);
    w.put_u32(node.created_round);
    w.put_u64(static_cast<std::uint64_t>(node.members.size()));
    for (auto rid : node.members) w.put_u64(rid);
    serialize_vae_params(node.vae, w);
    w.put_u8(node.boundary ? 1 : 0);
    if (node.boundary)
      for (const auto& c : *node.boundary) serialize_matrix(c, w);
    w.put_u8(node.laterals ? 1 : 0);
    if (node.laterals) serialize_laterals(*node.laterals, w);
    w.put_i64(node.adam.t);
    serialize_vae_params(node.adam.m, w);
    serialize_vae_params(node.adam.v, w);
    w.put_u8(node.adam.lm ? 1 : 0);
    if (node.adam.lm) {
      serialize_laterals(*node.adam.lm, w);
      serialize_laterals(*node.adam.lv, w);
    }
    w.put_u32(static_cast<std::uint32_t>(node.loss_history.size()));
    for (double l : node.loss_history) w.put_f64(l);
  }
}

inline HolmesHierarchy deserialize_hierarchy(ByteReader& r) {
  HolmesHierarchy h;
  h.dims.input = static_cast<int>(r.get_u32());
  h.dims.h1 = static_cast<int>(r.get_u32());
  h.dims.h2 = static_cast<int>(r.get_u32());
  h.dims.latent = static_cast<int>(r.get_u32());
  h.cfg.plateau_window = static_cast<int>(r.get_u32());
  h.cfg.plateau_threshold = r.get_f64();
  h.cfg.min_population = static_cast<int>(r.get_u32());
  h.cfg.buffer_cap = static_cast<int>(r.get_u32());
  h.cfg.steps_per_round = static_cast<int>(r.get_u32());
  h.cfg.kmeans_iters = static_cast<int>(r.get_u32());
  h.cfg.kmeans_restarts = static_cast<int>(r.get_u32());
  h.cfg.train.lr = r.get_f64();
  h.cfg.train.beta1 = r.get_f64();
  h.cfg.train.beta2 = r.get_f64();
  h.cfg.train.adam_eps = r.get_f64();
  h.cfg.train.batch = static_cast<int>(r.get_u32());
  h.cfg.train.kl_beta = r.get_f64();

  std::uint32_t n = r.get_u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    HolmesNode node;
    node.id = r.get_string();
    node.frozen = r.get_u8() != 0;
    node.created_round = r.get_u32();
    node.members.resize(r.get_u64());
    for (auto& rid : node.members) rid = r.get_u64();
    node.vae = deserialize_vae_params(r);
    if (r.get_u8()) {
      VectorXd c0 = deserialize_matrix(r).col(0);
      VectorXd c1 = deserialize_matrix(r).col(0);
      node.boundary = {c0, c1};
    }
    if (r.get_u8()) node.laterals = deserialize_laterals(r);
    node.adam.t = r.get_i64();
    node.adam.m = deserialize_vae_params(r);
    node.adam.v = deserialize_vae_params(r);
    if (r.get_u8()) {
      node.adam.lm = deserialize_laterals(r);
      node.adam.lv = deserialize_laterals(r);
    }
    node.loss_history.resize(r.get_u32());
    for (double& l : node.loss_history) l = r.get_f64();
    h.nodes.emplace(node.id, std::move(node));
  }
  return h;
}

}  // namespace metadiv
