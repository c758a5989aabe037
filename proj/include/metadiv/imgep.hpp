#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "metadiv/archive.hpp"
#include "metadiv/config.hpp"
#include "metadiv/genome.hpp"
#include "metadiv/holmes.hpp"
#include "metadiv/lenia.hpp"
#include "metadiv/rng.hpp"
#include "metadiv/vae.hpp"

namespace metadiv {

// ---------------------------------------------------------------------------
// Goal-based exploration over the HOLMES goal spaces, plus the uniform
// random-search baseline. Each iteration consumes a seed derived from
// (master seed, iteration index), so archives are bit-reproducible and a
// resumed run replays the identical stream.
// ---------------------------------------------------------------------------

struct Goal {
  std::string node_id;  // leaf at sampling time
  VectorXd target;
};

struct ExplorationConfig {
  std::uint64_t budget = 200;    // N
  std::uint64_t bootstrap = 40;  // N_init; >= N makes the whole run random
  ThetaMutationRates rates;
  double goal_margin = 0.1;  // epsilon
  std::uint64_t seed = 0;
  int train_every = 20;
  int max_retries = 5;
};

inline ExplorationConfig exploration_config(const RunConfig& cfg, std::uint64_t budget) {
  ExplorationConfig e;
  e.budget = budget;
  e.bootstrap = static_cast<std::uint64_t>(cfg.bootstrap);
  e.rates = cfg.mutation_rates();
  e.goal_margin = cfg.goal_margin;
  e.seed = cfg.seed;
  e.train_every = cfg.train_every;
  e.max_retries = cfg.max_retries;
  return e;
}

// Uniform draw over the current leaves.
inline std::string sample_goal_space(const HolmesHierarchy& h, Rng& rng) {
  auto leaves = h.leaf_ids();
  return leaves[rng.below(leaves.size())];
}

// Goal inside the reached-encoding box of the leaf, expanded by epsilon per
// dimension; the prior box [-3,3]^latent while fewer than two encodings
// exist there.
inline Goal sample_goal(const HolmesHierarchy& h, const std::string& node_id,
                        const Archive& archive, Rng& rng, double epsilon) {
  const int dz = h.dims.latent;
  std::vector<const VectorXd*> reached;
  for (const auto& rec : archive.records()) {
    auto it = rec.encodings.find(node_id);
    if (it != rec.encodings.end()) reached.push_back(&it->second);
  }
  Goal goal;
  goal.node_id = node_id;
  goal.target = VectorXd(dz);
  if (reached.size() < 2) {
    for (int i = 0; i < dz; ++i) goal.target(i) = rng.uniform(-3.0, 3.0);
    return goal;
  }
  for (int i = 0; i < dz; ++i) {
    double lo = (*reached[0])(i), hi = lo;
    for (const auto* z : reached) {
      lo = std::min(lo, (*z)(i));
      hi = std::max(hi, (*z)(i));
    }
    double range = hi - lo;
    goal.target(i) = rng.uniform(lo - epsilon * range, hi + epsilon * range);
  }
  return goal;
}

// Nearest discovery in the goal's niche, mutated; a fresh random genome when
// the niche is still empty.
inline SystemGenome select_parameters(const Goal& goal, const Archive& archive, Rng& rng,
                                      const ThetaMutationRates& rates, const GenomeRanges& ranges) {
  auto nearest = archive.nearest_in_niche(goal.node_id, goal.target);
  if (!nearest) return sample_genome(rng, ranges);
  return mutate_genome_theta(archive.records()[*nearest].theta, rng, rates, ranges);
}

// ---------------------------------------------------------------------------
// Runner: owns the loop state (archive + hierarchy + counters) for both the
// goal-based search and the random baseline.
// ---------------------------------------------------------------------------

class ExplorationRunner {
 public:
  using Progress = std::function<void(std::uint64_t iteration, std::size_t leaves,
                                      std::size_t archive_size)>;

  ExplorationRunner(RunConfig cfg, Archive archive)
      : cfg_(std::move(cfg)), archive_(std::move(archive)) {
    hierarchy_ = create_hierarchy(cfg_.vae_dims(), cfg_.holmes_config(),
                                  derive_seed(cfg_.seed, kStreamRootInit, 0));
  }

  // Restores a run from its snapshot: the archive is cut back to the
  // snapshot's iteration count (snapshots are written at cadence points, so
  // an interrupt between them replays the tail). Leaf memberships come from
  // the snapshot itself and are cross-checked against the archive.
  ExplorationRunner(RunConfig cfg, Archive archive, RunSnapshot snapshot)
      : cfg_(std::move(cfg)), archive_(std::move(archive)) {
    if (snapshot.config_digest != archive_.config_digest())
      throw ConfigMismatch("snapshot and archive were produced by different configs");
    if (snapshot.iterations_done > archive_.size())
      throw CorruptFile("snapshot is ahead of the archive");
    archive_.truncate_to(snapshot.iterations_done);
    hierarchy_ = std::move(snapshot.hierarchy);
    iterations_done_ = snapshot.iterations_done;
    rounds_done_ = snapshot.rounds_done;
    std::size_t total = 0;
    for (const auto& [id, node] : hierarchy_.nodes) {
      total += node.members.size();
      for (auto rid : node.members)
        if (rid >= archive_.size()) throw CorruptFile("snapshot references a missing record");
    }
    if (total != archive_.size())
      throw CorruptFile("snapshot memberships do not cover the archive");
  }

  // Runs until `budget` records exist. One record per iteration; HOLMES
  // trains every train_every iterations.
  void run_to(std::uint64_t budget, bool baseline, const Progress& progress = {}) {
    ExplorationConfig ec = exploration_config(cfg_, budget);
    while (iterations_done_ < budget) {
      run_iteration(ec, baseline);
      if (progress) progress(iterations_done_, hierarchy_.leaf_ids().size(), archive_.size());
    }
  }

  RunSnapshot snapshot() const {
    RunSnapshot s;
    s.config_digest = archive_.config_digest();
    s.master_seed = cfg_.seed;
    s.iterations_done = iterations_done_;
    s.rounds_done = rounds_done_;
    s.hierarchy = hierarchy_;
    return s;
  }

  const Archive& archive() const { return archive_; }
  Archive& archive() { return archive_; }
  const HolmesHierarchy& hierarchy() const { return hierarchy_; }
  std::uint64_t iterations_done() const { return iterations_done_; }
  std::uint32_t rounds_done() const { return rounds_done_; }

 private:
  void run_iteration(const ExplorationConfig& ec, bool baseline) {
    const std::uint64_t i = iterations_done_;
    const std::uint64_t iter_seed = derive_seed(ec.seed, kStreamIteration, i);
    Rng rng(iter_seed);
    GenomeRanges ranges = cfg_.genome_ranges();

    auto propose = [&]() -> SystemGenome {
      if (baseline || i < ec.bootstrap || archive_.size() == 0)
        return sample_genome(rng, ranges);
      std::string leaf = sample_goal_space(hierarchy_, rng);
      Goal goal = sample_goal(hierarchy_, leaf, archive_, rng, ec.goal_margin);
      return select_parameters(goal, archive_, rng, ec.rates, ranges);
    };

    std::uint32_t retries = 0;
    SystemGenome theta = propose();
    std::optional<std::pair<Artifact, ArtifactStats>> result;
    for (;;) {
      try {
        result = rollout(theta, cfg_.steps, cfg_.grid_dims(), cfg_.backend());
        break;
      } catch (const DegenerateKernel&) {
        if (static_cast<int>(retries) >= ec.max_retries)
          throw DegenerateKernel("degenerate kernel persisted past retry budget at iteration " +
                                 std::to_string(i));
        ++retries;
        theta = propose();
      }
    }

    DiscoveryRecord rec;
    rec.theta = std::move(theta);
    rec.observation = make_observation(result->first, cfg_.obs_dim);
    rec.stats = std::move(result->second);
    rec.retry_count = retries;
    rec.iteration_seed = iter_seed;
    for (auto& [id, mean] : route_and_encode(hierarchy_, rec.observation)) {
      rec.routing_path.push_back(id);
      rec.encodings.emplace(id, std::move(mean));
    }

    archive_.append(rec);
    hierarchy_.nodes.at(rec.routing_path.back()).members.push_back(archive_.size() - 1);
    ++iterations_done_;

    if (iterations_done_ % static_cast<std::uint64_t>(ec.train_every) == 0) {
      const auto& records = archive_.records();
      ObservationLookup lookup = [&records](std::uint64_t id) -> const Observation& {
        return records[id].observation;
      };
      std::uint64_t round_seed = derive_seed(ec.seed, kStreamTraining, rounds_done_);
      train_hierarchy_round(hierarchy_, lookup, round_seed, rounds_done_ + 1);
      ++rounds_done_;
    }
  }

  RunConfig cfg_;
  Archive archive_;
  HolmesHierarchy hierarchy_;
  std::uint64_t iterations_done_ = 0;
  std::uint32_t rounds_done_ = 0;
};

// Convenience entry points for file-less use (tests, experiments): run an
// exploration or the random baseline into the given archive path.
inline ExplorationRunner run_exploration(const RunConfig& cfg, std::uint64_t budget,
                                         const std::string& archive_path) {
  ExplorationRunner runner(cfg, Archive::create(archive_path, config_digest(cfg)));
  runner.run_to(budget, /*baseline=*/false);
  return runner;
}

inline ExplorationRunner run_random_baseline(const RunConfig& cfg, std::uint64_t budget,
                                             const std::string& archive_path) {
  ExplorationRunner runner(cfg, Archive::create(archive_path, config_digest(cfg)));
  runner.run_to(budget, /*baseline=*/true);
  return runner;
}

// ---------------------------------------------------------------------------
// Diversity report: per-archive leaf occupancy and latent coverage in its
// own final hierarchy, plus observation-space proxies binned over ranges
// pooled across archives so the histograms are comparable.
// ---------------------------------------------------------------------------

struct ArchiveView {
  std::string name;
  const Archive* archive;
  const HolmesHierarchy* hierarchy;
};

struct DiversityReport {
  struct PerArchive {
    std::string name;
    std::size_t records = 0;
    std::size_t leaves = 0;
    std::map<std::string, std::int64_t> leaf_occupancy;
    std::map<std::string, std::int64_t> latent_coverage;  // occupied cells per leaf
    std::vector<std::int64_t> non_air_histogram;
    std::vector<std::int64_t> bbox_volume_histogram;
  };
  int bins = 0;
  std::int64_t non_air_lo = 0, non_air_hi = 0;  // pooled proxy ranges
  std::int64_t bbox_lo = 0, bbox_hi = 0;
  std::vector<PerArchive> archives;
};

namespace detail {

inline std::int64_t bbox_volume(const ArtifactStats& st) {
  if (st.empty) return 0;
  return static_cast<std::int64_t>(st.bbox_max[0] - st.bbox_min[0] + 1) *
         (st.bbox_max[1] - st.bbox_min[1] + 1) * (st.bbox_max[2] - st.bbox_min[2] + 1);
}

inline int bin_of(double v, double lo, double hi, int bins) {
  if (!(hi > lo)) return 0;
  int b = static_cast<int>((v - lo) / (hi - lo) * bins);
  return std::clamp(b, 0, bins - 1);
}

}  // namespace detail

inline DiversityReport diversity_report(const std::vector<ArchiveView>& views, int bins) {
  if (views.empty()) throw ConfigMismatch("no archives to report on");
  if (bins < 1 || bins > 256) throw ConfigMismatch("bins must be in [1, 256]");
  for (const auto& v : views)
    if (v.archive->config_digest() != views[0].archive->config_digest())
      throw ConfigMismatch("archives come from different run configs");

  DiversityReport rep;
  rep.bins = bins;

  // pooled proxy ranges
  bool first = true;
  for (const auto& v : views) {
    for (const auto& rec : v.archive->records()) {
      std::int64_t na = rec.stats.non_air_count;
      std::int64_t bv = detail::bbox_volume(rec.stats);
      if (first) {
        rep.non_air_lo = rep.non_air_hi = na;
        rep.bbox_lo = rep.bbox_hi = bv;
        first = false;
      }
      rep.non_air_lo = std::min(rep.non_air_lo, na);
      rep.non_air_hi = std::max(rep.non_air_hi, na);
      rep.bbox_lo = std::min(rep.bbox_lo, bv);
      rep.bbox_hi = std::max(rep.bbox_hi, bv);
    }
  }

  for (const auto& v : views) {
    DiversityReport::PerArchive pa;
    pa.name = v.name;
    pa.records = v.archive->size();
    pa.leaves = v.hierarchy->leaf_ids().size();
    pa.non_air_histogram.assign(static_cast<std::size_t>(bins), 0);
    pa.bbox_volume_histogram.assign(static_cast<std::size_t>(bins), 0);

    // route everything through this archive's final hierarchy
    std::map<std::string, std::vector<VectorXd>> leaf_encodings;
    for (const auto& id : v.hierarchy->leaf_ids()) {
      pa.leaf_occupancy[id] = 0;
      leaf_encodings[id] = {};
    }
    for (const auto& rec : v.archive->records()) {
      auto path = route_and_encode(*v.hierarchy, rec.observation);
      const auto& [leaf, mean] = path.back();
      pa.leaf_occupancy[leaf] += 1;
      leaf_encodings[leaf].push_back(mean);

      pa.non_air_histogram[static_cast<std::size_t>(detail::bin_of(
          static_cast<double>(rec.stats.non_air_count), static_cast<double>(rep.non_air_lo),
          static_cast<double>(rep.non_air_hi), bins))] += 1;
      pa.bbox_volume_histogram[static_cast<std::size_t>(detail::bin_of(
          static_cast<double>(detail::bbox_volume(rec.stats)), static_cast<double>(rep.bbox_lo),
          static_cast<double>(rep.bbox_hi), bins))] += 1;
    }

    // latent coverage: occupied cells when each dimension of a leaf's space
    // is binned over the range its own records reach
    for (auto& [leaf, zs] : leaf_encodings) {
      if (zs.empty()) {
        pa.latent_coverage[leaf] = 0;
        continue;
      }
      const int dz = static_cast<int>(zs[0].size());
      VectorXd lo = zs[0], hi = zs[0];
      for (const auto& z : zs) {
        lo = lo.cwiseMin(z);
        hi = hi.cwiseMax(z);
      }
      std::set<std::vector<int>> cells;
      for (const auto& z : zs) {
        std::vector<int> cell(static_cast<std::size_t>(dz));
        for (int i = 0; i < dz; ++i)
          cell[static_cast<std::size_t>(i)] = detail::bin_of(z(i), lo(i), hi(i), bins);
        cells.insert(std::move(cell));
      }
      pa.latent_coverage[leaf] = static_cast<std::int64_t>(cells.size());
    }
    rep.archives.push_back(std::move(pa));
  }
  return rep;
}

// CSV rows: archive,metric,key,value. Integers only, so output is
// reproducible byte-for-byte.
inline std::string report_to_csv(const DiversityReport& rep) {
  std::ostringstream os;
  os << "archive,metric,key,value\n";
  for (const auto& pa : rep.archives) {
    os << pa.name << ",records,," << pa.records << "\n";
    os << pa.name << ",leaves,," << pa.leaves << "\n";
    for (const auto& [leaf, n] : pa.leaf_occupancy)
      os << pa.name << ",leaf_occupancy," << (leaf.empty() ? "root" : leaf) << "," << n << "\n";
    for (const auto& [leaf, n] : pa.latent_coverage)
      os << pa.name << ",latent_coverage," << (leaf.empty() ? "root" : leaf) << "," << n << "\n";
    for (int b = 0; b < rep.bins; ++b)
      os << pa.name << ",non_air_histogram,bin" << b << ","
         << pa.non_air_histogram[static_cast<std::size_t>(b)] << "\n";
    for (int b = 0; b < rep.bins; ++b)
      os << pa.name << ",bbox_volume_histogram,bin" << b << ","
         << pa.bbox_volume_histogram[static_cast<std::size_t>(b)] << "\n";
  }
  return os.str();
}

inline std::string report_to_text(const DiversityReport& rep) {
  std::ostringstream os;
  os << "diversity report (" << rep.bins << " bins per latent dimension)\n";
  os << "non-air count range [" << rep.non_air_lo << ", " << rep.non_air_hi << "], "
     << "bounding-box volume range [" << rep.bbox_lo << ", " << rep.bbox_hi << "]\n";
  for (const auto& pa : rep.archives) {
    os << "\n== " << pa.name << " ==\n";
    os << "records: " << pa.records << ", leaves: " << pa.leaves << "\n";
    os << "leaf occupancy:\n";
    for (const auto& [leaf, n] : pa.leaf_occupancy)
      os << "  " << (leaf.empty() ? "root" : leaf) << ": " << n << "\n";
    os << "latent coverage (occupied cells):\n";
    for (const auto& [leaf, n] : pa.latent_coverage)
      os << "  " << (leaf.empty() ? "root" : leaf) << ": " << n << "\n";
  }
  return os.str();
}

}  // namespace metadiv
