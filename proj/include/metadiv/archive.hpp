#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metadiv/errors.hpp"
#include "metadiv/genome.hpp"
#include "metadiv/holmes.hpp"
#include "metadiv/lenia.hpp"
#include "metadiv/serialize.hpp"
#include "metadiv/vae.hpp"

namespace metadiv {

// ---------------------------------------------------------------------------
// Discovery records and the append-only archive file.
//
// Layout: header ("MDSA", version u16, config digest u64), then length-
// prefixed records. Records are immutable once written; a truncated tail
// (partial final record) is ignored on read. Artifacts are not stored: a
// record's genome regenerates its artifact deterministically on demand.
// ---------------------------------------------------------------------------

constexpr char kArchiveMagic[4] = {'M', 'D', 'S', 'A'};
constexpr std::uint16_t kArchiveVersion = 1;

struct DiscoveryRecord {
  std::uint64_t record_id = 0;
  SystemGenome theta;
  Observation observation;
  std::vector<std::string> routing_path;       // root..leaf at discovery time
  std::map<std::string, VectorXd> encodings;   // keys = routing_path
  ArtifactStats stats;
  std::uint32_t retry_count = 0;
  std::uint64_t iteration_seed = 0;
};

inline void serialize_record(const DiscoveryRecord& rec, ByteWriter& w) {
  w.put_u64(rec.record_id);
  w.put_u64(rec.iteration_seed);
  w.put_u32(rec.retry_count);
  serialize_genome(rec.theta, w);
  serialize_observation(rec.observation, w);
  w.put_u32(static_cast<std::uint32_t>(rec.routing_path.size()));
  for (const auto& id : rec.routing_path) w.put_string(id);
  w.put_u32(static_cast<std::uint32_t>(rec.encodings.size()));
  for (const auto& [id, z] : rec.encodings) {
    w.put_string(id);
    w.put_u32(static_cast<std::uint32_t>(z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i) w.put_f64(z(i));
  }
  serialize_stats(rec.stats, w);
}

inline DiscoveryRecord deserialize_record(ByteReader& r) {
  DiscoveryRecord rec;
  rec.record_id = r.get_u64();
  rec.iteration_seed = r.get_u64();
  rec.retry_count = r.get_u32();
  rec.theta = deserialize_genome(r);
  rec.observation = deserialize_observation(r);
  rec.routing_path.resize(r.get_u32());
  for (auto& id : rec.routing_path) id = r.get_string();
  std::uint32_t n = r.get_u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string id = r.get_string();
    VectorXd z(r.get_u32());
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = r.get_f64();
    rec.encodings.emplace(std::move(id), std::move(z));
  }
  rec.stats = deserialize_stats(r);
  return rec;
}

// In-memory view plus the backing file. Single writer; records are appended
// and never rewritten.
class Archive {
 public:
  Archive() = default;

  // Creates a fresh archive file (truncating any existing one).
  static Archive create(const std::string& path, std::uint64_t config_digest) {
    Archive a;
    a.path_ = path;
    a.config_digest_ = config_digest;
    ByteWriter header;
    header.put_bytes(kArchiveMagic, 4);
    header.put_u16(kArchiveVersion);
    header.put_u64(config_digest);
    write_file(path, header.bytes());
    a.open_for_append();
    return a;
  }

  // Loads an existing archive. A partial trailing record is tolerated and
  // dropped; any deeper corruption throws CorruptFile.
  static Archive open(const std::string& path, bool for_append = true) {
    std::vector<std::uint8_t> bytes = read_file(path);
    ByteReader r(bytes);
    char magic[4];
    if (bytes.size() < 14) throw CorruptFile("archive header incomplete");
    r.get_bytes(magic, 4);
    if (std::memcmp(magic, kArchiveMagic, 4) != 0) throw CorruptFile("bad archive magic");
    std::uint16_t version = r.get_u16();
    if (version != kArchiveVersion) throw VersionMismatch("archive format version");

    Archive a;
    a.path_ = path;
    a.config_digest_ = r.get_u64();
    std::size_t clean_end = r.position();
    while (r.remaining() >= 4) {
      std::uint32_t len = r.get_u32();
      if (r.remaining() < len) break;  // truncated tail: ignore
      ByteReader body(bytes.data() + r.position(), len);
      DiscoveryRecord rec = deserialize_record(body);
      if (rec.record_id != a.records_.size()) throw CorruptFile("record ids out of sequence");
      a.records_.push_back(std::move(rec));
      r.skip(len);
      clean_end = r.position();
    }
    if (for_append) {
      if (clean_end != bytes.size())
        a.rewrite_clean();  // drop the partial tail before appending
      else
        a.open_for_append();
    }
    return a;
  }

  // Durable append; assigns the next record id if the caller left it unset.
  void append(DiscoveryRecord rec) {
    rec.record_id = records_.size();
    ByteWriter body;
    serialize_record(rec, body);
    ByteWriter framed;
    framed.put_u32(static_cast<std::uint32_t>(body.size()));
    if (!out_.is_open()) open_for_append();
    out_.write(reinterpret_cast<const char*>(framed.bytes().data()),
               static_cast<std::streamsize>(framed.size()));
    out_.write(reinterpret_cast<const char*>(body.bytes().data()),
               static_cast<std::streamsize>(body.size()));
    out_.flush();
    if (!out_) throw IoFailure("archive append failed: " + path_);
    records_.push_back(std::move(rec));
  }

  // Drops records past `count` (resume support: the snapshot is the source
  // of truth for progress; the immutable prefix is preserved byte-for-byte).
  void truncate_to(std::size_t count) {
    if (count >= records_.size()) return;
    records_.resize(count);
    rewrite_clean();
  }

  const std::vector<DiscoveryRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  std::uint64_t config_digest() const { return config_digest_; }
  const std::string& path() const { return path_; }

  // Exact nearest record to `target` in the BC space of `node_id`, over
  // records whose routing path contains that node. Ties resolve to the
  // smallest record id; empty niche gives nullopt.
  std::optional<std::uint64_t> nearest_in_niche(const std::string& node_id,
                                                const VectorXd& target) const {
    std::optional<std::uint64_t> best;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& rec : records_) {
      auto it = rec.encodings.find(node_id);
      if (it == rec.encodings.end()) continue;
      double d = (it->second - target).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = rec.record_id;
      }
    }
    return best;
  }

 private:
  void open_for_append() {
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw IoFailure("cannot open archive for append: " + path_);
  }

  // Rewrites header + current records; used when dropping a truncated tail
  // or resuming from a snapshot point.
  void rewrite_clean() {
    out_.close();
    ByteWriter w;
    w.put_bytes(kArchiveMagic, 4);
    w.put_u16(kArchiveVersion);
    w.put_u64(config_digest_);
    for (const auto& rec : records_) {
      ByteWriter body;
      serialize_record(rec, body);
      w.put_u32(static_cast<std::uint32_t>(body.size()));
      w.put_bytes(body.bytes().data(), body.size());
    }
    write_file(path_, w.bytes());
    open_for_append();
  }

  std::string path_;
  std::uint64_t config_digest_ = 0;
  std::vector<DiscoveryRecord> records_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Voxel export: "MDSV", version u16, Sx,Sy,Sz,M u16 each, T+1 u32, then T+1
// frames of Sx*Sy*Sz channel-index bytes, x-fastest. Little-endian.
// ---------------------------------------------------------------------------

constexpr char kVoxelMagic[4] = {'M', 'D', 'S', 'V'};
constexpr std::uint16_t kVoxelVersion = 1;

inline std::vector<std::uint8_t> encode_voxels(const Artifact& artifact, int m) {
  ByteWriter w;
  const VoxelFrame& first = artifact.frames.front();
  w.put_bytes(kVoxelMagic, 4);
  w.put_u16(kVoxelVersion);
  w.put_u16(static_cast<std::uint16_t>(first.sx));
  w.put_u16(static_cast<std::uint16_t>(first.sy));
  w.put_u16(static_cast<std::uint16_t>(first.sz));
  w.put_u16(static_cast<std::uint16_t>(m));
  w.put_u32(static_cast<std::uint32_t>(artifact.frames.size()));
  for (const auto& f : artifact.frames) w.put_bytes(f.blocks.data(), f.blocks.size());
  return w.take();
}

// Re-derives the artifact from the stored genome and writes the voxel file.
inline void export_voxels(const DiscoveryRecord& rec, const GridDims& dims, int t_steps,
                          ConvBackend backend, const std::string& out_path) {
  auto [artifact, stats] = rollout(rec.theta, t_steps, dims, backend);
  write_file(out_path, encode_voxels(artifact, dims.m));
}

// ---------------------------------------------------------------------------
// Run state snapshot: hierarchy + loop counters. Together with the archive
// this restores an exploration mid-run, bit-exactly.
// ---------------------------------------------------------------------------

constexpr char kSnapshotMagic[4] = {'M', 'D', 'S', 'S'};
constexpr std::uint16_t kSnapshotVersion = 1;

struct RunSnapshot {
  std::uint64_t config_digest = 0;
  std::uint64_t master_seed = 0;
  std::uint64_t iterations_done = 0;   // archive records consumed by the loop
  std::uint32_t rounds_done = 0;       // hierarchy training rounds performed
  HolmesHierarchy hierarchy;
};

inline void save_snapshot(const RunSnapshot& snap, const std::string& path) {
  ByteWriter w;
  w.put_bytes(kSnapshotMagic, 4);
  w.put_u16(kSnapshotVersion);
  w.put_u64(snap.config_digest);
  w.put_u64(snap.master_seed);
  w.put_u64(snap.iterations_done);
  w.put_u32(snap.rounds_done);
  serialize_hierarchy(snap.hierarchy, w);
  write_file(path, w.bytes());
}

inline RunSnapshot load_snapshot(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  ByteReader r(bytes);
  char magic[4];
  if (bytes.size() < 6) throw CorruptFile("snapshot header incomplete");
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kSnapshotMagic, 4) != 0) throw CorruptFile("bad snapshot magic");
  if (r.get_u16() != kSnapshotVersion) throw VersionMismatch("snapshot format version");
  RunSnapshot snap;
  snap.config_digest = r.get_u64();
  snap.master_seed = r.get_u64();
  snap.iterations_done = r.get_u64();
  snap.rounds_done = r.get_u32();
  snap.hierarchy = deserialize_hierarchy(r);
  return snap;
}

}  // namespace metadiv
