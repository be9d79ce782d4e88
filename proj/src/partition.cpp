#include "divmix/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "divmix/diversity.hpp"
#include "divmix/error.hpp"
#include "divmix/rng.hpp"
#include "format.hpp"

namespace divmix::partition {

namespace {

// Stream tags, so pools and the random baseline never share a stream.
constexpr std::uint64_t kSimilarPool = 0x51;
constexpr std::uint64_t kDiversePool = 0xd1;
constexpr std::uint64_t kRandomPool = 0x7a;

// Indices of train records per class, in manifest order.
std::vector<std::vector<std::size_t>> train_records_by_class(const Manifest& m) {
  std::vector<std::vector<std::size_t>> by_class(m.classes.size());
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].split == Split::train) by_class[m.class_index(m.records[i].class_label)].push_back(i);
  return by_class;
}

Manifest select_records(const Manifest& m, std::vector<std::size_t> picked) {
  std::sort(picked.begin(), picked.end());
  Manifest out;
  out.classes = m.classes;
  out.records.reserve(picked.size());
  for (std::size_t i : picked) out.records.push_back(m.records[i]);
  return out;
}

}  // namespace

std::string_view to_string(Subset s) { return s == Subset::similar ? "similar" : "diverse"; }

PartitionLabels split_similar_diverse(const gist::DescriptorSet& set, const Manifest& manifest) {
  const auto by_class = train_records_by_class(manifest);
  PartitionLabels labels;
  for (std::size_t ci = 0; ci < by_class.size(); ++ci) {
    const auto& members = by_class[ci];
    const auto& cls = manifest.classes[ci];
    if (members.size() < 2)
      throw ValidationError("class '" + cls + "' has " + std::to_string(members.size()) +
                            " train images; partitioning needs at least 2");
    std::vector<std::string> ids;
    for (std::size_t i : members) ids.push_back(manifest.records[i].id);
    const gist::DescriptorSet sub = set.select(set.rows_for(ids));
    const auto dm = diversity::pairwise_distances(sub.matrix);
    const auto m = static_cast<Eigen::Index>(members.size());

    Eigen::Index medoid = 0;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
      double total = 0.0;
      for (Eigen::Index j = 0; j < m; ++j) total += dm(i, j);
      if (total < best) {
        best = total;
        medoid = i;
      }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return dm(medoid, a) < dm(medoid, b); });
    const std::size_t n_similar = (members.size() + 1) / 2;
    ClassCounts counts;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const auto& id = ids[static_cast<std::size_t>(order[rank])];
      const Subset s = rank < n_similar ? Subset::similar : Subset::diverse;
      labels.assignment[id] = s;
      labels.medoid_distance[id] = dm(medoid, order[rank]);
      (s == Subset::similar ? counts.similar : counts.diverse)++;
    }
    labels.medoid[cls] = ids[static_cast<std::size_t>(medoid)];
    labels.per_class_counts[cls] = counts;
  }
  return labels;
}

std::size_t similar_count(double p, std::size_t n) {
  return static_cast<std::size_t>(std::floor(p * static_cast<double>(n) + 0.5));
}

Manifest sample_mixture(const PartitionLabels& labels, const Manifest& manifest, const MixtureSpec& spec) {
  if (!(spec.p >= 0.0 && spec.p <= 1.0)) throw ValidationError("mixture p must lie in [0, 1]");
  if (spec.n_per_class < 1) throw ValidationError("mixture n_per_class must be >= 1");
  const std::size_t k_similar = similar_count(spec.p, spec.n_per_class);
  const std::size_t k_diverse = spec.n_per_class - k_similar;
  const auto by_class = train_records_by_class(manifest);

  std::vector<std::size_t> picked;
  for (std::size_t ci = 0; ci < by_class.size(); ++ci) {
    std::vector<std::size_t> pools[2];
    for (std::size_t i : by_class[ci]) {
      auto it = labels.assignment.find(manifest.records[i].id);
      if (it == labels.assignment.end())
        throw ValidationError("record '" + manifest.records[i].id + "' is missing from the partition");
      pools[it->second == Subset::similar ? 0 : 1].push_back(i);
    }
    const std::size_t need[2] = {k_similar, k_diverse};
    const std::uint64_t tags[2] = {kSimilarPool, kDiversePool};
    for (int pool = 0; pool < 2; ++pool) {
      if (pools[pool].size() < need[pool])
        throw ValidationError("class '" + manifest.classes[ci] + "': " + std::string(to_string(Subset(pool))) +
                              " pool has " + std::to_string(pools[pool].size()) + " records, needs " +
                              std::to_string(need[pool]) + " (short by " +
                              std::to_string(need[pool] - pools[pool].size()) + ")");
      Rng rng{spec.seed, static_cast<std::uint64_t>(ci), tags[pool]};
      const auto perm = random_permutation(pools[pool].size(), rng);
      for (std::size_t t = 0; t < need[pool]; ++t) picked.push_back(pools[pool][perm[t]]);
    }
  }
  return select_records(manifest, std::move(picked));
}

Manifest sample_random(const Manifest& manifest, std::size_t n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) throw ValidationError("n_per_class must be >= 1");
  const auto by_class = train_records_by_class(manifest);
  std::vector<std::size_t> picked;
  for (std::size_t ci = 0; ci < by_class.size(); ++ci) {
    const auto& pool = by_class[ci];
    if (pool.size() < n_per_class)
      throw ValidationError("class '" + manifest.classes[ci] + "' has " + std::to_string(pool.size()) +
                            " train records, needs " + std::to_string(n_per_class));
    Rng rng{seed, static_cast<std::uint64_t>(ci), kRandomPool};
    const auto perm = random_permutation(pool.size(), rng);
    for (std::size_t t = 0; t < n_per_class; ++t) picked.push_back(pool[perm[t]]);
  }
  return select_records(manifest, std::move(picked));
}

void write_partition_csv(const PartitionLabels& labels, const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write '" + path.string() + "'");
  out << "id,class,subset,medoid_distance\n";
  for (const auto& r : manifest.records) {
    auto it = labels.assignment.find(r.id);
    if (it == labels.assignment.end()) continue;
    out << r.id << ',' << r.class_label << ',' << to_string(it->second) << ','
        << format_double(labels.medoid_distance.at(r.id)) << '\n';
  }
  if (!out) throw RuntimeError("failed writing '" + path.string() + "'");
}

}  // namespace divmix::partition
