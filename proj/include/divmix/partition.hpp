#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "divmix/corpus.hpp"
#include "divmix/gist.hpp"

namespace divmix::partition {

enum class Subset { similar, diverse };

std::string_view to_string(Subset s);

struct ClassCounts {
  std::size_t similar = 0;
  std::size_t diverse = 0;

  bool operator==(const ClassCounts&) const = default;
};

struct PartitionLabels {
  std::map<std::string, Subset> assignment;
  std::map<std::string, double> medoid_distance;
  std::map<std::string, std::string> medoid;  // class -> medoid record id
  std::map<std::string, ClassCounts> per_class_counts;
};

/// Per class over the train records: the medoid minimises the summed GIST
/// distance to its classmates; the ceil(m/2) records closest to it are
/// `similar`, the rest `diverse`. Ties go to the earlier manifest record.
PartitionLabels split_similar_diverse(const gist::DescriptorSet& set, const Manifest& manifest);

struct MixtureSpec {
  double p = 0.5;  // similar fraction
  std::size_t n_per_class = 25;
  std::uint64_t seed = 0;
};

/// round(p * n) with halves rounded up.
std::size_t similar_count(double p, std::size_t n);

/// Class-balanced train manifest: similar_count(p, n) records from each
/// class's similar pool and the rest from its diverse pool. Each pool is
/// visited in a fixed random order keyed by (seed, class, pool), so raising p
/// by 1/n swaps exactly one diverse record for one similar record. Records
/// keep manifest order.
Manifest sample_mixture(const PartitionLabels& labels, const Manifest& manifest, const MixtureSpec& spec);

/// Class-balanced uniform sample of n train records per class.
Manifest sample_random(const Manifest& manifest, std::size_t n_per_class, std::uint64_t seed);

/// CSV `id,class,subset,medoid_distance`, train records in manifest order.
void write_partition_csv(const PartitionLabels& labels, const Manifest& manifest, const std::filesystem::path& path);

}  // namespace divmix::partition
