#include "divmix/diversity.hpp"

namespace divmix::diversity {

DiversityComparison compare_sets(const gist::DescriptorSet& a, const gist::DescriptorSet& b, int bins, int k,
                                 std::string name_a, std::string name_b, int threads) {
  if (a.params_hash != b.params_hash)
    throw ValidationError("compare_sets: descriptor sets were built with different GIST params");
  const auto dm_a = pairwise_distances(a.matrix, threads);
  const auto dm_b = pairwise_distances(b.matrix, threads);

  DiversityComparison c;
  c.name_a = std::move(name_a);
  c.name_b = std::move(name_b);
  c.mean_a = dm_a.mean();
  c.mean_b = dm_b.mean();
  c.median_a = dm_a.median();
  c.median_b = dm_b.median();
  c.spectrum_a = pca_spectrum(a.matrix, k);
  c.spectrum_b = pca_spectrum(b.matrix, k);

  double hi = std::max(dm_a.condensed.maxCoeff(), dm_b.condensed.maxCoeff());
  if (!(hi > 0.0)) hi = 1.0;
  c.histogram_a = distance_histogram<double>(dm_a, bins, std::pair{0.0, hi});
  c.histogram_b = distance_histogram<double>(dm_b, bins, std::pair{0.0, hi});

  for (std::size_t i = 0; i < c.spectrum_a.eigenvalues.size(); ++i)
    c.dominance.push_back(c.spectrum_a.eigenvalues[i] > c.spectrum_b.eigenvalues[i]);
  return c;
}

}  // namespace divmix::diversity
