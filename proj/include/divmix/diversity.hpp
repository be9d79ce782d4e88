#pragma once

// Diversity statistics of descriptor clouds: all-pairs distances and their
// histogram, the PCA eigen-spectrum and a classical MDS embedding. Everything
// here is templated on the accumulation scalar and accepts any dense Eigen
// expression whose rows are observations.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "divmix/error.hpp"
#include "divmix/gist.hpp"
#include "divmix/parallel.hpp"

namespace divmix::diversity {

template <typename Scalar = double>
struct DistanceMatrix {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Eigen::Index n = 0;
  Vector condensed;  // pair (i, j), i < j, at condensed_index(n, i, j)

  static Eigen::Index condensed_index(Eigen::Index n, Eigen::Index i, Eigen::Index j) {
    return i * n - i * (i + 1) / 2 + (j - i - 1);
  }

  Scalar operator()(Eigen::Index i, Eigen::Index j) const {
    if (i == j) return Scalar(0);
    if (i > j) std::swap(i, j);
    return condensed[condensed_index(n, i, j)];
  }

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> square() const {
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> d = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = condensed[condensed_index(n, i, j)];
    return d;
  }

  Scalar mean() const { return condensed.size() ? condensed.mean() : Scalar(0); }

  Scalar median() const {
    if (condensed.size() == 0) return Scalar(0);
    std::vector<Scalar> v(condensed.data(), condensed.data() + condensed.size());
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    Scalar hi = v[mid];
    if (v.size() % 2) return hi;
    Scalar lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return (lo + hi) / Scalar(2);
  }
};

/// Euclidean distances between all row pairs, accumulated in Scalar.
template <typename Scalar = double, typename Derived>
DistanceMatrix<Scalar> pairwise_distances(const Eigen::MatrixBase<Derived>& rows, int threads = 1) {
  const Eigen::Index n = rows.rows();
  if (n < 2) throw ValidationError("pairwise distances need at least 2 rows");
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x = rows.template cast<Scalar>();
  DistanceMatrix<Scalar> dm;
  dm.n = n;
  dm.condensed.resize(n * (n - 1) / 2);
  parallel_for(static_cast<std::size_t>(n - 1), threads, [&](std::size_t ii) {
    const auto i = static_cast<Eigen::Index>(ii);
    Eigen::Index k = DistanceMatrix<Scalar>::condensed_index(n, i, i + 1);
    for (Eigen::Index j = i + 1; j < n; ++j) dm.condensed[k++] = (x.row(i) - x.row(j)).norm();
  });
  return dm;
}

template <typename Scalar = double>
struct Histogram {
  std::vector<Scalar> bin_edges;
  std::vector<long long> counts;
  long long total = 0;

  bool operator==(const Histogram&) const = default;
};

/// Equal-width bins over [lo, hi] (default [0, max distance]); bins are
/// right-open except the last, which also takes values equal to hi. Values
/// outside the range are not counted.
template <typename Scalar>
Histogram<Scalar> distance_histogram(const DistanceMatrix<Scalar>& dm, int bins,
                                     std::optional<std::pair<Scalar, Scalar>> range = std::nullopt) {
  if (bins < 1) throw ValidationError("histogram needs at least one bin");
  Scalar lo = 0, hi = 0;
  if (range) {
    std::tie(lo, hi) = *range;
    if (!(lo < hi)) throw ValidationError("histogram range needs lo < hi");
  } else {
    hi = dm.condensed.size() ? dm.condensed.maxCoeff() : Scalar(0);
    if (!(hi > lo)) hi = lo + Scalar(1);  // all-zero distances
  }
  Histogram<Scalar> h;
  h.bin_edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b) h.bin_edges[static_cast<std::size_t>(b)] = lo + (hi - lo) * Scalar(b) / Scalar(bins);
  h.bin_edges.back() = hi;
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (Eigen::Index k = 0; k < dm.condensed.size(); ++k) {
    const Scalar x = dm.condensed[k];
    if (x < lo || x > hi) continue;
    auto b = static_cast<long long>(std::floor((x - lo) / (hi - lo) * Scalar(bins)));
    b = std::clamp<long long>(b, 0, bins - 1);
    // Keep the bin consistent with the stored edges when rounding disagrees.
    while (b > 0 && x < h.bin_edges[static_cast<std::size_t>(b)]) --b;
    while (b < bins - 1 && x >= h.bin_edges[static_cast<std::size_t>(b) + 1]) ++b;
    ++h.counts[static_cast<std::size_t>(b)];
    ++h.total;
  }
  return h;
}

template <typename Scalar = double>
struct EigenSpectrum {
  std::vector<Scalar> eigenvalues;  // descending, clamped at 0
  Scalar total_variance = 0;        // trace of the covariance

  Scalar top_sum() const {
    Scalar s = 0;
    for (Scalar v : eigenvalues) s += v;
    return s;
  }
};

/// Top-k eigenvalues of the population covariance (divisor n). Works on the
/// dim x dim covariance when n > dim and on the n x n Gram matrix otherwise;
/// both share their non-zero spectrum.
template <typename Scalar = double, typename Derived>
EigenSpectrum<Scalar> pca_spectrum(const Eigen::MatrixBase<Derived>& rows, int k = 10) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index n = rows.rows();
  const Eigen::Index dim = rows.cols();
  if (n < 2) throw ValidationError("PCA needs at least 2 rows");
  if (k < 1) throw ValidationError("PCA needs k >= 1");
  Mat centered = rows.template cast<Scalar>();
  centered.rowwise() -= centered.colwise().mean();

  Mat gram = n > dim ? Mat(centered.transpose() * centered) : Mat(centered * centered.transpose());
  gram /= Scalar(n);
  Eigen::SelfAdjointEigenSolver<Mat> solver(gram, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) throw RuntimeError("PCA eigensolver did not converge");

  EigenSpectrum<Scalar> s;
  s.total_variance = centered.squaredNorm() / Scalar(n);
  const auto& ev = solver.eigenvalues();  // ascending
  const Eigen::Index want = std::min<Eigen::Index>(k, dim);
  for (Eigen::Index i = 0; i < want; ++i) {
    const Eigen::Index src = ev.size() - 1 - i;
    s.eigenvalues.push_back(src >= 0 ? std::max(ev[src], Scalar(0)) : Scalar(0));
  }
  return s;
}

template <typename Scalar = double>
struct Embedding2D {
  std::vector<std::string> ids;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 2> coords;
  Scalar stress = 0;
};

/// sqrt(sum (embedded - input)^2 / sum input^2) over all pairs; 0 when every
/// input distance is 0.
template <typename Scalar, typename Derived>
Scalar embedding_stress(const DistanceMatrix<Scalar>& dm, const Eigen::MatrixBase<Derived>& coords) {
  Scalar num = 0, den = 0;
  for (Eigen::Index i = 0; i < dm.n; ++i) {
    for (Eigen::Index j = i + 1; j < dm.n; ++j) {
      const Scalar d = dm.condensed[DistanceMatrix<Scalar>::condensed_index(dm.n, i, j)];
      const Scalar e = (coords.row(i) - coords.row(j)).norm();
      num += (e - d) * (e - d);
      den += d * d;
    }
  }
  return den > 0 ? std::sqrt(num / den) : Scalar(0);
}

/// Classical (Torgerson) MDS into two dimensions. Coordinates are the top two
/// eigenvectors of -1/2 J D^2 J scaled by sqrt(max(lambda, 0)), centred, with
/// each column's largest-magnitude entry made positive.
template <typename Scalar>
Embedding2D<Scalar> mds_embed(const DistanceMatrix<Scalar>& dm, std::vector<std::string> ids = {}) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index n = dm.n;
  if (n < 3) throw ValidationError("MDS needs at least 3 points");
  if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != n)
    throw ValidationError("MDS id count does not match the distance matrix");

  Embedding2D<Scalar> out;
  out.ids = std::move(ids);
  out.coords.setZero(n, 2);
  if (dm.condensed.size() == 0 || dm.condensed.cwiseAbs().maxCoeff() == Scalar(0)) return out;

  // Double centring: b = -1/2 (D2 - r 1' - 1 r' + g), r = row means, g = grand mean.
  Mat b = dm.square().array().square().matrix();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_mean = b.rowwise().mean();
  const Scalar grand = row_mean.mean();
  b.colwise() -= row_mean;
  b.rowwise() -= row_mean.transpose();
  b.array() += grand;
  b *= Scalar(-0.5);

  Eigen::SelfAdjointEigenSolver<Mat> solver(b);
  if (solver.info() != Eigen::Success) throw RuntimeError("MDS eigensolver did not converge");
  for (int c = 0; c < 2; ++c) {
    const Eigen::Index src = n - 1 - c;
    const Scalar lambda = std::max(solver.eigenvalues()[src], Scalar(0));
    out.coords.col(c) = solver.eigenvectors().col(src) * std::sqrt(lambda);
  }
  out.coords.rowwise() -= out.coords.colwise().mean();
  for (int c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    out.coords.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.coords(arg, c) < Scalar(0)) out.coords.col(c) *= Scalar(-1);
  }
  out.stress = embedding_stress(dm, out.coords);
  return out;
}

/// Side-by-side diversity statistics of two descriptor sets.
struct DiversityComparison {
  std::string name_a, name_b;
  double mean_a = 0.0, mean_b = 0.0;      // mean pairwise distance
  double median_a = 0.0, median_b = 0.0;  // median pairwise distance
  EigenSpectrum<double> spectrum_a, spectrum_b;
  Histogram<double> histogram_a, histogram_b;  // shared range [0, max over both sets]
  std::vector<bool> dominance;                 // spectrum_a[i] > spectrum_b[i]
};

/// Both sets must come from the same GIST parameters.
DiversityComparison compare_sets(const gist::DescriptorSet& a, const gist::DescriptorSet& b, int bins = 50, int k = 10,
                                 std::string name_a = "a", std::string name_b = "b", int threads = 1);

}  // namespace divmix::diversity
