#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "divmix/corpus.hpp"
#include "divmix/image.hpp"

namespace divmix::gist {

struct GistParams {
  int image_side = kDefaultImageSide;
  std::vector<int> orientations_per_scale{8, 8, 8, 8};
  int blocks = 4;
  double prefilter_cutoff = 4.0;  // cycles per image

  bool operator==(const GistParams&) const = default;
};

void validate(const GistParams& p);
/// FNV-1a over a canonical text rendering of the parameters.
std::uint64_t params_hash(const GistParams& p);
/// blocks^2 * total filter count.
std::size_t descriptor_length(const GistParams& p);

/// Descriptor rows are stored in single precision; everything computed from
/// them (distances, spectra, models) is double precision.
using DescriptorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct GistDescriptor {
  Eigen::VectorXf values;
  std::uint64_t params_hash = 0;
};

struct DescriptorSet {
  std::vector<std::string> ids;
  DescriptorMatrix matrix;
  std::uint64_t params_hash = 0;

  Eigen::Index size() const { return matrix.rows(); }
  /// Subset of rows, in the given order.
  DescriptorSet select(const std::vector<std::size_t>& rows) const;
  /// Row index of every id in `wanted`; throws ValidationError on a miss.
  std::vector<std::size_t> rows_for(const std::vector<std::string>& wanted) const;

  bool operator==(const DescriptorSet&) const = default;
};

/// Log-intensity local contrast normalisation. Subtracts a Gaussian low-pass
/// (transfer exp(-f^2 / s^2), s = cutoff / sqrt(ln 2), f in cycles/image) of
/// log(1 + 255 I), divides by 0.2 + sqrt(low-pass of the squared residual)
/// and removes the remaining global mean.
Image<double> prefilter(const GrayImage& img, double cutoff);

/// Frequency-domain filter bank in FFT (unshifted) layout.
struct GaborBank {
  GistParams params;
  struct Filter {
    int scale = 0;
    int orientation = 0;
    double center_frequency = 0.0;  // cycles per pixel
    double angle = 0.0;             // radians, direction of the pass band
    Image<double> transfer;         // side x side, max value 1
  };
  std::vector<Filter> filters;  // scale-major
};

/// One log-Gabor filter per (scale, orientation). Centre frequency starts at
/// 0.25 cycles/pixel and halves per scale. Radial and angular widths are set
/// so that neighbouring filters cross at half height. The angular window is
/// one-sided, so responses are analytic and their magnitude is phase-free.
GaborBank gabor_bank(const GistParams& params);

/// Bank magnitudes pooled on a blocks x blocks grid, ordered
/// (scale, orientation, block row, block column).
GistDescriptor gist_descriptor(const GrayImage& img, const GaborBank& bank);
GistDescriptor gist_descriptor(const GrayImage& img, const GistParams& params);

/// Descriptors for in-memory images, computed in parallel; row i is image i.
DescriptorMatrix describe_images(const std::vector<GrayImage>& images, const GaborBank& bank, int threads = 1);

/// Descriptors for every manifest record, in record order. With a cache path
/// the cache is reused when its params hash and ids match and its CRC checks
/// out; otherwise the rows are computed and the cache is (re)written.
DescriptorSet batch_descriptors(const Manifest& manifest, const GistParams& params,
                                const std::optional<std::filesystem::path>& cache_path = std::nullopt,
                                int threads = 1);

}  // namespace divmix::gist
