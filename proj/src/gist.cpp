#include "divmix/gist.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "divmix/descriptor_cache.hpp"
#include "divmix/error.hpp"
#include "divmix/log.hpp"
#include "divmix/parallel.hpp"
#include "fft2d.hpp"

namespace divmix::gist {

using detail::bin_frequency;
using detail::ComplexImage;
using detail::Fft2d;
using std::numbers::pi;

void validate(const GistParams& p) {
  if (p.image_side < 16) throw ValidationError("gist.image_side must be >= 16");
  if (p.blocks < 1 || p.image_side % p.blocks != 0)
    throw ValidationError("gist.blocks must divide gist.image_side");
  if (p.orientations_per_scale.empty()) throw ValidationError("gist.orientations_per_scale is empty");
  for (int o : p.orientations_per_scale)
    if (o < 1) throw ValidationError("gist.orientations_per_scale entries must be >= 1");
  if (!(p.prefilter_cutoff > 0.0)) throw ValidationError("gist.prefilter_cutoff must be > 0");
}

std::uint64_t params_hash(const GistParams& p) {
  std::ostringstream s;
  s.precision(17);
  s << "gist/v1|side=" << p.image_side << "|blocks=" << p.blocks << "|cutoff=" << p.prefilter_cutoff << "|or=";
  for (int o : p.orientations_per_scale) s << o << ',';
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::size_t descriptor_length(const GistParams& p) {
  std::size_t filters = 0;
  for (int o : p.orientations_per_scale) filters += static_cast<std::size_t>(o);
  return filters * static_cast<std::size_t>(p.blocks * p.blocks);
}

DescriptorSet DescriptorSet::select(const std::vector<std::size_t>& rows) const {
  DescriptorSet out;
  out.params_hash = params_hash;
  out.matrix.resize(static_cast<Eigen::Index>(rows.size()), matrix.cols());
  out.ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.matrix.row(static_cast<Eigen::Index>(i)) = matrix.row(static_cast<Eigen::Index>(rows[i]));
    out.ids.push_back(ids[rows[i]]);
  }
  return out;
}

std::vector<std::size_t> DescriptorSet::rows_for(const std::vector<std::string>& wanted) const {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  std::vector<std::size_t> rows;
  rows.reserve(wanted.size());
  for (const auto& id : wanted) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("no descriptor for record '" + id + "'");
    rows.push_back(it->second);
  }
  return rows;
}

namespace {

Image<double> gaussian_lowpass(const Fft2d& fft, const Image<double>& field, const Image<double>& transfer) {
  ComplexImage spec = fft.forward(field);
  spec *= transfer.cast<std::complex<double>>();
  ComplexImage out;
  fft.inverse(spec, out);
  return out.real();
}

Image<double> lowpass_transfer(int side, double cutoff) {
  const double s = cutoff / std::sqrt(std::log(2.0));
  Image<double> g(side, side);
  for (int v = 0; v < side; ++v) {
    const double fy = bin_frequency(v, side) * side;
    for (int u = 0; u < side; ++u) {
      const double fx = bin_frequency(u, side) * side;
      g(v, u) = std::exp(-(fx * fx + fy * fy) / (s * s));
    }
  }
  return g;
}

Image<double> prefilter_impl(const Fft2d& fft, const GrayImage& img, double cutoff) {
  const auto side = static_cast<int>(img.rows());
  const Image<double> transfer = lowpass_transfer(side, cutoff);
  const Image<double> logged = (1.0 + 255.0 * img).log();
  const Image<double> residual = logged - gaussian_lowpass(fft, logged, transfer);
  const Image<double> local_power = gaussian_lowpass(fft, residual.square(), transfer);
  Image<double> out = residual / (0.2 + local_power.abs().sqrt());
  out -= out.mean();
  return out;
}

}  // namespace

Image<double> prefilter(const GrayImage& img, double cutoff) {
  if (img.rows() != img.cols()) throw ValidationError("prefilter needs a square image");
  if (!(cutoff > 0.0)) throw ValidationError("prefilter cutoff must be > 0");
  Fft2d fft(static_cast<int>(img.rows()));
  return prefilter_impl(fft, img, cutoff);
}

GaborBank gabor_bank(const GistParams& params) {
  validate(params);
  const int side = params.image_side;
  GaborBank bank;
  bank.params = params;

  // Octave spacing: adjacent scales cross at f0 / sqrt(2), where the
  // log-Gaussian must be 1/2.
  const double radial_sigma = std::log(std::sqrt(2.0)) / std::sqrt(2.0 * std::log(2.0));

  Image<double> radius(side, side), angle(side, side);
  for (int v = 0; v < side; ++v) {
    const double fy = bin_frequency(v, side);
    for (int u = 0; u < side; ++u) {
      const double fx = bin_frequency(u, side);
      radius(v, u) = std::hypot(fx, fy);
      angle(v, u) = std::atan2(fy, fx);
    }
  }

  const auto n_scales = static_cast<int>(params.orientations_per_scale.size());
  for (int s = 0; s < n_scales; ++s) {
    const int n_or = params.orientations_per_scale[static_cast<std::size_t>(s)];
    const double f0 = 0.25 / std::pow(2.0, s);
    const double angular_sigma = (pi / (2.0 * n_or)) / std::sqrt(2.0 * std::log(2.0));
    for (int o = 0; o < n_or; ++o) {
      GaborBank::Filter f;
      f.scale = s;
      f.orientation = o;
      f.center_frequency = f0;
      f.angle = pi * o / n_or;
      f.transfer.resize(side, side);
      for (int v = 0; v < side; ++v) {
        for (int u = 0; u < side; ++u) {
          const double r = radius(v, u);
          if (r == 0.0) {
            f.transfer(v, u) = 0.0;
            continue;
          }
          const double lr = std::log(r / f0);
          double d = std::remainder(angle(v, u) - f.angle, 2.0 * pi);
          f.transfer(v, u) = std::exp(-lr * lr / (2.0 * radial_sigma * radial_sigma) -
                                      d * d / (2.0 * angular_sigma * angular_sigma));
        }
      }
      f.transfer /= f.transfer.maxCoeff();
      bank.filters.push_back(std::move(f));
    }
  }
  return bank;
}

GistDescriptor gist_descriptor(const GrayImage& img, const GaborBank& bank) {
  const auto& p = bank.params;
  if (img.rows() != p.image_side || img.cols() != p.image_side)
    throw ValidationError("gist: image is " + std::to_string(img.cols()) + "x" + std::to_string(img.rows()) +
                          ", expected " + std::to_string(p.image_side) + "x" + std::to_string(p.image_side));
  Fft2d fft(p.image_side);
  const ComplexImage spectrum = fft.forward(prefilter_impl(fft, img, p.prefilter_cutoff));

  const int cell = p.image_side / p.blocks;
  const double cell_area = static_cast<double>(cell) * cell;
  GistDescriptor d;
  d.params_hash = params_hash(p);
  d.values.resize(static_cast<Eigen::Index>(descriptor_length(p)));
  Eigen::Index k = 0;
  ComplexImage filtered(p.image_side, p.image_side), response(p.image_side, p.image_side);
  Image<double> magnitude(p.image_side, p.image_side);
  for (const auto& f : bank.filters) {
    filtered = spectrum * f.transfer.cast<std::complex<double>>();
    fft.inverse(filtered, response);
    magnitude = (response.real().square() + response.imag().square()).sqrt();
    for (int by = 0; by < p.blocks; ++by)
      for (int bx = 0; bx < p.blocks; ++bx)
        d.values[k++] = static_cast<float>(magnitude.block(by * cell, bx * cell, cell, cell).sum() / cell_area);
  }
  return d;
}

GistDescriptor gist_descriptor(const GrayImage& img, const GistParams& params) {
  return gist_descriptor(img, gabor_bank(params));
}

DescriptorMatrix describe_images(const std::vector<GrayImage>& images, const GaborBank& bank, int threads) {
  DescriptorMatrix out(static_cast<Eigen::Index>(images.size()),
                       static_cast<Eigen::Index>(descriptor_length(bank.params)));
  parallel_for(images.size(), threads, [&](std::size_t i) {
    out.row(static_cast<Eigen::Index>(i)) = gist_descriptor(images[i], bank).values.transpose();
  });
  return out;
}

DescriptorSet batch_descriptors(const Manifest& manifest, const GistParams& params,
                                const std::optional<std::filesystem::path>& cache_path, int threads) {
  validate(params);
  const std::uint64_t hash = params_hash(params);
  std::vector<std::string> ids;
  ids.reserve(manifest.records.size());
  for (const auto& r : manifest.records) ids.push_back(r.id);

  if (cache_path) {
    auto cached = read_cache(*cache_path, hash, &ids);
    switch (cached.status) {
      case CacheStatus::ok:
        log::debug("descriptor cache hit: " + cache_path->string());
        return std::move(*cached.set);
      case CacheStatus::missing:
        break;
      case CacheStatus::corrupt:
        log::warn("descriptor cache '" + cache_path->string() + "' failed its integrity check; recomputing");
        break;
      case CacheStatus::params_mismatch:
        log::warn("descriptor cache '" + cache_path->string() + "' was built with other GIST params; recomputing");
        break;
      case CacheStatus::ids_mismatch:
        log::warn("descriptor cache '" + cache_path->string() + "' covers other records; recomputing");
        break;
    }
  }

  const GaborBank bank = gabor_bank(params);
  DescriptorSet set;
  set.ids = ids;
  set.params_hash = hash;
  set.matrix.resize(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(descriptor_length(params)));
  std::atomic<std::size_t> done{0};
  const std::size_t total = manifest.records.size();
  parallel_for(total, threads, [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    GrayImage img;
    try {
      img = load_image(rec, params.image_side);
    } catch (const std::exception& e) {
      const std::string what = e.what();
      // load_image already names the record for decode failures.
      throw RuntimeError(what.find(rec.id) != std::string::npos ? what : "record '" + rec.id + "': " + what);
    }
    set.matrix.row(static_cast<Eigen::Index>(i)) = gist_descriptor(img, bank).values.transpose();
    const std::size_t n = ++done;
    if (n % 500 == 0 || n == total)
      log::info("descriptors: " + std::to_string(n) + "/" + std::to_string(total) + " images processed");
  });
  if (cache_path) write_cache(set, *cache_path);
  return set;
}

}  // namespace divmix::gist
