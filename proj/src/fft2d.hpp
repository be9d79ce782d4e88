#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>

#include "divmix/image.hpp"

namespace divmix::detail {

using ComplexImage = Image<std::complex<double>>;

// Square 2-D DFT backed by FFTW. Arrays must carry Eigen's 16-byte heap
// alignment, which the plans assume. Plans are created once per side under a
// lock (the FFTW planner is not re-entrant) and executed with the new-array
// interface, which is safe to call concurrently.
class Fft2d {
 public:
  explicit Fft2d(int side) : side_(side), plans_(plans_for(side)) {}

  ComplexImage forward(const Image<double>& real) const {
    ComplexImage in = real.cast<std::complex<double>>();
    ComplexImage out(side_, side_);
    fftw_execute_dft(plans_.forward, as_fftw(in), as_fftw(out));
    return out;
  }

  /// Inverse transform scaled by 1/side^2; `in` is used as scratch.
  void inverse(ComplexImage& in, ComplexImage& out) const {
    out.resize(side_, side_);
    fftw_execute_dft(plans_.backward, as_fftw(in), as_fftw(out));
    out /= static_cast<double>(side_) * side_;
  }

 private:
  struct Plans {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
  };

  static fftw_complex* as_fftw(ComplexImage& img) { return reinterpret_cast<fftw_complex*>(img.data()); }

  static const Plans& plans_for(int side) {
    static std::mutex mutex;
    static std::map<int, Plans> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(side);
    if (it != cache.end()) return it->second;
    ComplexImage in(side, side), out(side, side);
    Plans p;
    const unsigned flags = FFTW_ESTIMATE | FFTW_DESTROY_INPUT;
    p.forward = fftw_plan_dft_2d(side, side, as_fftw(in), as_fftw(out), FFTW_FORWARD, flags);
    p.backward = fftw_plan_dft_2d(side, side, as_fftw(in), as_fftw(out), FFTW_BACKWARD, flags);
    return cache.emplace(side, p).first->second;
  }

  int side_;
  const Plans& plans_;
};

/// Signed DFT frequency of bin u, in cycles per sample.
inline double bin_frequency(int u, int n) { return static_cast<double>(u < (n + 1) / 2 ? u : u - n) / n; }

}  // namespace divmix::detail
