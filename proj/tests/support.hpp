#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "divmix/gist.hpp"
#include "divmix/image.hpp"
#include "divmix/rng.hpp"

namespace testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("divmix-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::size_t count_lines(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

// cos(2 pi f (x cos t + y sin t)) mapped into [0, 1]; x is the column.
inline divmix::GrayImage grating(int side, double cycles_per_pixel, double theta, double phase = 0.0,
                                 double contrast = 0.4) {
  divmix::GrayImage img(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      img(y, x) = 0.5 + contrast * std::cos(2.0 * M_PI * cycles_per_pixel * (x * std::cos(theta) + y * std::sin(theta)) + phase);
  return img;
}

inline divmix::GrayImage noise_image(int side, std::uint64_t seed) {
  divmix::Rng rng{seed};
  divmix::GrayImage img(side, side);
  for (auto& v : img.reshaped()) v = rng.uniform();
  return img;
}

// Pooled energy per (scale, orientation) channel.
inline std::vector<double> channel_energy(const divmix::gist::GistDescriptor& d, int blocks) {
  const int per = blocks * blocks;
  std::vector<double> e(std::size_t(d.values.size() / per), 0.0);
  for (Eigen::Index i = 0; i < d.values.size(); ++i) e[std::size_t(i / per)] += d.values[i];
  return e;
}

inline double rel_l2(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  return double((a - b).norm() / std::max(a.norm(), b.norm()));
}

// Rotates a square image by 90 degrees: v(r, c) = h(c, n - 1 - r).
inline divmix::GrayImage rotate90(const divmix::GrayImage& h) {
  const auto n = h.rows();
  divmix::GrayImage v(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) v(r, c) = h(c, n - 1 - r);
  return v;
}

// Where the descriptor of a 90-degree rotated image should put each entry:
// orientation o moves to o + n/2, block (br, bc) to (bc, b - 1 - br).
inline Eigen::VectorXf rotate90_descriptor(const Eigen::VectorXf& d, int scales, int orientations, int b) {
  Eigen::VectorXf out(d.size());
  for (int s = 0; s < scales; ++s)
    for (int o = 0; o < orientations; ++o)
      for (int br = 0; br < b; ++br)
        for (int bc = 0; bc < b; ++bc) {
          const int src = ((s * orientations + o) * b + bc) * b + (b - 1 - br);
          const int dst = ((s * orientations + (o + orientations / 2) % orientations) * b + br) * b + bc;
          out[dst] = d[src];
        }
  return out;
}

// Cyclic Jacobi rotations; eigenvalues sorted descending.
inline std::vector<double> jacobi_eigenvalues(Eigen::MatrixXd a, int sweeps = 100) {
  const auto n = a.rows();
  for (int s = 0; s < sweeps; ++s) {
    double off = 0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

}  // namespace testing
