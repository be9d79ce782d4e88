#include "divmix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Geometry>

#include "divmix/error.hpp"
#include "divmix/parallel.hpp"

namespace divmix::synth {

namespace fs = std::filesystem;
using std::numbers::pi;

void validate(const ObjectSpec& obj) {
  if (obj.parts.empty()) throw ValidationError("object '" + obj.name + "' has no parts");
  for (const auto& p : obj.parts) {
    if (!(p.half_extents.array() > 0.0).all())
      throw ValidationError("object '" + obj.name + "' has a part with non-positive half extents");
    if (!(p.albedo >= 0.0 && p.albedo <= 1.0))
      throw ValidationError("object '" + obj.name + "' has a part with albedo outside [0, 1]");
    if (!p.center.allFinite()) throw ValidationError("object '" + obj.name + "' has a non-finite part center");
  }
}

void validate(const ViewDistribution& d) {
  if (!(d.concentration >= 0.0)) throw ValidationError("concentration must be >= 0");
  if (!(d.outlier_fraction >= 0.0 && d.outlier_fraction <= 1.0))
    throw ValidationError("outlier_fraction must lie in [0, 1]");
  if (!(d.scale_min > 0.0 && d.scale_min <= d.scale_max && d.scale_max <= 1.0))
    throw ValidationError("scale range must satisfy 0 < scale_min <= scale_max <= 1");
}

namespace {

double wrap_two_pi(double a) {
  a = std::fmod(a, 2.0 * pi);
  if (a < 0.0) a += 2.0 * pi;
  if (a >= 2.0 * pi) a = 0.0;
  return a;
}

double wrap_pi(double a) { return wrap_two_pi(a + pi) - pi; }

}  // namespace

double sample_von_mises(double mean, double kappa, Rng& rng) {
  if (kappa < 1e-8) return wrap_two_pi(mean + rng.uniform(-pi, pi));
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (;;) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const double u3 = rng.uniform();
    const double z = std::cos(pi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0 || (u2 > 0.0 && std::log(c / u2) + 1.0 - c >= 0.0)) {
      const double theta = (u3 > 0.5 ? 1.0 : -1.0) * std::acos(std::clamp(f, -1.0, 1.0));
      return wrap_two_pi(mean + theta);
    }
  }
}

std::vector<Viewpoint> sample_viewpoints(const ViewDistribution& dist, std::size_t count, std::uint64_t seed) {
  validate(dist);
  std::vector<Viewpoint> views(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng{seed, static_cast<std::uint64_t>(i)};
    Viewpoint v;
    if (rng.uniform() < dist.outlier_fraction) {
      v.azimuth = rng.uniform(0.0, 2.0 * pi);
      v.elevation = rng.uniform(-pi / 2, pi / 2);
    } else {
      v.azimuth = sample_von_mises(dist.azimuth_mean, dist.concentration, rng);
      double el = wrap_pi(sample_von_mises(dist.elevation_mean, dist.concentration, rng));
      // Crossing a pole: same direction is reached from the far side.
      if (el > pi / 2) {
        el = pi - el;
        v.azimuth = wrap_two_pi(v.azimuth + pi);
      } else if (el < -pi / 2) {
        el = -pi - el;
        v.azimuth = wrap_two_pi(v.azimuth + pi);
      }
      v.elevation = el;
    }
    v.scale = dist.scale_min + (dist.scale_max - dist.scale_min) * rng.uniform();
    views[i] = v;
  }
  return views;
}

namespace {

Eigen::Matrix3d view_rotation(const Viewpoint& v) {
  // reduce first so that azimuths a full turn apart give the same bits
  const double az = wrap_two_pi(v.azimuth);
  return (Eigen::AngleAxisd(v.elevation, Eigen::Vector3d::UnitX()) * Eigen::AngleAxisd(az, Eigen::Vector3d::UnitY()))
      .toRotationMatrix();
}

struct Hit {
  double depth = -std::numeric_limits<double>::infinity();
  double intensity = 0.0;
};

// Ray x = origin + t * dir (object frame), t = view-space depth towards the
// camera; returns the largest-t hit on the part, if any.
void intersect(const Part& part, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, Hit& best) {
  const Eigen::Vector3d q = origin - part.center;
  const Eigen::Vector3d& h = part.half_extents;
  if (part.shape == Shape::cuboid) {
    double t_lo = -std::numeric_limits<double>::infinity();
    double t_hi = std::numeric_limits<double>::infinity();
    int exit_axis = -1;
    for (int k = 0; k < 3; ++k) {
      if (std::abs(dir[k]) < 1e-15) {
        if (std::abs(q[k]) > h[k]) return;
        continue;
      }
      double a = (-h[k] - q[k]) / dir[k];
      double b = (h[k] - q[k]) / dir[k];
      if (a > b) std::swap(a, b);
      t_lo = std::max(t_lo, a);
      if (b < t_hi) {
        t_hi = b;
        exit_axis = k;
      }
    }
    if (t_lo > t_hi || exit_axis < 0 || t_hi <= best.depth) return;
    // Outward normal of the face nearest the camera; its view-space z is
    // |dir[k]| because dir is the camera axis expressed in the object frame.
    best.depth = t_hi;
    best.intensity = part.albedo * std::abs(dir[exit_axis]);
  } else {
    const Eigen::Vector3d o = q.cwiseQuotient(h);
    const Eigen::Vector3d d = dir.cwiseQuotient(h);
    const double a = d.squaredNorm();
    const double b = 2.0 * o.dot(d);
    const double c = o.squaredNorm() - 1.0;
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return;
    const double t = (-b + std::sqrt(disc)) / (2.0 * a);
    if (t <= best.depth) return;
    const Eigen::Vector3d p = q + t * dir;
    const Eigen::Vector3d n = p.cwiseQuotient(h.cwiseProduct(h)).normalized();
    best.depth = t;
    best.intensity = part.albedo * std::max(0.0, n.dot(dir));
  }
}

}  // namespace

GrayImage render_view(const ObjectSpec& obj, const Viewpoint& view, int side) {
  if (side < 16) throw ValidationError("render side must be >= 16");
  validate(obj);
  if (!(view.scale > 0.0 && view.scale <= 1.0)) throw ValidationError("view scale must lie in (0, 1]");
  const Eigen::Matrix3d rot = view_rotation(view);

  // Projected bounding rectangle in view coordinates.
  Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector2d hi = -lo;
  for (const auto& part : obj.parts) {
    const Eigen::Vector3d c = rot * part.center;
    for (int a = 0; a < 2; ++a) {
      const Eigen::Vector3d row = rot.row(a).transpose().cwiseProduct(part.half_extents);
      const double r = part.shape == Shape::cuboid ? row.cwiseAbs().sum() : row.norm();
      lo[a] = std::min(lo[a], c[a] - r);
      hi[a] = std::max(hi[a], c[a] + r);
    }
  }
  const double extent = (hi - lo).maxCoeff();
  const Eigen::Vector2d mid = 0.5 * (lo + hi);
  const double units_per_pixel = extent / (view.scale * side);

  const Eigen::Vector3d dir = rot.row(2).transpose();
  GrayImage img = GrayImage::Zero(side, side);
  std::size_t hits = 0;
  for (int r = 0; r < side; ++r) {
    const double y = mid.y() - (r + 0.5 - 0.5 * side) * units_per_pixel;
    for (int c = 0; c < side; ++c) {
      const double x = mid.x() + (c + 0.5 - 0.5 * side) * units_per_pixel;
      const Eigen::Vector3d origin = rot.transpose() * Eigen::Vector3d(x, y, 0.0);
      Hit best;
      for (const auto& part : obj.parts) intersect(part, origin, dir, best);
      if (std::isfinite(best.depth)) {
        ++hits;
        img(r, c) = std::clamp(best.intensity, 0.0, 1.0);
      }
    }
  }
  if (hits == 0) throw RuntimeError("object '" + obj.name + "' projects to an empty image");
  return img;
}

std::vector<GrayImage> render_views(const ObjectSpec& obj, const std::vector<Viewpoint>& views, int side,
                                    int threads) {
  std::vector<GrayImage> out(views.size());
  parallel_for(views.size(), threads, [&](std::size_t i) { out[i] = render_view(obj, views[i], side); });
  return out;
}

namespace {

Part cuboid(Eigen::Vector3d c, Eigen::Vector3d h, double albedo) { return {Shape::cuboid, c, h, albedo}; }
Part ellipsoid(Eigen::Vector3d c, Eigen::Vector3d h, double albedo) { return {Shape::ellipsoid, c, h, albedo}; }

}  // namespace

ObjectSpec car_object() {
  ObjectSpec o{"car", {}};
  o.parts.push_back(cuboid({0.0, 0.35, 0.0}, {1.0, 0.22, 0.45}, 0.85));
  o.parts.push_back(cuboid({-0.1, 0.72, 0.0}, {0.5, 0.18, 0.4}, 0.55));
  for (double x : {-0.6, 0.6})
    for (double z : {-0.45, 0.45}) o.parts.push_back(ellipsoid({x, 0.15, z}, {0.2, 0.2, 0.08}, 0.3));
  return o;
}

ObjectSpec ball_object() { return {"ball", {ellipsoid({0.0, 0.0, 0.0}, {1.0, 0.92, 0.96}, 0.9)}}; }

ObjectSpec plane_object() {
  ObjectSpec o{"plane", {}};
  o.parts.push_back(ellipsoid({0.0, 0.0, 0.0}, {1.2, 0.18, 0.18}, 0.8));
  o.parts.push_back(cuboid({0.1, 0.0, 0.0}, {0.25, 0.03, 1.1}, 0.6));
  o.parts.push_back(cuboid({-1.0, 0.25, 0.0}, {0.15, 0.2, 0.03}, 0.6));
  o.parts.push_back(cuboid({-1.05, 0.05, 0.0}, {0.12, 0.02, 0.35}, 0.6));
  return o;
}

ObjectSpec table_object() {
  ObjectSpec o{"table", {}};
  o.parts.push_back(cuboid({0.0, 0.7, 0.0}, {0.8, 0.05, 0.5}, 0.75));
  for (double x : {-0.7, 0.7})
    for (double z : {-0.4, 0.4}) o.parts.push_back(cuboid({x, 0.33, z}, {0.05, 0.33, 0.05}, 0.5));
  return o;
}

ObjectSpec duck_object() {
  ObjectSpec o{"duck", {}};
  o.parts.push_back(ellipsoid({0.0, 0.35, 0.0}, {0.6, 0.35, 0.4}, 0.9));
  o.parts.push_back(ellipsoid({0.45, 0.85, 0.0}, {0.25, 0.25, 0.25}, 0.9));
  o.parts.push_back(cuboid({0.75, 0.82, 0.0}, {0.12, 0.04, 0.08}, 0.45));
  return o;
}

ObjectSpec chair_object() {
  ObjectSpec o{"chair", {}};
  o.parts.push_back(cuboid({0.0, 0.45, 0.0}, {0.4, 0.04, 0.4}, 0.7));
  o.parts.push_back(cuboid({-0.37, 0.9, 0.0}, {0.04, 0.42, 0.4}, 0.6));
  for (double x : {-0.35, 0.35})
    for (double z : {-0.35, 0.35}) o.parts.push_back(cuboid({x, 0.22, z}, {0.04, 0.22, 0.04}, 0.45));
  return o;
}

namespace {
// Shares the car's body and wheels; only the cabin moves or grows.
ObjectSpec car_variant(std::string name, double cabin_x, double cabin_len, double cabin_h) {
  ObjectSpec o = car_object();
  o.name = std::move(name);
  o.parts[1] = cuboid({cabin_x, 0.57 + cabin_h, 0.0}, {cabin_len, cabin_h, 0.4}, 0.55);
  return o;
}
}  // namespace

ObjectSpec truck_object() { return car_variant("truck", 0.6, 0.3, 0.2); }
ObjectSpec van_object() { return car_variant("van", -0.1, 0.85, 0.3); }
ObjectSpec wagon_object() { return car_variant("wagon", -0.35, 0.6, 0.18); }

ObjectSpec preset_object(const std::string& name) {
  if (name == "car") return car_object();
  if (name == "ball") return ball_object();
  if (name == "plane") return plane_object();
  if (name == "table") return table_object();
  if (name == "duck") return duck_object();
  if (name == "chair") return chair_object();
  if (name == "truck") return truck_object();
  if (name == "van") return van_object();
  if (name == "wagon") return wagon_object();
  throw ValidationError("unknown object preset '" + name + "'");
}

ViewDistribution child_like() {
  ViewDistribution d;
  d.azimuth_mean = 0.0;
  d.elevation_mean = 0.3;
  d.concentration = 4.0;
  d.outlier_fraction = 0.3;
  d.scale_min = 0.4;
  d.scale_max = 0.9;
  return d;
}

ViewDistribution parent_like() {
  ViewDistribution d;
  d.azimuth_mean = 0.0;
  d.elevation_mean = 0.3;
  d.concentration = 30.0;
  d.outlier_fraction = 0.0;
  d.scale_min = 0.1;
  d.scale_max = 0.4;
  return d;
}

ViewDistribution canonical() {
  ViewDistribution d;
  d.azimuth_mean = pi / 4;
  d.elevation_mean = 0.35;
  d.concentration = 400.0;
  d.outlier_fraction = 0.0;
  d.scale_min = 0.7;
  d.scale_max = 0.7;
  return d;
}

ViewDistribution preset_distribution(const std::string& name) {
  if (name == "child") return child_like();
  if (name == "parent") return parent_like();
  if (name == "canonical") return canonical();
  throw ValidationError("unknown distribution preset '" + name + "'");
}

Manifest generate_corpus(const CorpusSpec& spec, const fs::path& out_dir, int threads) {
  if (spec.objects.empty()) throw ValidationError("corpus needs at least one object");
  for (const auto& o : spec.objects) validate(o);
  auto train = spec.counts.find(Split::train);
  if (train == spec.counts.end() || train->second == 0)
    throw ValidationError("corpus needs a positive train count");

  Manifest m;
  for (const auto& o : spec.objects) m.classes.push_back(o.name);

  struct Job {
    std::size_t object;
    Viewpoint view;
    fs::path path;
  };
  std::vector<Job> jobs;
  for (Split split : {Split::train, Split::val, Split::test}) {
    auto cnt = spec.counts.find(split);
    if (cnt == spec.counts.end() || cnt->second == 0) continue;
    auto dist = spec.distributions.find(split);
    if (dist == spec.distributions.end())
      throw ValidationError("no view distribution for split '" + std::string(to_string(split)) + "'");
    const fs::path dir = out_dir / "images" / std::string(to_string(split));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw RuntimeError("cannot create '" + dir.string() + "': " + ec.message());
    for (std::size_t ci = 0; ci < spec.objects.size(); ++ci) {
      const auto views = sample_viewpoints(
          dist->second, cnt->second, stream_key({spec.seed, static_cast<std::uint64_t>(split), ci}));
      for (std::size_t i = 0; i < views.size(); ++i) {
        char idx[16];
        std::snprintf(idx, sizeof idx, "%05zu", i);
        ImageRecord r;
        r.id = std::string(to_string(split)) + "_" + spec.objects[ci].name + "_" + idx;
        r.path = dir / (r.id + ".png");
        r.class_label = spec.objects[ci].name;
        r.split = split;
        r.size_fraction = views[i].scale * views[i].scale;
        jobs.push_back({ci, views[i], r.path});
        m.records.push_back(std::move(r));
      }
    }
  }
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    write_png_gray(render_view(spec.objects[job.object], job.view, spec.image_side), job.path);
  });
  write_manifest_jsonl(m, out_dir / "manifest.jsonl");
  return m;
}

}  // namespace divmix::synth
