#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "divmix/corpus.hpp"
#include "divmix/image.hpp"
#include "divmix/rng.hpp"

namespace divmix::synth {

enum class Shape { cuboid, ellipsoid };

struct Part {
  Shape shape = Shape::cuboid;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Ones();
  double albedo = 1.0;
};

/// A textureless union of axis-aligned parts; `name` doubles as the class label.
struct ObjectSpec {
  std::string name;
  std::vector<Part> parts;
};

void validate(const ObjectSpec& obj);

/// Two-component view distribution: a von Mises core around the mean
/// direction plus a uniform outlier component.
struct ViewDistribution {
  double azimuth_mean = 0.0;
  double elevation_mean = 0.0;
  double concentration = 0.0;  // 0 = uniform
  double outlier_fraction = 0.0;
  double scale_min = 0.5;
  double scale_max = 0.5;
};

void validate(const ViewDistribution& dist);

struct Viewpoint {
  double azimuth = 0.0;    // radians, [0, 2pi)
  double elevation = 0.0;  // radians, [-pi/2, pi/2]
  double scale = 0.5;      // projected bounding square over frame side
};

/// Von Mises draw by the Best-Fisher rejection scheme; kappa = 0 is uniform.
double sample_von_mises(double mean, double kappa, Rng& rng);

/// Draw i comes from the stream keyed (seed, i), so the result does not
/// depend on evaluation order.
std::vector<Viewpoint> sample_viewpoints(const ViewDistribution& dist, std::size_t count, std::uint64_t seed);

/// Orthographic headlight render of `obj` rotated by the view; background 0.
GrayImage render_view(const ObjectSpec& obj, const Viewpoint& view, int side = kDefaultImageSide);

// Presets.
ObjectSpec car_object();     // multi-part: body, cabin, four wheels
ObjectSpec ball_object();    // single ellipsoid
ObjectSpec plane_object();   // fuselage, wings, tail
ObjectSpec table_object();   // top and four legs
ObjectSpec duck_object();    // stacked ellipsoids with a beak
ObjectSpec chair_object();   // seat, back, legs
ObjectSpec truck_object();   // car body, short cabin at the front
ObjectSpec van_object();     // car body, long tall cabin
ObjectSpec wagon_object();   // car body, cabin pushed back
/// Looks up a preset by name; throws ValidationError for unknown names.
ObjectSpec preset_object(const std::string& name);

/// Diffuse, large, with uniform outlier views.
ViewDistribution child_like();
/// Concentrated around the mean view, small.
ViewDistribution parent_like();
/// Near-zero-variance canonical view used for test splits.
ViewDistribution canonical();
ViewDistribution preset_distribution(const std::string& name);

struct CorpusSpec {
  std::vector<ObjectSpec> objects;
  std::map<Split, ViewDistribution> distributions;
  std::map<Split, std::size_t> counts;  // per class
  std::uint64_t seed = 0;
  int image_side = kDefaultImageSide;
};

/// Renders every (split, class, index) view, writes PNGs under
/// out_dir/images/<split>/ and out_dir/manifest.jsonl.
Manifest generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir, int threads = 1);

/// In-memory variant for one object and one distribution; no files touched.
std::vector<GrayImage> render_views(const ObjectSpec& obj, const std::vector<Viewpoint>& views, int side, int threads = 1);

}  // namespace divmix::synth
