#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "divmix/image.hpp"

namespace divmix {

enum class Split { train, val, test };

std::string_view to_string(Split s);
/// Parses "train" / "val" / "test"; nullopt for anything else.
std::optional<Split> parse_split(std::string_view s);

/// Pixel-space crop rectangle; (x, y) is the top-left corner.
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const BBox&) const = default;
};

struct ImageRecord {
  std::string id;
  std::filesystem::path path;  // resolved against the manifest directory
  std::string class_label;
  Split split = Split::train;
  std::optional<BBox> bbox;
  std::optional<double> size_fraction;  // object area over field-of-view area

  bool operator==(const ImageRecord&) const = default;
};

struct Manifest {
  std::vector<ImageRecord> records;
  std::vector<std::string> classes;

  /// Position of `label` in `classes`; throws ValidationError if absent.
  std::size_t class_index(std::string_view label) const;
  /// Record count per class, aligned with `classes`.
  std::vector<std::size_t> class_counts() const;

  bool operator==(const Manifest&) const = default;
};

/// Checks the manifest invariants (unique ids, known labels, duplicate-free
/// non-empty class list, size fractions in (0, 1]).
void validate(const Manifest& m);

/// Loads a JSONL or CSV manifest. The format is chosen by extension
/// (.jsonl/.json vs .csv) and otherwise sniffed from the first character.
Manifest load_manifest(const std::filesystem::path& path);

/// Writes JSONL with paths relative to the manifest's own directory.
void write_manifest_jsonl(const Manifest& m, const std::filesystem::path& path);
void write_manifest_csv(const Manifest& m, const std::filesystem::path& path);

/// Records of one split, order and class list preserved.
Manifest split_manifest(const Manifest& m, Split split);

inline constexpr int kDefaultImageSide = 128;

/// Decodes PNG or PPM/PGM, crops to the bbox, converts to luminance and
/// resizes to side x side.
GrayImage load_image(const ImageRecord& record, int side = kDefaultImageSide);

// Lower-level pieces of load_image, exposed for tests and for synth.

/// Interleaved 8/16-bit RGB decoded to doubles in [0, 1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;  // row-major, 3 values per pixel
};

RgbImage decode_image(const std::filesystem::path& path);

/// 0.299 R + 0.587 G + 0.114 B; pixels with R == G == B map to that value
/// exactly.
GrayImage to_luminance(const RgbImage& img);

/// Bilinear resampling with corner-aligned sampling grids, so the four output
/// corners reproduce the four input corners.
GrayImage resize_bilinear(const GrayImage& src, int out_width, int out_height);

/// 8-bit grayscale PNG, values rounded from [0, 1].
void write_png_gray(const GrayImage& img, const std::filesystem::path& path);

}  // namespace divmix
