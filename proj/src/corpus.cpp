#include "divmix/corpus.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "divmix/error.hpp"
#include "json.hpp"

namespace divmix {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

std::size_t Manifest::class_index(std::string_view label) const {
  auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) throw ValidationError("unknown class label '" + std::string(label) + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

std::vector<std::size_t> Manifest::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& r : records) ++counts[class_index(r.class_label)];
  return counts;
}

void validate(const Manifest& m) {
  if (m.classes.empty()) throw ValidationError("manifest has no classes");
  std::set<std::string> seen_classes;
  for (const auto& c : m.classes)
    if (!seen_classes.insert(c).second) throw ValidationError("duplicate class '" + c + "'");
  std::unordered_set<std::string> ids;
  for (const auto& r : m.records) {
    if (r.id.empty()) throw ValidationError("record with empty id");
    if (!ids.insert(r.id).second) throw ValidationError("duplicate id '" + r.id + "'");
    if (!seen_classes.count(r.class_label))
      throw ValidationError("record '" + r.id + "' has unknown class '" + r.class_label + "'");
    if (r.size_fraction && !(*r.size_fraction > 0.0 && *r.size_fraction <= 1.0))
      throw ValidationError("record '" + r.id + "' has size_fraction outside (0, 1]");
    if (r.bbox && (r.bbox->w <= 0 || r.bbox->h <= 0 || r.bbox->x < 0 || r.bbox->y < 0))
      throw ValidationError("record '" + r.id + "' has an invalid bbox");
  }
}

namespace {

std::string line_tag(const fs::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no) + ": ";
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

// Finishes a manifest: fills in the sorted label set when no header supplied
// one, then checks invariants.
Manifest finalize(std::vector<ImageRecord> records, std::optional<std::vector<std::string>> classes) {
  if (records.empty()) throw ValidationError("no records");
  Manifest m;
  m.records = std::move(records);
  if (classes) {
    m.classes = std::move(*classes);
  } else {
    std::set<std::string> labels;
    for (const auto& r : m.records) labels.insert(r.class_label);
    m.classes.assign(labels.begin(), labels.end());
  }
  validate(m);
  return m;
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  return (base_dir / path).lexically_normal();
}

Manifest parse_jsonl(std::istream& in, const fs::path& path) {
  const fs::path base = path.parent_path();
  std::vector<ImageRecord> records;
  std::optional<std::vector<std::string>> classes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_tag(path, line_no) + "malformed JSON: " + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_tag(path, line_no) + "expected a JSON object");
    if (!obj.contains("id") && obj.contains("classes")) {
      if (classes || !records.empty())
        throw ParseError(line_tag(path, line_no) + "class header must be the first record");
      try {
        classes = obj.at("classes").get<std::vector<std::string>>();
      } catch (const json::exception&) {
        throw ParseError(line_tag(path, line_no) + "'classes' must be a list of strings");
      }
      continue;
    }
    ImageRecord r;
    try {
      r.id = obj.at("id").get<std::string>();
      r.path = resolve(base, obj.at("path").get<std::string>());
      r.class_label = obj.at("class").get<std::string>();
      const auto split_str = obj.at("split").get<std::string>();
      auto split = parse_split(split_str);
      if (!split) throw ParseError(line_tag(path, line_no) + "unknown split '" + split_str + "'");
      r.split = *split;
      if (obj.contains("bbox") && !obj["bbox"].is_null()) {
        auto b = obj["bbox"].get<std::vector<int>>();
        if (b.size() != 4) throw ParseError(line_tag(path, line_no) + "bbox needs 4 values");
        r.bbox = BBox{b[0], b[1], b[2], b[3]};
      }
      if (obj.contains("size_fraction") && !obj["size_fraction"].is_null())
        r.size_fraction = obj["size_fraction"].get<double>();
    } catch (const json::exception& e) {
      throw ParseError(line_tag(path, line_no) + e.what());
    }
    records.push_back(std::move(r));
  }
  return finalize(std::move(records), std::move(classes));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

constexpr const char* kCsvHeader = "id,path,class,split,bbox_x,bbox_y,bbox_w,bbox_h,size_fraction";

Manifest parse_csv(std::istream& in, const fs::path& path) {
  const fs::path base = path.parent_path();
  std::vector<ImageRecord> records;
  std::optional<std::vector<std::string>> classes;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    if (!header_seen && line.rfind("#", 0) == 0) {
      // Optional explicit class order: "# classes: a,b,c"
      auto body = trim(line.substr(1));
      if (body.rfind("classes:", 0) == 0) {
        std::vector<std::string> cls;
        for (auto& c : split_csv_line(body.substr(8))) cls.push_back(trim(c));
        classes = std::move(cls);
      }
      continue;
    }
    if (!header_seen) {
      if (trim(line) != kCsvHeader)
        throw ParseError(line_tag(path, line_no) + "expected header '" + kCsvHeader + "'");
      header_seen = true;
      continue;
    }
    auto cells = split_csv_line(line);
    if (cells.size() != 9)
      throw ParseError(line_tag(path, line_no) + "expected 9 columns, got " + std::to_string(cells.size()));
    ImageRecord r;
    r.id = cells[0];
    r.path = resolve(base, cells[1]);
    r.class_label = cells[2];
    auto split = parse_split(cells[3]);
    if (!split) throw ParseError(line_tag(path, line_no) + "unknown split '" + cells[3] + "'");
    r.split = *split;
    try {
      const bool any_bbox = !cells[4].empty() || !cells[5].empty() || !cells[6].empty() || !cells[7].empty();
      if (any_bbox)
        r.bbox = BBox{std::stoi(cells[4]), std::stoi(cells[5]), std::stoi(cells[6]), std::stoi(cells[7])};
      if (!cells[8].empty()) r.size_fraction = std::stod(cells[8]);
    } catch (const std::exception&) {
      throw ParseError(line_tag(path, line_no) + "malformed numeric cell");
    }
    records.push_back(std::move(r));
  }
  return finalize(std::move(records), std::move(classes));
}

std::string relative_path(const fs::path& p, const fs::path& base) {
  if (base.empty()) return p.generic_string();
  auto rel = p.lexically_relative(base);
  if (rel.empty()) return p.generic_string();
  return rel.generic_string();
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest '" + path.string() + "'");
  const auto ext = path.extension().string();
  bool jsonl;
  if (ext == ".jsonl" || ext == ".json") {
    jsonl = true;
  } else if (ext == ".csv") {
    jsonl = false;
  } else {
    char c = 0;
    while (in.get(c) && std::isspace(static_cast<unsigned char>(c))) {
    }
    jsonl = (c == '{');
    in.clear();
    in.seekg(0);
  }
  return jsonl ? parse_jsonl(in, path) : parse_csv(in, path);
}

void write_manifest_jsonl(const Manifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  out << json{{"classes", m.classes}}.dump() << '\n';
  for (const auto& r : m.records) {
    json obj{{"id", r.id},
             {"path", relative_path(r.path, base)},
             {"class", r.class_label},
             {"split", std::string(to_string(r.split))}};
    if (r.bbox) obj["bbox"] = {r.bbox->x, r.bbox->y, r.bbox->w, r.bbox->h};
    if (r.size_fraction) obj["size_fraction"] = *r.size_fraction;
    out << obj.dump() << '\n';
  }
  if (!out) throw RuntimeError("failed writing manifest '" + path.string() + "'");
}

void write_manifest_csv(const Manifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  out << "# classes: ";
  for (std::size_t i = 0; i < m.classes.size(); ++i) out << (i ? "," : "") << m.classes[i];
  out << '\n' << kCsvHeader << '\n';
  for (const auto& r : m.records) {
    out << r.id << ',' << relative_path(r.path, base) << ',' << r.class_label << ',' << to_string(r.split) << ',';
    if (r.bbox) out << r.bbox->x << ',' << r.bbox->y << ',' << r.bbox->w << ',' << r.bbox->h << ',';
    else out << ",,,,";
    if (r.size_fraction) {
      std::ostringstream s;
      s.precision(17);
      s << *r.size_fraction;
      out << s.str();
    }
    out << '\n';
  }
}

Manifest split_manifest(const Manifest& m, Split split) {
  Manifest out;
  out.classes = m.classes;
  for (const auto& r : m.records)
    if (r.split == split) out.records.push_back(r);
  return out;
}

namespace {

RgbImage decode_png(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw RuntimeError("cannot decode PNG '" + path.string() + "': " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw RuntimeError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  RgbImage img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.rgb.resize(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) img.rgb[i] = buf[i] / 255.0;
  return img;
}

// Netpbm header token, skipping comments.
int read_pnm_int(std::istream& in) {
  int c;
  while ((c = in.peek()) != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else {
      break;
    }
  }
  int value = -1;
  if (!(in >> value)) throw RuntimeError("malformed PNM header");
  return value;
}

RgbImage decode_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open image '" + path.string() + "'");
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw RuntimeError("unsupported PNM variant in '" + path.string() + "'");
  const int channels = magic[1] == '6' ? 3 : 1;
  RgbImage img;
  try {
    img.width = read_pnm_int(in);
    img.height = read_pnm_int(in);
  } catch (const RuntimeError&) {
    throw RuntimeError("malformed PNM header in '" + path.string() + "'");
  }
  const int maxval = read_pnm_int(in);
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 65535)
    throw RuntimeError("malformed PNM header in '" + path.string() + "'");
  in.get();  // single whitespace before the raster
  const int bytes = maxval < 256 ? 1 : 2;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * channels;
  std::vector<unsigned char> raw(n * bytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw RuntimeError("truncated PNM raster in '" + path.string() + "'");
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  for (std::size_t px = 0; px < static_cast<std::size_t>(img.width) * img.height; ++px) {
    for (int ch = 0; ch < 3; ++ch) {
      const std::size_t src = px * channels + (channels == 3 ? ch : 0);
      const unsigned v = bytes == 1 ? raw[src] : (unsigned(raw[2 * src]) << 8) | raw[2 * src + 1];
      img.rgb[px * 3 + ch] = static_cast<double>(v) / maxval;
    }
  }
  return img;
}

}  // namespace

RgbImage decode_image(const fs::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw RuntimeError("cannot open image '" + path.string() + "'");
  unsigned char sig[8] = {0};
  probe.read(reinterpret_cast<char*>(sig), 8);
  probe.close();
  if (png_sig_cmp(sig, 0, 8) == 0) return decode_png(path);
  if (sig[0] == 'P') return decode_pnm(path);
  throw RuntimeError("unsupported image format '" + path.string() + "'");
}

GrayImage to_luminance(const RgbImage& img) {
  GrayImage out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double* p = &img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3];
      out(y, x) = (p[0] == p[1] && p[1] == p[2]) ? p[0]
                                                  : std::clamp(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2], 0.0, 1.0);
    }
  }
  return out;
}

GrayImage resize_bilinear(const GrayImage& src, int out_width, int out_height) {
  const auto in_h = static_cast<int>(src.rows());
  const auto in_w = static_cast<int>(src.cols());
  GrayImage out(out_height, out_width);
  auto coord = [](int i, int in_n, int out_n) {
    return out_n > 1 ? static_cast<double>(i) * (in_n - 1) / (out_n - 1) : 0.5 * (in_n - 1);
  };
  for (int y = 0; y < out_height; ++y) {
    const double sy = coord(y, in_h, out_height);
    const int y0 = std::min(static_cast<int>(std::floor(sy)), in_h - 1);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double sx = coord(x, in_w, out_width);
      const int x0 = std::min(static_cast<int>(std::floor(sx)), in_w - 1);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double fx = sx - x0;
      const double top = src(y0, x0) + fx * (src(y0, x1) - src(y0, x0));
      const double bottom = src(y1, x0) + fx * (src(y1, x1) - src(y1, x0));
      out(y, x) = top + fy * (bottom - top);
    }
  }
  return out;
}

GrayImage load_image(const ImageRecord& record, int side) {
  if (side < 16) throw ValidationError("image side must be >= 16");
  RgbImage rgb;
  try {
    rgb = decode_image(record.path);
  } catch (const RuntimeError& e) {
    throw RuntimeError("record '" + record.id + "': " + e.what());
  }
  GrayImage gray = to_luminance(rgb);
  if (record.bbox) {
    const auto& b = *record.bbox;
    if (b.x < 0 || b.y < 0 || b.w <= 0 || b.h <= 0 || b.x + b.w > rgb.width || b.y + b.h > rgb.height)
      throw ValidationError("record '" + record.id + "': bbox out of bounds");
    gray = GrayImage(gray.block(b.y, b.x, b.h, b.w));
  }
  return resize_bilinear(gray, side, side);
}

void write_png_gray(const GrayImage& img, const fs::path& path) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(img.size()));
  for (Eigen::Index y = 0; y < img.rows(); ++y)
    for (Eigen::Index x = 0; x < img.cols(); ++x)
      buf[static_cast<std::size_t>(y * img.cols() + x)] =
          static_cast<unsigned char>(std::lround(std::clamp(img(y, x), 0.0, 1.0) * 255.0));
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.cols());
  png.height = static_cast<png_uint_32>(img.rows());
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr))
    throw RuntimeError("cannot write PNG '" + path.string() + "': " + png.message);
}

}  // namespace divmix
