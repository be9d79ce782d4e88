#include <algorithm>

#include "doctest.h"
#include "divmix/corpus.hpp"
#include "divmix/error.hpp"
#include "support.hpp"

using namespace divmix;
using testing::TempDir;
using testing::write_text;
namespace fs = std::filesystem;

namespace {

GrayImage bilinear_oracle(const GrayImage& src, int w, int h) {
  GrayImage out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double sx = w > 1 ? x * double(src.cols() - 1) / (w - 1) : 0.0;
      const double sy = h > 1 ? y * double(src.rows() - 1) / (h - 1) : 0.0;
      const int x0 = int(sx), y0 = int(sy);
      const int x1 = std::min<int>(x0 + 1, int(src.cols()) - 1), y1 = std::min<int>(y0 + 1, int(src.rows()) - 1);
      const double ax = sx - x0, ay = sy - y0;
      out(y, x) = (1 - ax) * (1 - ay) * src(y0, x0) + ax * (1 - ay) * src(y0, x1) + (1 - ax) * ay * src(y1, x0) +
                  ax * ay * src(y1, x1);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("jsonl manifest sorts classes and resolves paths") {
  TempDir dir;
  write_text(dir / "m.jsonl",
             "{\"id\":\"a\",\"path\":\"img/a.png\",\"class\":\"car\",\"split\":\"train\"}\n"
             "{\"id\":\"b\",\"path\":\"img/b.png\",\"class\":\"ball\",\"split\":\"test\",\"bbox\":[1,2,3,4]}\n"
             "\n"
             "{\"id\":\"c\",\"path\":\"/abs/c.png\",\"class\":\"car\",\"split\":\"val\",\"size_fraction\":0.25}\n");
  const auto m = load_manifest(dir / "m.jsonl");
  CHECK(m.classes == std::vector<std::string>{"ball", "car"});
  REQUIRE(m.records.size() == 3);
  CHECK(m.records[0].path == dir.path() / "img/a.png");
  CHECK(m.records[2].path == fs::path("/abs/c.png"));
  CHECK(m.records[1].bbox == BBox{1, 2, 3, 4});
  CHECK(m.records[2].size_fraction == doctest::Approx(0.25));
  CHECK(m.records[2].split == Split::val);
}

TEST_CASE("explicit class header keeps its order") {
  TempDir dir;
  write_text(dir / "m.jsonl",
             "{\"classes\":[\"zebra\",\"car\",\"ball\"]}\n"
             "{\"id\":\"a\",\"path\":\"a.png\",\"class\":\"car\",\"split\":\"train\"}\n");
  const auto m = load_manifest(dir / "m.jsonl");
  CHECK(m.classes == std::vector<std::string>{"zebra", "car", "ball"});
}

TEST_CASE("manifest errors") {
  TempDir dir;
  SUBCASE("empty file") {
    write_text(dir / "e.jsonl", "");
    CHECK_THROWS_WITH_AS(load_manifest(dir / "e.jsonl"), doctest::Contains("no records"), ValidationError);
  }
  SUBCASE("bad split names the line") {
    write_text(dir / "s.jsonl",
               "{\"id\":\"a\",\"path\":\"a.png\",\"class\":\"car\",\"split\":\"train\"}\n"
               "{\"id\":\"b\",\"path\":\"b.png\",\"class\":\"car\",\"split\":\"trian\"}\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir / "s.jsonl"), doctest::Contains("s.jsonl:2"), ParseError);
  }
  SUBCASE("duplicate id") {
    write_text(dir / "d.jsonl",
               "{\"id\":\"a\",\"path\":\"a.png\",\"class\":\"car\",\"split\":\"train\"}\n"
               "{\"id\":\"a\",\"path\":\"b.png\",\"class\":\"car\",\"split\":\"train\"}\n");
    CHECK_THROWS_WITH_AS(load_manifest(dir / "d.jsonl"), doctest::Contains("duplicate id 'a'"), ValidationError);
  }
  SUBCASE("malformed json") {
    write_text(dir / "j.jsonl", "{\"id\":\"a\",\n");
    CHECK_THROWS_AS(load_manifest(dir / "j.jsonl"), ParseError);
  }
  SUBCASE("class outside the header") {
    write_text(dir / "h.jsonl",
               "{\"classes\":[\"car\"]}\n"
               "{\"id\":\"a\",\"path\":\"a.png\",\"class\":\"ball\",\"split\":\"train\"}\n");
    CHECK_THROWS_AS(load_manifest(dir / "h.jsonl"), ValidationError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_manifest(dir / "nope.jsonl"), ValidationError); }
}

TEST_CASE("csv manifest with empty optionals") {
  TempDir dir;
  write_text(dir / "m.csv",
             "id,path,class,split,bbox_x,bbox_y,bbox_w,bbox_h,size_fraction\n"
             "a,a.png,car,train,,,,,\n"
             "b,b.png,ball,test,0,0,8,8,0.5\n");
  const auto m = load_manifest(dir / "m.csv");
  REQUIRE(m.records.size() == 2);
  CHECK_FALSE(m.records[0].bbox);
  CHECK_FALSE(m.records[0].size_fraction);
  CHECK(m.records[1].bbox == BBox{0, 0, 8, 8});

  write_text(dir / "bad.csv", "id,path,class\n");
  CHECK_THROWS_AS(load_manifest(dir / "bad.csv"), ParseError);
}

TEST_CASE("manifest writers roundtrip") {
  TempDir dir;
  Manifest m;
  m.classes = {"car", "ball"};
  m.records.push_back({"a", dir.path() / "x/a.png", "car", Split::train, BBox{1, 1, 4, 4}, 0.3});
  m.records.push_back({"b", dir.path() / "b.png", "ball", Split::test, std::nullopt, std::nullopt});
  write_manifest_jsonl(m, dir / "m.jsonl");
  write_manifest_csv(m, dir / "m.csv");
  CHECK(load_manifest(dir / "m.jsonl") == m);
  CHECK(load_manifest(dir / "m.csv") == m);
}

TEST_CASE("split_manifest filters, keeps classes, is idempotent and partitions") {
  Manifest m;
  m.classes = {"a", "b"};
  m.records = {{"1", "1.png", "a", Split::train}, {"2", "2.png", "b", Split::test},
               {"3", "3.png", "a", Split::train}, {"4", "4.png", "b", Split::val}};
  const auto test = split_manifest(m, Split::test);
  CHECK(test.records.size() == 1);
  CHECK(test.classes == m.classes);
  const auto train = split_manifest(m, Split::train);
  CHECK(split_manifest(train, Split::train) == train);
  CHECK(split_manifest(test, Split::train).records.empty());
  CHECK(train.records.size() + test.records.size() + split_manifest(m, Split::val).records.size() == m.records.size());
}

TEST_CASE("bilinear resize matches the weight-form oracle") {
  GrayImage checker(2, 2);
  checker << 0, 1, 1, 0;
  const auto up = resize_bilinear(checker, 4, 4);
  CHECK(up(0, 0) == 0.0);
  CHECK(up(0, 3) == 1.0);
  CHECK(up(3, 0) == 1.0);
  CHECK(up(3, 3) == 0.0);
  CHECK((up - bilinear_oracle(checker, 4, 4)).abs().maxCoeff() < 1e-15);

  GrayImage rnd = (GrayImage::Random(7, 5) + 1.0) / 2.0;
  const auto r = resize_bilinear(rnd, 13, 9);
  CHECK((r - bilinear_oracle(rnd, 13, 9)).abs().maxCoeff() < 1e-14);
}

TEST_CASE("load_image on png and ppm") {
  TempDir dir;
  SUBCASE("uniform white png") {
    write_png_gray(GrayImage::Ones(64, 64), dir / "w.png");
    const auto img = load_image({"w", dir / "w.png", "c", Split::train}, 128);
    CHECK(img.rows() == 128);
    CHECK(img.cols() == 128);
    CHECK((img - 1.0).abs().maxCoeff() <= 1.0 / 255.0);
  }
  SUBCASE("full-frame bbox equals no bbox; deterministic") {
    GrayImage g(20, 30);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 30; ++x) g(y, x) = ((x * 7 + y * 13) % 256) / 255.0;
    write_png_gray(g, dir / "g.png");
    const ImageRecord plain{"g", dir / "g.png", "c", Split::train};
    ImageRecord boxed = plain;
    boxed.bbox = BBox{0, 0, 30, 20};
    const auto a = load_image(plain, 32);
    CHECK((a == load_image(boxed, 32)).all());
    CHECK((a == load_image(plain, 32)).all());
    boxed.bbox = BBox{25, 0, 10, 10};
    CHECK_THROWS_WITH_AS(load_image(boxed, 32), doctest::Contains("'g'"), ValidationError);
  }
  SUBCASE("gray ppm keeps channel values exactly") {
    std::string ppm = "P6\n2 1\n255\n";
    for (unsigned char v : {10, 10, 10, 200, 200, 200}) ppm.push_back(char(v));
    write_text(dir / "p.ppm", ppm);
    const auto rgb = decode_image(dir / "p.ppm");
    const auto gray = to_luminance(rgb);
    CHECK(gray(0, 0) == 10.0 / 255.0);
    CHECK(gray(0, 1) == 200.0 / 255.0);
  }
  SUBCASE("colour luminance weights") {
    std::string ppm = "P6\n1 1\n255\n";
    for (unsigned char v : {255, 0, 0}) ppm.push_back(char(v));
    write_text(dir / "r.ppm", ppm);
    CHECK(to_luminance(decode_image(dir / "r.ppm"))(0, 0) == doctest::Approx(0.299));
  }
  SUBCASE("undecodable file names the record") {
    write_text(dir / "junk.png", "not an image");
    CHECK_THROWS_WITH(load_image({"junk", dir / "junk.png", "c", Split::train}, 32), doctest::Contains("junk"));
  }
}
