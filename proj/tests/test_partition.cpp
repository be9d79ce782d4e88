#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "divmix/diversity.hpp"
#include "divmix/error.hpp"
#include "divmix/partition.hpp"
#include "divmix/rng.hpp"
#include "support.hpp"

using namespace divmix;
using namespace divmix::partition;

namespace {

struct Fixture {
  Manifest manifest;
  gist::DescriptorSet set;
};

// One record per row of `x`; classes given per row.
Fixture make_fixture(const Eigen::MatrixXd& x, const std::vector<std::string>& cls, std::vector<std::string> classes,
                     const std::string& prefix = "r") {
  Fixture f;
  f.manifest.classes = std::move(classes);
  f.set.matrix = x.cast<float>();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    ImageRecord r;
    r.id = prefix + std::to_string(i);
    r.path = r.id + ".png";
    r.class_label = cls[static_cast<std::size_t>(i)];
    f.manifest.records.push_back(r);
    f.set.ids.push_back(r.id);
  }
  return f;
}

Fixture gaussian_corpus(int per_class, int dim, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(2 * per_class, dim);
  std::vector<std::string> cls;
  for (int i = 0; i < 2 * per_class; ++i) {
    for (int j = 0; j < dim; ++j) x(i, j) = rng.normal() + (i % 2 ? 3.0 : 0.0);
    cls.push_back(i % 2 ? "b" : "a");
  }
  return make_fixture(x, cls, {"a", "b"});
}

std::set<std::string> ids_of(const Manifest& m) {
  std::set<std::string> s;
  for (const auto& r : m.records) s.insert(r.id);
  return s;
}

std::set<std::string> subset_ids(const Manifest& m, const PartitionLabels& l, Subset want) {
  std::set<std::string> s;
  for (const auto& r : m.records)
    if (l.assignment.at(r.id) == want) s.insert(r.id);
  return s;
}

bool includes(const std::set<std::string>& big, const std::set<std::string>& small) {
  return std::includes(big.begin(), big.end(), small.begin(), small.end());
}

}  // namespace

TEST_CASE("medoid split") {
  SUBCASE("two records") {
    Eigen::MatrixXd x(2, 1);
    x << 0, 0;
    const auto f = make_fixture(x, {"a", "a"}, {"a"});
    const auto l = split_similar_diverse(f.set, f.manifest);
    CHECK(l.medoid.at("a") == "r0");
    CHECK(l.assignment.at("r0") == Subset::similar);
    CHECK(l.assignment.at("r1") == Subset::diverse);
    CHECK(l.per_class_counts.at("a") == ClassCounts{1, 1});
  }
  SUBCASE("positions 0 1 2 10") {
    Eigen::MatrixXd x(4, 1);
    x << 0, 1, 2, 10;
    const auto f = make_fixture(x, {"a", "a", "a", "a"}, {"a"});
    const auto l = split_similar_diverse(f.set, f.manifest);
    // 1 and 2 both sum to 11; the earlier record wins, and so does 0 over 2 at distance 1
    CHECK(l.medoid.at("a") == "r1");
    CHECK(subset_ids(f.manifest, l, Subset::similar) == std::set<std::string>{"r0", "r1"});
    CHECK(l.medoid_distance.at("r3") == doctest::Approx(9.0));
    CHECK(l.medoid_distance.at("r1") == 0.0);
  }
  SUBCASE("odd class size rounds similar up") {
    Eigen::MatrixXd x(5, 1);
    x << 0, 1, 2, 3, 4;
    const auto f = make_fixture(x, std::vector<std::string>(5, "a"), {"a"});
    const auto l = split_similar_diverse(f.set, f.manifest);
    CHECK(l.medoid.at("a") == "r2");
    CHECK(l.per_class_counts.at("a") == ClassCounts{3, 2});
    CHECK(subset_ids(f.manifest, l, Subset::diverse) == std::set<std::string>{"r0", "r4"});
  }
  SUBCASE("two clusters: the larger cluster is similar") {
    Eigen::MatrixXd x(7, 2);
    x << 0, 0, 0.1, 0, 0, 0.1, 0.1, 0.1, 20, 20, 20.1, 20, 20, 20.1;
    const auto f = make_fixture(x, std::vector<std::string>(7, "a"), {"a"});
    const auto l = split_similar_diverse(f.set, f.manifest);
    CHECK(subset_ids(f.manifest, l, Subset::similar) == std::set<std::string>{"r0", "r1", "r2", "r3"});
  }
  SUBCASE("brute-force oracle, per class, only train records") {
    auto f = gaussian_corpus(15, 6, 3);
    f.manifest.records[4].split = Split::test;
    const auto l = split_similar_diverse(f.set, f.manifest);
    CHECK(l.assignment.count("r4") == 0);
    for (const std::string cls : {"a", "b"}) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < f.manifest.records.size(); ++i)
        if (f.manifest.records[i].class_label == cls && f.manifest.records[i].split == Split::train) rows.push_back(i);
      double best = 1e300;
      std::size_t med = 0;
      for (std::size_t i : rows) {
        double s = 0;
        for (std::size_t j : rows) s += (f.set.matrix.row(i) - f.set.matrix.row(j)).cast<double>().norm();
        if (s < best - 1e-9) best = s, med = i;
      }
      CHECK(l.medoid.at(cls) == f.manifest.records[med].id);
      // every similar record is at least as close as every diverse one
      double max_sim = 0, min_div = 1e300;
      std::size_t n_sim = 0;
      for (std::size_t i : rows) {
        const auto& id = f.manifest.records[i].id;
        const double d = l.medoid_distance.at(id);
        if (l.assignment.at(id) == Subset::similar) max_sim = std::max(max_sim, d), ++n_sim;
        else min_div = std::min(min_div, d);
      }
      CHECK(max_sim <= min_div);
      CHECK(n_sim == (rows.size() + 1) / 2);
    }
  }
  SUBCASE("too few records") {
    Eigen::MatrixXd x(3, 1);
    x << 0, 1, 2;
    const auto f = make_fixture(x, {"a", "a", "b"}, {"a", "b"});
    CHECK_THROWS_AS(split_similar_diverse(f.set, f.manifest), ValidationError);
  }
}

TEST_CASE("similar_count") {
  CHECK(similar_count(0.0, 25) == 0);
  CHECK(similar_count(1.0, 25) == 25);
  CHECK(similar_count(0.5, 25) == 13);
  CHECK(similar_count(0.75, 100) == 75);
  CHECK(similar_count(0.25, 2) == 1);
  for (std::size_t n : {1, 7, 25, 100, 400})
    for (int k = 0; k <= 10; ++k) {
      const double p = k / 10.0;
      const auto s = similar_count(p, n);
      CHECK(s <= n);
      CHECK(std::abs(double(s) - p * double(n)) <= 0.5 + 1e-12);
    }
}

TEST_CASE("mixture sampling") {
  const auto f = gaussian_corpus(40, 8, 11);
  const auto l = split_similar_diverse(f.set, f.manifest);
  const auto sim = subset_ids(f.manifest, l, Subset::similar);
  const auto div = subset_ids(f.manifest, l, Subset::diverse);

  SUBCASE("counts per pool and class") {
    for (double p : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const auto m = sample_mixture(l, f.manifest, {p, 10, 4});
      CHECK(m.classes == f.manifest.classes);
      CHECK(m.class_counts() == std::vector<std::size_t>{10, 10});
      std::map<std::string, std::size_t> s_per_class;
      for (const auto& r : m.records)
        if (sim.count(r.id)) ++s_per_class[r.class_label];
      CHECK(s_per_class["a"] == similar_count(p, 10));
      CHECK(s_per_class["b"] == similar_count(p, 10));
      CHECK(ids_of(m).size() == 20);
    }
    CHECK(includes(sim, ids_of(sample_mixture(l, f.manifest, {1.0, 20, 0}))));
    CHECK(includes(div, ids_of(sample_mixture(l, f.manifest, {0.0, 20, 0}))));
  }
  SUBCASE("manifest order is kept") {
    const auto m = sample_mixture(l, f.manifest, {0.5, 13, 9});
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < f.manifest.records.size(); ++i) pos[f.manifest.records[i].id] = i;
    for (std::size_t i = 1; i < m.records.size(); ++i) CHECK(pos[m.records[i - 1].id] < pos[m.records[i].id]);
  }
  SUBCASE("raising p swaps one diverse record for one similar record") {
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      for (std::size_t k = 0; k < 20; ++k) {
        const auto lo = ids_of(sample_mixture(l, f.manifest, {double(k) / 20, 20, seed}));
        const auto hi = ids_of(sample_mixture(l, f.manifest, {double(k + 1) / 20, 20, seed}));
        std::set<std::string> lo_sim, hi_sim, lo_div, hi_div;
        for (const auto& id : lo) (sim.count(id) ? lo_sim : lo_div).insert(id);
        for (const auto& id : hi) (sim.count(id) ? hi_sim : hi_div).insert(id);
        CHECK(includes(hi_sim, lo_sim));
        CHECK(includes(lo_div, hi_div));
        CHECK(hi_sim.size() == lo_sim.size() + 2);  // one per class
      }
    }
  }
  SUBCASE("deterministic in the seed") {
    CHECK(sample_mixture(l, f.manifest, {0.3, 15, 5}) == sample_mixture(l, f.manifest, {0.3, 15, 5}));
    CHECK(ids_of(sample_mixture(l, f.manifest, {0.3, 15, 5})) != ids_of(sample_mixture(l, f.manifest, {0.3, 15, 6})));
  }
  SUBCASE("shortfall names the class and pool") {
    try {
      sample_mixture(l, f.manifest, {1.0, 21, 0});
      FAIL("expected a shortfall");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("class 'a'") != std::string::npos);
      CHECK(msg.find("similar pool has 20") != std::string::npos);
      CHECK(msg.find("short by 1") != std::string::npos);
    }
  }
  SUBCASE("missing partition entry and bad p") {
    PartitionLabels partial = l;
    partial.assignment.erase("r0");
    CHECK_THROWS_AS(sample_mixture(partial, f.manifest, {0.5, 4, 0}), ValidationError);
    CHECK_THROWS_AS(sample_mixture(l, f.manifest, {1.5, 4, 0}), ValidationError);
    CHECK_THROWS_AS(sample_mixture(l, f.manifest, {0.5, 0, 0}), ValidationError);
  }
}

TEST_CASE("random sampling") {
  const auto f = gaussian_corpus(40, 4, 2);
  SUBCASE("balanced and deterministic") {
    const auto m = sample_random(f.manifest, 12, 3);
    CHECK(m.class_counts() == std::vector<std::size_t>{12, 12});
    CHECK(m == sample_random(f.manifest, 12, 3));
    CHECK(m != sample_random(f.manifest, 12, 4));
    CHECK(ids_of(m).size() == 24);
  }
  SUBCASE("whole pool") {
    const auto m = sample_random(f.manifest, 40, 1);
    CHECK(m.records == f.manifest.records);
  }
  SUBCASE("uniform over pairs") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(4, 1);
    const auto g = make_fixture(x, std::vector<std::string>(4, "a"), {"a"});
    std::map<std::string, int> freq;
    const int reps = 1000;
    for (int s = 0; s < reps; ++s) {
      const auto m = sample_random(g.manifest, 2, static_cast<std::uint64_t>(s));
      REQUIRE(m.records.size() == 2);
      ++freq[m.records[0].id + "+" + m.records[1].id];
    }
    CHECK(freq.size() == 6);
    const double expect = reps / 6.0, sigma = std::sqrt(reps * (1.0 / 6) * (5.0 / 6));
    for (const auto& [pair, c] : freq) CHECK_MESSAGE(std::abs(c - expect) < 3 * sigma, pair << " " << c);
  }
  CHECK_THROWS_AS(sample_random(f.manifest, 41, 0), ValidationError);
  CHECK_THROWS_AS(sample_random(f.manifest, 0, 0), ValidationError);
}

TEST_CASE("diverse pool is more spread out than the similar pool") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto f = gaussian_corpus(30, 10, 500 + seed);
    const auto l = split_similar_diverse(f.set, f.manifest);
    const auto spread = [&](double p) {
      const auto m = sample_mixture(l, f.manifest, {p, 15, seed});
      std::vector<std::string> ids;
      for (const auto& r : m.records)
        if (r.class_label == "a") ids.push_back(r.id);
      return diversity::pairwise_distances(f.set.select(f.set.rows_for(ids)).matrix).mean();
    };
    if (spread(0.0) >= spread(1.0)) ++wins;
  }
  CHECK(wins == 20);
}

TEST_CASE("partition CSV") {
  testing::TempDir dir("part");
  auto f = gaussian_corpus(3, 2, 1);
  f.manifest.records[5].split = Split::val;
  const auto l = split_similar_diverse(f.set, f.manifest);
  write_partition_csv(l, f.manifest, dir / "p.csv");
  const auto text = testing::read_text(dir / "p.csv");
  CHECK(text.rfind("id,class,subset,medoid_distance\n", 0) == 0);
  CHECK(testing::count_lines(dir / "p.csv") == 6);  // header + 5 train records
  CHECK(text.find("r5,") == std::string::npos);
  CHECK(text.find("\nr0,a,") != std::string::npos);
  CHECK(text.find(l.medoid.at("a") + ",a,similar,0\n") != std::string::npos);
}
