#include "divmix/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>

#include "divmix/error.hpp"
#include "divmix/log.hpp"
#include "divmix/parallel.hpp"
#include "divmix/rng.hpp"
#include "divmix/partition.hpp"
#include "format.hpp"

namespace divmix::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const SweepConfig& cfg) {
  if (cfg.p_grid.empty()) throw ValidationError("sweep.p_grid is empty");
  if (cfg.n_grid.empty()) throw ValidationError("sweep.n_grid is empty");
  if (cfg.seeds.empty()) throw ValidationError("sweep.seeds is empty");
  for (double p : cfg.p_grid)
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("sweep.p_grid values must lie in [0, 1]");
  for (auto n : cfg.n_grid)
    if (n < 1) throw ValidationError("sweep.n_grid values must be >= 1");
}

std::string cell_label(double p) { return format_double(p); }

std::vector<AggregateRecord> aggregate(const std::vector<CellRecord>& cells) {
  std::vector<AggregateRecord> out;
  std::map<std::pair<std::string, std::size_t>, std::vector<const CellRecord*>> groups;
  for (const auto& c : cells) {
    auto key = std::pair{c.label, c.n};
    if (!groups.count(key)) out.push_back({c.label, c.n});
    groups[key].push_back(&c);
  }
  for (auto& a : out) {
    const auto& g = groups[{a.label, a.n}];
    a.count = g.size();
    double acc = 0, dist = 0, eig = 0;
    for (const auto* c : g) {
      acc += c->accuracy;
      dist += c->mean_pair_dist;
      eig += c->eig10_sum;
    }
    const auto k = static_cast<double>(g.size());
    a.accuracy_mean = acc / k;
    a.mean_pair_dist_mean = dist / k;
    a.eig10_sum_mean = eig / k;
    double ss = 0;
    for (const auto* c : g) ss += (c->accuracy - a.accuracy_mean) * (c->accuracy - a.accuracy_mean);
    a.accuracy_std = g.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
  }
  return out;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::optional<fs::path> descriptor_cache_path(const RunOptions& opt, const std::string& role, const Manifest& m,
                                              const gist::GistParams& params) {
  if (!opt.cache_dir) return std::nullopt;
  std::uint64_t h = gist::params_hash(params);
  for (const auto& r : m.records) {
    // size and mtime so a regenerated corpus does not reuse stale descriptors
    std::error_code ec;
    const auto size = fs::file_size(r.path, ec);
    const auto mtime = fs::last_write_time(r.path, ec).time_since_epoch().count();
    for (unsigned char c : r.id + '\n' + r.path.string() + '\n' + std::to_string(size) + '\n' +
                               std::to_string(mtime) + '\n') {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  return *opt.cache_dir / (role + "-" + hex64(h) + ".gstc");
}

namespace {

struct SubsetStats {
  double mean_pair_dist = 0.0;
  double eig10_sum = 0.0;
};

// Within-class statistics averaged over classes with at least two rows.
SubsetStats subset_stats(const gist::DescriptorSet& set, const Manifest& subset) {
  std::vector<std::vector<std::string>> ids(subset.classes.size());
  for (const auto& r : subset.records) ids[subset.class_index(r.class_label)].push_back(r.id);
  SubsetStats s;
  int used = 0;
  for (const auto& cls : ids) {
    if (cls.size() < 2) continue;
    const auto sub = set.select(set.rows_for(cls));
    s.mean_pair_dist += diversity::pairwise_distances(sub.matrix).mean();
    s.eig10_sum += diversity::pca_spectrum(sub.matrix, 10).top_sum();
    ++used;
  }
  if (used) {
    s.mean_pair_dist /= used;
    s.eig10_sum /= used;
  }
  return s;
}

std::vector<std::string> ids_of(const Manifest& m) {
  std::vector<std::string> ids;
  for (const auto& r : m.records) ids.push_back(r.id);
  return ids;
}

}  // namespace

ExperimentReport run_mixture_sweep(const Manifest& train_in, const Manifest& test_in, const gist::GistParams& params,
                                   const SweepConfig& sweep, const classifier::TrainConfig& train_cfg,
                                   const RunOptions& options) {
  validate(sweep);
  classifier::validate(train_cfg);
  const Manifest train = split_manifest(train_in, Split::train);
  Manifest test = split_manifest(test_in, Split::test);
  if (train.records.empty()) throw ValidationError("sweep: train manifest has no train records");
  if (test.records.empty()) throw ValidationError("sweep: test manifest has no test records");
  const auto& classes = train.classes;
  const auto test_y = classifier::labels_for(test, classes);

  log::info("sweep: descriptors for " + std::to_string(train.records.size()) + " train and " +
            std::to_string(test.records.size()) + " test images");
  const auto train_set =
      gist::batch_descriptors(train, params, descriptor_cache_path(options, "train", train, params), options.threads);
  const auto test_set =
      gist::batch_descriptors(test, params, descriptor_cache_path(options, "test", test, params), options.threads);
  const auto labels = partition::split_similar_diverse(train_set, train);

  struct Job {
    std::string label;
    std::size_t n;
    std::uint64_t seed;
    std::optional<double> p;  // mixture cells only
    bool full = false;
  };
  std::vector<Job> jobs;
  for (auto n : sweep.n_grid) {
    for (double p : sweep.p_grid)
      for (auto seed : sweep.seeds) jobs.push_back({cell_label(p), n, seed, p});
    if (sweep.include_random)
      for (auto seed : sweep.seeds) jobs.push_back({"random", n, seed, std::nullopt});
  }
  if (sweep.include_full) {
    const auto counts = train.class_counts();
    const std::size_t smallest = *std::min_element(counts.begin(), counts.end());
    for (auto seed : sweep.seeds) jobs.push_back({"original", smallest, seed, std::nullopt, true});
  }

  // Fail fast on pool shortfalls before any training starts.
  for (const auto& job : jobs) {
    try {
      if (job.p) partition::sample_mixture(labels, train, {*job.p, job.n, job.seed});
      else if (!job.full) partition::sample_random(train, job.n, job.seed);
    } catch (const ValidationError& e) {
      throw ValidationError("sweep cell (p=" + job.label + ", n=" + std::to_string(job.n) +
                            ", seed=" + std::to_string(job.seed) + "): " + e.what());
    }
  }

  std::vector<CellRecord> cells(jobs.size());
  std::atomic<std::size_t> done{0};
  parallel_for(jobs.size(), options.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    Manifest subset = job.full ? train
                      : job.p  ? partition::sample_mixture(labels, train, {*job.p, job.n, job.seed})
                               : partition::sample_random(train, job.n, job.seed);
    const auto sub_set = train_set.select(train_set.rows_for(ids_of(subset)));
    const auto z = classifier::standardize(sub_set, {test_set});
    auto cfg = train_cfg;
    cfg.seed = divmix::stream_key({train_cfg.seed, job.seed});
    const auto trained =
        classifier::train_softmax(z.train, classifier::labels_for(subset, classes), classes, cfg, train_set.params_hash);
    const auto eval = classifier::evaluate(trained.model, z.others[0], test_y);
    const auto stats = subset_stats(train_set, subset);
    cells[j] = {job.label, job.n, job.seed, eval.top1_accuracy, stats.mean_pair_dist, stats.eig10_sum};
    const std::size_t finished = ++done;
    log::info("sweep: " + std::to_string(finished) + "/" + std::to_string(jobs.size()) + " cells completed");
  });

  ExperimentReport report;
  report.cells = std::move(cells);
  report.aggregates = aggregate(report.cells);
  report.config = {{"sweep",
                    {{"p_grid", sweep.p_grid},
                     {"n_grid", sweep.n_grid},
                     {"seeds", sweep.seeds},
                     {"include_random", sweep.include_random},
                     {"include_full", sweep.include_full}}},
                   {"gist",
                    {{"image_side", params.image_side},
                     {"orientations_per_scale", params.orientations_per_scale},
                     {"blocks", params.blocks},
                     {"prefilter_cutoff", params.prefilter_cutoff}}},
                   {"train",
                    {{"learning_rate", train_cfg.learning_rate},
                     {"epochs", train_cfg.epochs},
                     {"batch_size", train_cfg.batch_size},
                     {"l2", train_cfg.l2},
                     {"seed", train_cfg.seed}}}};
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  report.timestamp = stamp;
  return report;
}

std::optional<double> mean_accuracy(const ExperimentReport& report, const std::string& label, std::size_t n) {
  for (const auto& a : report.aggregates)
    if (a.label == label && a.n == n) return a.accuracy_mean;
  return std::nullopt;
}

std::vector<ClaimCheck> sweep_claims(const ExperimentReport& report, std::size_t mid_n, double min_gap,
                                     double tolerance) {
  std::vector<std::size_t> ns;
  std::vector<std::string> mixed;
  for (const auto& a : report.aggregates) {
    if (a.label == "random" || a.label == "original") continue;
    if (std::find(ns.begin(), ns.end(), a.n) == ns.end()) ns.push_back(a.n);
    const double p = std::stod(a.label);
    if (p > 0.0 && p < 1.0 && std::find(mixed.begin(), mixed.end(), a.label) == mixed.end()) mixed.push_back(a.label);
  }
  std::vector<ClaimCheck> out;
  if (ns.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(ns.begin(), ns.end());
  const std::size_t lo = *lo_it, hi = *hi_it;
  const std::string diverse = cell_label(0.0), similar = cell_label(1.0);

  auto gap_at = [&](std::size_t n) -> std::optional<double> {
    auto d = mean_accuracy(report, diverse, n);
    auto s = mean_accuracy(report, similar, n);
    if (!d || !s) return std::nullopt;
    return *d - *s;
  };
  auto best_mixed = [&](std::size_t n) -> std::optional<double> {
    std::optional<double> best;
    for (const auto& label : mixed)
      if (auto acc = mean_accuracy(report, label, n)) best = best ? std::max(*best, *acc) : *acc;
    return best;
  };

  if (auto g = gap_at(lo)) {
    out.push_back({"diverse_beats_similar",
                   "p=0 minus p=1 accuracy at n=" + std::to_string(lo) + " >= " + format_double(min_gap), *g, min_gap,
                   *g >= min_gap});
  }
  if (auto best = best_mixed(mid_n)) {
    auto d = mean_accuracy(report, diverse, mid_n);
    auto s = mean_accuracy(report, similar, mid_n);
    if (d && s) {
      const double bound = std::max(*d, *s) - tolerance;
      out.push_back({"mixture_competitive",
                     "best mixed p accuracy at n=" + std::to_string(mid_n) + " >= max(p=0, p=1) - " +
                         format_double(tolerance),
                     *best, bound, *best >= bound});
    }
  }
  if (hi != lo) {
    auto g_lo = gap_at(lo);
    auto g_hi = gap_at(hi);
    if (g_lo && g_hi)
      out.push_back({"gap_shrinks",
                     "|p=0 minus p=1| at n=" + std::to_string(hi) + " < |p=0 minus p=1| at n=" + std::to_string(lo),
                     std::abs(*g_hi), std::abs(*g_lo), std::abs(*g_hi) < std::abs(*g_lo)});
  }
  if (auto best = best_mixed(mid_n)) {
    if (auto rnd = mean_accuracy(report, "random", mid_n))
      out.push_back({"mixture_beats_random",
                     "best mixed p accuracy at n=" + std::to_string(mid_n) + " >= random-subset accuracy", *best, *rnd,
                     *best >= *rnd});
  }
  return out;
}

json to_json(const ExperimentReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"p", c.label},
                     {"n", c.n},
                     {"seed", c.seed},
                     {"accuracy", c.accuracy},
                     {"mean_pair_dist", c.mean_pair_dist},
                     {"eig10_sum", c.eig10_sum}});
  json aggs = json::array();
  for (const auto& a : r.aggregates)
    aggs.push_back({{"p", a.label},
                    {"n", a.n},
                    {"count", a.count},
                    {"accuracy_mean", a.accuracy_mean},
                    {"accuracy_std", a.accuracy_std},
                    {"mean_pair_dist_mean", a.mean_pair_dist_mean},
                    {"eig10_sum_mean", a.eig10_sum_mean}});
  json embs = json::array();
  for (const auto& e : r.embeddings) {
    json sf = json::array();
    for (double v : e.size_fraction) sf.push_back(std::isnan(v) ? json(nullptr) : json(v));
    embs.push_back({{"name", e.name}, {"ids", e.ids}, {"classes", e.classes}, {"size_fraction", sf}, {"x", e.x}, {"y", e.y}});
  }
  return {{"version", r.version},
          {"metadata", {{"timestamp", r.timestamp}}},
          {"config", r.config},
          {"cells", cells},
          {"aggregates", aggs},
          {"embeddings", embs}};
}

ExperimentReport report_from_json(const json& j) {
  ExperimentReport r;
  try {
    r.version = j.at("version").get<std::string>();
    r.timestamp = j.at("metadata").at("timestamp").get<std::string>();
    r.config = j.at("config");
    for (const auto& c : j.at("cells"))
      r.cells.push_back({c.at("p").get<std::string>(), c.at("n").get<std::size_t>(), c.at("seed").get<std::uint64_t>(),
                         c.at("accuracy").get<double>(), c.at("mean_pair_dist").get<double>(),
                         c.at("eig10_sum").get<double>()});
    for (const auto& a : j.at("aggregates"))
      r.aggregates.push_back({a.at("p").get<std::string>(), a.at("n").get<std::size_t>(),
                              a.at("count").get<std::size_t>(), a.at("accuracy_mean").get<double>(),
                              a.at("accuracy_std").get<double>(), a.at("mean_pair_dist_mean").get<double>(),
                              a.at("eig10_sum_mean").get<double>()});
    for (const auto& e : j.at("embeddings")) {
      NamedEmbedding emb;
      emb.name = e.at("name").get<std::string>();
      emb.ids = e.at("ids").get<std::vector<std::string>>();
      emb.classes = e.at("classes").get<std::vector<std::string>>();
      for (const auto& v : e.at("size_fraction"))
        emb.size_fraction.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
      emb.x = e.at("x").get<std::vector<double>>();
      emb.y = e.at("y").get<std::vector<double>>();
      r.embeddings.push_back(std::move(emb));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
  return r;
}

namespace {
std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write '" + path.string() + "'");
  return out;
}
}  // namespace

void write_embedding_csv(const NamedEmbedding& e, const fs::path& path) {
  auto out = open_out(path);
  out << "id,x,y,size_fraction,class\n";
  for (std::size_t i = 0; i < e.ids.size(); ++i) {
    out << e.ids[i] << ',' << format_double(e.x[i]) << ',' << format_double(e.y[i]) << ',';
    if (!std::isnan(e.size_fraction[i])) out << format_double(e.size_fraction[i]);
    out << ',' << e.classes[i] << '\n';
  }
}

std::vector<fs::path> write_report(const ExperimentReport& report, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> paths;
  {
    paths.push_back(out_dir / "cells.csv");
    auto out = open_out(paths.back());
    out << "p,n,seed,accuracy,mean_pair_dist,eig10_sum\n";
    for (const auto& c : report.cells)
      out << c.label << ',' << c.n << ',' << c.seed << ',' << format_double(c.accuracy) << ','
          << format_double(c.mean_pair_dist) << ',' << format_double(c.eig10_sum) << '\n';
  }
  {
    paths.push_back(out_dir / "aggregate.csv");
    auto out = open_out(paths.back());
    out << "p,n,count,accuracy_mean,accuracy_std,mean_pair_dist_mean,eig10_sum_mean\n";
    for (const auto& a : report.aggregates)
      out << a.label << ',' << a.n << ',' << a.count << ',' << format_double(a.accuracy_mean) << ','
          << format_double(a.accuracy_std) << ',' << format_double(a.mean_pair_dist_mean) << ','
          << format_double(a.eig10_sum_mean) << '\n';
  }
  {
    paths.push_back(out_dir / "report.json");
    auto out = open_out(paths.back());
    out << to_json(report).dump(1) << '\n';
  }
  for (const auto& e : report.embeddings) {
    paths.push_back(out_dir / ("embedding_" + e.name + ".csv"));
    write_embedding_csv(e, paths.back());
  }
  return paths;
}

void write_claims(const std::vector<ClaimCheck>& claims, const fs::path& path) {
  auto out = open_out(path);
  out << "claim,lhs,rhs,pass,description\n";
  for (const auto& c : claims)
    out << c.name << ',' << format_double(c.lhs) << ',' << format_double(c.rhs) << ',' << (c.pass ? "pass" : "fail")
        << ",\"" << c.description << "\"\n";
}

ExperimentReport read_report(const fs::path& report_json) {
  std::ifstream in(report_json);
  if (!in) throw ValidationError("cannot open report '" + report_json.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("malformed report '" + report_json.string() + "': " + e.what());
  }
  return report_from_json(j);
}

NamedEmbedding make_embedding(const std::string& name, const Manifest& m, const diversity::Embedding2D<double>& emb,
                              std::size_t offset) {
  NamedEmbedding e;
  e.name = name;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    const auto row = static_cast<Eigen::Index>(offset + i);
    e.ids.push_back(r.id);
    e.classes.push_back(r.class_label);
    e.size_fraction.push_back(r.size_fraction ? *r.size_fraction : std::numeric_limits<double>::quiet_NaN());
    e.x.push_back(emb.coords(row, 0));
    e.y.push_back(emb.coords(row, 1));
  }
  return e;
}

ComparisonResult run_diversity_comparison(const Manifest& a, const Manifest& b, const gist::GistParams& params,
                                          const ComparisonOptions& options) {
  if (a.records.empty() || b.records.empty()) throw ValidationError("compare: both manifests need records");
  const auto set_a = gist::batch_descriptors(a, params, descriptor_cache_path(options.run, options.name_a, a, params),
                                             options.run.threads);
  const auto set_b = gist::batch_descriptors(b, params, descriptor_cache_path(options.run, options.name_b, b, params),
                                             options.run.threads);
  ComparisonResult result;
  result.comparison =
      diversity::compare_sets(set_a, set_b, options.bins, options.k, options.name_a, options.name_b, options.run.threads);

  gist::DescriptorMatrix joint(set_a.size() + set_b.size(), set_a.matrix.cols());
  joint << set_a.matrix, set_b.matrix;
  if (joint.rows() >= 3) {
    const auto emb = diversity::mds_embed(diversity::pairwise_distances(joint, options.run.threads));
    result.embedding_a = make_embedding(options.name_a, a, emb, 0);
    result.embedding_b = make_embedding(options.name_b, b, emb, a.records.size());
    result.stress = emb.stress;
  }
  return result;
}

void write_histogram_csv(const diversity::Histogram<double>& h, const fs::path& path) {
  auto out = open_out(path);
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    out << format_double(h.bin_edges[i]) << ',' << format_double(h.bin_edges[i + 1]) << ',' << h.counts[i] << '\n';
}

void write_spectrum_csv(const diversity::EigenSpectrum<double>& s, const fs::path& path) {
  auto out = open_out(path);
  out << "rank,eigenvalue\n";
  for (std::size_t i = 0; i < s.eigenvalues.size(); ++i) out << (i + 1) << ',' << format_double(s.eigenvalues[i]) << '\n';
}

std::vector<fs::path> write_comparison(const ComparisonResult& result, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto& c = result.comparison;
  std::vector<fs::path> paths;
  paths.push_back(out_dir / ("histogram_" + c.name_a + ".csv"));
  write_histogram_csv(c.histogram_a, paths.back());
  paths.push_back(out_dir / ("histogram_" + c.name_b + ".csv"));
  write_histogram_csv(c.histogram_b, paths.back());
  paths.push_back(out_dir / ("spectrum_" + c.name_a + ".csv"));
  write_spectrum_csv(c.spectrum_a, paths.back());
  paths.push_back(out_dir / ("spectrum_" + c.name_b + ".csv"));
  write_spectrum_csv(c.spectrum_b, paths.back());
  for (const auto* e : {&result.embedding_a, &result.embedding_b}) {
    if (e->ids.empty()) continue;
    paths.push_back(out_dir / ("embedding_" + e->name + ".csv"));
    write_embedding_csv(*e, paths.back());
  }
  json dominance = json::array();
  for (bool d : c.dominance) dominance.push_back(d);
  json summary{{"sets", {c.name_a, c.name_b}},
               {"mean_pair_dist", {c.mean_a, c.mean_b}},
               {"median_pair_dist", {c.median_a, c.median_b}},
               {"eigenvalues", {c.spectrum_a.eigenvalues, c.spectrum_b.eigenvalues}},
               {"eig_sum", {c.spectrum_a.top_sum(), c.spectrum_b.top_sum()}},
               {"total_variance", {c.spectrum_a.total_variance, c.spectrum_b.total_variance}},
               {"dominance", dominance},
               {"mds_stress", result.stress}};
  paths.push_back(out_dir / "comparison.json");
  auto out = open_out(paths.back());
  out << summary.dump(1) << '\n';
  return paths;
}

}  // namespace divmix::experiment
