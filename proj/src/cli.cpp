#include "divmix/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "divmix/descriptor_cache.hpp"
#include "divmix/error.hpp"
#include "divmix/experiment.hpp"
#include "divmix/log.hpp"
#include "divmix/parallel.hpp"
#include "divmix/partition.hpp"
#include "divmix/synth.hpp"
#include "format.hpp"

namespace divmix::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  return json::parse(R"({
    "out": "divmix-out",
    "seed": 0,
    "threads": 0,
    "manifest": "",
    "test_manifest": "",
    "synth": {
      "objects": ["car", "ball"],
      "train_distribution": "child",
      "test_distribution": "canonical",
      "train_count": 100,
      "test_count": 20,
      "image_side": 128
    },
    "gist": {"image_side": 128, "orientations_per_scale": [8, 8, 8, 8], "blocks": 4, "prefilter_cutoff": 4.0},
    "diversity": {"split": "all", "bins": 50, "k": 10},
    "compare": {"manifest_a": "", "manifest_b": "", "name_a": "a", "name_b": "b", "bins": 50, "k": 10},
    "sweep": {"p_grid": [0, 0.25, 0.5, 0.75, 1], "n_grid": [25, 50, 100, 200], "seeds": [0, 1, 2, 3, 4],
              "include_random": true, "include_full": true},
    "train": {"learning_rate": 0.1, "epochs": 200, "batch_size": 32, "l2": 0.0001}
  })");
}

namespace {

const char* const kPathKeys[] = {"out", "manifest", "test_manifest", "compare.manifest_a", "compare.manifest_b"};

json::json_pointer pointer(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    p += "/" + dotted.substr(start, dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return json::json_pointer(p);
}

void check_keys(const json& defaults, const json& given, const std::string& prefix) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ValidationError("unknown config key '" + key + "'");
    const auto& d = defaults[it.key()];
    if (d.is_object()) {
      if (!it->is_object()) throw ValidationError("config key '" + key + "' must be an object");
      check_keys(d, *it, key);
    }
  }
}

template <class T>
T get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(pointer(key)).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config key '" + key + "': " + e.what());
  }
}

fs::path required_path(const json& cfg, const std::string& key) {
  auto s = get<std::string>(cfg, key);
  if (s.empty()) throw ValidationError("config key '" + key + "' is required for this subcommand");
  return s;
}

// Rethrows a module validation failure with the config key it came from.
template <class F>
auto keyed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ParseError&) {
    throw;
  } catch (const ValidationError& e) {
    throw ValidationError("config key '" + key + "': " + e.what());
  }
}

gist::GistParams gist_params(const json& cfg) {
  gist::GistParams p;
  p.image_side = get<int>(cfg, "gist.image_side");
  p.orientations_per_scale = get<std::vector<int>>(cfg, "gist.orientations_per_scale");
  p.blocks = get<int>(cfg, "gist.blocks");
  p.prefilter_cutoff = get<double>(cfg, "gist.prefilter_cutoff");
  gist::validate(p);
  return p;
}

classifier::TrainConfig train_config(const json& cfg) {
  classifier::TrainConfig t;
  t.learning_rate = get<double>(cfg, "train.learning_rate");
  t.epochs = get<int>(cfg, "train.epochs");
  t.batch_size = get<int>(cfg, "train.batch_size");
  t.l2 = get<double>(cfg, "train.l2");
  t.seed = get<std::uint64_t>(cfg, "seed");
  classifier::validate(t);
  return t;
}

synth::ViewDistribution distribution(const json& cfg, const std::string& key) {
  const json& v = cfg.at(pointer(key));
  return keyed(key, [&] {
    if (v.is_string()) return synth::preset_distribution(v.get<std::string>());
    if (!v.is_object()) throw ValidationError("expected a preset name or an object");
    synth::ViewDistribution d = synth::preset_distribution(v.value("preset", std::string("child")));
    for (auto it = v.begin(); it != v.end(); ++it) {
      const auto& k = it.key();
      if (k == "preset") continue;
      if (!it->is_number()) throw ValidationError("field '" + k + "' must be a number");
      const double x = it->get<double>();
      if (k == "azimuth_mean") d.azimuth_mean = x;
      else if (k == "elevation_mean") d.elevation_mean = x;
      else if (k == "concentration") d.concentration = x;
      else if (k == "outlier_fraction") d.outlier_fraction = x;
      else if (k == "scale_min") d.scale_min = x;
      else if (k == "scale_max") d.scale_max = x;
      else throw ValidationError("unknown field '" + k + "'");
    }
    synth::validate(d);
    return d;
  });
}

synth::ObjectSpec object_spec(const json& v, const std::string& key) {
  return keyed(key, [&] {
    if (v.is_string()) return synth::preset_object(v.get<std::string>());
    try {
      synth::ObjectSpec o;
      o.name = v.at("name").get<std::string>();
      for (const auto& p : v.at("parts")) {
        synth::Part part;
        const auto shape = p.at("shape").get<std::string>();
        if (shape == "cuboid") part.shape = synth::Shape::cuboid;
        else if (shape == "ellipsoid") part.shape = synth::Shape::ellipsoid;
        else throw ValidationError("unknown shape '" + shape + "'");
        const auto c = p.at("center").get<std::vector<double>>();
        const auto h = p.at("half_extents").get<std::vector<double>>();
        if (c.size() != 3 || h.size() != 3) throw ValidationError("center and half_extents need 3 values");
        part.center = {c[0], c[1], c[2]};
        part.half_extents = {h[0], h[1], h[2]};
        part.albedo = p.value("albedo", 1.0);
        o.parts.push_back(part);
      }
      synth::validate(o);
      return o;
    } catch (const json::exception& e) {
      throw ValidationError(e.what());
    }
  });
}

fs::path cache_dir(const fs::path& out) {
  if (const char* env = std::getenv("DIVMIX_CACHE_DIR"); env && *env) return env;
  return out / "cache";
}

Manifest load(const json& cfg, const std::string& key) {
  const auto path = required_path(cfg, key);
  if (!fs::exists(path)) throw ValidationError("config key '" + key + "': manifest '" + path.string() + "' not found");
  return load_manifest(path);
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw RuntimeError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

gist::DescriptorSet descriptors(const Manifest& m, const gist::GistParams& params, const fs::path& out,
                                const std::string& role, int threads) {
  experiment::RunOptions ro{cache_dir(out), threads};
  fs::create_directories(*ro.cache_dir);
  return gist::batch_descriptors(m, params, experiment::descriptor_cache_path(ro, role, m, params), threads);
}

void cmd_synth(const json& cfg, const fs::path& out, int threads) {
  synth::CorpusSpec spec;
  const auto objects = cfg.at("/synth/objects"_json_pointer);
  if (!objects.is_array() || objects.empty()) throw ValidationError("config key 'synth.objects' must be a non-empty list");
  for (std::size_t i = 0; i < objects.size(); ++i)
    spec.objects.push_back(object_spec(objects[i], "synth.objects[" + std::to_string(i) + "]"));
  spec.distributions[Split::train] = distribution(cfg, "synth.train_distribution");
  spec.distributions[Split::test] = distribution(cfg, "synth.test_distribution");
  spec.counts[Split::train] = get<std::size_t>(cfg, "synth.train_count");
  if (const auto n = get<std::size_t>(cfg, "synth.test_count")) spec.counts[Split::test] = n;
  spec.seed = get<std::uint64_t>(cfg, "seed");
  spec.image_side = get<int>(cfg, "synth.image_side");
  const auto m = synth::generate_corpus(spec, out, threads);
  log::info("synth: wrote " + std::to_string(m.records.size()) + " images to " + out.string());
}

void cmd_gist(const json& cfg, const fs::path& out, int threads) {
  const auto m = load(cfg, "manifest");
  const auto params = gist_params(cfg);
  const auto set = descriptors(m, params, out, "gist", threads);
  write_cache(set, out / "descriptors.gstc");
  std::ofstream csv(out / "descriptors.csv");
  csv << "id";
  for (Eigen::Index j = 0; j < set.matrix.cols(); ++j) csv << ",g" << j;
  csv << '\n';
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    csv << set.ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < set.matrix.cols(); ++j)
      csv << ',' << format_double(static_cast<double>(set.matrix(i, j)));
    csv << '\n';
  }
  log::info("gist: " + std::to_string(set.size()) + " descriptors written");
}

void cmd_diversity(const json& cfg, const fs::path& out, int threads) {
  Manifest m = load(cfg, "manifest");
  const auto split = get<std::string>(cfg, "diversity.split");
  if (split != "all") {
    const auto s = parse_split(split);
    if (!s) throw ValidationError("config key 'diversity.split': expected all, train, val or test");
    m = split_manifest(m, *s);
  }
  if (m.records.size() < 3) throw ValidationError("diversity needs at least 3 records, got " + std::to_string(m.records.size()));
  const auto bins = get<int>(cfg, "diversity.bins");
  const auto k = get<int>(cfg, "diversity.k");
  const auto set = descriptors(m, gist_params(cfg), out, "diversity", threads);

  const auto dm = diversity::pairwise_distances(set.matrix, threads);
  const auto hist = keyed("diversity.bins", [&] { return diversity::distance_histogram(dm, bins); });
  const auto spec = keyed("diversity.k", [&] { return diversity::pca_spectrum(set.matrix, k); });
  const auto emb = diversity::mds_embed(dm, set.ids);
  experiment::write_histogram_csv(hist, out / "histogram.csv");
  experiment::write_spectrum_csv(spec, out / "spectrum.csv");
  experiment::write_embedding_csv(experiment::make_embedding("all", m, emb), out / "embedding.csv");

  json per_class = json::object();
  for (const auto& cls : m.classes) {
    std::vector<std::string> ids;
    for (const auto& r : m.records)
      if (r.class_label == cls) ids.push_back(r.id);
    if (ids.size() < 2) continue;
    const auto sub = set.select(set.rows_for(ids));
    const auto s = diversity::pca_spectrum(sub.matrix, k);
    per_class[cls] = {{"n", ids.size()},
                      {"mean_pair_dist", diversity::pairwise_distances(sub.matrix).mean()},
                      {"eig_sum", s.top_sum()}};
  }
  write_json({{"n", m.records.size()},
              {"pairs", dm.condensed.size()},
              {"mean_pair_dist", dm.mean()},
              {"median_pair_dist", dm.median()},
              {"eigenvalues", spec.eigenvalues},
              {"eig_sum", spec.top_sum()},
              {"total_variance", spec.total_variance},
              {"mds_stress", emb.stress},
              {"per_class", per_class}},
             out / "diversity.json");
}

void cmd_partition(const json& cfg, const fs::path& out, int threads) {
  const auto m = split_manifest(load(cfg, "manifest"), Split::train);
  if (m.records.empty()) throw ValidationError("config key 'manifest': no train records to partition");
  const auto set = descriptors(m, gist_params(cfg), out, "partition", threads);
  const auto labels = partition::split_similar_diverse(set, m);
  partition::write_partition_csv(labels, m, out / "partition.csv");
  json summary = json::object();
  for (const auto& [cls, counts] : labels.per_class_counts)
    summary[cls] = {{"medoid", labels.medoid.at(cls)}, {"similar", counts.similar}, {"diverse", counts.diverse}};
  write_json(summary, out / "partition.json");
}

void cmd_sweep(const json& cfg, const fs::path& out, int threads) {
  const auto train = load(cfg, "manifest");
  const auto test = get<std::string>(cfg, "test_manifest").empty() ? train : load(cfg, "test_manifest");
  experiment::SweepConfig sweep;
  sweep.p_grid = get<std::vector<double>>(cfg, "sweep.p_grid");
  sweep.n_grid = get<std::vector<std::size_t>>(cfg, "sweep.n_grid");
  sweep.seeds = get<std::vector<std::uint64_t>>(cfg, "sweep.seeds");
  sweep.include_random = get<bool>(cfg, "sweep.include_random");
  sweep.include_full = get<bool>(cfg, "sweep.include_full");
  const auto params = gist_params(cfg);
  const auto tc = train_config(cfg);
  experiment::RunOptions ro{cache_dir(out), threads};
  fs::create_directories(*ro.cache_dir);
  auto report = experiment::run_mixture_sweep(train, test, params, sweep, tc, ro);
  report.config = cfg;
  experiment::write_report(report, out);
  const auto claims = experiment::sweep_claims(report);
  experiment::write_claims(claims, out / "claims.csv");
  for (const auto& c : claims) log::info("claim " + c.name + ": " + (c.pass ? "pass" : "fail"));
}

void cmd_compare(const json& cfg, const fs::path& out, int threads) {
  const auto a = load(cfg, "compare.manifest_a");
  const auto b = load(cfg, "compare.manifest_b");
  experiment::ComparisonOptions opt;
  opt.name_a = get<std::string>(cfg, "compare.name_a");
  opt.name_b = get<std::string>(cfg, "compare.name_b");
  if (opt.name_a.empty() || opt.name_a == opt.name_b)
    throw ValidationError("config keys 'compare.name_a' and 'compare.name_b' must be distinct and non-empty");
  opt.bins = get<int>(cfg, "compare.bins");
  opt.k = get<int>(cfg, "compare.k");
  opt.run = {cache_dir(out), threads};
  fs::create_directories(*opt.run.cache_dir);
  const auto result = experiment::run_diversity_comparison(a, b, gist_params(cfg), opt);
  experiment::write_comparison(result, out);
}

void resolve_paths(json& cfg, const fs::path& base) {
  for (const char* key : kPathKeys) {
    auto& v = cfg.at(pointer(key));
    if (!v.is_string()) throw ValidationError(std::string("config key '") + key + "' must be a string");
    const fs::path p = v.get<std::string>();
    if (!p.empty() && p.is_relative()) v = (base / p).lexically_normal().string();
  }
}

}  // namespace

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config '" + path.string() + "'");
  json given;
  try {
    given = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!given.is_object()) throw ValidationError("config '" + path.string() + "' must hold a JSON object");
  json cfg = default_config();
  check_keys(cfg, given, "");
  cfg.merge_patch(given);
  resolve_paths(cfg, fs::absolute(path).parent_path());
  return cfg;
}

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  const auto ptr = pointer(key);
  if (!cfg.contains(ptr)) throw ValidationError("unknown config key '" + key + "'");
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  if (cfg.at(ptr).is_object() && !value.is_object())
    throw ValidationError("config key '" + key + "' is a section and needs a JSON object");
  cfg[ptr] = value;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Diversity-aware training set curation toolkit", "divmix"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(experiment::kToolkitVersion));

  std::optional<std::string> config_path, out_dir;
  std::vector<std::string> overrides;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  bool verbose = false, quiet = false;

  const std::pair<const char*, const char*> commands[] = {
      {"synth", "Render a synthetic corpus and its manifest"},
      {"gist", "Extract GIST descriptors for a manifest"},
      {"diversity", "Distance histogram, eigen-spectrum and MDS embedding of a manifest"},
      {"partition", "Split each class into similar and diverse halves"},
      {"sweep", "Run the mixture sweep and write the report"},
      {"compare", "Compare the diversity of two corpora"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "Override a config key, e.g. --set gist.blocks=2");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--threads", threads, "Worker threads (0 = all cores)");
    sub->add_option("--seed", seed, "Seed override");
    sub->add_flag("-v,--verbose", verbose, "Debug logging");
    sub->add_flag("-q,--quiet", quiet, "Only warnings and errors");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  log::set_level(quiet ? log::Level::quiet : verbose ? log::Level::debug : log::Level::info);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    json cfg = config_path ? load_config(*config_path) : [] {
      json d = default_config();
      resolve_paths(d, fs::current_path());
      return d;
    }();
    for (const auto& o : overrides) apply_override(cfg, o);
    if (out_dir) cfg["out"] = *out_dir;
    if (threads) cfg["threads"] = *threads;
    if (seed) cfg["seed"] = *seed;
    resolve_paths(cfg, fs::current_path());

    const fs::path out = required_path(cfg, "out");
    const int nthreads = resolve_threads(get<int>(cfg, "threads"));
    fs::create_directories(out);
    json echo = cfg;
    echo["command"] = command;
    echo["version"] = experiment::kToolkitVersion;
    write_json(echo, out / "config.json");

    if (command == "synth") cmd_synth(cfg, out, nthreads);
    else if (command == "gist") cmd_gist(cfg, out, nthreads);
    else if (command == "diversity") cmd_diversity(cfg, out, nthreads);
    else if (command == "partition") cmd_partition(cfg, out, nthreads);
    else if (command == "sweep") cmd_sweep(cfg, out, nthreads);
    else cmd_compare(cfg, out, nthreads);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "divmix " << command << ": error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "divmix " << command << ": error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace divmix::cli
