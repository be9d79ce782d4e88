#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "divmix/classifier.hpp"
#include "divmix/corpus.hpp"
#include "divmix/diversity.hpp"
#include "divmix/gist.hpp"
#include "json.hpp"

namespace divmix::experiment {

inline constexpr const char* kToolkitVersion = "divmix 1.0.0";

struct SweepConfig {
  std::vector<double> p_grid{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::size_t> n_grid{25, 50, 100, 200};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  bool include_random = true;
  bool include_full = true;
};

void validate(const SweepConfig& cfg);

struct RunOptions {
  std::optional<std::filesystem::path> cache_dir;  // descriptor caches
  int threads = 1;
};

/// Cache file for a manifest's descriptors, keyed by params and record files;
/// nullopt when no cache directory is configured.
std::optional<std::filesystem::path> descriptor_cache_path(const RunOptions& options, const std::string& role,
                                                           const Manifest& m, const gist::GistParams& params);

/// One trained-and-evaluated subset. `label` is the similar fraction p in
/// shortest decimal form, or "random" / "original" for the baselines.
struct CellRecord {
  std::string label;
  std::size_t n = 0;  // per class; the full pool's smallest class for "original"
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double mean_pair_dist = 0.0;  // within-class mean GIST distance, averaged over classes
  double eig10_sum = 0.0;       // within-class top-10 eigenvalue sum, averaged over classes

  bool operator==(const CellRecord&) const = default;
};

struct AggregateRecord {
  std::string label;
  std::size_t n = 0;
  std::size_t count = 0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;  // sample standard deviation, 0 for a single seed
  double mean_pair_dist_mean = 0.0;
  double eig10_sum_mean = 0.0;

  bool operator==(const AggregateRecord&) const = default;
};

struct NamedEmbedding {
  std::string name;
  std::vector<std::string> ids;
  std::vector<std::string> classes;
  std::vector<double> size_fraction;  // NaN when the record has none
  std::vector<double> x, y;

  bool operator==(const NamedEmbedding&) const = default;
};

struct ExperimentReport {
  std::vector<CellRecord> cells;
  std::vector<AggregateRecord> aggregates;
  std::vector<NamedEmbedding> embeddings;
  nlohmann::json config;  // echo of the run configuration
  std::string version = kToolkitVersion;
  std::string timestamp;  // report.json metadata only

  bool operator==(const ExperimentReport&) const = default;
};

std::string cell_label(double p);

/// Mean and sample std per (label, n), in order of first appearance.
std::vector<AggregateRecord> aggregate(const std::vector<CellRecord>& cells);

/// The p x n x seed mixture grid plus the requested baselines. Descriptors
/// are computed (or loaded from cache) once for each manifest and the
/// partition once; every cell then samples, standardises on its own subset,
/// trains and scores against the fixed test split.
ExperimentReport run_mixture_sweep(const Manifest& train, const Manifest& test, const gist::GistParams& params,
                                   const SweepConfig& sweep, const classifier::TrainConfig& train_cfg,
                                   const RunOptions& options = {});

/// Outcome of one qualitative claim evaluated on a report.
struct ClaimCheck {
  std::string name;
  std::string description;
  double lhs = 0.0;
  double rhs = 0.0;
  bool pass = false;
};

/// Mean accuracy of a (label, n) cell group; nullopt when absent.
std::optional<double> mean_accuracy(const ExperimentReport& report, const std::string& label, std::size_t n);

/// Mixture-sweep claims: diverse-only beats similar-only at the smallest n by
/// `min_gap`; the best mixed p at `mid_n` is within `tolerance` of the better
/// pure subset; the absolute diverse/similar gap at the largest n is below
/// the one at the smallest; the best mixed p at `mid_n` is not below the random baseline.
/// Claims whose cells are missing from the report are omitted.
std::vector<ClaimCheck> sweep_claims(const ExperimentReport& report, std::size_t mid_n = 100, double min_gap = 0.03,
                                     double tolerance = 0.01);

/// cells.csv, aggregate.csv, report.json and embedding_<name>.csv; returns
/// the written paths.
std::vector<std::filesystem::path> write_report(const ExperimentReport& report, const std::filesystem::path& out_dir);
void write_claims(const std::vector<ClaimCheck>& claims, const std::filesystem::path& path);
ExperimentReport read_report(const std::filesystem::path& report_json);

nlohmann::json to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);

// Diversity comparison between two corpora.

struct ComparisonOptions {
  std::string name_a = "a";
  std::string name_b = "b";
  int bins = 50;
  int k = 10;
  RunOptions run;
};

struct ComparisonResult {
  diversity::DiversityComparison comparison;
  NamedEmbedding embedding_a, embedding_b;  // one joint MDS, split by set
  double stress = 0.0;
};

ComparisonResult run_diversity_comparison(const Manifest& a, const Manifest& b, const gist::GistParams& params,
                                          const ComparisonOptions& options = {});

/// histogram_<name>.csv, spectrum_<name>.csv, embedding_<name>.csv for both
/// sets and comparison.json.
std::vector<std::filesystem::path> write_comparison(const ComparisonResult& result,
                                                    const std::filesystem::path& out_dir);

void write_histogram_csv(const diversity::Histogram<double>& h, const std::filesystem::path& path);
void write_spectrum_csv(const diversity::EigenSpectrum<double>& s, const std::filesystem::path& path);
void write_embedding_csv(const NamedEmbedding& e, const std::filesystem::path& path);

/// Joint embedding rows for a manifest's records.
NamedEmbedding make_embedding(const std::string& name, const Manifest& m, const diversity::Embedding2D<double>& emb,
                              std::size_t offset = 0);

}  // namespace divmix::experiment
