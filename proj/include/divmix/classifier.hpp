#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "divmix/corpus.hpp"
#include "divmix/gist.hpp"

namespace divmix::classifier {

using Matrix = Eigen::MatrixXd;
using Labels = std::vector<int>;

/// Class index of every record, resolved against `classes`; throws
/// ValidationError for labels not in the list.
Labels labels_for(const Manifest& m, const std::vector<std::string>& classes);

struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd std;  // floored at 1e-8
  std::uint64_t params_hash = 0;

  Matrix apply(const Matrix& x) const;
};

struct Standardized {
  Matrix train;
  std::vector<Matrix> others;
  Standardizer stats;
};

/// Per-dimension z-scoring with statistics taken from `train` only.
Standardized standardize(const gist::DescriptorSet& train, const std::vector<gist::DescriptorSet>& others = {});

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 200;
  int batch_size = 32;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

/// Linear softmax; weights are classes x (dim + 1) with the bias last.
struct SoftmaxModel {
  Matrix weights;
  std::vector<std::string> classes;
  std::uint64_t params_hash = 0;

  Matrix scores(const Matrix& x) const;
  /// Argmax per row, ties to the lowest class index.
  Labels predict(const Matrix& x) const;
};

/// Mean cross-entropy over the rows plus (l2/2) * |W|^2 over non-bias
/// weights, and its gradient with respect to the full weight matrix.
struct LossGradient {
  double loss = 0.0;
  Matrix gradient;
};

LossGradient softmax_loss_gradient(const Matrix& weights, const Matrix& x, const Labels& y, double l2);
double softmax_loss(const Matrix& weights, const Matrix& x, const Labels& y, double l2);

struct TrainResult {
  SoftmaxModel model;
  std::vector<double> loss_history;  // [0] before training, [e + 1] after epoch e
};

/// Mini-batch gradient descent from zero weights. Each epoch visits the rows
/// in a permutation keyed by (seed, epoch).
TrainResult train_softmax(const Matrix& x, const Labels& y, const std::vector<std::string>& classes,
                          const TrainConfig& cfg, std::uint64_t params_hash = 0);

/// Largest relative error between the analytic gradient and central
/// differences (h = 1e-5) over 100 random coordinates, at random weights
/// drawn from cfg.seed.
double gradient_check(const Matrix& x, const Labels& y, int n_classes, const TrainConfig& cfg);

struct EvalResult {
  double top1_accuracy = 0.0;
  std::map<std::string, double> per_class_accuracy;  // classes present in the test labels
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic> confusion;  // rows: truth, cols: prediction
};

EvalResult evaluate(const SoftmaxModel& model, const Matrix& x, const Labels& y);

/// Euclidean k-NN with majority vote; vote ties go to the class with the
/// smaller mean neighbour distance, then to the lower class index.
EvalResult knn_evaluate(const Matrix& train_x, const Labels& train_y, const Matrix& test_x, const Labels& test_y,
                        int k, const std::vector<std::string>& classes);

/// JSON model file: classes, feature params hash, standardisation vectors and
/// row-major weights.
void save_model(const SoftmaxModel& model, const Standardizer& stats, const std::filesystem::path& path);
std::pair<SoftmaxModel, Standardizer> load_model(const std::filesystem::path& path);

}  // namespace divmix::classifier
