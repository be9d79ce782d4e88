#include "divmix/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "divmix/error.hpp"
#include "divmix/rng.hpp"
#include "json.hpp"

namespace divmix::classifier {

namespace {
constexpr double kStdFloor = 1e-8;
constexpr std::uint64_t kEpochStream = 0xe90c;
constexpr std::uint64_t kCheckStream = 0x9c4e;

void check_labels(const Labels& y, Eigen::Index rows, int n_classes) {
  if (static_cast<Eigen::Index>(y.size()) != rows) throw ValidationError("label count does not match feature rows");
  for (int label : y)
    if (label < 0 || label >= n_classes) throw ValidationError("label " + std::to_string(label) + " is not a known class");
}

// Shifted scores x * W' + b - rowmax, plus each row's log-sum-exp of them.
struct Forward {
  Matrix shifted;
  Eigen::VectorXd lse;
};

Forward forward(const Matrix& weights, const Matrix& x) {
  const Eigen::Index d = x.cols();
  Forward f;
  f.shifted = x * weights.leftCols(d).transpose();
  f.shifted.rowwise() += weights.col(d).transpose();
  f.shifted.colwise() -= f.shifted.rowwise().maxCoeff();
  f.lse = f.shifted.array().exp().rowwise().sum().log().matrix();
  return f;
}

double loss_from(const Forward& f, const Labels& y, const Matrix& weights, Eigen::Index d, double l2) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < f.shifted.rows(); ++i) total += f.lse[i] - f.shifted(i, y[static_cast<std::size_t>(i)]);
  return total / static_cast<double>(f.shifted.rows()) + 0.5 * l2 * weights.leftCols(d).squaredNorm();
}
}  // namespace

Labels labels_for(const Manifest& m, const std::vector<std::string>& classes) {
  Labels y;
  y.reserve(m.records.size());
  for (const auto& r : m.records) {
    auto it = std::find(classes.begin(), classes.end(), r.class_label);
    if (it == classes.end())
      throw ValidationError("record '" + r.id + "' has label '" + r.class_label + "' unknown to the model");
    y.push_back(static_cast<int>(it - classes.begin()));
  }
  return y;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.cols()) throw ValidationError("standardizer dimension mismatch");
  return ((x.rowwise() - mean).array().rowwise() / std.array()).matrix();
}

Standardized standardize(const gist::DescriptorSet& train, const std::vector<gist::DescriptorSet>& others) {
  if (train.size() < 1) throw ValidationError("standardize needs a non-empty train set");
  for (const auto& o : others)
    if (o.params_hash != train.params_hash) throw ValidationError("standardize: GIST params hash mismatch");
  Standardized out;
  const Matrix x = train.matrix.cast<double>();
  out.stats.params_hash = train.params_hash;
  out.stats.mean = x.colwise().mean();
  out.stats.std = ((x.rowwise() - out.stats.mean).array().square().colwise().mean()).sqrt().max(kStdFloor).matrix();
  out.train = out.stats.apply(x);
  for (const auto& o : others) out.others.push_back(out.stats.apply(o.matrix.cast<double>()));
  return out;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("train.learning_rate must be > 0");
  if (cfg.epochs < 0) throw ValidationError("train.epochs must be >= 0");
  if (cfg.batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
  if (!(cfg.l2 >= 0.0)) throw ValidationError("train.l2 must be >= 0");
}

Matrix SoftmaxModel::scores(const Matrix& x) const {
  const Eigen::Index d = weights.cols() - 1;
  if (x.cols() != d) throw ValidationError("feature dimension does not match the model");
  Matrix s = x * weights.leftCols(d).transpose();
  s.rowwise() += weights.col(d).transpose();
  return s;
}

Labels SoftmaxModel::predict(const Matrix& x) const {
  const Matrix s = scores(x);
  Labels out(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < s.cols(); ++c)
      if (s(i, c) > s(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double softmax_loss(const Matrix& weights, const Matrix& x, const Labels& y, double l2) {
  check_labels(y, x.rows(), static_cast<int>(weights.rows()));
  return loss_from(forward(weights, x), y, weights, x.cols(), l2);
}

LossGradient softmax_loss_gradient(const Matrix& weights, const Matrix& x, const Labels& y, double l2) {
  check_labels(y, x.rows(), static_cast<int>(weights.rows()));
  const Eigen::Index d = x.cols();
  const auto n = static_cast<double>(x.rows());
  const Forward f = forward(weights, x);
  LossGradient out;
  out.loss = loss_from(f, y, weights, d, l2);
  // P - Y
  Matrix residual = (f.shifted.colwise() - f.lse).array().exp().matrix();
  for (Eigen::Index i = 0; i < x.rows(); ++i) residual(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  out.gradient.resize(weights.rows(), weights.cols());
  out.gradient.leftCols(d) = residual.transpose() * x / n + l2 * weights.leftCols(d);
  out.gradient.col(d) = residual.colwise().sum().transpose() / n;
  return out;
}

TrainResult train_softmax(const Matrix& x, const Labels& y, const std::vector<std::string>& classes,
                          const TrainConfig& cfg, std::uint64_t params_hash) {
  validate(cfg);
  const int n_classes = static_cast<int>(classes.size());
  if (n_classes < 2) throw ValidationError("training needs at least 2 classes");
  check_labels(y, x.rows(), n_classes);
  std::vector<bool> present(static_cast<std::size_t>(n_classes), false);
  for (int label : y) present[static_cast<std::size_t>(label)] = true;
  for (int c = 0; c < n_classes; ++c)
    if (!present[static_cast<std::size_t>(c)])
      throw ValidationError("class '" + classes[static_cast<std::size_t>(c)] + "' has no training rows");

  TrainResult result;
  auto& model = result.model;
  model.classes = classes;
  model.params_hash = params_hash;
  model.weights = Matrix::Zero(n_classes, x.cols() + 1);
  result.loss_history.push_back(softmax_loss(model.weights, x, y, cfg.l2));

  const auto n = static_cast<std::size_t>(x.rows());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  Matrix xb;
  Labels yb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng{cfg.seed, static_cast<std::uint64_t>(epoch), kEpochStream};
    const auto perm = random_permutation(n, rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      xb.resize(static_cast<Eigen::Index>(len), x.cols());
      yb.resize(len);
      for (std::size_t t = 0; t < len; ++t) {
        xb.row(static_cast<Eigen::Index>(t)) = x.row(static_cast<Eigen::Index>(perm[start + t]));
        yb[t] = y[perm[start + t]];
      }
      model.weights -= cfg.learning_rate * softmax_loss_gradient(model.weights, xb, yb, cfg.l2).gradient;
    }
    const double loss = softmax_loss(model.weights, x, y, cfg.l2);
    if (!std::isfinite(loss) || !model.weights.allFinite())
      throw RuntimeError("diverged at epoch " + std::to_string(epoch));
    result.loss_history.push_back(loss);
  }
  return result;
}

double gradient_check(const Matrix& x, const Labels& y, int n_classes, const TrainConfig& cfg) {
  check_labels(y, x.rows(), n_classes);
  Rng rng{cfg.seed, kCheckStream};
  Matrix w(n_classes, x.cols() + 1);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = 0.1 * rng.normal();
  const Matrix analytic = softmax_loss_gradient(w, x, y, cfg.l2).gradient;

  const auto total = static_cast<std::size_t>(w.size());
  const auto coords = random_permutation(total, rng);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t t = 0; t < std::min<std::size_t>(100, total); ++t) {
    const auto k = static_cast<Eigen::Index>(coords[t]);
    const double saved = w.data()[k];
    w.data()[k] = saved + h;
    const double up = softmax_loss(w, x, y, cfg.l2);
    w.data()[k] = saved - h;
    const double down = softmax_loss(w, x, y, cfg.l2);
    w.data()[k] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.data()[k];
    worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}));
  }
  return worst;
}

namespace {
EvalResult summarize(const Labels& truth, const Labels& pred, const std::vector<std::string>& classes) {
  const auto c = static_cast<Eigen::Index>(classes.size());
  EvalResult r;
  r.confusion.setZero(c, c);
  for (std::size_t i = 0; i < truth.size(); ++i) ++r.confusion(truth[i], pred[i]);
  const long long total = r.confusion.sum();
  r.top1_accuracy = total ? static_cast<double>(r.confusion.trace()) / static_cast<double>(total) : 0.0;
  for (Eigen::Index k = 0; k < c; ++k) {
    const long long row = r.confusion.row(k).sum();
    if (row > 0) r.per_class_accuracy[classes[static_cast<std::size_t>(k)]] = static_cast<double>(r.confusion(k, k)) / row;
  }
  return r;
}
}  // namespace

EvalResult evaluate(const SoftmaxModel& model, const Matrix& x, const Labels& y) {
  check_labels(y, x.rows(), static_cast<int>(model.classes.size()));
  return summarize(y, model.predict(x), model.classes);
}

EvalResult knn_evaluate(const Matrix& train_x, const Labels& train_y, const Matrix& test_x, const Labels& test_y,
                        int k, const std::vector<std::string>& classes) {
  if (train_x.rows() == 0) throw ValidationError("k-NN needs a non-empty train set");
  if (k < 1 || k > train_x.rows()) throw ValidationError("k-NN needs 1 <= k <= train size");
  if (train_x.cols() != test_x.cols()) throw ValidationError("k-NN feature dimension mismatch");
  const int n_classes = static_cast<int>(classes.size());
  check_labels(train_y, train_x.rows(), n_classes);
  check_labels(test_y, test_x.rows(), n_classes);

  Labels pred(static_cast<std::size_t>(test_x.rows()));
  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(train_x.rows()));
  for (Eigen::Index i = 0; i < test_x.rows(); ++i) {
    for (Eigen::Index j = 0; j < train_x.rows(); ++j)
      dist[static_cast<std::size_t>(j)] = {(train_x.row(j) - test_x.row(i)).norm(), j};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::vector<int> votes(static_cast<std::size_t>(n_classes), 0);
    std::vector<double> dist_sum(static_cast<std::size_t>(n_classes), 0.0);
    for (int t = 0; t < k; ++t) {
      const auto label = static_cast<std::size_t>(train_y[static_cast<std::size_t>(dist[static_cast<std::size_t>(t)].second)]);
      ++votes[label];
      dist_sum[label] += dist[static_cast<std::size_t>(t)].first;
    }
    int best = -1;
    for (int c = 0; c < n_classes; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      if (votes[uc] == 0) continue;
      if (best < 0) {
        best = c;
        continue;
      }
      const auto ub = static_cast<std::size_t>(best);
      if (votes[uc] > votes[ub] ||
          (votes[uc] == votes[ub] && dist_sum[uc] / votes[uc] < dist_sum[ub] / votes[ub]))
        best = c;
    }
    pred[static_cast<std::size_t>(i)] = best;
  }
  return summarize(test_y, pred, classes);
}

void save_model(const SoftmaxModel& model, const Standardizer& stats, const std::filesystem::path& path) {
  using nlohmann::json;
  auto row = [](const Eigen::RowVectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::vector<double> w;
  for (Eigen::Index r = 0; r < model.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < model.weights.cols(); ++c) w.push_back(model.weights(r, c));
  json j{{"format", "divmix-softmax/1"},
         {"classes", model.classes},
         {"params_hash", model.params_hash},
         {"rows", model.weights.rows()},
         {"cols", model.weights.cols()},
         {"mean", row(stats.mean)},
         {"std", row(stats.std)},
         {"weights", w}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot write model '" + path.string() + "'");
  out << j.dump(1) << '\n';
}

std::pair<SoftmaxModel, Standardizer> load_model(const std::filesystem::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model '" + path.string() + "'");
  SoftmaxModel model;
  Standardizer stats;
  try {
    const json j = json::parse(in);
    model.classes = j.at("classes").get<std::vector<std::string>>();
    model.params_hash = j.at("params_hash").get<std::uint64_t>();
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto w = j.at("weights").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols) throw ValidationError("model weight count mismatch");
    model.weights.resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) model.weights(r, c) = w[static_cast<std::size_t>(r * cols + c)];
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto std = j.at("std").get<std::vector<double>>();
    stats.mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    stats.std = Eigen::Map<const Eigen::RowVectorXd>(std.data(), static_cast<Eigen::Index>(std.size()));
    stats.params_hash = model.params_hash;
  } catch (const json::exception& e) {
    throw ValidationError("malformed model '" + path.string() + "': " + e.what());
  }
  return {std::move(model), std::move(stats)};
}

}  // namespace divmix::classifier
