#include "kvlad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "kvlad/errors.hpp"
#include "kvlad/linalg.hpp"
#include "kvlad/rng.hpp"

namespace kvlad {

namespace {

std::vector<std::uint32_t> sorted_classes(std::span<const std::uint32_t> labels) {
  std::set<std::uint32_t> uniq(labels.begin(), labels.end());
  return {uniq.begin(), uniq.end()};
}

Eigen::MatrixXd one_hot(std::span<const std::uint32_t> labels,
                        const std::vector<std::uint32_t>& classes) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()),
                                            static_cast<Eigen::Index>(classes.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = std::lower_bound(classes.begin(), classes.end(), labels[i]);
    y(static_cast<Eigen::Index>(i), it - classes.begin()) = 1.0;
  }
  return y;
}

// argmax per row, ties to the lowest class index.
std::vector<std::uint32_t> argmax_labels(const Eigen::MatrixXd& scores,
                                         const std::vector<std::uint32_t>& classes) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = classes[static_cast<std::size_t>(best)];
  }
  return out;
}

Eigen::MatrixXd stack_codes(std::span<const VladCode> codes) {
  if (codes.empty()) throw std::invalid_argument("ridge: no codes");
  const Eigen::Index d = codes[0].length();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(codes.size()), d);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i].length() != d)
      throw std::invalid_argument("ridge: code lengths differ");
    x.row(static_cast<Eigen::Index>(i)) = codes[i].flattened();
  }
  return x;
}

}  // namespace

RidgeModel ridge_train(const Eigen::MatrixXd& x, std::span<const std::uint32_t> labels,
                       double lambda) {
  if (static_cast<std::size_t>(x.rows()) != labels.size())
    throw std::invalid_argument("ridge_train: labels do not match rows");
  if (!(lambda > 0.0)) throw std::invalid_argument("ridge_train: lambda must be positive");
  const auto classes = sorted_classes(labels);
  if (classes.size() < 2) throw std::invalid_argument("ridge_train: need >= 2 classes");

  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  Eigen::MatrixXd xa(n, d + 1);
  xa.leftCols(d) = x;
  xa.col(d).setOnes();

  Eigen::MatrixXd a = xa.transpose() * xa / static_cast<double>(n);
  for (Eigen::Index k = 0; k < d; ++k) a(k, k) += lambda;  // bias unregularized
  const Eigen::MatrixXd b =
      xa.transpose() * one_hot(labels, classes) / static_cast<double>(n);

  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericalError("ridge_train: normal equations not positive definite");

  RidgeModel model;
  model.weights = llt.solve(b);
  model.lambda = lambda;
  model.classes = classes;
  if (!model.weights.allFinite())
    throw NumericalError("ridge_train: non-finite weights");
  return model;
}

RidgeModel ridge_train(std::span<const VladCode> codes,
                       std::span<const std::uint32_t> labels, double lambda) {
  return ridge_train(stack_codes(codes), labels, lambda);
}

std::vector<std::uint32_t> ridge_predict(const RidgeModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() + 1 != model.weights.rows())
    throw std::invalid_argument("ridge_predict: dimension mismatch");
  Eigen::MatrixXd scores = x * model.weights.topRows(x.cols());
  scores.rowwise() += model.weights.row(model.weights.rows() - 1);
  return argmax_labels(scores, model.classes);
}

std::vector<std::uint32_t> ridge_predict(const RidgeModel& model,
                                         std::span<const VladCode> codes) {
  return ridge_predict(model, stack_codes(codes));
}

KernelRidgeModel kridge_train(const GramMatrix& gram,
                              std::span<const std::uint32_t> labels, double lambda) {
  const Eigen::Index n = gram.values.rows();
  if (n != gram.values.cols()) throw std::invalid_argument("kridge_train: gram not square");
  if (static_cast<std::size_t>(n) != labels.size())
    throw std::invalid_argument("kridge_train: labels do not match gram rows");
  if (!(lambda > 0.0)) throw std::invalid_argument("kridge_train: lambda must be positive");
  const double scale = std::max(1.0, gram.values.cwiseAbs().maxCoeff());
  if (max_asymmetry(gram.values) > 1e-8 * scale)
    throw DataError("kridge_train: gram matrix is not symmetric");
  const auto classes = sorted_classes(labels);
  if (classes.size() < 2) throw std::invalid_argument("kridge_train: need >= 2 classes");

  // Bordered system for the unregularized offset:
  //   [K + N*lambda*I   1] [alpha]   [Y]
  //   [1^T              0] [  b  ] = [0]
  const Eigen::Index c = static_cast<Eigen::Index>(classes.size());
  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(n + 1, n + 1);
  sys.topLeftCorner(n, n) = gram.values;
  sys.topLeftCorner(n, n).diagonal().array() += static_cast<double>(n) * lambda;
  sys.topRightCorner(n, 1).setOnes();
  sys.bottomLeftCorner(1, n).setOnes();

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 1, c);
  rhs.topRows(n) = one_hot(labels, classes);

  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
  const Eigen::MatrixXd sol = lu.solve(rhs);
  if (!sol.allFinite()) throw NumericalError("kridge_train: singular system");

  KernelRidgeModel model;
  model.dual = sol.topRows(n);
  model.bias = sol.row(n).transpose();
  model.lambda = lambda;
  model.classes = classes;
  model.training_ids = gram.item_ids;
  return model;
}

std::vector<std::uint32_t> kridge_predict(const KernelRidgeModel& model,
                                          const CrossGram& cross) {
  if (cross.col_ids != model.training_ids)
    throw DataError(
        "kridge_predict: cross-gram columns do not match the model's training items");
  if (cross.values.cols() != model.dual.rows())
    throw std::invalid_argument("kridge_predict: dimension mismatch");
  Eigen::MatrixXd scores = cross.values * model.dual;
  scores.rowwise() += model.bias.transpose();
  return argmax_labels(scores, model.classes);
}

double accuracy(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("accuracy: size mismatch");
  if (pred.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double cv_bandwidth(std::span<const DescriptorSet> sets,
                    std::span<const std::uint32_t> labels, std::span<const double> grid,
                    int folds, std::uint64_t seed, const CvPipeline& pipeline) {
  if (grid.empty()) throw std::invalid_argument("cv_bandwidth: empty grid");
  if (sets.size() != labels.size())
    throw std::invalid_argument("cv_bandwidth: labels do not match sets");
  if (folds < 2 || static_cast<std::size_t>(folds) > sets.size())
    throw std::invalid_argument("cv_bandwidth: need 2 <= folds <= number of sets");

  // Stratified deal: shuffle each class's indices, then hand them out
  // round-robin across folds.
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < sets.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::vector<std::size_t>> fold_members(static_cast<std::size_t>(folds));
  Rng rng(derive_seed(seed, 0xC5ULL));
  for (auto& [label, idxs] : by_class) {
    for (std::size_t i = 0; i + 1 < idxs.size(); ++i) {
      const std::size_t j = i + rng.uniform_index(idxs.size() - i);
      std::swap(idxs[i], idxs[j]);
    }
    for (std::size_t i = 0; i < idxs.size(); ++i)
      fold_members[i % static_cast<std::size_t>(folds)].push_back(idxs[i]);
  }

  struct FoldSplit {
    std::vector<DescriptorSet> train, eval;
    std::vector<std::uint32_t> train_labels, eval_labels;
  };
  std::vector<FoldSplit> splits(static_cast<std::size_t>(folds));
  for (int f = 0; f < folds; ++f) {
    auto& split = splits[static_cast<std::size_t>(f)];
    std::vector<bool> held(sets.size(), false);
    for (std::size_t i : fold_members[static_cast<std::size_t>(f)]) held[i] = true;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (held[i]) {
        split.eval.push_back(sets[i]);
        split.eval_labels.push_back(labels[i]);
      } else {
        split.train.push_back(sets[i]);
        split.train_labels.push_back(labels[i]);
      }
    }
    std::set<std::uint32_t> train_classes(split.train_labels.begin(),
                                          split.train_labels.end());
    if (train_classes.size() != by_class.size())
      throw DataError("cv_bandwidth: fold " + std::to_string(f) +
                      " is missing a class on its training side");
  }

  std::vector<double> sorted_grid(grid.begin(), grid.end());
  std::sort(sorted_grid.begin(), sorted_grid.end());

  double best_sigma = sorted_grid.front();
  double best_acc = -1.0;
  for (double sigma : sorted_grid) {
    double mean_acc = 0.0;
    for (int f = 0; f < folds; ++f) {
      const auto& split = splits[static_cast<std::size_t>(f)];
      const auto pred =
          pipeline(split.train, split.train_labels, split.eval, sigma,
                   derive_seed(seed, static_cast<std::uint64_t>(f)));
      mean_acc += accuracy(pred, split.eval_labels);
    }
    mean_acc /= static_cast<double>(folds);
    if (mean_acc > best_acc) {  // strict: ties keep the smaller sigma
      best_acc = mean_acc;
      best_sigma = sigma;
    }
  }
  return best_sigma;
}

CvPipeline make_kvlad_cv_pipeline(const KvladPipelineConfig& config) {
  return [config](std::span<const DescriptorSet> train,
                  std::span<const std::uint32_t> train_labels,
                  std::span<const DescriptorSet> eval_sets, double sigma,
                  std::uint64_t fold_seed) {
    if (train.empty() || train[0].descriptors.empty())
      throw std::invalid_argument("kvlad pipeline: empty training data");
    KernelSpec kernel{geometry_of(train[0].descriptors[0]), config.family, sigma};
    kernel.check();

    const auto pool =
        pool_descriptors(train, config.max_train_descriptors, fold_seed);
    ClusterOptions opts = config.cluster;
    opts.seed = derive_seed(fold_seed, 1);
    const int m = std::min<int>(config.codebook_size, static_cast<int>(pool.size()));
    const ImplicitCodebook cb = kernel_kmeans_fit(pool, kernel, m, opts);

    const GramMatrix train_gram = kvlad_gram(train, cb, config.normalized);
    const KernelRidgeModel model = kridge_train(train_gram, train_labels, config.lambda);
    const CrossGram cross = kvlad_cross_gram(eval_sets, train, cb, config.normalized);
    return kridge_predict(model, cross);
  };
}

}  // namespace kvlad
