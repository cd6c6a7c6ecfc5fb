#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "kvlad/codebook.hpp"
#include "kvlad/dataset.hpp"
#include "kvlad/encoders.hpp"
#include "kvlad/geometry.hpp"

namespace kvlad {

// One-vs-rest regularized least squares over explicit codes. The loss is
// averaged per sample ((1/N) |XW + 1b - Y|^2 + lambda |W|^2, bias
// unregularized), so duplicating the training set leaves the solution
// unchanged and lambda means the same thing at any N.
struct RidgeModel {
  Eigen::MatrixXd weights;  // (D+1) x C, last row is the bias
  double lambda = 1e-3;
  std::vector<std::uint32_t> classes;  // sorted ascending; column k scores classes[k]
};

// Dual form of the same objective, consuming a precomputed Gram:
// (K + N lambda I) alpha + 1 b = Y with 1^T alpha = 0. With the linear
// kernel on explicit codes this reproduces RidgeModel's predictions
// exactly (same lambda).
struct KernelRidgeModel {
  Eigen::MatrixXd dual;  // N x C
  Eigen::VectorXd bias;  // C
  double lambda = 1e-3;
  std::vector<std::uint32_t> classes;
  std::vector<std::uint32_t> training_ids;  // prediction requires this column order
};

RidgeModel ridge_train(const Eigen::MatrixXd& x, std::span<const std::uint32_t> labels,
                       double lambda);
RidgeModel ridge_train(std::span<const VladCode> codes,
                       std::span<const std::uint32_t> labels, double lambda);

std::vector<std::uint32_t> ridge_predict(const RidgeModel& model, const Eigen::MatrixXd& x);
std::vector<std::uint32_t> ridge_predict(const RidgeModel& model,
                                         std::span<const VladCode> codes);

KernelRidgeModel kridge_train(const GramMatrix& gram,
                              std::span<const std::uint32_t> labels, double lambda);

// cross.col_ids must list the model's training items in training order.
std::vector<std::uint32_t> kridge_predict(const KernelRidgeModel& model,
                                          const CrossGram& cross);

// Fraction of positions where pred equals truth.
double accuracy(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> truth);

// A bandwidth-parameterized train-and-predict pipeline used by
// cv_bandwidth: fits on the fold's training sets and returns predicted
// labels for the held-out sets.
using CvPipeline = std::function<std::vector<std::uint32_t>(
    std::span<const DescriptorSet> train, std::span<const std::uint32_t> train_labels,
    std::span<const DescriptorSet> eval, double sigma, std::uint64_t fold_seed)>;

// Deterministic seeded stratified fold split; returns the grid sigma with
// the highest mean fold accuracy, ties to the smallest. Errors when any
// fold's training side is missing a class.
double cv_bandwidth(std::span<const DescriptorSet> sets,
                    std::span<const std::uint32_t> labels, std::span<const double> grid,
                    int folds, std::uint64_t seed, const CvPipeline& pipeline);

// Ready-made kVLAD pipeline (kernel k-means codebook, normalized kVLAD
// Gram, kernel ridge) for cross-validation and the CLI.
struct KvladPipelineConfig {
  KernelFamily family = KernelFamily::EuclideanRbf;
  int codebook_size = 8;
  double lambda = 1e-3;
  bool normalized = true;
  std::size_t max_train_descriptors = 2000;
  ClusterOptions cluster;
};

CvPipeline make_kvlad_cv_pipeline(const KvladPipelineConfig& config);

}  // namespace kvlad
