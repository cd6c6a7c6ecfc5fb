#pragma once

#include <cstdint>
#include <vector>

#include "kvlad/geometry.hpp"

namespace kvlad {

// One image/video's worth of same-geometry local descriptors.
struct DescriptorSet {
  std::uint32_t id = 0;
  std::uint32_t label = 0;
  std::vector<Descriptor> descriptors;
};

struct Dataset {
  Geometry geometry;
  std::vector<DescriptorSet> train;
  std::vector<DescriptorSet> test;
};

// --- synthetic generators -------------------------------------------------
//
// All generators are pure functions of their parameter record (seed
// included): identical parameters reproduce identical datasets bitwise.
// Sets are numbered class-major with ids 0..S-1; within each class the
// first ceil(train_fraction * sets_per_class) sets (at least one) land in
// the train split.

struct EuclideanGenParams {
  int classes = 2;
  int sets_per_class = 10;
  int per_set = 1000;
  int dim = 8;
  double separation = 6.0;
  std::uint64_t seed = 0;
  double train_fraction = 0.5;
};

// Class c draws descriptors from a mixture of 3 unit-covariance Gaussians.
// The three component centers are shared across classes up to a per-class
// offset scaled by `separation`; offsets are normalized so the smallest
// pairwise class distance equals `separation` exactly. separation = 0
// collapses all classes onto one distribution.
Dataset gen_euclidean(const EuclideanGenParams& p);

struct SpdGenParams {
  int classes = 2;
  int sets_per_class = 10;
  int per_set = 100;
  int dim = 5;
  std::uint64_t seed = 0;
  double train_fraction = 0.5;
};

// Class c has a hidden scale Sigma_c = G_c G_c^T + n I; each descriptor is
// the sample covariance of 2n draws from N(0, Sigma_c) plus 1e-3 I, which
// keeps every output strictly SPD.
Dataset gen_spd(const SpdGenParams& p);

struct GrassmannGenParams {
  int classes = 2;
  int sets_per_class = 10;
  int per_set = 100;
  int dim = 16;
  int subdim = 3;
  double noise = 0.2;
  std::uint64_t seed = 0;
  double train_fraction = 0.5;
};

// Class c has a hidden orthonormal base B_c (d x p); each descriptor
// re-orthonormalizes B_c + noise * E with E standard normal. A rank
// deficient perturbation is redrawn up to 10 times before erroring.
Dataset gen_grassmann(const GrassmannGenParams& p);

}  // namespace kvlad
