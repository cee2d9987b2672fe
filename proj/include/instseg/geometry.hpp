#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "instseg/grid.hpp"
#include "instseg/instances.hpp"

namespace instseg {

enum class DistanceUnits {
  Millimetre,  ///< per-axis spacing applied
  Voxel,       ///< unit spacing on every axis
};

struct DistanceField {
  GridShape shape;
  DistanceUnits units = DistanceUnits::Millimetre;
  std::vector<double> data;
};

/// Every voxel of the grid assigned to its nearest component.
struct VoronoiPartition {
  int class_id = 0;
  GridShape shape;
  std::vector<std::int32_t> cell_map;  // values in [1, num_cells]
  int num_cells = 0;
  std::vector<std::int64_t> cell_sizes;  // [k - 1]
  std::vector<BoundingBox> boxes;        // [k - 1]

  std::int64_t size(int k) const { return cell_sizes[static_cast<std::size_t>(k - 1)]; }
};

/// Squared distance and identity of the nearest seed for every voxel.
///
/// seed_labels holds a positive label on seed voxels and 0 elsewhere. The
/// transform runs three separable lower-envelope passes (x, then y, then z)
/// and is exact: the squared distance of a voxel to a seed at offset
/// (dz, dy, dx) is evaluated as ((wx*dx^2) + wy*dy^2) + wz*dz^2 in that
/// order, with w the per-axis squared spacing, so the result is the
/// floating-point minimum of that expression over all seeds. Among seeds
/// at the minimum distance the smallest label wins. Voxels with no seed
/// anywhere get +inf and label 0.
struct FeatureTransform {
  std::vector<double> sq_distance;
  std::vector<std::int32_t> label;
};
FeatureTransform nearest_seed_transform(const GridShape& shape,
                                        std::span<const std::int32_t> seed_labels,
                                        DistanceUnits units);

/// Per-axis weights (squared spacing, or ones in voxel units), (z, y, x).
std::array<double, 3> axis_weights(const GridShape& shape, DistanceUnits units);

/// Exact Euclidean distance to the nearest seed. Throws InputError for an
/// empty seed mask.
DistanceField edt(const BinaryMask& seeds, DistanceUnits units = DistanceUnits::Millimetre);

/// Nearest-component tessellation; ties go to the smaller component index.
/// Throws InputError when the set has no component.
VoronoiPartition voronoi_partition(const ComponentSet& comps,
                                   DistanceUnits units = DistanceUnits::Millimetre);

}  // namespace instseg
