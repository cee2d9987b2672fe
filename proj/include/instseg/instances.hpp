#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "instseg/grid.hpp"

namespace instseg {

enum class Connectivity : int { Six = 6, Eighteen = 18, TwentySix = 26 };

/// Accepts 6, 18 or 26.
Connectivity connectivity_from_int(int n);

/// Half-open voxel box [lo, hi) per axis, (z, y, x).
struct BoundingBox {
  Index3 lo{0, 0, 0};
  Index3 hi{0, 0, 0};
};

/// Instance decomposition of one binary map. component_map holds 0 for
/// voxels outside the mask and k in [1, num_components] otherwise; indices
/// follow z-major first-encounter order.
struct ComponentSet {
  int class_id = 0;
  GridShape shape;
  std::vector<std::int32_t> component_map;
  int num_components = 0;
  std::vector<std::int64_t> sizes_voxels;  // [k - 1]
  std::vector<double> sizes_mm3;           // [k - 1]
  std::vector<BoundingBox> boxes;          // [k - 1]

  std::int64_t size(int k) const { return sizes_voxels[static_cast<std::size_t>(k - 1)]; }
  std::int64_t foreground_voxels() const;
};

/// Voxels equal to class_id. class_id must be in [1, num_classes).
BinaryMask one_vs_rest(const LabelVolume& labels, int class_id);

/// Two-pass union-find labeling; connectivity counts the neighbours of a
/// voxel (faces, +edges, +corners).
ComponentSet connected_components(const BinaryMask& mask,
                                  Connectivity connectivity = Connectivity::TwentySix,
                                  int class_id = 0);

/// A named union of raw labels, e.g. whole tumour = {1, 2, 3}.
struct RegionSpec {
  std::string name;
  std::vector<Label> labels;  // sorted, unique, nonempty

  void validate(int num_classes) const;
};

/// WT = {1,2,3}, TC = {1,3}, ET = {3}, RC = {4}.
std::vector<RegionSpec> brats_regions();

/// Parses "WT=1,2,3;TC=1,3;ET=3;RC=4".
std::vector<RegionSpec> parse_regions(const std::string& text);
std::string format_regions(std::span<const RegionSpec> regions);

BinaryMask derive_region(const LabelVolume& labels, const RegionSpec& spec);

struct ComponentStat {
  int index = 0;
  std::int64_t voxels = 0;
  double mm3 = 0.0;
};

std::vector<ComponentStat> component_stats(const ComponentSet& comps, const GridShape& shape);

// ---------------------------------------------------------------------------
// Dataset statistics

/// Contribution of a single case to the statistics of one region.
struct CaseRegionStats {
  bool present = false;
  std::vector<double> component_mm3;
  std::int64_t voxels = 0;
};

struct RegionStats {
  std::string region;
  std::int64_t cases_present = 0;
  std::int64_t num_cases = 0;
  double fraction = 0.0;
  std::int64_t components = 0;
  /// Lower median of the pooled component sizes; empty when no component exists.
  std::optional<double> median_mm3;
  std::int64_t total_voxels = 0;
};

struct DatasetStats {
  std::vector<RegionStats> regions;
};

std::vector<CaseRegionStats> case_region_stats(const LabelVolume& labels,
                                               std::span<const RegionSpec> regions,
                                               Connectivity connectivity);

/// Reduces per-case partials given in case order; cases[i][r] is region r of case i.
DatasetStats reduce_dataset_stats(std::span<const std::vector<CaseRegionStats>> cases,
                                  std::span<const RegionSpec> regions);

DatasetStats dataset_stats(std::span<const LabelVolume> cases, std::span<const RegionSpec> regions,
                           Connectivity connectivity = Connectivity::TwentySix);

/// Lower of the two central values for even-length input.
std::optional<double> lower_median(std::vector<double> values);

/// CSV with header region,cases_present,fraction,components,median_mm3,total_voxels.
std::string stats_to_csv(const DatasetStats& stats);
std::string stats_to_json(const DatasetStats& stats);

/// Typeset row in the style "RC & 26 (10\%) & 32 & 2{,}617 & 295K".
std::string stats_table_row(const RegionStats& row);

}  // namespace instseg
