#pragma once

// How the gradient of a loss is distributed over classes and instance sizes.

#include <string>
#include <vector>

#include "instseg/losses.hpp"
#include "instseg/panoptic.hpp"

namespace instseg {

enum class GradNorm { L1, L2 };

GradNorm parse_grad_norm(const std::string& name);
const char* grad_norm_name(GradNorm n);

struct GradShareCell {
  int class_id = 0;
  Stratum stratum = Stratum::Small;
  int components = 0;
  double mass = 0.0;
  double share = 0.0;  // mass / component_mass
};

/// Mass of a voxel gradient entry is |g| (L1) or g^2 (L2). Each reference
/// component contributes the mass of its class channel over its voxels;
/// everything else (other channels, background voxels) is the background
/// remainder.
struct GradShareReport {
  LossVariant variant = LossVariant::Baseline;
  GradNorm norm = GradNorm::L1;
  std::vector<GradShareCell> cells;  // nonempty (class, stratum) cells in class, stratum order
  double total_mass = 0.0;
  double component_mass = 0.0;
  double background_mass = 0.0;
  double background_fraction = 0.0;  // background_mass / total_mass

  double class_share(int class_id) const;
};

GradShareReport gradient_share(const ProbVolume& prob, const LabelVolume& labels,
                               const LossConfig& cfg, const SizeStrata& strata = {},
                               GradNorm norm = GradNorm::L1);

std::string gradshare_to_json(const std::vector<std::pair<std::string, GradShareReport>>& reports);
/// Rows case,variant,class,stratum,components,mass,share plus a "background" row per report.
std::string gradshare_to_csv(const std::vector<std::pair<std::string, GradShareReport>>& reports);

}  // namespace instseg
