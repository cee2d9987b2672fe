#pragma once

// Segmentation losses on class probabilities with analytic gradients.
//
// All losses take the per-class probabilities y_hat and an integer label
// volume. Instance variants decompose every foreground class into its
// connected components (one-vs-rest), evaluate Dice + binary cross-entropy
// per component on a component-specific domain, and average uniformly over
// the components of a class and then over the classes that have at least
// one component.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "instseg/geometry.hpp"
#include "instseg/grid.hpp"
#include "instseg/instances.hpp"

namespace instseg {

enum class LossVariant { Baseline, Blob, CC, IwlBlob, IwlCC, InvWeightGlobal, InvWeightLocal };

std::string_view variant_name(LossVariant v);
LossVariant parse_variant(std::string_view name);
bool is_instance_variant(LossVariant v);

/// Where an inverse-size weight applies inside a component's domain.
enum class IwlScope {
  Component,  ///< component voxels get the weight, the rest of the domain 1
  Domain,     ///< every domain voxel gets the weight
};

std::string_view iwl_scope_name(IwlScope s);
IwlScope parse_iwl_scope(std::string_view name);

struct LossConfig {
  LossVariant variant = LossVariant::Baseline;
  double alpha = 1.0;
  double beta = 1.0;
  double dice_smooth = 1e-5;
  double ce_clip = 1e-7;
  double weight_lo = 1.0;
  double weight_hi = 2e5;
  IwlScope iwl_scope = IwlScope::Component;
  Connectivity connectivity = Connectivity::TwentySix;
  DistanceUnits units = DistanceUnits::Millimetre;

  void validate() const;
};

enum class DomainKind { Full, Blob, Voronoi };

struct DomainMask {
  GridShape shape;
  DomainKind kind = DomainKind::Full;
  std::vector<std::uint8_t> data;

  static DomainMask full(const GridShape& shape);
  std::size_t count() const;
};

enum class WeightKind { Uniform, Iwl, ShirokikhGlobal, ShirokikhLocal };

struct WeightMap {
  GridShape shape;
  WeightKind kind = WeightKind::Uniform;
  int class_id = 0;   // Iwl / ShirokikhLocal only
  int component = 0;  // Iwl only
  std::vector<double> data;

  static WeightMap uniform(const GridShape& shape);
};

/// A loss value with its gradient with respect to one prediction channel.
struct TermResult {
  double value = 0.0;
  std::vector<double> grad;
};

/// 1 - (2 sum w p g + eps) / (sum w p + sum w g + eps) over the domain.
/// The gradient is zero outside the domain. Throws on negative weights.
TermResult soft_dice(std::span<const double> pred, std::span<const std::uint8_t> target,
                     const DomainMask& domain, const WeightMap& weights, double smooth);

/// Weighted mean of -g log p' - (1-g) log(1-p'), p' = clamp(p, clip, 1-clip),
/// normalized by the domain's weight mass. An empty or weightless domain
/// yields 0 with zero gradient.
TermResult binary_ce(std::span<const double> pred, std::span<const std::uint8_t> target,
                     const DomainMask& domain, const WeightMap& weights, double clip);

double iwl_weight(double domain_size, double component_size, double lo = 1.0, double hi = 2e5);

/// Omega minus every other component of the same class.
DomainMask blob_domain(const ComponentSet& comps, int k);

/// The Voronoi cell of component k.
DomainMask voronoi_domain(const VoronoiPartition& cells, int k);

/// Inverse-size weight map for component k on `domain`; outside the scope
/// selected by `scope` the map is 1.
WeightMap iwl_weight_map(const ComponentSet& comps, int k, const DomainMask& domain,
                         IwlScope scope, double lo, double hi);

enum class WeightScope { Global, Local };

/// Inverse-component-size voxel weights. One map for the global scope,
/// one per class 0..C-1 for the local scope (index = class id).
struct ClassWeightMaps {
  WeightScope scope = WeightScope::Global;
  std::vector<WeightMap> maps;

  const WeightMap& for_class(int c) const {
    return scope == WeightScope::Global ? maps.front() : maps[static_cast<std::size_t>(c)];
  }
};

/// w = N / (M * |C_i|) with M the number of nonempty parts: the components
/// plus the background pseudo-component. With a nonempty background this is
/// N / ((K + 1) * |C_i|), and the weights of every map sum to N.
ClassWeightMaps shirokikh_weights(const LabelVolume& labels, WeightScope scope,
                                  Connectivity connectivity = Connectivity::TwentySix);

/// Dice over foreground classes plus categorical cross-entropy over all
/// voxels, optionally voxel-weighted.
struct GlobalLossResult {
  double value = 0.0;
  double dice = 0.0;  // mean over foreground classes
  double ce = 0.0;
  ChannelField grad;
};

GlobalLossResult global_dc_ce(const ProbVolume& prob, const LabelVolume& labels,
                              const LossConfig& cfg, const ClassWeightMaps* weights = nullptr);

struct ClassLoss {
  int class_id = 0;
  int num_components = 0;
  std::vector<double> component_losses;
  std::optional<double> mean;  // empty when the class has no component
};

struct LossBreakdown {
  LossVariant variant = LossVariant::Baseline;
  double alpha = 1.0;
  double beta = 1.0;
  double global_value = 0.0;
  double instance_value = 0.0;
  double total = 0.0;
  std::vector<ClassLoss> per_class;  // foreground classes 1..C-1
  std::vector<int> active_classes;
  ChannelField grad;  // d total / d y_hat
};

/// Instance term only: grad is d L_instance / d y_hat and total equals
/// instance_value. cfg.variant must be an instance variant.
LossBreakdown instance_loss(const ProbVolume& prob, const LabelVolume& labels,
                            const LossConfig& cfg);

/// alpha * L_global + beta * L_instance (instance variants), alpha * L_global
/// (baseline), or alpha * inverse-size weighted L_global (invweight variants).
LossBreakdown combined_loss(const ProbVolume& prob, const LabelVolume& labels,
                            const LossConfig& cfg);

/// Recomputes the uniform two-level average from stored component losses.
double aggregate_instance_losses(std::span<const ClassLoss> per_class);

std::string breakdown_to_json(const LossBreakdown& b);
std::string breakdown_to_csv(const LossBreakdown& b);

}  // namespace instseg
