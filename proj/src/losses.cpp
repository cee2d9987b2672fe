#include "instseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "instseg/error.hpp"
#include "json.hpp"

namespace instseg {

namespace {

struct VariantName {
  LossVariant variant;
  std::string_view name;
};

constexpr VariantName kVariants[] = {
    {LossVariant::Baseline, "baseline"},
    {LossVariant::Blob, "blob"},
    {LossVariant::CC, "cc"},
    {LossVariant::IwlBlob, "iwl_blob"},
    {LossVariant::IwlCC, "iwl_cc"},
    {LossVariant::InvWeightGlobal, "invweight_global"},
    {LossVariant::InvWeightLocal, "invweight_local"},
};

void check_channel(std::span<const double> pred, std::span<const std::uint8_t> target,
                   const DomainMask& domain, const WeightMap& weights) {
  const std::size_t n = pred.size();
  if (target.size() != n || domain.data.size() != n || weights.data.size() != n) {
    throw InputError("loss inputs do not share a grid");
  }
  for (double w : weights.data) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InputError("loss weights must be finite and >= 0");
  }
}

}  // namespace

std::string_view variant_name(LossVariant v) {
  for (const auto& e : kVariants) {
    if (e.variant == v) return e.name;
  }
  return "?";
}

LossVariant parse_variant(std::string_view name) {
  for (const auto& e : kVariants) {
    if (e.name == name) return e.variant;
  }
  throw InputError("unknown loss variant '" + std::string(name) + "'");
}

bool is_instance_variant(LossVariant v) {
  return v == LossVariant::Blob || v == LossVariant::CC || v == LossVariant::IwlBlob ||
         v == LossVariant::IwlCC;
}

std::string_view iwl_scope_name(IwlScope s) {
  return s == IwlScope::Component ? "component" : "domain";
}

IwlScope parse_iwl_scope(std::string_view name) {
  if (name == "component") return IwlScope::Component;
  if (name == "domain") return IwlScope::Domain;
  throw InputError("unknown inverse-size weight scope '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InputError("alpha and beta must be >= 0");
  if (alpha == 0.0 && beta == 0.0) throw InputError("alpha and beta cannot both be zero");
  if (!(dice_smooth >= 0.0)) throw InputError("dice smoothing must be >= 0");
  if (!(ce_clip > 0.0 && ce_clip < 0.5)) throw InputError("ce clip must lie in (0, 0.5)");
  if (!(weight_lo > 0.0) || !(weight_lo <= weight_hi)) {
    throw InputError("weight clamp needs 0 < lo <= hi");
  }
}

DomainMask DomainMask::full(const GridShape& shape) {
  return DomainMask{shape, DomainKind::Full, std::vector<std::uint8_t>(shape.voxels(), 1)};
}

std::size_t DomainMask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

WeightMap WeightMap::uniform(const GridShape& shape) {
  return WeightMap{shape, WeightKind::Uniform, 0, 0, std::vector<double>(shape.voxels(), 1.0)};
}

TermResult soft_dice(std::span<const double> pred, std::span<const std::uint8_t> target,
                     const DomainMask& domain, const WeightMap& weights, double smooth) {
  check_channel(pred, target, domain, weights);
  const std::size_t n = pred.size();
  double inter = 0.0, psum = 0.0, gsum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!domain.data[i]) continue;
    const double w = weights.data[i];
    const double g = target[i] ? 1.0 : 0.0;
    inter += w * pred[i] * g;
    psum += w * pred[i];
    gsum += w * g;
  }
  TermResult r;
  r.grad.assign(n, 0.0);
  const double num = 2.0 * inter + smooth;
  const double den = psum + gsum + smooth;
  if (den <= 0.0) return r;  // only reachable with smooth == 0 and nothing to score
  r.value = 1.0 - num / den;
  const double den2 = den * den;
  for (std::size_t i = 0; i < n; ++i) {
    if (!domain.data[i]) continue;
    const double w = weights.data[i];
    const double g = target[i] ? 1.0 : 0.0;
    r.grad[i] = -(2.0 * w * g * den - num * w) / den2;
  }
  return r;
}

TermResult binary_ce(std::span<const double> pred, std::span<const std::uint8_t> target,
                     const DomainMask& domain, const WeightMap& weights, double clip) {
  check_channel(pred, target, domain, weights);
  const std::size_t n = pred.size();
  double mass = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!domain.data[i]) continue;
    const double w = weights.data[i];
    const double p = std::clamp(pred[i], clip, 1.0 - clip);
    mass += w;
    sum += w * (target[i] ? -std::log(p) : -std::log(1.0 - p));
  }
  TermResult r;
  r.grad.assign(n, 0.0);
  if (mass <= 0.0) return r;
  r.value = sum / mass;
  for (std::size_t i = 0; i < n; ++i) {
    if (!domain.data[i]) continue;
    const double p = pred[i];
    if (!(p > clip && p < 1.0 - clip)) continue;
    const double w = weights.data[i];
    r.grad[i] = target[i] ? -w / (mass * p) : w / (mass * (1.0 - p));
  }
  return r;
}

double iwl_weight(double domain_size, double component_size, double lo, double hi) {
  if (!(component_size > 0.0)) throw InputError("component size must be positive");
  return std::min(std::max(domain_size / component_size, lo), hi);
}

DomainMask blob_domain(const ComponentSet& comps, int k) {
  if (k < 1 || k > comps.num_components) throw InputError("component index out of range");
  DomainMask d{comps.shape, DomainKind::Blob, std::vector<std::uint8_t>(comps.shape.voxels(), 1)};
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const std::int32_t j = comps.component_map[i];
    if (j != 0 && j != k) d.data[i] = 0;
  }
  return d;
}

DomainMask voronoi_domain(const VoronoiPartition& cells, int k) {
  if (k < 1 || k > cells.num_cells) throw InputError("cell index out of range");
  DomainMask d{cells.shape, DomainKind::Voronoi, std::vector<std::uint8_t>(cells.shape.voxels(), 0)};
  for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = cells.cell_map[i] == k;
  return d;
}

WeightMap iwl_weight_map(const ComponentSet& comps, int k, const DomainMask& domain,
                         IwlScope scope, double lo, double hi) {
  if (k < 1 || k > comps.num_components) throw InputError("component index out of range");
  const double w = iwl_weight(static_cast<double>(domain.count()),
                              static_cast<double>(comps.size(k)), lo, hi);
  WeightMap m{comps.shape, WeightKind::Iwl, comps.class_id, k,
              std::vector<double>(comps.shape.voxels(), 1.0)};
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    if (!domain.data[i]) continue;
    if (scope == IwlScope::Domain || comps.component_map[i] == k) m.data[i] = w;
  }
  return m;
}

namespace {

// Inverse part-size weights for one binary map.
WeightMap part_weights(const BinaryMask& mask, Connectivity conn, WeightKind kind, int class_id) {
  const GridShape& s = mask.shape();
  const ComponentSet cs = connected_components(mask, conn, class_id);
  const auto n = static_cast<double>(s.voxels());
  const auto fg = static_cast<double>(cs.foreground_voxels());
  const double bg = n - fg;
  const double parts = static_cast<double>(cs.num_components) + (bg > 0.0 ? 1.0 : 0.0);
  WeightMap m{s, kind, class_id, 0, std::vector<double>(s.voxels(), 0.0)};
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const std::int32_t k = cs.component_map[i];
    const double size = k > 0 ? static_cast<double>(cs.size(k)) : bg;
    m.data[i] = n / (parts * size);
  }
  return m;
}

}  // namespace

ClassWeightMaps shirokikh_weights(const LabelVolume& labels, WeightScope scope,
                                  Connectivity connectivity) {
  ClassWeightMaps out;
  out.scope = scope;
  const auto data = labels.data();
  if (scope == WeightScope::Global) {
    std::vector<std::uint8_t> fg(data.size());
    std::transform(data.begin(), data.end(), fg.begin(),
                   [](Label v) { return static_cast<std::uint8_t>(v != 0); });
    out.maps.push_back(part_weights(BinaryMask(labels.shape(), std::move(fg)), connectivity,
                                    WeightKind::ShirokikhGlobal, 0));
    return out;
  }
  for (int c = 0; c < labels.num_classes(); ++c) {
    std::vector<std::uint8_t> m(data.size());
    std::transform(data.begin(), data.end(), m.begin(),
                   [c](Label v) { return static_cast<std::uint8_t>(v == c); });
    out.maps.push_back(part_weights(BinaryMask(labels.shape(), std::move(m)), connectivity,
                                    WeightKind::ShirokikhLocal, c));
  }
  return out;
}

namespace {

void check_pair(const ProbVolume& prob, const LabelVolume& labels) {
  require_same_grid(prob.shape(), labels.shape(), "probabilities vs labels");
  if (prob.num_classes() != labels.num_classes()) {
    throw InputError("probability channels (" + std::to_string(prob.num_classes()) +
                     ") differ from num_classes (" + std::to_string(labels.num_classes()) + ")");
  }
}

}  // namespace

GlobalLossResult global_dc_ce(const ProbVolume& prob, const LabelVolume& labels,
                              const LossConfig& cfg, const ClassWeightMaps* weights) {
  cfg.validate();
  check_pair(prob, labels);
  const GridShape& shape = labels.shape();
  const int classes = labels.num_classes();
  const std::size_t n = shape.voxels();
  const auto y = labels.data();

  GlobalLossResult r;
  r.grad = ChannelField(shape, classes);
  const DomainMask full = DomainMask::full(shape);
  const WeightMap uniform = WeightMap::uniform(shape);
  const double dice_scale = 1.0 / static_cast<double>(classes - 1);
  std::vector<std::uint8_t> target(n);
  for (int c = 1; c < classes; ++c) {
    for (std::size_t i = 0; i < n; ++i) target[i] = y[i] == c;
    const WeightMap& w = weights ? weights->for_class(c) : uniform;
    const TermResult d = soft_dice(prob.channel(c), target, full, w, cfg.dice_smooth);
    r.dice += d.value * dice_scale;
    auto g = r.grad.channel(c);
    for (std::size_t i = 0; i < n; ++i) g[i] += d.grad[i] * dice_scale;
  }

  // Categorical cross-entropy on the true-class channel.
  double mass = 0.0, sum = 0.0;
  const double clip = cfg.ce_clip;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weights ? weights->for_class(y[i]).data[i] : 1.0;
    const double p = std::clamp(prob.channel(y[i])[i], clip, 1.0 - clip);
    mass += w;
    sum += w * -std::log(p);
  }
  if (mass > 0.0) {
    r.ce = sum / mass;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = prob.channel(y[i])[i];
      if (!(p > clip && p < 1.0 - clip)) continue;
      const double w = weights ? weights->for_class(y[i]).data[i] : 1.0;
      r.grad.channel(y[i])[i] += -w / (mass * p);
    }
  }
  r.value = r.dice + r.ce;
  return r;
}

double aggregate_instance_losses(std::span<const ClassLoss> per_class) {
  double outer = 0.0;
  int active = 0;
  for (const auto& c : per_class) {
    if (c.component_losses.empty()) continue;
    double inner = 0.0;
    for (double l : c.component_losses) inner += l;
    outer += inner / static_cast<double>(c.component_losses.size());
    ++active;
  }
  return active == 0 ? 0.0 : outer / static_cast<double>(active);
}

namespace {

// Sums of one class channel over a component (fg) and over the background
// part of its domain (bg).
struct DomainSums {
  double fg_p = 0.0, fg_ce = 0.0, fg_n = 0.0;
  double bg_p = 0.0, bg_ce = 0.0, bg_n = 0.0;
};

// Gradient coefficients for one component, already scaled by its share of
// the instance average. The cross-entropy coefficients multiply -1/p (fg)
// and 1/(1-p) (bg) on unclamped voxels.
struct ComponentCoef {
  double fg_dice = 0.0, fg_ce = 0.0;
  double bg_dice = 0.0, bg_ce = 0.0;
};

}  // namespace

LossBreakdown instance_loss(const ProbVolume& prob, const LabelVolume& labels,
                            const LossConfig& cfg) {
  cfg.validate();
  check_pair(prob, labels);
  if (!is_instance_variant(cfg.variant)) {
    throw InputError("instance_loss needs blob, cc, iwl_blob or iwl_cc, got " +
                     std::string(variant_name(cfg.variant)));
  }
  const GridShape& shape = labels.shape();
  const int classes = labels.num_classes();
  const std::size_t n = shape.voxels();
  const bool voronoi = cfg.variant == LossVariant::CC || cfg.variant == LossVariant::IwlCC;
  const bool iwl = cfg.variant == LossVariant::IwlBlob || cfg.variant == LossVariant::IwlCC;
  const double clip = cfg.ce_clip;
  const double eps = cfg.dice_smooth;

  LossBreakdown out;
  out.variant = cfg.variant;
  out.alpha = 0.0;
  out.beta = 1.0;
  out.grad = ChannelField(shape, classes);

  std::vector<ComponentSet> comps;
  for (int c = 1; c < classes; ++c) {
    comps.push_back(connected_components(one_vs_rest(labels, c), cfg.connectivity, c));
    if (comps.back().num_components > 0) out.active_classes.push_back(c);
  }
  const auto num_active = static_cast<double>(out.active_classes.size());

  for (int c = 1; c < classes; ++c) {
    const ComponentSet& cs = comps[static_cast<std::size_t>(c - 1)];
    ClassLoss cl;
    cl.class_id = c;
    cl.num_components = cs.num_components;
    if (cs.num_components == 0) {
      out.per_class.push_back(std::move(cl));
      continue;
    }
    const int K = cs.num_components;
    std::vector<std::int32_t> cells;
    if (voronoi) cells = voronoi_partition(cs, cfg.units).cell_map;

    const auto p = prob.channel(c);
    const auto& cmap = cs.component_map;
    std::vector<DomainSums> sums(static_cast<std::size_t>(K));
    DomainSums shared_bg;  // blob: every component shares the class background
    for (std::size_t i = 0; i < n; ++i) {
      const double pc = std::clamp(p[i], clip, 1.0 - clip);
      if (cmap[i] > 0) {
        auto& s = sums[static_cast<std::size_t>(cmap[i] - 1)];
        s.fg_p += p[i];
        s.fg_ce += -std::log(pc);
        s.fg_n += 1.0;
      } else {
        auto& s = voronoi ? sums[static_cast<std::size_t>(cells[i] - 1)] : shared_bg;
        s.bg_p += p[i];
        s.bg_ce += -std::log(1.0 - pc);
        s.bg_n += 1.0;
      }
    }

    const double share = 1.0 / (num_active * static_cast<double>(K));
    std::vector<ComponentCoef> coef(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      DomainSums s = sums[static_cast<std::size_t>(k)];
      if (!voronoi) {
        s.bg_p = shared_bg.bg_p;
        s.bg_ce = shared_bg.bg_ce;
        s.bg_n = shared_bg.bg_n;
      }
      double wf = 1.0, wb = 1.0;
      if (iwl) {
        wf = iwl_weight(s.fg_n + s.bg_n, s.fg_n, cfg.weight_lo, cfg.weight_hi);
        if (cfg.iwl_scope == IwlScope::Domain) wb = wf;
      }
      const double inter = wf * s.fg_p;
      const double psum = wf * s.fg_p + wb * s.bg_p;
      const double gsum = wf * s.fg_n;
      const double mass = wf * s.fg_n + wb * s.bg_n;
      const double num = 2.0 * inter + eps;
      const double den = psum + gsum + eps;
      double loss = 0.0;
      auto& cf = coef[static_cast<std::size_t>(k)];
      if (den > 0.0) {
        loss += 1.0 - num / den;
        cf.fg_dice = share * wf * (num - 2.0 * den) / (den * den);
        cf.bg_dice = share * wb * num / (den * den);
      }
      if (mass > 0.0) {
        loss += (wf * s.fg_ce + wb * s.bg_ce) / mass;
        cf.fg_ce = share * wf / mass;
        cf.bg_ce = share * wb / mass;
      }
      cl.component_losses.push_back(loss);
    }

    ComponentCoef bg_total;
    if (!voronoi) {
      for (const auto& cf : coef) {
        bg_total.bg_dice += cf.bg_dice;
        bg_total.bg_ce += cf.bg_ce;
      }
    }
    auto g = out.grad.channel(c);
    for (std::size_t i = 0; i < n; ++i) {
      const bool unclamped = p[i] > clip && p[i] < 1.0 - clip;
      if (cmap[i] > 0) {
        const auto& cf = coef[static_cast<std::size_t>(cmap[i] - 1)];
        g[i] = cf.fg_dice + (unclamped ? -cf.fg_ce / p[i] : 0.0);
      } else {
        const auto& cf = voronoi ? coef[static_cast<std::size_t>(cells[i] - 1)] : bg_total;
        g[i] = cf.bg_dice + (unclamped ? cf.bg_ce / (1.0 - p[i]) : 0.0);
      }
    }

    double sum = 0.0;
    for (double l : cl.component_losses) sum += l;
    cl.mean = sum / static_cast<double>(K);
    out.per_class.push_back(std::move(cl));
  }

  out.instance_value = aggregate_instance_losses(out.per_class);
  out.total = out.instance_value;
  return out;
}

LossBreakdown combined_loss(const ProbVolume& prob, const LabelVolume& labels,
                            const LossConfig& cfg) {
  cfg.validate();
  check_pair(prob, labels);
  LossBreakdown out;
  if (is_instance_variant(cfg.variant)) {
    const GlobalLossResult g = global_dc_ce(prob, labels, cfg);
    out = instance_loss(prob, labels, cfg);
    out.global_value = g.value;
    ChannelField grad = g.grad;
    auto dst = grad.data();
    if (cfg.beta == 0.0) {
      for (double& v : dst) v = cfg.alpha * v;
      out.total = cfg.alpha * g.value;
    } else {
      const auto inst = out.grad.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = cfg.alpha * dst[i] + cfg.beta * inst[i];
      out.total = cfg.alpha * g.value + cfg.beta * out.instance_value;
    }
    out.grad = std::move(grad);
  } else {
    std::optional<ClassWeightMaps> weights;
    if (cfg.variant == LossVariant::InvWeightGlobal) {
      weights = shirokikh_weights(labels, WeightScope::Global, cfg.connectivity);
    } else if (cfg.variant == LossVariant::InvWeightLocal) {
      weights = shirokikh_weights(labels, WeightScope::Local, cfg.connectivity);
    }
    GlobalLossResult g = global_dc_ce(prob, labels, cfg, weights ? &*weights : nullptr);
    out.global_value = g.value;
    out.total = cfg.alpha * g.value;
    for (double& v : g.grad.data()) v = cfg.alpha * v;
    out.grad = std::move(g.grad);
    for (int c = 1; c < labels.num_classes(); ++c) {
      out.per_class.push_back(ClassLoss{c, 0, {}, std::nullopt});
    }
  }
  out.variant = cfg.variant;
  out.alpha = cfg.alpha;
  out.beta = cfg.beta;
  return out;
}

namespace {

nlohmann::json breakdown_json(const LossBreakdown& b) {
  nlohmann::json j;
  j["variant"] = std::string(variant_name(b.variant));
  j["alpha"] = b.alpha;
  j["beta"] = b.beta;
  j["global"] = b.global_value;
  j["instance"] = b.instance_value;
  j["total"] = b.total;
  j["active_classes"] = b.active_classes;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& c : b.per_class) {
    nlohmann::json e;
    e["K"] = c.num_components;
    e["components"] = c.component_losses;
    e["mean"] = c.mean ? nlohmann::json(*c.mean) : nlohmann::json(nullptr);
    per_class[std::to_string(c.class_id)] = std::move(e);
  }
  j["per_class"] = std::move(per_class);
  return j;
}

}  // namespace

std::string breakdown_to_json(const LossBreakdown& b) { return breakdown_json(b).dump(2) + "\n"; }

std::string breakdown_to_csv(const LossBreakdown& b) {
  std::string out = "class,component,loss\n";
  for (const auto& c : b.per_class) {
    for (std::size_t k = 0; k < c.component_losses.size(); ++k) {
      out += std::to_string(c.class_id) + ',' + std::to_string(k + 1) + ',' +
             nlohmann::json(c.component_losses[k]).dump() + '\n';
    }
  }
  out += "global,," + nlohmann::json(b.global_value).dump() + '\n';
  out += "instance,," + nlohmann::json(b.instance_value).dump() + '\n';
  out += "total,," + nlohmann::json(b.total).dump() + '\n';
  return out;
}

}  // namespace instseg
