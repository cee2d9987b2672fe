#include "instseg/gradshare.hpp"

#include <cmath>
#include <map>

#include "instseg/error.hpp"
#include "json.hpp"

namespace instseg {

GradNorm parse_grad_norm(const std::string& name) {
  if (name == "l1") return GradNorm::L1;
  if (name == "l2") return GradNorm::L2;
  throw InputError("unknown gradient norm '" + name + "' (expected l1 or l2)");
}

const char* grad_norm_name(GradNorm n) { return n == GradNorm::L1 ? "l1" : "l2"; }

double GradShareReport::class_share(int class_id) const {
  double s = 0.0;
  for (const auto& c : cells) {
    if (c.class_id == class_id) s += c.share;
  }
  return s;
}

GradShareReport gradient_share(const ProbVolume& prob, const LabelVolume& labels,
                               const LossConfig& cfg, const SizeStrata& strata, GradNorm norm) {
  const LossBreakdown b = combined_loss(prob, labels, cfg);
  auto mass_of = [norm](double g) { return norm == GradNorm::L1 ? std::abs(g) : g * g; };

  GradShareReport rep;
  rep.variant = cfg.variant;
  rep.norm = norm;
  for (double g : b.grad.data()) rep.total_mass += mass_of(g);

  std::map<std::pair<int, int>, GradShareCell> cells;
  for (int c = 1; c < labels.num_classes(); ++c) {
    const ComponentSet cs = connected_components(one_vs_rest(labels, c), cfg.connectivity, c);
    if (cs.num_components == 0) continue;
    std::vector<double> per(static_cast<std::size_t>(cs.num_components), 0.0);
    const auto g = b.grad.channel(c);
    for (std::size_t i = 0; i < cs.component_map.size(); ++i) {
      const std::int32_t k = cs.component_map[i];
      if (k > 0) per[static_cast<std::size_t>(k - 1)] += mass_of(g[i]);
    }
    for (int k = 1; k <= cs.num_components; ++k) {
      const Stratum s = strata.classify(cs.sizes_mm3[static_cast<std::size_t>(k - 1)]);
      auto& cell = cells[{c, static_cast<int>(s)}];
      cell.class_id = c;
      cell.stratum = s;
      cell.components += 1;
      cell.mass += per[static_cast<std::size_t>(k - 1)];
    }
  }
  for (auto& [key, cell] : cells) {
    (void)key;
    rep.component_mass += cell.mass;
    rep.cells.push_back(cell);
  }
  for (auto& cell : rep.cells) {
    cell.share = rep.component_mass > 0.0 ? cell.mass / rep.component_mass : 0.0;
  }
  rep.background_mass = std::max(0.0, rep.total_mass - rep.component_mass);
  rep.background_fraction = rep.total_mass > 0.0 ? rep.background_mass / rep.total_mass : 0.0;
  return rep;
}

std::string gradshare_to_json(const std::vector<std::pair<std::string, GradShareReport>>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, r] : reports) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : r.cells) {
      cells.push_back({{"class", c.class_id},
                       {"stratum", stratum_name(c.stratum)},
                       {"components", c.components},
                       {"mass", c.mass},
                       {"share", c.share}});
    }
    arr.push_back({{"case_id", id},
                   {"variant", std::string(variant_name(r.variant))},
                   {"norm", grad_norm_name(r.norm)},
                   {"total_mass", r.total_mass},
                   {"component_mass", r.component_mass},
                   {"background", {{"mass", r.background_mass}, {"fraction", r.background_fraction}}},
                   {"cells", std::move(cells)}});
  }
  return arr.dump(2) + "\n";
}

std::string gradshare_to_csv(const std::vector<std::pair<std::string, GradShareReport>>& reports) {
  auto num = [](double v) { return nlohmann::json(v).dump(); };
  std::string out = "case,variant,class,stratum,components,mass,share\n";
  for (const auto& [id, r] : reports) {
    const std::string head = id + ',' + std::string(variant_name(r.variant)) + ',';
    for (const auto& c : r.cells) {
      out += head + std::to_string(c.class_id) + ',' + stratum_name(c.stratum) + ',' +
             std::to_string(c.components) + ',' + num(c.mass) + ',' + num(c.share) + '\n';
    }
    out += head + "background,,," + num(r.background_mass) + ',' + num(r.background_fraction) + '\n';
  }
  return out;
}

}  // namespace instseg
