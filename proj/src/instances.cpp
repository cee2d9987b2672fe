#include "instseg/instances.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "instseg/error.hpp"
#include "json.hpp"

namespace instseg {

Connectivity connectivity_from_int(int n) {
  switch (n) {
    case 6: return Connectivity::Six;
    case 18: return Connectivity::Eighteen;
    case 26: return Connectivity::TwentySix;
    default: throw InputError("connectivity must be 6, 18 or 26, got " + std::to_string(n));
  }
}

std::int64_t ComponentSet::foreground_voxels() const {
  return std::accumulate(sizes_voxels.begin(), sizes_voxels.end(), std::int64_t{0});
}

BinaryMask one_vs_rest(const LabelVolume& labels, int class_id) {
  if (class_id < 1 || class_id >= labels.num_classes()) {
    throw InputError("class id " + std::to_string(class_id) + " outside [1, " +
                     std::to_string(labels.num_classes()) + ")");
  }
  std::vector<std::uint8_t> m(labels.data().size());
  const auto c = static_cast<Label>(class_id);
  std::transform(labels.data().begin(), labels.data().end(), m.begin(),
                 [c](Label v) { return static_cast<std::uint8_t>(v == c); });
  return BinaryMask(labels.shape(), std::move(m));
}

namespace {

// Offsets to the neighbours already visited by a z-major raster scan.
std::vector<Index3> backward_offsets(Connectivity conn) {
  std::vector<Index3> out;
  const int max_nonzero = conn == Connectivity::Six ? 1 : conn == Connectivity::Eighteen ? 2 : 3;
  for (std::int64_t dz = -1; dz <= 0; ++dz) {
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        const bool before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
        if (!before) continue;
        const int nonzero = (dz != 0) + (dy != 0) + (dx != 0);
        if (nonzero <= max_nonzero) out.push_back({dz, dy, dx});
      }
    }
  }
  return out;
}

class DisjointSet {
 public:
  std::int32_t make() {
    parent_.push_back(static_cast<std::int32_t>(parent_.size()));
    return parent_.back();
  }
  std::int32_t root(std::int32_t n) {
    while (parent_[n] != n) {
      parent_[n] = parent_[parent_[n]];
      n = parent_[n];
    }
    return n;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = root(a);
    b = root(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }
  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<std::int32_t> parent_;
};

}  // namespace

ComponentSet connected_components(const BinaryMask& mask, Connectivity connectivity, int class_id) {
  const GridShape& s = mask.shape();
  const auto offsets = backward_offsets(connectivity);
  std::vector<std::int32_t> provisional(s.voxels(), -1);
  DisjointSet sets;

  for (std::int64_t z = 0; z < s.d; ++z) {
    for (std::int64_t y = 0; y < s.h; ++y) {
      for (std::int64_t x = 0; x < s.w; ++x) {
        const std::size_t i = s.index(z, y, x);
        if (!mask[i]) continue;
        std::int32_t label = -1;
        for (const auto& o : offsets) {
          const std::int64_t nz = z + o[0], ny = y + o[1], nx = x + o[2];
          if (!s.contains(nz, ny, nx)) continue;
          const std::int32_t nl = provisional[s.index(nz, ny, nx)];
          if (nl < 0) continue;
          if (label < 0) {
            label = nl;
          } else if (nl != label) {
            sets.unite(label, nl);
          }
        }
        provisional[i] = label < 0 ? sets.make() : label;
      }
    }
  }

  ComponentSet out;
  out.class_id = class_id;
  out.shape = s;
  out.component_map.assign(s.voxels(), 0);
  std::vector<std::int32_t> final_label(sets.size(), 0);
  for (std::size_t i = 0; i < s.voxels(); ++i) {
    if (provisional[i] < 0) continue;
    const std::int32_t r = sets.root(provisional[i]);
    if (final_label[r] == 0) {
      final_label[r] = ++out.num_components;
      out.sizes_voxels.push_back(0);
      const Index3 c = s.coords(i);
      out.boxes.push_back({c, {c[0] + 1, c[1] + 1, c[2] + 1}});
    }
    const std::int32_t k = final_label[r];
    out.component_map[i] = k;
    out.sizes_voxels[k - 1] += 1;
    auto& box = out.boxes[k - 1];
    const Index3 c = s.coords(i);
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = std::min(box.lo[a], c[a]);
      box.hi[a] = std::max(box.hi[a], c[a] + 1);
    }
  }
  out.sizes_mm3.reserve(out.sizes_voxels.size());
  for (auto n : out.sizes_voxels) out.sizes_mm3.push_back(static_cast<double>(n) * s.voxel_volume_mm3());
  return out;
}

void RegionSpec::validate(int num_classes) const {
  if (labels.empty()) throw InputError("region " + name + " has no labels");
  for (Label l : labels) {
    if (l >= num_classes) {
      throw InputError("region " + name + " uses label " + std::to_string(l) +
                       " but the volume has " + std::to_string(num_classes) + " classes");
    }
  }
}

std::vector<RegionSpec> brats_regions() {
  return {{"WT", {1, 2, 3}}, {"TC", {1, 3}}, {"ET", {3}}, {"RC", {4}}};
}

std::vector<RegionSpec> parse_regions(const std::string& text) {
  std::vector<RegionSpec> out;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw InputError("region spec '" + item + "' must look like NAME=1,2");
    }
    RegionSpec r;
    r.name = item.substr(0, eq);
    std::stringstream labels(item.substr(eq + 1));
    std::string tok;
    while (std::getline(labels, tok, ',')) {
      try {
        const int v = std::stoi(tok);
        if (v < 0 || v > 65535) throw InputError("bad label");
        r.labels.push_back(static_cast<Label>(v));
      } catch (const std::exception&) {
        throw InputError("bad label '" + tok + "' in region " + r.name);
      }
    }
    std::sort(r.labels.begin(), r.labels.end());
    r.labels.erase(std::unique(r.labels.begin(), r.labels.end()), r.labels.end());
    if (r.labels.empty()) throw InputError("region " + r.name + " has no labels");
    out.push_back(std::move(r));
  }
  if (out.empty()) throw InputError("no regions given");
  return out;
}

std::string format_regions(std::span<const RegionSpec> regions) {
  std::string out;
  for (const auto& r : regions) {
    if (!out.empty()) out += ';';
    out += r.name + '=';
    for (std::size_t i = 0; i < r.labels.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(r.labels[i]);
    }
  }
  return out;
}

BinaryMask derive_region(const LabelVolume& labels, const RegionSpec& spec) {
  spec.validate(labels.num_classes());
  std::vector<std::uint8_t> member(static_cast<std::size_t>(labels.num_classes()), 0);
  for (Label l : spec.labels) member[l] = 1;
  std::vector<std::uint8_t> m(labels.data().size());
  std::transform(labels.data().begin(), labels.data().end(), m.begin(),
                 [&](Label v) { return member[v]; });
  return BinaryMask(labels.shape(), std::move(m));
}

std::vector<ComponentStat> component_stats(const ComponentSet& comps, const GridShape& shape) {
  require_same_grid(comps.shape, shape, "components vs grid");
  std::vector<ComponentStat> out;
  for (int k = 1; k <= comps.num_components; ++k) {
    const auto n = comps.size(k);
    out.push_back({k, n, static_cast<double>(n) * shape.voxel_volume_mm3()});
  }
  return out;
}

std::vector<CaseRegionStats> case_region_stats(const LabelVolume& labels,
                                               std::span<const RegionSpec> regions,
                                               Connectivity connectivity) {
  std::vector<CaseRegionStats> out;
  for (const auto& r : regions) {
    const BinaryMask m = derive_region(labels, r);
    const ComponentSet cs = connected_components(m, connectivity);
    CaseRegionStats s;
    s.voxels = static_cast<std::int64_t>(m.count());
    s.present = s.voxels > 0;
    s.component_mm3 = cs.sizes_mm3;
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<double> lower_median(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  const std::size_t mid = (values.size() - 1) / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  return values[mid];
}

DatasetStats reduce_dataset_stats(std::span<const std::vector<CaseRegionStats>> cases,
                                  std::span<const RegionSpec> regions) {
  if (cases.empty()) throw InputError("dataset statistics need at least one case");
  DatasetStats out;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    RegionStats row;
    row.region = regions[r].name;
    row.num_cases = static_cast<std::int64_t>(cases.size());
    std::vector<double> pooled;
    for (const auto& c : cases) {
      if (c.size() != regions.size()) throw InputError("case statistics do not match the region list");
      const auto& s = c[r];
      row.cases_present += s.present ? 1 : 0;
      row.components += static_cast<std::int64_t>(s.component_mm3.size());
      row.total_voxels += s.voxels;
      pooled.insert(pooled.end(), s.component_mm3.begin(), s.component_mm3.end());
    }
    row.fraction = static_cast<double>(row.cases_present) / static_cast<double>(row.num_cases);
    row.median_mm3 = lower_median(std::move(pooled));
    out.regions.push_back(std::move(row));
  }
  return out;
}

DatasetStats dataset_stats(std::span<const LabelVolume> cases, std::span<const RegionSpec> regions,
                           Connectivity connectivity) {
  if (cases.empty()) throw InputError("dataset statistics need at least one case");
  std::vector<std::vector<CaseRegionStats>> partial;
  for (const auto& c : cases) {
    if (c.num_classes() != cases.front().num_classes()) {
      throw InputError("cases disagree on num_classes");
    }
    partial.push_back(case_region_stats(c, regions, connectivity));
  }
  return reduce_dataset_stats(partial, regions);
}

namespace {

std::string fmt_double(double v) {
  nlohmann::json j = v;
  return j.dump();
}

std::string with_thousands(std::int64_t n) {
  std::string digits = std::to_string(n < 0 ? -n : n);
  std::string out;
  const int lead = static_cast<int>(digits.size()) % 3;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i != 0 && (static_cast<int>(i) - lead) % 3 == 0) out += "{,}";
    out += digits[i];
  }
  return n < 0 ? "-" + out : out;
}

std::string abbreviate(std::int64_t n) {
  char buf[64];
  if (n >= 1'000'000) {
    std::snprintf(buf, sizeof buf, "%.1fM", static_cast<double>(n) / 1e6);
  } else if (n >= 1'000) {
    std::snprintf(buf, sizeof buf, "%.0fK", static_cast<double>(n) / 1e3);
  } else {
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(n));
  }
  return buf;
}

}  // namespace

std::string stats_to_csv(const DatasetStats& stats) {
  std::string out = "region,cases_present,fraction,components,median_mm3,total_voxels\n";
  for (const auto& r : stats.regions) {
    out += r.region + ',' + std::to_string(r.cases_present) + ',' + fmt_double(r.fraction) + ',' +
           std::to_string(r.components) + ',' + (r.median_mm3 ? fmt_double(*r.median_mm3) : "") +
           ',' + std::to_string(r.total_voxels) + '\n';
  }
  return out;
}

std::string stats_to_json(const DatasetStats& stats) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : stats.regions) {
    nlohmann::json row;
    row["region"] = r.region;
    row["cases_present"] = r.cases_present;
    row["num_cases"] = r.num_cases;
    row["fraction"] = r.fraction;
    row["components"] = r.components;
    row["median_mm3"] = r.median_mm3 ? nlohmann::json(*r.median_mm3) : nlohmann::json(nullptr);
    row["total_voxels"] = r.total_voxels;
    rows.push_back(std::move(row));
  }
  nlohmann::json doc;
  doc["regions"] = std::move(rows);
  return doc.dump(2) + "\n";
}

std::string stats_table_row(const RegionStats& row) {
  const long percent = std::lround(100.0 * row.fraction);
  std::string median = row.median_mm3 ? with_thousands(std::llround(*row.median_mm3)) : "--";
  return row.region + " & " + std::to_string(row.cases_present) + " (" + std::to_string(percent) +
         "\\%) & " + with_thousands(row.components) + " & " + median + " & " +
         abbreviate(row.total_voxels);
}

}  // namespace instseg
