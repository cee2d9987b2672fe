#include "instseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "instseg/error.hpp"

namespace instseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Slack on parabola intersections, in voxel units. Anything within it of a
// query point is re-evaluated exactly, so it only has to exceed the
// rounding error of the intersection formula.
constexpr double kBoundarySlack = 1e-6;

struct Ghost {
  double at;
  std::int64_t vertex;
};

// One line of the transform. f/lab are inputs, out_f/out_lab outputs; all
// have length n. weight is the squared spacing along the line.
class LinePass {
 public:
  void run(std::span<const double> f, std::span<const std::int32_t> lab, double weight,
           std::span<double> out_f, std::span<std::int32_t> out_lab) {
    const auto n = static_cast<std::int64_t>(f.size());
    verts_.clear();
    bounds_.clear();
    ghosts_.clear();

    for (std::int64_t q = 0; q < n; ++q) {
      if (!std::isfinite(f[q])) continue;
      if (verts_.empty()) {
        verts_.push_back(q);
        bounds_.assign({-kInf, kInf});
        continue;
      }
      double s = 0.0;
      while (true) {
        const std::int64_t r = verts_.back();
        s = ((f[q] - f[r]) / weight + static_cast<double>(q * q - r * r)) /
            (2.0 * static_cast<double>(q - r));
        const double left = bounds_[verts_.size() - 1];
        if (s > left) break;
        // r never beats q right of s; it can only tie at its left boundary.
        if (left - s <= kBoundarySlack) ghosts_.push_back({left, r});
        verts_.pop_back();
        bounds_.pop_back();
        if (verts_.empty()) break;
      }
      if (verts_.empty()) {
        verts_.push_back(q);
        bounds_.assign({-kInf, kInf});
        continue;
      }
      bounds_.back() = s;
      verts_.push_back(q);
      bounds_.push_back(kInf);
    }

    if (verts_.empty()) {
      std::fill(out_f.begin(), out_f.end(), kInf);
      std::fill(out_lab.begin(), out_lab.end(), 0);
      return;
    }
    std::sort(ghosts_.begin(), ghosts_.end(),
              [](const Ghost& a, const Ghost& b) { return a.at < b.at; });

    std::size_t j = 0;
    std::size_t g = 0;
    const std::size_t m = verts_.size();
    for (std::int64_t p = 0; p < n; ++p) {
      const double pd = static_cast<double>(p);
      while (j + 1 < m && bounds_[j + 1] < pd - kBoundarySlack) ++j;
      double best = kInf;
      std::int32_t best_label = 0;
      auto consider = [&](std::int64_t v) {
        const std::int64_t dp = p - v;
        const double val = f[v] + weight * static_cast<double>(dp * dp);
        if (val < best || (val == best && lab[v] < best_label)) {
          best = val;
          best_label = lab[v];
        }
      };
      for (std::size_t k = j; k < m && bounds_[k] <= pd + kBoundarySlack; ++k) consider(verts_[k]);
      while (g < ghosts_.size() && ghosts_[g].at < pd - kBoundarySlack) ++g;
      for (std::size_t k = g; k < ghosts_.size() && ghosts_[k].at <= pd + kBoundarySlack; ++k) {
        consider(ghosts_[k].vertex);
      }
      out_f[p] = best;
      out_lab[p] = best_label;
    }
  }

 private:
  std::vector<std::int64_t> verts_;
  std::vector<double> bounds_;  // bounds_[k] is the left end of verts_[k]'s interval
  std::vector<Ghost> ghosts_;
};

// Applies the 1D pass along one axis in place.
void transform_axis(const GridShape& s, int axis, double weight, std::vector<double>& f,
                    std::vector<std::int32_t>& lab) {
  const std::int64_t n = axis == 0 ? s.d : axis == 1 ? s.h : s.w;
  const std::int64_t stride = axis == 0 ? s.h * s.w : axis == 1 ? s.w : 1;
  std::vector<double> in_f(static_cast<std::size_t>(n)), out_f(static_cast<std::size_t>(n));
  std::vector<std::int32_t> in_l(static_cast<std::size_t>(n)), out_l(static_cast<std::size_t>(n));
  LinePass pass;
  for (std::size_t start = 0; start < s.voxels(); ++start) {
    // A line starts wherever the coordinate along `axis` is zero.
    const Index3 c = s.coords(start);
    if (c[axis] != 0) continue;
    for (std::int64_t i = 0; i < n; ++i) {
      const std::size_t idx = start + static_cast<std::size_t>(i * stride);
      in_f[i] = f[idx];
      in_l[i] = lab[idx];
    }
    pass.run(in_f, in_l, weight, out_f, out_l);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::size_t idx = start + static_cast<std::size_t>(i * stride);
      f[idx] = out_f[i];
      lab[idx] = out_l[i];
    }
  }
}

}  // namespace

std::array<double, 3> axis_weights(const GridShape& shape, DistanceUnits units) {
  if (units == DistanceUnits::Voxel) return {1.0, 1.0, 1.0};
  return {shape.spacing[0] * shape.spacing[0], shape.spacing[1] * shape.spacing[1],
          shape.spacing[2] * shape.spacing[2]};
}

FeatureTransform nearest_seed_transform(const GridShape& shape,
                                        std::span<const std::int32_t> seed_labels,
                                        DistanceUnits units) {
  if (seed_labels.size() != shape.voxels()) throw InputError("seed map does not match its grid");
  FeatureTransform ft;
  ft.sq_distance.resize(shape.voxels());
  ft.label.assign(seed_labels.begin(), seed_labels.end());
  for (std::size_t i = 0; i < shape.voxels(); ++i) {
    ft.sq_distance[i] = seed_labels[i] > 0 ? 0.0 : kInf;
    if (seed_labels[i] < 0) throw InputError("seed labels must be nonnegative");
  }
  const auto w = axis_weights(shape, units);
  transform_axis(shape, 2, w[2], ft.sq_distance, ft.label);
  transform_axis(shape, 1, w[1], ft.sq_distance, ft.label);
  transform_axis(shape, 0, w[0], ft.sq_distance, ft.label);
  return ft;
}

DistanceField edt(const BinaryMask& seeds, DistanceUnits units) {
  if (seeds.empty()) throw InputError("distance transform needs at least one seed voxel");
  std::vector<std::int32_t> labels(seeds.data().begin(), seeds.data().end());
  FeatureTransform ft = nearest_seed_transform(seeds.shape(), labels, units);
  DistanceField out{seeds.shape(), units, std::move(ft.sq_distance)};
  for (auto& v : out.data) v = std::sqrt(v);
  return out;
}

VoronoiPartition voronoi_partition(const ComponentSet& comps, DistanceUnits units) {
  if (comps.num_components == 0) {
    throw InputError("Voronoi partition of class " + std::to_string(comps.class_id) +
                     " needs at least one component");
  }
  FeatureTransform ft = nearest_seed_transform(comps.shape, comps.component_map, units);
  VoronoiPartition out;
  out.class_id = comps.class_id;
  out.shape = comps.shape;
  out.num_cells = comps.num_components;
  out.cell_map = std::move(ft.label);
  out.cell_sizes.assign(static_cast<std::size_t>(out.num_cells), 0);
  const auto big = std::numeric_limits<std::int64_t>::max();
  out.boxes.assign(static_cast<std::size_t>(out.num_cells),
                   BoundingBox{{big, big, big}, {-1, -1, -1}});
  for (std::size_t i = 0; i < out.cell_map.size(); ++i) {
    const std::int32_t k = out.cell_map[i];
    out.cell_sizes[k - 1] += 1;
    auto& box = out.boxes[k - 1];
    const Index3 c = out.shape.coords(i);
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = std::min(box.lo[a], c[a]);
      box.hi[a] = std::max(box.hi[a], c[a] + 1);
    }
  }
  return out;
}

}  // namespace instseg
