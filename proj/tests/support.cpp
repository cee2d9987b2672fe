#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>

namespace testing_support {

GridShape random_shape(Gen& g, std::int64_t max_dim, bool anisotropic) {
  std::array<double, 3> sp{1.0, 1.0, 1.0};
  if (anisotropic) {
    for (auto& s : sp) s = g.uniform(0.4, 2.5);
  }
  return GridShape(g.integer(1, max_dim), g.integer(1, max_dim), g.integer(1, max_dim), sp);
}

BinaryMask random_mask(Gen& g, const GridShape& s, double density) {
  std::vector<std::uint8_t> d(s.voxels());
  for (auto& v : d) v = g.bernoulli(density) ? 1 : 0;
  return BinaryMask(s, std::move(d));
}

LabelVolume random_labels(Gen& g, const GridShape& s, int num_classes, int max_boxes) {
  std::vector<Label> d(s.voxels(), 0);
  const auto boxes = g.integer(0, max_boxes);
  for (std::int64_t b = 0; b < boxes; ++b) {
    const auto c = static_cast<Label>(g.integer(1, num_classes - 1));
    const std::int64_t z0 = g.integer(0, s.d - 1), y0 = g.integer(0, s.h - 1), x0 = g.integer(0, s.w - 1);
    const std::int64_t z1 = std::min(s.d, z0 + g.integer(1, 3));
    const std::int64_t y1 = std::min(s.h, y0 + g.integer(1, 3));
    const std::int64_t x1 = std::min(s.w, x0 + g.integer(1, 3));
    for (std::int64_t z = z0; z < z1; ++z)
      for (std::int64_t y = y0; y < y1; ++y)
        for (std::int64_t x = x0; x < x1; ++x) d[s.index(z, y, x)] = c;
  }
  return LabelVolume(s, num_classes, std::move(d));
}

ProbVolume random_probs(Gen& g, const GridShape& s, int num_classes, double scale) {
  ChannelField logits(s, num_classes);
  for (auto& v : logits.data()) v = g.uniform(-scale, scale);
  return softmax(logits);
}

std::vector<std::int32_t> flood_fill(const BinaryMask& mask, int connectivity) {
  const GridShape& s = mask.shape();
  std::vector<std::int32_t> out(s.voxels(), 0);
  std::int32_t next = 0;
  for (std::size_t start = 0; start < s.voxels(); ++start) {
    if (!mask[start] || out[start] != 0) continue;
    out[start] = ++next;
    std::deque<std::size_t> queue{start};
    while (!queue.empty()) {
      const Index3 c = s.coords(queue.front());
      queue.pop_front();
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int order = std::abs(dz) + std::abs(dy) + std::abs(dx);
            if (order == 0) continue;
            if (connectivity == 6 && order > 1) continue;
            if (connectivity == 18 && order > 2) continue;
            const std::int64_t z = c[0] + dz, y = c[1] + dy, x = c[2] + dx;
            if (!s.contains(z, y, x)) continue;
            const std::size_t j = s.index(z, y, x);
            if (mask[j] && out[j] == 0) {
              out[j] = next;
              queue.push_back(j);
            }
          }
    }
  }
  return out;
}

FeatureTransform brute_nearest_seed(const GridShape& s, const std::vector<std::int32_t>& seeds,
                                    DistanceUnits units) {
  const auto w = axis_weights(s, units);
  std::vector<std::size_t> seed_list;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (seeds[i] > 0) seed_list.push_back(i);
  }
  FeatureTransform ft;
  ft.sq_distance.assign(s.voxels(), std::numeric_limits<double>::infinity());
  ft.label.assign(s.voxels(), 0);
  for (std::size_t v = 0; v < s.voxels(); ++v) {
    const Index3 a = s.coords(v);
    for (std::size_t q : seed_list) {
      const Index3 b = s.coords(q);
      const std::int64_t dz = a[0] - b[0], dy = a[1] - b[1], dx = a[2] - b[2];
      const double val = ((w[2] * static_cast<double>(dx * dx)) + w[1] * static_cast<double>(dy * dy)) +
                         w[0] * static_cast<double>(dz * dz);
      if (val < ft.sq_distance[v] || (val == ft.sq_distance[v] && seeds[q] < ft.label[v])) {
        ft.sq_distance[v] = val;
        ft.label[v] = seeds[q];
      }
    }
  }
  return ft;
}

namespace {

bool feasible(double v, double tau) { return v > 0.0 && v >= tau; }

void enumerate(const std::vector<double>& dense, int rows, int cols, double tau, int row,
               std::vector<char>& used, std::vector<MatchPair>& current, double total,
               const std::function<void(const std::vector<MatchPair>&, double)>& visit) {
  if (row == rows) {
    visit(current, total);
    return;
  }
  for (int j = 0; j < cols; ++j) {
    const double v = dense[static_cast<std::size_t>(row * cols + j)];
    if (used[j] || !feasible(v, tau)) continue;
    used[j] = 1;
    current.push_back({row, j, v});
    enumerate(dense, rows, cols, tau, row + 1, used, current, total + v, visit);
    current.pop_back();
    used[j] = 0;
  }
  enumerate(dense, rows, cols, tau, row + 1, used, current, total, visit);
}

bool lex_less(const std::vector<MatchPair>& a, const std::vector<MatchPair>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                      [](const MatchPair& x, const MatchPair& y) {
                                        return std::pair{x.pred, x.gt} < std::pair{y.pred, y.gt};
                                      });
}

}  // namespace

double brute_match_total(const std::vector<double>& dense, int rows, int cols, double tau) {
  double best = 0.0;
  std::vector<char> used(static_cast<std::size_t>(cols), 0);
  std::vector<MatchPair> cur;
  enumerate(dense, rows, cols, tau, 0, used, cur, 0.0,
            [&](const std::vector<MatchPair>&, double t) { best = std::max(best, t); });
  return best;
}

std::vector<MatchPair> brute_match_pairs(const std::vector<double>& dense, int rows, int cols,
                                         double tau) {
  const double best = brute_match_total(dense, rows, cols, tau);
  std::vector<MatchPair> chosen;
  bool have = false;
  std::vector<char> used(static_cast<std::size_t>(cols), 0);
  std::vector<MatchPair> cur;
  enumerate(dense, rows, cols, tau, 0, used, cur, 0.0,
            [&](const std::vector<MatchPair>& m, double t) {
              if (t < best - 1e-12) return;
              if (!have || lex_less(m, chosen)) {
                chosen = m;
                have = true;
              }
            });
  return chosen;
}

ReferenceLoss reference_instance_loss(const ProbVolume& prob, const LabelVolume& labels,
                                      const LossConfig& cfg) {
  const int classes = labels.num_classes();
  const bool voronoi = cfg.variant == LossVariant::CC || cfg.variant == LossVariant::IwlCC;
  const bool iwl = cfg.variant == LossVariant::IwlBlob || cfg.variant == LossVariant::IwlCC;
  ReferenceLoss out;
  out.grad = ChannelField(labels.shape(), classes);
  std::vector<ComponentSet> comps;
  int active = 0;
  for (int c = 1; c < classes; ++c) {
    comps.push_back(connected_components(one_vs_rest(labels, c), cfg.connectivity, c));
    if (comps.back().num_components > 0) ++active;
  }
  out.per_class.resize(static_cast<std::size_t>(classes - 1));
  if (active == 0) return out;
  double outer = 0.0;
  for (int c = 1; c < classes; ++c) {
    const ComponentSet& cs = comps[static_cast<std::size_t>(c - 1)];
    if (cs.num_components == 0) continue;
    const BinaryMask target_mask = one_vs_rest(labels, c);
    const std::vector<std::uint8_t> target(target_mask.data().begin(), target_mask.data().end());
    VoronoiPartition cells;
    if (voronoi) cells = voronoi_partition(cs, cfg.units);
    const double scale = 1.0 / (active * static_cast<double>(cs.num_components));
    double inner = 0.0;
    auto g = out.grad.channel(c);
    for (int k = 1; k <= cs.num_components; ++k) {
      const DomainMask dom = voronoi ? voronoi_domain(cells, k) : blob_domain(cs, k);
      const WeightMap w = iwl ? iwl_weight_map(cs, k, dom, cfg.iwl_scope, cfg.weight_lo, cfg.weight_hi)
                              : WeightMap::uniform(labels.shape());
      const TermResult d = soft_dice(prob.channel(c), target, dom, w, cfg.dice_smooth);
      const TermResult e = binary_ce(prob.channel(c), target, dom, w, cfg.ce_clip);
      const double l = d.value + e.value;
      out.per_class[static_cast<std::size_t>(c - 1)].push_back(l);
      inner += l;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * (d.grad[i] + e.grad[i]);
    }
    outer += inner / cs.num_components;
  }
  out.value = outer / active;
  return out;
}

FdResult fd_check(const ProbVolume& prob, const ChannelField& analytic,
                  const std::function<double(const ProbVolume&)>& f, double h, double lo,
                  double hi, double floor) {
  FdResult r;
  std::vector<double> data(prob.data().begin(), prob.data().end());
  const auto a = analytic.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double p = data[i];
    if (!(p > lo && p < hi)) continue;
    data[i] = p + h;
    const double up = f(ProbVolume(prob.shape(), prob.num_classes(), data, false));
    data[i] = p - h;
    const double down = f(ProbVolume(prob.shape(), prob.num_classes(), data, false));
    data[i] = p;
    const double n = (up - down) / (2.0 * h);
    const double rel = std::abs(a[i] - n) / std::max({std::abs(a[i]), std::abs(n), floor});
    r.max_rel = std::max(r.max_rel, rel);
    ++r.checked;
  }
  return r;
}

namespace {

template <class T>
void put(std::vector<unsigned char>& buf, std::size_t offset, T value) {
  std::memcpy(buf.data() + offset, &value, sizeof value);
}

}  // namespace

void write_nifti_bytes(const std::filesystem::path& path, std::int64_t nx, std::int64_t ny,
                       std::int64_t nz, const float pixdim[3], std::int16_t datatype,
                       const std::vector<unsigned char>& payload, float slope, float inter) {
  std::vector<unsigned char> buf(352, 0);
  put<std::int32_t>(buf, 0, 348);
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(nx), static_cast<std::int16_t>(ny),
                                static_cast<std::int16_t>(nz), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(buf, 40 + 2 * static_cast<std::size_t>(i), dims[i]);
  const std::int16_t bitpix = datatype == 2 ? 8 : datatype == 4 ? 16 : 32;
  put<std::int16_t>(buf, 70, datatype);
  put<std::int16_t>(buf, 72, bitpix);
  const float pd[8] = {1.0f, pixdim[0], pixdim[1], pixdim[2], 1.0f, 1.0f, 1.0f, 1.0f};
  for (int i = 0; i < 8; ++i) put<float>(buf, 76 + 4 * static_cast<std::size_t>(i), pd[i]);
  put<float>(buf, 108, 352.0f);
  put<float>(buf, 112, slope);
  put<float>(buf, 116, inter);
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  buf.insert(buf.end(), payload.begin(), payload.end());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("instseg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
