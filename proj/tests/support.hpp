#pragma once

// Random generators and brute-force reference implementations for tests.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "instseg/geometry.hpp"
#include "instseg/grid.hpp"
#include "instseg/instances.hpp"
#include "instseg/losses.hpp"
#include "instseg/panoptic.hpp"

namespace testing_support {

using namespace instseg;

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
};

GridShape random_shape(Gen& g, std::int64_t max_dim, bool anisotropic);
BinaryMask random_mask(Gen& g, const GridShape& s, double density);
/// Background plus a handful of random boxes of random foreground classes.
LabelVolume random_labels(Gen& g, const GridShape& s, int num_classes, int max_boxes);
/// Softmax of uniform logits in [-scale, scale].
ProbVolume random_probs(Gen& g, const GridShape& s, int num_classes, double scale);

/// BFS labeling in z-major first-encounter order.
std::vector<std::int32_t> flood_fill(const BinaryMask& mask, int connectivity);

/// All-pairs nearest seed with the library's expression order and tie rule.
FeatureTransform brute_nearest_seed(const GridShape& s, const std::vector<std::int32_t>& seeds,
                                    DistanceUnits units);

/// Maximum total over all one-to-one partial matchings of feasible entries.
double brute_match_total(const std::vector<double>& dense, int rows, int cols, double tau);
/// Lexicographically smallest pair list among matchings within 1e-12 of the optimum.
std::vector<MatchPair> brute_match_pairs(const std::vector<double>& dense, int rows, int cols,
                                         double tau);

/// Instance loss assembled term by term from the public building blocks.
struct ReferenceLoss {
  double value = 0.0;
  std::vector<std::vector<double>> per_class;  // [c - 1][k - 1]
  ChannelField grad;
};
ReferenceLoss reference_instance_loss(const ProbVolume& prob, const LabelVolume& labels,
                                      const LossConfig& cfg);

/// Central differences of f at every entry of `prob` whose value lies in
/// (lo, hi); returns the maximum of |a - n| / max(|a|, |n|, floor).
struct FdResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
};
FdResult fd_check(const ProbVolume& prob, const ChannelField& analytic,
                  const std::function<double(const ProbVolume&)>& f, double h, double lo,
                  double hi, double floor);

/// NIfTI-1 writer that lays the header out byte by byte.
void write_nifti_bytes(const std::filesystem::path& path, std::int64_t nx, std::int64_t ny,
                       std::int64_t nz, const float pixdim[3], std::int16_t datatype,
                       const std::vector<unsigned char>& payload, float slope = 0.0f,
                       float inter = 0.0f);

std::filesystem::path temp_dir(const std::string& name);

}  // namespace testing_support
