#pragma once

// Core volume containers. Every volume is stored z-major: x varies fastest,
// z slowest, and all per-axis arrays are ordered (z, y, x).

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace instseg {

using Label = std::uint16_t;
using Index3 = std::array<std::int64_t, 3>;

struct GridShape {
  std::int64_t d = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;
  /// Voxel edge lengths in mm, (z, y, x).
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  GridShape() = default;
  GridShape(std::int64_t d_, std::int64_t h_, std::int64_t w_,
            std::array<double, 3> spacing_ = {1.0, 1.0, 1.0});

  /// Throws InputError unless every dimension is >= 1 and every spacing > 0.
  void validate() const;

  std::size_t voxels() const {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::array<std::int64_t, 3> dims() const { return {d, h, w}; }
  double voxel_volume_mm3() const { return spacing[0] * spacing[1] * spacing[2]; }

  std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>((z * h + y) * w + x);
  }
  Index3 coords(std::size_t i) const {
    const auto ii = static_cast<std::int64_t>(i);
    return {ii / (h * w), (ii / w) % h, ii % w};
  }
  bool contains(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return z >= 0 && z < d && y >= 0 && y < h && x >= 0 && x < w;
  }

  /// Same voxel dimensions; spacing is not compared.
  bool same_grid(const GridShape& other) const {
    return d == other.d && h == other.h && w == other.w;
  }

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

/// Throws InputError when two volumes do not share a grid.
void require_same_grid(const GridShape& a, const GridShape& b, const char* what);

class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(GridShape shape);
  BinaryMask(GridShape shape, std::vector<std::uint8_t> data);

  const GridShape& shape() const { return shape_; }
  std::span<const std::uint8_t> data() const { return data_; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  GridShape shape_;
  std::vector<std::uint8_t> data_;
};

class LabelVolume {
 public:
  LabelVolume() = default;
  /// Throws InputError if num_classes < 2 or any label >= num_classes.
  LabelVolume(GridShape shape, int num_classes, std::vector<Label> data);

  const GridShape& shape() const { return shape_; }
  int num_classes() const { return num_classes_; }
  std::span<const Label> data() const { return data_; }
  Label operator[](std::size_t i) const { return data_[i]; }

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  GridShape shape_;
  int num_classes_ = 2;
  std::vector<Label> data_;
};

/// A stack of C real fields on one grid, channel-major. Used for logits and
/// for gradients with respect to probabilities or logits.
class ChannelField {
 public:
  ChannelField() = default;
  ChannelField(GridShape shape, int channels);
  ChannelField(GridShape shape, int channels, std::vector<double> data);

  const GridShape& shape() const { return shape_; }
  int channels() const { return channels_; }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  std::span<const double> channel(int c) const;
  std::span<double> channel(int c);

  friend bool operator==(const ChannelField&, const ChannelField&) = default;

 private:
  GridShape shape_;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Per-class probabilities. Entries lie in [0, 1]; when normalized() the
/// per-voxel class sums equal 1 within 1e-6.
class ProbVolume {
 public:
  static constexpr double kSimplexTolerance = 1e-6;

  ProbVolume() = default;
  /// Validates ranges, and the simplex property when `normalized` is set.
  ProbVolume(GridShape shape, int num_classes, std::vector<double> data, bool normalized);

  const GridShape& shape() const { return field_.shape(); }
  int num_classes() const { return field_.channels(); }
  bool normalized() const { return normalized_; }
  std::span<const double> data() const { return field_.data(); }
  std::span<const double> channel(int c) const { return field_.channel(c); }
  const ChannelField& field() const { return field_; }

  /// Re-checks the simplex property and returns a copy flagged normalized.
  ProbVolume as_normalized() const;

 private:
  ChannelField field_;
  bool normalized_ = false;
};

/// Per-voxel softmax over channels with max subtraction.
ProbVolume softmax(const ChannelField& logits);

/// Chain rule through softmax: out_i = p_i * (g_i - sum_j p_j g_j) per voxel.
ChannelField backprop_logits(const ChannelField& grad_prob, const ProbVolume& prob);

}  // namespace instseg
