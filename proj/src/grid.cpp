#include "instseg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "instseg/error.hpp"

namespace instseg {

GridShape::GridShape(std::int64_t d_, std::int64_t h_, std::int64_t w_,
                     std::array<double, 3> spacing_)
    : d(d_), h(h_), w(w_), spacing(spacing_) {
  validate();
}

void GridShape::validate() const {
  if (d < 1 || h < 1 || w < 1) {
    throw InputError("grid dimensions must be >= 1, got " + std::to_string(d) + "x" +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw InputError("grid spacing must be positive and finite");
    }
  }
}

void require_same_grid(const GridShape& a, const GridShape& b, const char* what) {
  if (!a.same_grid(b)) {
    throw InputError(std::string("grid mismatch: ") + what);
  }
}

BinaryMask::BinaryMask(GridShape shape) : shape_(shape), data_(shape.voxels(), 0) {
  shape_.validate();
}

BinaryMask::BinaryMask(GridShape shape, std::vector<std::uint8_t> data)
    : shape_(shape), data_(std::move(data)) {
  shape_.validate();
  if (data_.size() != shape_.voxels()) {
    throw InputError("mask payload does not match its grid");
  }
  for (auto& v : data_) v = v ? 1 : 0;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

LabelVolume::LabelVolume(GridShape shape, int num_classes, std::vector<Label> data)
    : shape_(shape), num_classes_(num_classes), data_(std::move(data)) {
  shape_.validate();
  if (num_classes_ < 2) {
    throw InputError("num_classes must be >= 2");
  }
  if (data_.size() != shape_.voxels()) {
    throw InputError("label payload does not match its grid");
  }
  for (Label v : data_) {
    if (v >= num_classes_) {
      throw InputError("label value " + std::to_string(v) + " >= num_classes " +
                       std::to_string(num_classes_));
    }
  }
}

ChannelField::ChannelField(GridShape shape, int channels)
    : shape_(shape), channels_(channels),
      data_(static_cast<std::size_t>(channels) * shape.voxels(), 0.0) {
  shape_.validate();
  if (channels_ < 1) throw InputError("channel count must be >= 1");
}

ChannelField::ChannelField(GridShape shape, int channels, std::vector<double> data)
    : shape_(shape), channels_(channels), data_(std::move(data)) {
  shape_.validate();
  if (channels_ < 1) throw InputError("channel count must be >= 1");
  if (data_.size() != static_cast<std::size_t>(channels_) * shape_.voxels()) {
    throw InputError("channel payload does not match its grid");
  }
}

std::span<const double> ChannelField::channel(int c) const {
  const std::size_t n = shape_.voxels();
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(c) * n, n);
}

std::span<double> ChannelField::channel(int c) {
  const std::size_t n = shape_.voxels();
  return std::span<double>(data_).subspan(static_cast<std::size_t>(c) * n, n);
}

namespace {

void check_simplex(const ChannelField& f) {
  const std::size_t n = f.shape().voxels();
  const auto all = f.data();
  for (std::size_t v = 0; v < n; ++v) {
    double sum = 0.0;
    for (int c = 0; c < f.channels(); ++c) sum += all[static_cast<std::size_t>(c) * n + v];
    if (std::abs(sum - 1.0) > ProbVolume::kSimplexTolerance) {
      throw InputError("probabilities do not sum to 1 at voxel " + std::to_string(v));
    }
  }
}

}  // namespace

ProbVolume::ProbVolume(GridShape shape, int num_classes, std::vector<double> data,
                       bool normalized)
    : field_(shape, num_classes, std::move(data)), normalized_(normalized) {
  for (double p : field_.data()) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw InputError("probability outside [0, 1]");
    }
  }
  if (normalized_) check_simplex(field_);
}

ProbVolume ProbVolume::as_normalized() const {
  check_simplex(field_);
  ProbVolume out = *this;
  out.normalized_ = true;
  return out;
}

ProbVolume softmax(const ChannelField& logits) {
  const std::size_t n = logits.shape().voxels();
  const int channels = logits.channels();
  const auto in = logits.data();
  for (double v : in) {
    if (!std::isfinite(v)) throw InputError("non-finite logit");
  }
  std::vector<double> out(in.size());
  std::vector<double> e(static_cast<std::size_t>(channels));
  for (std::size_t v = 0; v < n; ++v) {
    double mx = in[v];
    for (int c = 1; c < channels; ++c) mx = std::max(mx, in[static_cast<std::size_t>(c) * n + v]);
    double sum = 0.0;
    for (int c = 0; c < channels; ++c) {
      e[c] = std::exp(in[static_cast<std::size_t>(c) * n + v] - mx);
      sum += e[c];
    }
    for (int c = 0; c < channels; ++c) out[static_cast<std::size_t>(c) * n + v] = e[c] / sum;
  }
  return ProbVolume(logits.shape(), channels, std::move(out), true);
}

ChannelField backprop_logits(const ChannelField& grad_prob, const ProbVolume& prob) {
  require_same_grid(grad_prob.shape(), prob.shape(), "gradient vs probabilities");
  if (grad_prob.channels() != prob.num_classes()) {
    throw InputError("gradient channel count differs from class count");
  }
  if (!prob.normalized()) {
    throw InputError("softmax backpropagation needs normalized probabilities");
  }
  const std::size_t n = prob.shape().voxels();
  const int channels = prob.num_classes();
  const auto g = grad_prob.data();
  const auto p = prob.data();
  ChannelField out(prob.shape(), channels);
  auto o = out.data();
  for (std::size_t v = 0; v < n; ++v) {
    double dot = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t i = static_cast<std::size_t>(c) * n + v;
      dot += p[i] * g[i];
    }
    for (int c = 0; c < channels; ++c) {
      const std::size_t i = static_cast<std::size_t>(c) * n + v;
      o[i] = p[i] * (g[i] - dot);
    }
  }
  return out;
}

}  // namespace instseg
