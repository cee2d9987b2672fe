#pragma once

// Synthetic label volumes made of balls, with optionally corrupted
// predictions whose instance structure is known exactly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "instseg/grid.hpp"
#include "instseg/volume_io.hpp"

namespace instseg {

struct SynthClassSpec {
  int label = 1;
  double presence = 1.0;  // probability that a case contains the class
  int count_min = 1;      // component count, uniform in [count_min, count_max]
  int count_max = 1;
  double radius_min_mm = 2.0;  // radius, uniform in [radius_min_mm, radius_max_mm]
  double radius_max_mm = 4.0;

  /// Parses "label:presence:count_min:count_max:radius_min:radius_max".
  static SynthClassSpec parse(const std::string& text);
};

struct SynthSpec {
  GridShape shape{32, 32, 32};
  int num_classes = 3;
  std::vector<SynthClassSpec> classes;
  int num_cases = 10;
  std::uint64_t seed = 0;
  int max_attempts = 1000;  // placement attempts per instance

  // Prediction corruption: each instance is dropped with probability
  // drop_prob, surviving instances shrink by erode_voxels * min spacing.
  bool predictions = false;
  double drop_prob = 0.0;
  double erode_voxels = 0.0;

  // Probabilities: softmax(sharpness * onehot(prediction) + noise * U(-1, 1)).
  // Built from the prediction when there is one, otherwise from the labels.
  bool probabilities = false;
  double sharpness = 4.0;
  double noise = 0.5;

  void validate() const;
};

struct PlantedInstance {
  int class_label = 0;
  Index3 center{0, 0, 0};
  double radius_mm = 0.0;
  std::int64_t voxels = 0;
  bool dropped = false;
  std::int64_t pred_voxels = 0;  // 0 when dropped or without predictions
};

struct SynthCase {
  std::string case_id;
  LabelVolume labels;
  std::optional<LabelVolume> prediction;
  std::optional<ProbVolume> probabilities;
  std::vector<PlantedInstance> instances;
};

std::string synth_case_id(int index);

/// Deterministic in (spec, index). Throws InputError naming the class when
/// an instance cannot be placed within max_attempts.
SynthCase synth_case(const SynthSpec& spec, int index);

/// Writes every case into `dir` as <id>_gt, <id>_pred and <id>_prob_<c>
/// volumes plus manifest.json, and returns the manifest text. `extension`
/// is ".raw", ".nii" or ".nii.gz".
std::string synth_generate(const SynthSpec& spec, const std::filesystem::path& dir,
                           const std::string& extension, int threads);

std::string synth_manifest_json(const SynthSpec& spec, const std::vector<SynthCase>& cases);

}  // namespace instseg
