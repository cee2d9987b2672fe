#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "instseg/grid.hpp"

namespace instseg {

enum class FileFormat {
  RawSidecar,  ///< <stem>.raw payload + <stem>.json sidecar
  Nifti1,      ///< single-file .nii, or gzip-compressed when the path ends in .nii.gz
};

enum class DType { U8, I16, F32 };

const char* dtype_name(DType t);

/// Guesses the format from the file name: .nii / .nii.gz are NIfTI-1,
/// everything else is raw+sidecar.
FileFormat format_from_path(const std::filesystem::path& path);

/// True for names this module can read (.raw, .json, .nii, .nii.gz).
bool is_volume_file(const std::filesystem::path& path);

/// Strips .raw/.json/.nii/.nii.gz from a file name.
std::string volume_stem(const std::filesystem::path& path);

/// Reads an integer label volume. num_classes comes from the sidecar (or
/// the NIfTI description field written by save_labels); when neither has
/// it, max label + 1 is used (at least 2). An explicit `num_classes`
/// overrides the file and is validated against the payload.
LabelVolume load_labels(const std::filesystem::path& path,
                        std::optional<int> num_classes = std::nullopt);

/// Reads one real scalar field (one class channel).
struct ScalarVolume {
  GridShape shape;
  std::vector<double> data;
};
ScalarVolume load_scalar(const std::filesystem::path& path);

/// Assembles a probability volume from one file per class, in class order.
/// A missing file raises InputError("missing channel: ...").
ProbVolume load_probs(std::span<const std::filesystem::path> channel_paths,
                      bool require_normalized = true);

/// Same, but the files hold logits; softmax is applied after loading.
ProbVolume load_logits(std::span<const std::filesystem::path> channel_paths);

/// Label payloads use the narrowest dtype that holds num_classes - 1.
void save_labels(const LabelVolume& vol, const std::filesystem::path& path, FileFormat format);

void save_scalar(const GridShape& shape, std::span<const double> data,
                 const std::filesystem::path& path, FileFormat format, int num_classes = 1,
                 DType dtype = DType::F32);

/// Writes one file per class named <stem>_<c><ext> and returns the paths.
/// Probabilities are stored as f32; any integer dtype raises InputError.
std::vector<std::filesystem::path> save_probs(const ProbVolume& prob,
                                              const std::filesystem::path& stem,
                                              FileFormat format, DType dtype = DType::F32);

/// Debug dump of a per-voxel integer map (component or Voronoi cell ids).
void save_index_map(const GridShape& shape, std::span<const std::int32_t> data,
                    const std::filesystem::path& path);

}  // namespace instseg
