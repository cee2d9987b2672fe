#include "instseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "instseg/error.hpp"
#include "instseg/parallel.hpp"
#include "json.hpp"

namespace instseg {

namespace fs = std::filesystem;

SynthClassSpec SynthClassSpec::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
  if (parts.size() != 6) {
    throw InputError("class spec '" + text +
                     "' must look like label:presence:count_min:count_max:radius_min:radius_max");
  }
  SynthClassSpec c;
  try {
    c.label = std::stoi(parts[0]);
    c.presence = std::stod(parts[1]);
    c.count_min = std::stoi(parts[2]);
    c.count_max = std::stoi(parts[3]);
    c.radius_min_mm = std::stod(parts[4]);
    c.radius_max_mm = std::stod(parts[5]);
  } catch (const std::exception&) {
    throw InputError("class spec '" + text + "' has a non-numeric field");
  }
  return c;
}

void SynthSpec::validate() const {
  shape.validate();
  if (num_classes < 2) throw InputError("synthetic volumes need num_classes >= 2");
  if (num_cases < 1) throw InputError("at least one case is required");
  if (max_attempts < 1) throw InputError("max_attempts must be >= 1");
  for (const auto& c : classes) {
    const std::string who = "class " + std::to_string(c.label);
    if (c.label < 1 || c.label >= num_classes) throw InputError(who + " is outside [1, num_classes)");
    if (!(c.presence >= 0.0 && c.presence <= 1.0)) throw InputError(who + ": presence must lie in [0, 1]");
    if (c.count_min < 0 || c.count_max < c.count_min) throw InputError(who + ": bad component count range");
    if (!(c.radius_min_mm > 0.0) || c.radius_max_mm < c.radius_min_mm) {
      throw InputError(who + ": radii must be positive with min <= max");
    }
  }
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) throw InputError("drop probability must lie in [0, 1]");
  if (!(erode_voxels >= 0.0)) throw InputError("erosion must be >= 0");
  if (!(sharpness >= 0.0) || !(noise >= 0.0)) throw InputError("sharpness and noise must be >= 0");
}

std::string synth_case_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%04d", index);
  return buf;
}

namespace {

class Rng {
 public:
  Rng(std::uint64_t seed, int index, int stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(stream)};
    engine_.seed(seq);
  }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

 private:
  std::mt19937_64 engine_;
};

// Voxels whose centres lie within radius of the centre voxel, in mm.
// Returns false if any of them falls outside the grid.
bool ball_voxels(const GridShape& s, const Index3& c, double r, std::vector<std::size_t>& out) {
  out.clear();
  const auto& sp = s.spacing;
  std::array<std::int64_t, 3> ext{};
  for (int a = 0; a < 3; ++a) ext[a] = static_cast<std::int64_t>(std::floor(r / sp[a])) + 1;
  for (std::int64_t dz = -ext[0]; dz <= ext[0]; ++dz) {
    for (std::int64_t dy = -ext[1]; dy <= ext[1]; ++dy) {
      for (std::int64_t dx = -ext[2]; dx <= ext[2]; ++dx) {
        const double q = (dz * sp[0]) * (dz * sp[0]) + (dy * sp[1]) * (dy * sp[1]) +
                         (dx * sp[2]) * (dx * sp[2]);
        if (q > r * r) continue;
        const std::int64_t z = c[0] + dz, y = c[1] + dy, x = c[2] + dx;
        if (!s.contains(z, y, x)) return false;
        out.push_back(s.index(z, y, x));
      }
    }
  }
  return true;
}

void block_neighbourhood(const GridShape& s, const std::vector<std::size_t>& voxels,
                         std::vector<std::uint8_t>& blocked) {
  for (std::size_t i : voxels) {
    const Index3 c = s.coords(i);
    for (std::int64_t dz = -1; dz <= 1; ++dz) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          if (s.contains(c[0] + dz, c[1] + dy, c[2] + dx)) {
            blocked[s.index(c[0] + dz, c[1] + dy, c[2] + dx)] = 1;
          }
        }
      }
    }
  }
}

ProbVolume make_probabilities(const LabelVolume& source, const SynthSpec& spec, Rng& rng) {
  const std::size_t n = source.shape().voxels();
  const int classes = source.num_classes();
  ChannelField logits(source.shape(), classes);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < classes; ++c) {
      logits.channel(c)[i] =
          (source[i] == c ? spec.sharpness : 0.0) + spec.noise * rng.uniform(-1.0, 1.0);
    }
  }
  return softmax(logits);
}

}  // namespace

SynthCase synth_case(const SynthSpec& spec, int index) {
  spec.validate();
  const GridShape& s = spec.shape;
  const std::size_t n = s.voxels();
  Rng layout(spec.seed, index, 0);
  Rng corruption(spec.seed, index, 1);
  Rng noise(spec.seed, index, 2);

  std::vector<Label> gt(n, 0), pred(n, 0);
  std::vector<std::uint8_t> blocked(n, 0);
  std::vector<std::size_t> voxels, pred_voxels;
  const double min_spacing = std::min({s.spacing[0], s.spacing[1], s.spacing[2]});

  SynthCase out;
  out.case_id = synth_case_id(index);
  for (const auto& cls : spec.classes) {
    if (!(layout.uniform() < cls.presence)) continue;
    const auto count = layout.integer(cls.count_min, cls.count_max);
    for (std::int64_t k = 0; k < count; ++k) {
      const double r = layout.uniform(cls.radius_min_mm, cls.radius_max_mm);
      bool placed = false;
      Index3 centre{};
      for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
        const auto dims = s.dims();
        for (int a = 0; a < 3; ++a) {
          const auto reach = static_cast<std::int64_t>(std::floor(r / s.spacing[a]));
          if (2 * reach >= dims[a]) {
            centre[a] = -1;
            continue;
          }
          centre[a] = layout.integer(reach, dims[a] - 1 - reach);
        }
        if (centre[0] < 0 || centre[1] < 0 || centre[2] < 0) continue;
        if (!ball_voxels(s, centre, r, voxels)) continue;
        placed = std::none_of(voxels.begin(), voxels.end(),
                              [&](std::size_t i) { return blocked[i] != 0; });
      }
      if (!placed) {
        throw InputError("cannot place component " + std::to_string(k + 1) + " of class " +
                         std::to_string(cls.label) + " in " + out.case_id + " after " +
                         std::to_string(spec.max_attempts) + " attempts");
      }
      for (std::size_t i : voxels) gt[i] = static_cast<Label>(cls.label);
      block_neighbourhood(s, voxels, blocked);

      PlantedInstance inst;
      inst.class_label = cls.label;
      inst.center = centre;
      inst.radius_mm = r;
      inst.voxels = static_cast<std::int64_t>(voxels.size());
      if (spec.predictions) {
        inst.dropped = corruption.uniform() < spec.drop_prob;
        if (!inst.dropped) {
          const double pr = std::max(0.0, r - spec.erode_voxels * min_spacing);
          ball_voxels(s, centre, pr, pred_voxels);
          for (std::size_t i : pred_voxels) pred[i] = static_cast<Label>(cls.label);
          inst.pred_voxels = static_cast<std::int64_t>(pred_voxels.size());
        }
      }
      out.instances.push_back(inst);
    }
  }

  out.labels = LabelVolume(s, spec.num_classes, std::move(gt));
  if (spec.predictions) out.prediction = LabelVolume(s, spec.num_classes, std::move(pred));
  if (spec.probabilities) {
    out.probabilities =
        make_probabilities(out.prediction ? *out.prediction : out.labels, spec, noise);
  }
  return out;
}

namespace {

nlohmann::json instances_json(const std::vector<PlantedInstance>& instances) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& i : instances) {
    arr.push_back({{"class", i.class_label},
                   {"center", i.center},
                   {"radius_mm", i.radius_mm},
                   {"voxels", i.voxels},
                   {"dropped", i.dropped},
                   {"pred_voxels", i.pred_voxels}});
  }
  return arr;
}

std::string manifest_text(const SynthSpec& spec, const std::vector<std::string>& ids,
                          const std::vector<std::vector<PlantedInstance>>& instances) {
  nlohmann::json j;
  j["seed"] = spec.seed;
  j["num_cases"] = spec.num_cases;
  j["num_classes"] = spec.num_classes;
  j["dims"] = spec.shape.dims();
  j["spacing"] = spec.shape.spacing;
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : spec.classes) {
    classes.push_back({{"label", c.label},
                       {"presence", c.presence},
                       {"count_min", c.count_min},
                       {"count_max", c.count_max},
                       {"radius_min_mm", c.radius_min_mm},
                       {"radius_max_mm", c.radius_max_mm}});
  }
  j["classes"] = std::move(classes);
  j["predictions"] = spec.predictions;
  j["drop_prob"] = spec.drop_prob;
  j["erode_voxels"] = spec.erode_voxels;
  j["probabilities"] = spec.probabilities;
  j["sharpness"] = spec.sharpness;
  j["noise"] = spec.noise;
  nlohmann::json cases = nlohmann::json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    cases.push_back({{"case_id", ids[i]}, {"instances", instances_json(instances[i])}});
  }
  j["cases"] = std::move(cases);
  return j.dump(2) + "\n";
}

}  // namespace

std::string synth_manifest_json(const SynthSpec& spec, const std::vector<SynthCase>& cases) {
  std::vector<std::string> ids;
  std::vector<std::vector<PlantedInstance>> instances;
  for (const auto& c : cases) {
    ids.push_back(c.case_id);
    instances.push_back(c.instances);
  }
  return manifest_text(spec, ids, instances);
}

std::string synth_generate(const SynthSpec& spec, const fs::path& dir,
                           const std::string& extension, int threads) {
  spec.validate();
  if (extension != ".raw" && extension != ".nii" && extension != ".nii.gz") {
    throw InputError("unknown volume extension '" + extension + "'");
  }
  const FileFormat format = format_from_path("x" + extension);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ComputeError("cannot create " + dir.string() + ": " + ec.message());

  const auto n = static_cast<std::size_t>(spec.num_cases);
  std::vector<std::string> ids(n);
  std::vector<std::vector<PlantedInstance>> instances(n);
  parallel_for(n, threads, [&](std::size_t i) {
    SynthCase c = synth_case(spec, static_cast<int>(i));
    save_labels(c.labels, dir / (c.case_id + "_gt" + extension), format);
    if (c.prediction) save_labels(*c.prediction, dir / (c.case_id + "_pred" + extension), format);
    if (c.probabilities) {
      save_probs(*c.probabilities, dir / (c.case_id + "_prob" + extension), format);
    }
    ids[i] = c.case_id;
    instances[i] = std::move(c.instances);
  });
  const std::string text = manifest_text(spec, ids, instances);
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!(out << text)) throw ComputeError("cannot write " + (dir / "manifest.json").string());
  return text;
}

}  // namespace instseg
