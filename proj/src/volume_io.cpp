#include "instseg/volume_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "instseg/error.hpp"

namespace instseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348);

constexpr std::int16_t kNiftiU8 = 2;
constexpr std::int16_t kNiftiI16 = 4;
constexpr std::int16_t kNiftiF32 = 16;
constexpr const char* kDescripKey = "num_classes=";

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::U8: return 1;
    case DType::I16: return 2;
    case DType::F32: return 4;
  }
  return 0;
}

DType parse_dtype(const std::string& s) {
  if (s == "u8") return DType::U8;
  if (s == "i16") return DType::I16;
  if (s == "f32") return DType::F32;
  throw InputError("unsupported data type '" + s + "'");
}

template <typename T>
T byteswap_value(T v) {
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

void swap_header(NiftiHeader& h) {
  h.sizeof_hdr = byteswap_value(h.sizeof_hdr);
  for (auto& v : h.dim) v = byteswap_value(v);
  h.datatype = byteswap_value(h.datatype);
  h.bitpix = byteswap_value(h.bitpix);
  for (auto& v : h.pixdim) v = byteswap_value(v);
  h.vox_offset = byteswap_value(h.vox_offset);
  h.scl_slope = byteswap_value(h.scl_slope);
  h.scl_inter = byteswap_value(h.scl_inter);
}

// Decoded payload of either format, widened to double.
struct RawRead {
  GridShape shape;
  DType dtype = DType::U8;
  std::optional<int> num_classes;
  std::vector<double> values;
};

void decode_payload(const unsigned char* bytes, std::size_t count, DType dtype,
                    bool swap, std::vector<double>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (dtype) {
      case DType::U8: out[i] = bytes[i]; break;
      case DType::I16: {
        std::int16_t v;
        std::memcpy(&v, bytes + 2 * i, 2);
        if (swap) v = byteswap_value(v);
        out[i] = v;
        break;
      }
      case DType::F32: {
        float v;
        std::memcpy(&v, bytes + 4 * i, 4);
        if (swap) v = byteswap_value(v);
        out[i] = v;
        break;
      }
    }
  }
}

std::vector<unsigned char> encode_payload(std::span<const double> values, DType dtype) {
  const bool swap = std::endian::native == std::endian::big;
  std::vector<unsigned char> bytes(values.size() * dtype_size(dtype));
  for (std::size_t i = 0; i < values.size(); ++i) {
    switch (dtype) {
      case DType::U8: bytes[i] = static_cast<unsigned char>(values[i]); break;
      case DType::I16: {
        auto v = static_cast<std::int16_t>(values[i]);
        if (swap) v = byteswap_value(v);
        std::memcpy(bytes.data() + 2 * i, &v, 2);
        break;
      }
      case DType::F32: {
        auto v = static_cast<float>(values[i]);
        if (swap) v = byteswap_value(v);
        std::memcpy(bytes.data() + 4 * i, &v, 4);
        break;
      }
    }
  }
  return bytes;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

fs::path sidecar_base(const fs::path& path) {
  std::string s = path.string();
  for (const char* ext : {".raw", ".json"}) {
    if (ends_with(s, ext)) return fs::path(s.substr(0, s.size() - std::strlen(ext)));
  }
  return path;
}

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ComputeError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw ComputeError("write failed for " + path.string());
}

RawRead read_raw_sidecar(const fs::path& path) {
  const fs::path base = sidecar_base(path);
  const fs::path meta_path = fs::path(base.string() + ".json");
  const fs::path raw_path = fs::path(base.string() + ".raw");
  if (!fs::exists(raw_path)) throw InputError("cannot open " + raw_path.string());
  json meta;
  try {
    std::ifstream in(meta_path);
    if (!in) throw InputError("cannot open sidecar " + meta_path.string());
    meta = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("unreadable header " + meta_path.string() + ": " + e.what());
  }
  RawRead r;
  try {
    const auto dims = meta.at("dims").get<std::vector<std::int64_t>>();
    const auto spacing = meta.at("spacing").get<std::vector<double>>();
    if (dims.size() != 3 || spacing.size() != 3) {
      throw InputError("sidecar dims and spacing must have three entries");
    }
    r.shape = GridShape(dims[0], dims[1], dims[2], {spacing[0], spacing[1], spacing[2]});
    r.dtype = parse_dtype(meta.at("dtype").get<std::string>());
    if (meta.contains("num_classes")) r.num_classes = meta.at("num_classes").get<int>();
  } catch (const json::exception& e) {
    throw InputError("unreadable header " + meta_path.string() + ": " + e.what());
  }
  const auto bytes = read_file(raw_path);
  const std::size_t expected = r.shape.voxels() * dtype_size(r.dtype);
  if (bytes.size() != expected) {
    throw InputError("dimension mismatch between header and payload in " + raw_path.string() +
                     ": expected " + std::to_string(expected) + " bytes, found " +
                     std::to_string(bytes.size()));
  }
  decode_payload(bytes.data(), r.shape.voxels(), r.dtype,
                 std::endian::native == std::endian::big, r.values);
  return r;
}

void write_raw_sidecar(const GridShape& shape, std::span<const double> values, DType dtype,
                       int num_classes, const fs::path& path) {
  const fs::path base = sidecar_base(path);
  json meta;
  meta["dims"] = {shape.d, shape.h, shape.w};
  meta["spacing"] = {shape.spacing[0], shape.spacing[1], shape.spacing[2]};
  meta["dtype"] = dtype_name(dtype);
  meta["num_classes"] = num_classes;
  const auto bytes = encode_payload(values, dtype);
  write_file(fs::path(base.string() + ".raw"), bytes.data(), bytes.size());
  const std::string text = meta.dump(2) + "\n";
  write_file(fs::path(base.string() + ".json"), text.data(), text.size());
}

class GzReader {
 public:
  explicit GzReader(const fs::path& path) : file_(gzopen(path.string().c_str(), "rb")) {
    if (!file_) throw InputError("cannot open " + path.string());
  }
  ~GzReader() { gzclose(file_); }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  std::size_t read(void* dst, std::size_t n) {
    auto* out = static_cast<unsigned char*>(dst);
    std::size_t total = 0;
    while (total < n) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(n - total, 1u << 30));
      const int got = gzread(file_, out + total, chunk);
      if (got < 0) throw InputError("decompression error");
      if (got == 0) break;
      total += static_cast<std::size_t>(got);
    }
    return total;
  }
  void skip(std::size_t n) {
    std::vector<unsigned char> scratch(std::min<std::size_t>(n, 1 << 16));
    while (n > 0) {
      const std::size_t got = read(scratch.data(), std::min(n, scratch.size()));
      if (got == 0) throw InputError("truncated NIfTI file");
      n -= got;
    }
  }

 private:
  gzFile file_;
};

RawRead read_nifti(const fs::path& path) {
  GzReader in(path);
  NiftiHeader h{};
  if (in.read(&h, sizeof h) != sizeof h) throw InputError("unreadable header in " + path.string());
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swap = true;
    if (h.sizeof_hdr != 348) throw InputError("unreadable header in " + path.string());
  }
  if (h.dim[0] < 1 || h.dim[0] > 7) throw InputError("unreadable header: bad dim[0]");
  std::array<std::int64_t, 3> xyz{1, 1, 1};
  for (int i = 1; i <= h.dim[0]; ++i) {
    if (h.dim[i] < 1) throw InputError("unreadable header: nonpositive dimension");
    if (i <= 3) {
      xyz[i - 1] = h.dim[i];
    } else if (h.dim[i] != 1) {
      throw InputError("only 3D volumes are supported");
    }
  }
  RawRead r;
  switch (h.datatype) {
    case kNiftiU8: r.dtype = DType::U8; break;
    case kNiftiI16: r.dtype = DType::I16; break;
    case kNiftiF32: r.dtype = DType::F32; break;
    default: throw InputError("unsupported data type " + std::to_string(h.datatype));
  }
  // NIfTI stores (x, y, z); the grid is (z, y, x).
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  for (int i = 0; i < 3; ++i) {
    const double p = std::abs(static_cast<double>(h.pixdim[i + 1]));
    spacing[2 - i] = (i < h.dim[0]) ? p : 1.0;
  }
  r.shape = GridShape(xyz[2], xyz[1], xyz[0], spacing);

  const std::string descrip(h.descrip, strnlen(h.descrip, sizeof h.descrip));
  if (auto pos = descrip.find(kDescripKey); pos != std::string::npos) {
    try {
      r.num_classes = std::stoi(descrip.substr(pos + std::strlen(kDescripKey)));
    } catch (const std::exception&) {
      throw InputError("unreadable header: bad num_classes in description");
    }
  }

  const auto offset = static_cast<std::size_t>(h.vox_offset);
  if (offset < sizeof h) throw InputError("unreadable header: vox_offset < 348");
  in.skip(offset - sizeof h);
  const std::size_t count = r.shape.voxels();
  std::vector<unsigned char> bytes(count * dtype_size(r.dtype));
  if (in.read(bytes.data(), bytes.size()) != bytes.size()) {
    throw InputError("dimension mismatch between header and payload in " + path.string());
  }
  decode_payload(bytes.data(), count, r.dtype, swap, r.values);
  if (h.scl_slope != 0.0f && std::isfinite(h.scl_slope) &&
      !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    const double slope = h.scl_slope;
    const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
    for (auto& v : r.values) v = slope * v + inter;
  }
  return r;
}

void write_nifti(const GridShape& shape, std::span<const double> values, DType dtype,
                 int num_classes, const fs::path& path) {
  if (std::endian::native != std::endian::little) {
    throw ComputeError("NIfTI writing is only supported on little-endian hosts");
  }
  NiftiHeader h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(shape.w);
  h.dim[2] = static_cast<std::int16_t>(shape.h);
  h.dim[3] = static_cast<std::int16_t>(shape.d);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  if (shape.w > 32767 || shape.h > 32767 || shape.d > 32767) {
    throw InputError("volume too large for NIfTI-1");
  }
  switch (dtype) {
    case DType::U8: h.datatype = kNiftiU8; h.bitpix = 8; break;
    case DType::I16: h.datatype = kNiftiI16; h.bitpix = 16; break;
    case DType::F32: h.datatype = kNiftiF32; h.bitpix = 32; break;
  }
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(shape.spacing[2]);
  h.pixdim[2] = static_cast<float>(shape.spacing[1]);
  h.pixdim[3] = static_cast<float>(shape.spacing[0]);
  for (int i = 4; i < 8; ++i) h.pixdim[i] = 1.0f;
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  std::snprintf(h.descrip, sizeof h.descrip, "instseg %s%d", kDescripKey, num_classes);
  std::memcpy(h.magic, "n+1", 4);

  std::vector<unsigned char> file(352, 0);
  std::memcpy(file.data(), &h, sizeof h);
  const auto payload = encode_payload(values, dtype);
  file.insert(file.end(), payload.begin(), payload.end());

  if (ends_with(path.string(), ".gz")) {
    gzFile gz = gzopen(path.string().c_str(), "wb");
    if (!gz) throw ComputeError("cannot write " + path.string());
    std::size_t written = 0;
    while (written < file.size()) {
      const auto chunk = static_cast<unsigned>(std::min<std::size_t>(file.size() - written, 1u << 30));
      if (gzwrite(gz, file.data() + written, chunk) != static_cast<int>(chunk)) {
        gzclose(gz);
        throw ComputeError("write failed for " + path.string());
      }
      written += chunk;
    }
    if (gzclose(gz) != Z_OK) throw ComputeError("write failed for " + path.string());
  } else {
    write_file(path, file.data(), file.size());
  }
}

RawRead read_any(const fs::path& path) {
  return format_from_path(path) == FileFormat::Nifti1 ? read_nifti(path) : read_raw_sidecar(path);
}

void write_any(const GridShape& shape, std::span<const double> values, DType dtype,
               int num_classes, const fs::path& path, FileFormat format) {
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    throw ComputeError("output directory does not exist: " + path.parent_path().string());
  }
  if (format == FileFormat::Nifti1) {
    write_nifti(shape, values, dtype, num_classes, path);
  } else {
    write_raw_sidecar(shape, values, dtype, num_classes, path);
  }
}

DType label_dtype(int num_classes) {
  if (num_classes <= 256) return DType::U8;
  if (num_classes <= 32768) return DType::I16;
  throw InputError("num_classes too large for i16 labels");
}

std::string channel_ext(const fs::path& stem, FileFormat format) {
  if (format == FileFormat::RawSidecar) return ".raw";
  return ends_with(stem.string(), ".gz") ? ".nii.gz" : ".nii";
}

}  // namespace

const char* dtype_name(DType t) {
  switch (t) {
    case DType::U8: return "u8";
    case DType::I16: return "i16";
    case DType::F32: return "f32";
  }
  return "?";
}

FileFormat format_from_path(const fs::path& path) {
  const std::string s = path.string();
  return (ends_with(s, ".nii") || ends_with(s, ".nii.gz")) ? FileFormat::Nifti1
                                                           : FileFormat::RawSidecar;
}

bool is_volume_file(const fs::path& path) {
  const std::string s = path.filename().string();
  return ends_with(s, ".raw") || ends_with(s, ".nii") || ends_with(s, ".nii.gz");
}

std::string volume_stem(const fs::path& path) {
  std::string s = path.filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".raw", ".json"}) {
    if (ends_with(s, ext)) return s.substr(0, s.size() - std::strlen(ext));
  }
  return s;
}

LabelVolume load_labels(const fs::path& path, std::optional<int> num_classes) {
  RawRead r = read_any(path);
  if (r.dtype == DType::F32) {
    throw InputError("unsupported data type for labels: f32 in " + path.string());
  }
  std::vector<Label> labels(r.values.size());
  double max_label = 0.0;
  for (std::size_t i = 0; i < r.values.size(); ++i) {
    const double v = r.values[i];
    if (v < 0.0 || v != std::floor(v) || v > std::numeric_limits<Label>::max()) {
      throw InputError("invalid label value in " + path.string());
    }
    labels[i] = static_cast<Label>(v);
    max_label = std::max(max_label, v);
  }
  int classes = num_classes.value_or(r.num_classes.value_or(std::max(2, static_cast<int>(max_label) + 1)));
  if (max_label >= classes) {
    throw InputError("label value " + std::to_string(static_cast<int>(max_label)) +
                     " >= declared num_classes " + std::to_string(classes) + " in " +
                     path.string());
  }
  return LabelVolume(r.shape, classes, std::move(labels));
}

ScalarVolume load_scalar(const fs::path& path) {
  RawRead r = read_any(path);
  return ScalarVolume{r.shape, std::move(r.values)};
}

namespace {

std::vector<ScalarVolume> load_channels(std::span<const fs::path> paths) {
  if (paths.empty()) throw InputError("missing channel: no probability files given");
  std::vector<ScalarVolume> channels;
  for (const auto& p : paths) {
    const bool present = format_from_path(p) == FileFormat::Nifti1
                             ? fs::exists(p)
                             : fs::exists(fs::path(sidecar_base(p).string() + ".raw"));
    if (!present) throw InputError("missing channel: " + p.string());
    channels.push_back(load_scalar(p));
    require_same_grid(channels.front().shape, channels.back().shape, "probability channels");
  }
  return channels;
}

}  // namespace

ProbVolume load_probs(std::span<const fs::path> channel_paths, bool require_normalized) {
  auto channels = load_channels(channel_paths);
  const std::size_t n = channels.front().shape.voxels();
  std::vector<double> data;
  data.reserve(n * channels.size());
  for (const auto& c : channels) data.insert(data.end(), c.data.begin(), c.data.end());
  return ProbVolume(channels.front().shape, static_cast<int>(channels.size()), std::move(data),
                    require_normalized);
}

ProbVolume load_logits(std::span<const fs::path> channel_paths) {
  auto channels = load_channels(channel_paths);
  const std::size_t n = channels.front().shape.voxels();
  std::vector<double> data;
  data.reserve(n * channels.size());
  for (const auto& c : channels) data.insert(data.end(), c.data.begin(), c.data.end());
  return softmax(ChannelField(channels.front().shape, static_cast<int>(channels.size()),
                              std::move(data)));
}

void save_labels(const LabelVolume& vol, const fs::path& path, FileFormat format) {
  std::vector<double> values(vol.data().begin(), vol.data().end());
  write_any(vol.shape(), values, label_dtype(vol.num_classes()), vol.num_classes(), path, format);
}

void save_scalar(const GridShape& shape, std::span<const double> data, const fs::path& path,
                 FileFormat format, int num_classes, DType dtype) {
  if (dtype != DType::F32) {
    throw InputError("real-valued volumes need the f32 encoding, not " +
                     std::string(dtype_name(dtype)));
  }
  if (data.size() != shape.voxels()) throw InputError("scalar payload does not match its grid");
  write_any(shape, data, DType::F32, num_classes, path, format);
}

std::vector<fs::path> save_probs(const ProbVolume& prob, const fs::path& stem, FileFormat format,
                                 DType dtype) {
  if (dtype != DType::F32) {
    throw InputError("probability volumes cannot use the integer encoding " +
                     std::string(dtype_name(dtype)));
  }
  std::string base = stem.string();
  for (const char* ext : {".nii.gz", ".nii", ".raw"}) {
    if (ends_with(base, ext)) {
      base = base.substr(0, base.size() - std::strlen(ext));
      break;
    }
  }
  const std::string ext = channel_ext(stem, format);
  std::vector<fs::path> out;
  for (int c = 0; c < prob.num_classes(); ++c) {
    fs::path p(base + "_" + std::to_string(c) + ext);
    save_scalar(prob.shape(), prob.channel(c), p, format, prob.num_classes());
    out.push_back(p);
  }
  return out;
}

void save_index_map(const GridShape& shape, std::span<const std::int32_t> data,
                    const fs::path& path) {
  std::int32_t mx = 0;
  for (auto v : data) {
    if (v < 0 || v > std::numeric_limits<std::int16_t>::max()) {
      throw InputError("index map value does not fit i16");
    }
    mx = std::max(mx, v);
  }
  std::vector<double> values(data.begin(), data.end());
  write_any(shape, values, mx < 256 ? DType::U8 : DType::I16, mx + 1, path,
            format_from_path(path));
}

}  // namespace instseg
