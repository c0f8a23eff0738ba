#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "slc/error.hpp"
#include "slc/tensor.hpp"

namespace slc {

/// Projected scan: image [H, W, C] (channel 0 depth in meters, channel 1
/// reflectivity), per-pixel labels (0 = ignore) and validity mask.
struct RangeScan {
  Tensor image;
  std::vector<std::uint16_t> labels;
  std::vector<std::uint8_t> mask;

  RangeScan() = default;
  RangeScan(std::size_t h, std::size_t w, std::size_t c = 2)
      : image(Shape{h, w, c}), labels(h * w, 0), mask(h * w, 0) {}

  std::size_t height() const { return image.dim(0); }
  std::size_t width() const { return image.dim(1); }
  std::size_t channels() const { return image.dim(2); }

  void validate() const {
    if (image.shape().rank() != 3) throw ShapeError("scan image must be rank 3");
    const std::size_t n = height() * width();
    if (labels.size() != n || mask.size() != n) throw ShapeError("scan label/mask size mismatch");
    for (std::size_t p = 0; p < n; ++p) {
      const double depth = image[p * channels()];
      if (mask[p]) {
        if (!(depth >= 0.0)) throw ShapeError("negative depth at a valid pixel");
      } else if (depth != 0.0 || labels[p] != 0) {
        throw ShapeError("invalid pixel must have zero depth and label 0");
      }
    }
  }

  friend bool operator==(const RangeScan& a, const RangeScan& b) {
    return a.image == b.image && a.labels == b.labels && a.mask == b.mask;
  }
};

// ---- synthetic scans --------------------------------------------------------

/// Synthetic scan generator parameters.
///
/// Row h has mean depth interpolated linearly from depth_far (top row) to
/// depth_near (bottom row) and depth noise std interpolated the same way.
/// Reflectivity depends on the class plus a per-row calibration offset that
/// is fixed by sensor_seed, so all scans from one "sensor" share it. Labels
/// come in rectangular blocks whose class is the row band's home class with
/// probability band_affinity, else uniform.
struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 512;
  std::size_t num_classes = 4;
  double depth_far = 50.0;
  double depth_near = 5.0;
  double depth_std_far = 4.0;
  double depth_std_near = 0.5;
  double reflectivity_noise = 0.04;
  double reflectivity_offset = 0.06;
  double class_contrast = 1.0;
  double band_affinity = 0.7;
  double dropout = 0.03;
  std::size_t block_width_min = 4;
  std::size_t block_width_max = 16;
  std::size_t block_height_min = 2;
  std::size_t block_height_max = 8;
  std::uint64_t sensor_seed = 2020;
  std::uint64_t seed = 0;

  double mean_depth(std::size_t h) const { return lerp_row(depth_far, depth_near, h); }
  double depth_std(std::size_t h) const { return lerp_row(depth_std_far, depth_std_near, h); }

  /// Class whose band contains row h: classes 1..C from top to bottom.
  std::uint16_t home_class(std::size_t h) const {
    return static_cast<std::uint16_t>(1 + num_classes * h / height);
  }
  double class_reflectivity(std::uint16_t c) const {
    const double level = (static_cast<double>(c) - 0.5) / static_cast<double>(num_classes);
    return 0.5 + class_contrast * (level - 0.5);
  }

  void validate() const {
    if (height < 1 || width < 1) throw ConfigError("synth: height and width must be >= 1");
    if (num_classes < 2 || num_classes > 65535) throw ConfigError("synth: num_classes must be in [2, 65535]");
    if (!(depth_far > 0.0) || !(depth_near > 0.0)) throw ConfigError("synth: mean depth must be > 0");
    if (depth_std_far < 0.0 || depth_std_near < 0.0 || reflectivity_noise < 0.0 || reflectivity_offset < 0.0)
      throw ConfigError("synth: noise parameters must be >= 0");
    if (band_affinity < 0.0 || band_affinity > 1.0) throw ConfigError("synth: band_affinity must be in [0, 1]");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("synth: dropout must be in [0, 1)");
    if (block_width_min < 1 || block_width_min > block_width_max || block_height_min < 1 ||
        block_height_min > block_height_max)
      throw ConfigError("synth: block extents must satisfy 1 <= min <= max");
  }

  /// Per-row reflectivity offsets, uniform in +-reflectivity_offset.
  std::vector<double> row_offsets() const {
    Rng rng(sensor_seed);
    std::vector<double> off(height);
    for (double& o : off) o = reflectivity_offset > 0.0 ? rng.uniform(-reflectivity_offset, reflectivity_offset) : 0.0;
    return off;
  }

 private:
  double lerp_row(double top, double bottom, std::size_t h) const {
    if (height == 1) return top;
    const double t = static_cast<double>(h) / static_cast<double>(height - 1);
    return top + (bottom - top) * t;
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"num_classes", c.num_classes},
                     {"depth_far", c.depth_far},
                     {"depth_near", c.depth_near},
                     {"depth_std_far", c.depth_std_far},
                     {"depth_std_near", c.depth_std_near},
                     {"reflectivity_noise", c.reflectivity_noise},
                     {"reflectivity_offset", c.reflectivity_offset},
                     {"class_contrast", c.class_contrast},
                     {"band_affinity", c.band_affinity},
                     {"dropout", c.dropout},
                     {"block_width_min", c.block_width_min},
                     {"block_width_max", c.block_width_max},
                     {"block_height_min", c.block_height_min},
                     {"block_height_max", c.block_height_max},
                     {"sensor_seed", c.sensor_seed},
                     {"seed", c.seed}};
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  nlohmann::json defaults = c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("synth config: unknown field '" + it.key() + "'");
  }
  defaults.update(j);
  c.height = defaults["height"].get<std::size_t>();
  c.width = defaults["width"].get<std::size_t>();
  c.num_classes = defaults["num_classes"].get<std::size_t>();
  c.depth_far = defaults["depth_far"].get<double>();
  c.depth_near = defaults["depth_near"].get<double>();
  c.depth_std_far = defaults["depth_std_far"].get<double>();
  c.depth_std_near = defaults["depth_std_near"].get<double>();
  c.reflectivity_noise = defaults["reflectivity_noise"].get<double>();
  c.reflectivity_offset = defaults["reflectivity_offset"].get<double>();
  c.class_contrast = defaults["class_contrast"].get<double>();
  c.band_affinity = defaults["band_affinity"].get<double>();
  c.dropout = defaults["dropout"].get<double>();
  c.block_width_min = defaults["block_width_min"].get<std::size_t>();
  c.block_width_max = defaults["block_width_max"].get<std::size_t>();
  c.block_height_min = defaults["block_height_min"].get<std::size_t>();
  c.block_height_max = defaults["block_height_max"].get<std::size_t>();
  c.sensor_seed = defaults["sensor_seed"].get<std::uint64_t>();
  c.seed = defaults["seed"].get<std::uint64_t>();
}

/// Generates one scan from cfg.seed. Values are rounded to f32 so that a
/// scan survives an RSC1 round trip unchanged.
inline RangeScan generate_scan(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width;
  Rng rng(cfg.seed);
  const auto offsets = cfg.row_offsets();

  // Rectangular label blocks: column strips, each split into vertical runs.
  std::vector<std::uint16_t> block_class(H * W, 0);
  for (std::size_t w0 = 0; w0 < W;) {
    const std::size_t bw = cfg.block_width_min + rng.below(cfg.block_width_max - cfg.block_width_min + 1);
    const std::size_t w1 = std::min(W, w0 + bw);
    for (std::size_t h0 = 0; h0 < H;) {
      const std::size_t bh = cfg.block_height_min + rng.below(cfg.block_height_max - cfg.block_height_min + 1);
      const std::size_t h1 = std::min(H, h0 + bh);
      std::uint16_t c = cfg.home_class((h0 + h1 - 1) / 2);
      if (rng.uniform() >= cfg.band_affinity) c = static_cast<std::uint16_t>(1 + rng.below(cfg.num_classes));
      for (std::size_t h = h0; h < h1; ++h)
        for (std::size_t w = w0; w < w1; ++w) block_class[h * W + w] = c;
      h0 = h1;
    }
    w0 = w1;
  }

  RangeScan scan(H, W, 2);
  for (std::size_t h = 0; h < H; ++h) {
    const double mu = cfg.mean_depth(h), sd = cfg.depth_std(h);
    for (std::size_t w = 0; w < W; ++w) {
      const std::size_t p = h * W + w;
      // Draw all noise terms unconditionally so the stream layout is fixed.
      const double zd = rng.normal();
      const double zr = rng.normal();
      const bool dropped = cfg.dropout > 0.0 && rng.uniform() < cfg.dropout;
      if (dropped) continue;
      const std::uint16_t c = block_class[p];
      const double depth = std::max(0.0, mu + sd * zd);
      const double refl = std::clamp(cfg.class_reflectivity(c) + offsets[h] + cfg.reflectivity_noise * zr, 0.0, 1.0);
      scan.image[p * 2] = static_cast<double>(static_cast<float>(depth));
      scan.image[p * 2 + 1] = static_cast<double>(static_cast<float>(refl));
      scan.labels[p] = c;
      scan.mask[p] = 1;
    }
  }
  return scan;
}

/// `count` scans with seeds derived from cfg.seed.
inline std::vector<RangeScan> generate_scans(const SynthConfig& cfg, std::size_t count, std::size_t first_index = 0) {
  std::vector<RangeScan> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SynthConfig c = cfg;
    c.seed = Rng::derive(cfg.seed, first_index + i);
    out.push_back(generate_scan(c));
  }
  return out;
}

// ---- binary files -----------------------------------------------------------

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace le {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}
inline void put_f32(std::vector<std::uint8_t>& b, float v) { put_u32(b, std::bit_cast<std::uint32_t>(v)); }

inline std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}
inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}
inline float get_f32(std::span<const std::uint8_t> b, std::size_t at) { return std::bit_cast<float>(get_u32(b, at)); }

}  // namespace le

/// One LiDAR return in KITTI velodyne layout.
struct Point {
  float x = 0, y = 0, z = 0, reflectivity = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Raw little-endian f32 quadruples (x, y, z, reflectivity), no header.
inline std::vector<Point> decode_point_cloud(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 16 != 0) {
    throw IoError("point cloud length " + std::to_string(bytes.size()) + " is not a multiple of 16 bytes");
  }
  std::vector<Point> pts(bytes.size() / 16);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const std::size_t o = i * 16;
    pts[i] = {le::get_f32(bytes, o), le::get_f32(bytes, o + 4), le::get_f32(bytes, o + 8), le::get_f32(bytes, o + 12)};
  }
  return pts;
}

inline std::vector<std::uint8_t> encode_point_cloud(std::span<const Point> pts) {
  std::vector<std::uint8_t> b;
  b.reserve(pts.size() * 16);
  for (const Point& p : pts) {
    le::put_f32(b, p.x);
    le::put_f32(b, p.y);
    le::put_f32(b, p.z);
    le::put_f32(b, p.reflectivity);
  }
  return b;
}

inline std::vector<Point> load_point_cloud(const std::filesystem::path& path) {
  return decode_point_cloud(read_file_bytes(path));
}

/// One u32 per point; the semantic id is the low 16 bits (the high half is the instance id).
inline std::vector<std::uint16_t> decode_labels(std::span<const std::uint8_t> bytes, std::size_t num_points) {
  if (bytes.size() != 4 * num_points) {
    throw IoError("label file has " + std::to_string(bytes.size()) + " bytes, expected " +
                  std::to_string(4 * num_points));
  }
  std::vector<std::uint16_t> ids(num_points);
  for (std::size_t i = 0; i < num_points; ++i) ids[i] = static_cast<std::uint16_t>(le::get_u32(bytes, 4 * i) & 0xFFFFu);
  return ids;
}

inline std::vector<std::uint8_t> encode_labels(std::span<const std::uint32_t> raw) {
  std::vector<std::uint8_t> b;
  b.reserve(raw.size() * 4);
  for (std::uint32_t v : raw) le::put_u32(b, v);
  return b;
}

inline std::vector<std::uint16_t> load_labels(const std::filesystem::path& path, std::size_t num_points) {
  return decode_labels(read_file_bytes(path), num_points);
}

/// Raw semantic id -> training id. Ids missing from the table map to 0 (ignore).
class LabelRemap {
 public:
  LabelRemap() = default;
  explicit LabelRemap(std::unordered_map<std::uint32_t, std::uint16_t> table) : table_(std::move(table)) {}

  static LabelRemap parse(const std::string& text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("remap table: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("remap table must be a JSON object of raw-id -> train-id");
    std::unordered_map<std::uint32_t, std::uint16_t> t;
    for (auto it = j.begin(); it != j.end(); ++it) {
      std::size_t used = 0;
      unsigned long raw = 0;
      try {
        raw = std::stoul(it.key(), &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != it.key().size() || raw > 0xFFFFFFFFul) throw ConfigError("remap table: bad raw id '" + it.key() + "'");
      if (!it.value().is_number_integer() || it.value().get<long long>() < 0 || it.value().get<long long>() > 65535)
        throw ConfigError("remap table: train id for '" + it.key() + "' must be an integer in [0, 65535]");
      t[static_cast<std::uint32_t>(raw)] = static_cast<std::uint16_t>(it.value().get<long long>());
    }
    return LabelRemap(std::move(t));
  }

  static LabelRemap load(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse(std::string(bytes.begin(), bytes.end()));
  }

  std::uint16_t operator()(std::uint32_t raw) const {
    auto it = table_.find(raw);
    return it == table_.end() ? 0 : it->second;
  }

  std::vector<std::uint16_t> apply(std::span<const std::uint16_t> raw) const {
    std::vector<std::uint16_t> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (*this)(raw[i]);
    return out;
  }

 private:
  std::unordered_map<std::uint32_t, std::uint16_t> table_;
};

// ---- projection ---------------------------------------------------------

struct ProjectionConfig {
  std::size_t height = 64;
  std::size_t width = 512;
  double fov_up_deg = 3.0;
  double fov_down_deg = -25.0;

  void validate() const {
    if (height < 1 || width < 1) throw ConfigError("projection: height and width must be >= 1");
    if (!(fov_up_deg > fov_down_deg)) throw ConfigError("projection: fov_up must exceed fov_down");
  }
};

struct PixelIndex {
  std::size_t row, col;
};

/// Pixel for a point at distance d > 0: column from azimuth, row from elevation, both clamped.
inline PixelIndex project_point(const Point& p, double depth, const ProjectionConfig& cfg) {
  const double pi = std::numbers::pi;
  const double up = cfg.fov_up_deg * pi / 180.0, down = cfg.fov_down_deg * pi / 180.0;
  const double yaw = std::atan2(static_cast<double>(p.y), static_cast<double>(p.x));
  const double pitch = std::asin(std::clamp(static_cast<double>(p.z) / depth, -1.0, 1.0));
  const double u = std::floor(0.5 * (1.0 - yaw / pi) * static_cast<double>(cfg.width));
  const double v = std::floor((1.0 - (pitch - down) / (up - down)) * static_cast<double>(cfg.height));
  auto clampi = [](double x, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(x, 0.0, static_cast<double>(n - 1)));
  };
  return {clampi(v, cfg.height), clampi(u, cfg.width)};
}

/// Cylindrical projection; on collision the nearest point wins. `labels` is
/// either empty (unlabeled) or one train id per point.
inline RangeScan project_point_cloud(std::span<const Point> points, std::span<const std::uint16_t> labels,
                                     const ProjectionConfig& cfg) {
  cfg.validate();
  if (!labels.empty() && labels.size() != points.size()) throw ShapeError("one label per point required");
  RangeScan scan(cfg.height, cfg.width, 2);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Point& p = points[i];
    const double d = std::sqrt(static_cast<double>(p.x) * p.x + static_cast<double>(p.y) * p.y +
                               static_cast<double>(p.z) * p.z);
    if (!(d > 0.0) || !std::isfinite(d)) continue;
    const auto [r, c] = project_point(p, d, cfg);
    const std::size_t px = r * cfg.width + c;
    const double stored = static_cast<double>(static_cast<float>(d));
    if (scan.mask[px] && !(stored < scan.image[px * 2])) continue;
    scan.image[px * 2] = stored;
    scan.image[px * 2 + 1] = static_cast<double>(p.reflectivity);
    scan.labels[px] = labels.empty() ? 0 : labels[i];
    scan.mask[px] = 1;
  }
  return scan;
}

// ---- RSC1 -----------------------------------------------------------------
// "RSC1", u32 H, W, C, then H*W*C f32 image values, H*W u16 labels, H*W u8 mask.
// Everything little-endian, row-major.

inline std::vector<std::uint8_t> encode_rsc1(const RangeScan& scan) {
  const std::size_t H = scan.height(), W = scan.width(), C = scan.channels();
  if (H > 0xFFFFFFFFu || W > 0xFFFFFFFFu || C > 0xFFFFFFFFu) throw IoError("scan too large for RSC1");
  std::vector<std::uint8_t> b;
  b.reserve(16 + H * W * (4 * C + 3));
  for (char ch : {'R', 'S', 'C', '1'}) b.push_back(static_cast<std::uint8_t>(ch));
  le::put_u32(b, static_cast<std::uint32_t>(H));
  le::put_u32(b, static_cast<std::uint32_t>(W));
  le::put_u32(b, static_cast<std::uint32_t>(C));
  for (double v : scan.image.data()) le::put_f32(b, static_cast<float>(v));
  for (std::uint16_t l : scan.labels) le::put_u16(b, l);
  for (std::uint8_t m : scan.mask) b.push_back(m);
  return b;
}

inline RangeScan decode_rsc1(std::span<const std::uint8_t> b) {
  if (b.size() < 16 || std::memcmp(b.data(), "RSC1", 4) != 0) throw IoError("not an RSC1 file");
  const std::size_t H = le::get_u32(b, 4), W = le::get_u32(b, 8), C = le::get_u32(b, 12);
  if (H == 0 || W == 0 || C == 0) throw IoError("RSC1 dims must be >= 1");
  const std::size_t n = H * W;
  if (n / W != H || (n * C) / C != n) throw IoError("RSC1 dims overflow");
  const std::size_t expected = 16 + n * C * 4 + n * 2 + n;
  if (b.size() != expected) {
    throw IoError("RSC1 length " + std::to_string(b.size()) + " != expected " + std::to_string(expected));
  }
  RangeScan scan(H, W, C);
  std::size_t at = 16;
  for (std::size_t i = 0; i < n * C; ++i, at += 4) scan.image[i] = static_cast<double>(le::get_f32(b, at));
  for (std::size_t i = 0; i < n; ++i, at += 2) scan.labels[i] = le::get_u16(b, at);
  for (std::size_t i = 0; i < n; ++i, ++at) scan.mask[i] = b[at];
  return scan;
}

inline void write_rsc1(const std::filesystem::path& path, const RangeScan& scan) {
  write_file_bytes(path, encode_rsc1(scan));
}
inline RangeScan read_rsc1(const std::filesystem::path& path) { return decode_rsc1(read_file_bytes(path)); }

// ---- normalization ----------------------------------------------------------

/// Per-channel mean and std over valid pixels of the training scans.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline void to_json(nlohmann::json& j, const ChannelStats& s) { j = {{"mean", s.mean}, {"std", s.stddev}}; }
inline void from_json(const nlohmann::json& j, ChannelStats& s) {
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("std").get<std::vector<double>>();
}

inline ChannelStats compute_channel_stats(std::span<const RangeScan> scans) {
  if (scans.empty()) throw ConfigError("channel stats need at least one scan");
  const std::size_t C = scans.front().channels();
  std::vector<double> sum(C, 0.0), sq(C, 0.0);
  std::size_t n = 0;
  for (const RangeScan& s : scans) {
    if (s.channels() != C) throw ShapeError("channel count differs across scans");
    for (std::size_t p = 0; p < s.mask.size(); ++p) {
      if (!s.mask[p]) continue;
      ++n;
      for (std::size_t c = 0; c < C; ++c) {
        const double v = s.image[p * C + c];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
  }
  ChannelStats st{std::vector<double>(C, 0.0), std::vector<double>(C, 1.0)};
  if (n == 0) return st;
  for (std::size_t c = 0; c < C; ++c) {
    st.mean[c] = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sq[c] / static_cast<double>(n) - st.mean[c] * st.mean[c]);
    st.stddev[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return st;
}

/// (v - mean) / std on valid pixels, 0 on invalid ones.
inline Tensor standardize(const RangeScan& scan, const ChannelStats& st) {
  const std::size_t C = scan.channels();
  if (st.mean.size() != C || st.stddev.size() != C) throw ShapeError("channel stats do not match scan");
  Tensor out(scan.image.shape());
  for (std::size_t p = 0; p < scan.mask.size(); ++p) {
    if (!scan.mask[p]) continue;
    for (std::size_t c = 0; c < C; ++c) out[p * C + c] = (scan.image[p * C + c] - st.mean[c]) / st.stddev[c];
  }
  return out;
}

}  // namespace slc
