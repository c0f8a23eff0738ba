#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "slc/data.hpp"
#include "test_util.hpp"

namespace slc {
namespace {

using testing::scratch_dir;

SynthConfig small_config(std::uint64_t seed = 1) {
  SynthConfig c;
  c.height = 16;
  c.width = 48;
  c.seed = seed;
  return c;
}

// ---- synthetic scans --------------------------------------------------------

TEST(SynthTest, Deterministic) {
  const RangeScan a = generate_scan(small_config(3));
  const RangeScan b = generate_scan(small_config(3));
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == generate_scan(small_config(4)));
}

TEST(SynthTest, ScansSatisfyInvariants) {
  for (const RangeScan& s : generate_scans(small_config(), 5)) {
    EXPECT_NO_THROW(s.validate());
    for (std::size_t p = 0; p < s.mask.size(); ++p) {
      if (!s.mask[p]) continue;
      EXPECT_GE(s.labels[p], 1);
      EXPECT_LE(s.labels[p], 4);
      EXPECT_GE(s.image[p * 2 + 1], 0.0);
      EXPECT_LE(s.image[p * 2 + 1], 1.0);
    }
  }
}

TEST(SynthTest, NoiselessRowsAreConstant) {
  SynthConfig c = small_config();
  c.depth_std_far = c.depth_std_near = 0.0;
  c.reflectivity_noise = c.reflectivity_offset = 0.0;
  c.class_contrast = 0.0;
  c.dropout = 0.0;
  const RangeScan s = generate_scan(c);
  for (std::size_t h = 0; h < c.height; ++h)
    for (std::size_t w = 1; w < c.width; ++w)
      for (std::size_t ch = 0; ch < 2; ++ch) ASSERT_EQ(s.image.at({h, w, ch}), s.image.at({h, 0, ch}));
  EXPECT_EQ(s.image.at({0, 0, 0}), 50.0);
}

TEST(SynthTest, RowDepthMeansFollowProfile) {
  SynthConfig c;  // 64 x 512, 50 m -> 5 m
  const RangeScan s = generate_scan(c);
  for (std::size_t h : {0u, 63u}) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t w = 0; w < c.width; ++w) {
      if (!s.mask[h * c.width + w]) continue;
      sum += s.image.at({h, w, 0});
      ++n;
    }
    const double mean = sum / static_cast<double>(n);
    EXPECT_LE(std::abs(mean - c.mean_depth(h)), 3.0 * c.depth_std(h) / std::sqrt(static_cast<double>(n)))
        << "row " << h;
  }
  EXPECT_EQ(c.mean_depth(0), 50.0);
  EXPECT_EQ(c.mean_depth(63), 5.0);
}

TEST(SynthTest, SeedAveragedRowMeansWithin2Percent) {
  SynthConfig c;
  c.height = 32;
  c.width = 128;
  const auto scans = generate_scans(c, 10);
  for (std::size_t h = 0; h < c.height; ++h) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const RangeScan& s : scans)
      for (std::size_t w = 0; w < c.width; ++w)
        if (s.mask[h * c.width + w]) {
          sum += s.image.at({h, w, 0});
          ++n;
        }
    ASSERT_LE(std::abs(sum / n - c.mean_depth(h)) / c.mean_depth(h), 0.02) << "row " << h;
  }
}

TEST(SynthTest, ClassStatisticsVaryWithRow) {
  SynthConfig c;
  c.height = 32;
  c.width = 128;
  const auto scans = generate_scans(c, 4);
  // fraction of each row band carrying its home class
  for (std::size_t band = 0; band < 4; ++band) {
    std::size_t home = 0, total = 0;
    for (const RangeScan& s : scans)
      for (std::size_t h = band * 8; h < band * 8 + 8; ++h)
        for (std::size_t w = 0; w < c.width; ++w)
          if (s.mask[h * c.width + w]) {
            home += s.labels[h * c.width + w] == band + 1;
            ++total;
          }
    EXPECT_GT(static_cast<double>(home) / total, 0.5) << "band " << band;
  }
}

TEST(SynthTest, ConfigJson) {
  SynthConfig c = nlohmann::json::parse(R"({"height": 32, "width": 128, "seed": 9})").get<SynthConfig>();
  EXPECT_EQ(c.height, 32u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.num_classes, 4u);
  EXPECT_THROW(nlohmann::json::parse(R"({"heigth": 32})").get<SynthConfig>(), ConfigError);
  c.num_classes = 1;
  EXPECT_THROW(generate_scan(c), ConfigError);
  c = SynthConfig{};
  c.depth_near = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// ---- point clouds and labels ------------------------------------------------

TEST(PointCloudTest, DecodesTwoKnownPoints) {
  // (1, 2, 3, 0.5) and (-1, 0, 0.25, 1) as little-endian f32
  const std::vector<std::uint8_t> bytes = {
      0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x00, 0x3F,
      0x00, 0x00, 0x80, 0xBF, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3E, 0x00, 0x00, 0x80, 0x3F};
  const auto pts = decode_point_cloud(bytes);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0], (Point{1.0f, 2.0f, 3.0f, 0.5f}));
  EXPECT_EQ(pts[1], (Point{-1.0f, 0.0f, 0.25f, 1.0f}));
  EXPECT_EQ(encode_point_cloud(pts), bytes);
}

TEST(PointCloudTest, EmptyAndTruncatedFiles) {
  const auto dir = scratch_dir("pointcloud");
  write_file_bytes(dir / "empty.bin", std::vector<std::uint8_t>{});
  EXPECT_TRUE(load_point_cloud(dir / "empty.bin").empty());
  write_file_bytes(dir / "bad.bin", std::vector<std::uint8_t>(17, 0));
  EXPECT_THROW(load_point_cloud(dir / "bad.bin"), IoError);
  EXPECT_THROW(load_point_cloud(dir / "missing.bin"), IoError);
}

TEST(PointCloudTest, FileRoundTripIsByteIdentical) {
  Rng rng(40);
  const auto dir = scratch_dir("pointcloud_rt");
  std::vector<std::uint8_t> bytes(16 * 257);
  for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(256));
  write_file_bytes(dir / "a.bin", bytes);
  const auto pts = load_point_cloud(dir / "a.bin");
  write_file_bytes(dir / "b.bin", encode_point_cloud(pts));
  EXPECT_EQ(read_file_bytes(dir / "b.bin"), bytes);
}

TEST(LabelsTest, SemanticIdIsLow16Bits) {
  const std::vector<std::uint8_t> bytes = {0x0A, 0x00, 0x01, 0x00};
  EXPECT_EQ(decode_labels(bytes, 1), (std::vector<std::uint16_t>{10}));
  EXPECT_EQ(decode_labels(std::vector<std::uint8_t>(12, 0), 3), (std::vector<std::uint16_t>{0, 0, 0}));
  EXPECT_THROW(decode_labels(bytes, 2), IoError);
}

TEST(LabelsTest, FileRoundTripIsByteIdentical) {
  const auto dir = scratch_dir("labels");
  const std::vector<std::uint32_t> raw = {0x0001000A, 0, 0xFFFFFFFF, 252, 0x00420028};
  write_file_bytes(dir / "l.label", encode_labels(raw));
  EXPECT_EQ(load_labels(dir / "l.label", raw.size()), (std::vector<std::uint16_t>{10, 0, 0xFFFF, 252, 40}));
  EXPECT_EQ(read_file_bytes(dir / "l.label"), encode_labels(raw));
  EXPECT_THROW(load_labels(dir / "l.label", 4), IoError);
}

TEST(LabelRemapTest, ParseAndApply) {
  const LabelRemap m = LabelRemap::parse(R"({"10": 1, "40": 2, "252": 1})");
  EXPECT_EQ(m(10), 1);
  EXPECT_EQ(m(252), 1);
  EXPECT_EQ(m(99), 0);
  EXPECT_EQ(m.apply(std::vector<std::uint16_t>{40, 10, 7}), (std::vector<std::uint16_t>{2, 1, 0}));
  EXPECT_THROW(LabelRemap::parse("[1, 2]"), ConfigError);
  EXPECT_THROW(LabelRemap::parse(R"({"x": 1})"), ConfigError);
  EXPECT_THROW(LabelRemap::parse(R"({"1": -1})"), ConfigError);
  EXPECT_THROW(LabelRemap::parse(R"({"1": 1.5})"), ConfigError);
  EXPECT_THROW(LabelRemap::parse("{"), ConfigError);
}

// ---- projection ---------------------------------------------------------

ProjectionConfig symmetric_fov() { return {64, 512, 15.0, -15.0}; }

TEST(ProjectionTest, ForwardPointHitsCenterColumn) {
  const std::vector<Point> pts = {{1.0f, 0.0f, 0.0f, 0.3f}};
  const RangeScan s = project_point_cloud(pts, std::vector<std::uint16_t>{7}, symmetric_fov());
  // pitch 0 sits halfway through a symmetric fov: v = floor(0.5 * 64)
  ASSERT_EQ(s.mask[32 * 512 + 256], 1);
  EXPECT_EQ(s.image.at({32, 256, 0}), 1.0);
  EXPECT_EQ(s.image.at({32, 256, 1}), static_cast<double>(0.3f));
  EXPECT_EQ(s.labels[32 * 512 + 256], 7);
  std::size_t valid = 0;
  for (auto m : s.mask) valid += m;
  EXPECT_EQ(valid, 1u);
}

TEST(ProjectionTest, NearestPointWins) {
  const std::vector<Point> pts = {{9.0f, 0.0f, 0.0f, 0.9f}, {5.0f, 0.0f, 0.0f, 0.5f}, {7.0f, 0.0f, 0.0f, 0.7f}};
  const RangeScan s = project_point_cloud(pts, std::vector<std::uint16_t>{1, 2, 3}, symmetric_fov());
  EXPECT_EQ(s.image.at({32, 256, 0}), 5.0);
  EXPECT_EQ(s.image.at({32, 256, 1}), static_cast<double>(0.5f));
  EXPECT_EQ(s.labels[32 * 512 + 256], 2);
}

TEST(ProjectionTest, EmptyCloudAndZeroDepth) {
  RangeScan s = project_point_cloud({}, {}, symmetric_fov());
  for (auto m : s.mask) EXPECT_EQ(m, 0);
  const std::vector<Point> origin = {{0.0f, 0.0f, 0.0f, 1.0f}};
  s = project_point_cloud(origin, {}, symmetric_fov());
  for (auto m : s.mask) EXPECT_EQ(m, 0);
  EXPECT_THROW(project_point_cloud(origin, std::vector<std::uint16_t>{1, 2}, symmetric_fov()), ShapeError);
  EXPECT_THROW(project_point_cloud({}, {}, ProjectionConfig{64, 512, -5.0, 5.0}), ConfigError);
}

TEST(ProjectionTest, EveryPixelHoldsOnePointOrNothing) {
  Rng rng(41);
  std::vector<Point> pts(3000);
  for (auto& p : pts) {
    const double r = rng.uniform(1.0, 60.0), yaw = rng.uniform(-3.14, 3.14), pitch = rng.uniform(-0.45, 0.06);
    p = {static_cast<float>(r * std::cos(pitch) * std::cos(yaw)), static_cast<float>(r * std::cos(pitch) * std::sin(yaw)),
         static_cast<float>(r * std::sin(pitch)), static_cast<float>(rng.uniform())};
  }
  const ProjectionConfig cfg{32, 128, 3.0, -25.0};
  const RangeScan s = project_point_cloud(pts, {}, cfg);
  EXPECT_NO_THROW(s.validate());
  for (std::size_t px = 0; px < s.mask.size(); ++px) {
    if (!s.mask[px]) {
      ASSERT_EQ(s.image[px * 2], 0.0);
      ASSERT_EQ(s.image[px * 2 + 1], 0.0);
      continue;
    }
    bool found = false;
    for (const Point& p : pts) {
      const double d = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
      const auto [r, c] = project_point(p, d, cfg);
      if (r * cfg.width + c == px && static_cast<double>(static_cast<float>(d)) == s.image[px * 2] &&
          static_cast<double>(p.reflectivity) == s.image[px * 2 + 1]) {
        found = true;
        break;
      }
    }
    ASSERT_TRUE(found) << "pixel " << px;
  }
}

TEST(ProjectionTest, ColumnFollowsAzimuth) {
  // Sorted by decreasing azimuth (clockwise from +pi), columns never decrease.
  const ProjectionConfig cfg = symmetric_fov();
  std::size_t prev = 0;
  for (int i = 0; i < 2000; ++i) {
    const double yaw = std::numbers::pi - 2.0 * std::numbers::pi * (i + 0.5) / 2000.0;
    const Point p{static_cast<float>(std::cos(yaw)), static_cast<float>(std::sin(yaw)), 0.0f, 0.0f};
    const std::size_t u = project_point(p, 1.0, cfg).col;
    ASSERT_GE(u, prev);
    prev = u;
  }
  EXPECT_EQ(prev, cfg.width - 1);
}

TEST(ProjectionTest, RowsClampOutsideFov) {
  const ProjectionConfig cfg = symmetric_fov();
  EXPECT_EQ(project_point({1.0f, 0.0f, 5.0f, 0.0f}, std::sqrt(26.0), cfg).row, 0u);
  EXPECT_EQ(project_point({1.0f, 0.0f, -5.0f, 0.0f}, std::sqrt(26.0), cfg).row, 63u);
}

// ---- RSC1 -----------------------------------------------------------------

TEST(Rsc1Test, HeaderLayout) {
  RangeScan s(2, 3, 2);
  s.image[0] = 1.0;
  s.labels[0] = 0x0102;
  s.mask[0] = 1;
  const auto b = encode_rsc1(s);
  ASSERT_EQ(b.size(), 16u + 2 * 3 * 2 * 4 + 2 * 3 * 2 + 2 * 3);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "RSC1");
  EXPECT_EQ(le::get_u32(b, 4), 2u);
  EXPECT_EQ(le::get_u32(b, 8), 3u);
  EXPECT_EQ(le::get_u32(b, 12), 2u);
  EXPECT_EQ(le::get_f32(b, 16), 1.0f);
  EXPECT_EQ(b[16 + 48], 0x02);
  EXPECT_EQ(b[16 + 49], 0x01);
  EXPECT_EQ(b[16 + 48 + 12], 1);
}

TEST(Rsc1Test, FileRoundTripIsByteIdentical) {
  const auto dir = scratch_dir("rsc1");
  for (const RangeScan& s : generate_scans(small_config(), 3)) {
    write_rsc1(dir / "a.rsc", s);
    const RangeScan back = read_rsc1(dir / "a.rsc");
    EXPECT_TRUE(back == s);
    write_rsc1(dir / "b.rsc", back);
    EXPECT_EQ(read_file_bytes(dir / "a.rsc"), read_file_bytes(dir / "b.rsc"));
  }
}

TEST(Rsc1Test, ArbitraryBytesRoundTrip) {
  // random label and mask bytes, random finite image values
  Rng rng(42);
  std::vector<std::uint8_t> b;
  for (char ch : {'R', 'S', 'C', '1'}) b.push_back(static_cast<std::uint8_t>(ch));
  le::put_u32(b, 3);
  le::put_u32(b, 5);
  le::put_u32(b, 2);
  const std::size_t payload = 15 * 2 * 4 + 15 * 2 + 15;
  for (std::size_t i = 0; i < payload; ++i) b.push_back(static_cast<std::uint8_t>(rng.below(256)));
  for (int i = 0; i < 30; ++i) {
    const float f = static_cast<float>(rng.uniform(-1e6, 1e6));
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int k = 0; k < 4; ++k) b[16 + 4 * i + k] = static_cast<std::uint8_t>(u >> (8 * k));
  }
  EXPECT_EQ(encode_rsc1(decode_rsc1(b)), b);
}

TEST(Rsc1Test, RejectsMalformed) {
  const auto good = encode_rsc1(RangeScan(2, 2, 2));
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_rsc1(bad), IoError);
  bad = good;
  bad.pop_back();
  EXPECT_THROW(decode_rsc1(bad), IoError);
  bad = good;
  bad[4] = 0;
  EXPECT_THROW(decode_rsc1(bad), IoError);
  EXPECT_THROW(decode_rsc1(std::vector<std::uint8_t>{'R', 'S'}), IoError);
}

// ---- standardization ----------------------------------------------------

TEST(StandardizeTest, ZeroMeanUnitStdOnValidPixels) {
  const auto scans = generate_scans(small_config(), 3);
  const ChannelStats st = compute_channel_stats(scans);
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  std::size_t n = 0;
  for (const RangeScan& s : scans) {
    const Tensor z = standardize(s, st);
    for (std::size_t p = 0; p < s.mask.size(); ++p) {
      if (!s.mask[p]) {
        EXPECT_EQ(z[p * 2], 0.0);
        continue;
      }
      ++n;
      for (int c = 0; c < 2; ++c) {
        sum[c] += z[p * 2 + c];
        sq[c] += z[p * 2 + c] * z[p * 2 + c];
      }
    }
  }
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(sum[c] / n, 0.0, 1e-9);
    EXPECT_NEAR(sq[c] / n, 1.0, 1e-9);
  }
  const ChannelStats back = nlohmann::json(st).get<ChannelStats>();
  EXPECT_EQ(back.mean, st.mean);
  EXPECT_EQ(back.stddev, st.stddev);
}

}  // namespace
}  // namespace slc
