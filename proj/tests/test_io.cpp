#include "doctest.h"

#include "support/fixtures.hpp"
#include "umsd/io.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

using namespace umsd;
using testing::random_content;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "umsd_test_io";
  fs::create_directories(dir);
  return dir / name;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool bit_equal(const MotionClip& a, const MotionClip& b) {
  if (a.kind() != b.kind() || a.fps != b.fps || a.content_label != b.content_label ||
      a.style_label != b.style_label)
    return false;
  if (a.kind() == ReprKind::kContent)
    return bit_equal(a.content().rotations, b.content().rotations) &&
           bit_equal(a.content().root_translation, b.content().root_translation);
  return bit_equal(a.style().positions, b.style().positions);
}

Eigen::Matrix3d axis_matrix(char axis, double deg) {
  const double a = deg * std::numbers::pi / 180.0, c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  if (axis == 'X') m << 1, 0, 0, 0, c, -s, 0, s, c;
  if (axis == 'Y') m << c, 0, s, 0, 1, 0, -s, 0, c;
  if (axis == 'Z') m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

struct RandomBvh {
  std::string text;
  std::vector<int> parents;
  std::vector<Vector3> offsets;
  std::vector<std::string> orders;
  Matrix data;  // frames x channels
};

RandomBvh random_bvh(int joints, int frames, std::uint64_t seed) {
  Rng rng(seed);
  const char* orders[] = {"ZYX", "ZXY", "XYZ"};
  RandomBvh out;
  for (int j = 0; j < joints; ++j) {
    out.parents.push_back(j == 0 ? -1 : rng.uniform_int(0, j - 1));
    out.offsets.push_back(j == 0 ? Vector3(0.1, 0.9, -0.2)
                                 : Vector3(rng.uniform(-0.5, 0.5), rng.uniform(0.1, 0.5),
                                           rng.uniform(-0.5, 0.5)));
    out.orders.push_back(orders[rng.uniform_int(0, 2)]);
  }
  // Emit the hierarchy depth first; parents precede children already, and
  // children of one parent are emitted in index order.
  std::function<void(int, int)> emit = [&](int j, int depth) {
    const std::string pad(2 * depth, ' ');
    out.text += pad + (j == 0 ? "ROOT" : "JOINT") + " j" + std::to_string(j) + "\n" + pad + "{\n";
    out.text += pad + fmt::format("  OFFSET {:.17g} {:.17g} {:.17g}\n", out.offsets[j].x(),
                                  out.offsets[j].y(), out.offsets[j].z());
    std::string ch;
    for (char a : out.orders[j]) ch += fmt::format(" {}rotation", a);
    if (j == 0)
      out.text += pad + "  CHANNELS 6 Xposition Yposition Zposition" + ch + "\n";
    else
      out.text += pad + "  CHANNELS 3" + ch + "\n";
    bool leaf = true;
    for (int c = j + 1; c < joints; ++c)
      if (out.parents[c] == j) {
        emit(c, depth + 1);
        leaf = false;
      }
    if (leaf) out.text += pad + "  End Site\n" + pad + "  {\n" + pad + "    OFFSET 0 0.1 0\n" + pad + "  }\n";
    out.text += pad + "}\n";
  };
  out.text = "HIERARCHY\n";
  emit(0, 0);
  const int channels = 6 + 3 * (joints - 1);
  out.data.resize(frames, channels);
  out.text += fmt::format("MOTION\nFrames: {}\nFrame Time: 0.0083333333\n", frames);
  for (int f = 0; f < frames; ++f) {
    for (int c = 0; c < channels; ++c) {
      out.data(f, c) = c < 3 ? rng.uniform(-1, 1) : rng.uniform(-170, 170);
      out.text += fmt::format("{:.17g}{}", out.data(f, c), c + 1 < channels ? " " : "\n");
    }
  }
  return out;
}

// Order of joints as they appear in the text (depth first).
std::vector<int> emission_order(const std::vector<int>& parents) {
  std::vector<int> order;
  std::function<void(int)> walk = [&](int j) {
    order.push_back(j);
    for (int c = j + 1; c < static_cast<int>(parents.size()); ++c)
      if (parents[c] == j) walk(c);
  };
  walk(0);
  return order;
}

}  // namespace

TEST_CASE("clip files round trip bit for bit") {
  ClipFile f{kClipSchemaVersion, Skeleton::humanoid21(),
             MotionClip{random_content(21, 16, 1), 60.0, 2, 5}};
  const fs::path path = scratch("content.json");
  save_clip(path, f);
  const ClipFile back = load_clip(path);
  CHECK(bit_equal(back.clip, f.clip));
  CHECK(back.skeleton == f.skeleton);

  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const Index n = rng.uniform_int(2, 12);
    ContentRepr c = random_content(21, n, seed * 3);
    c.root_translation(0, 0) = 1e-310;  // subnormal
    c.root_translation(0, 1) = 0.1;
    c.root_translation(0, 2) = -1.0 / 3.0;
    const bool style = seed % 2 == 0;
    MotionClip clip = style ? MotionClip{forward_kinematics(f.skeleton, c), 30.0, 1, 2}
                            : MotionClip{c, 120.0, 0, 0};
    ClipFile g{kClipSchemaVersion, f.skeleton, clip};
    CHECK(bit_equal(parse_clip(serialize_clip(g)).clip, clip));
  }
}

TEST_CASE("clip file errors") {
  ClipFile f{kClipSchemaVersion, Skeleton::humanoid21(),
             MotionClip{random_content(21, 3, 2), 60.0, 0, 0}};
  std::string text = serialize_clip(f);
  const auto v = text.find("\"schema_version\": 1");
  REQUIRE(v != std::string::npos);
  std::string bad = text;
  bad.replace(v, 19, "\"schema_version\": 999");
  CHECK_THROWS_AS(parse_clip(bad), VersionError);

  // Drop the last number of the second frame row.
  nlohmann::json doc = nlohmann::json::parse(text);
  doc["clip"]["frames"][1].erase(doc["clip"]["frames"][1].size() - 1);
  CHECK_THROWS_AS(parse_clip(doc.dump()), FormatError);

  nlohmann::json short_root = nlohmann::json::parse(text);
  short_root["clip"]["root_translation"].erase(0);
  CHECK_THROWS_AS(parse_clip(short_root.dump()), FormatError);

  CHECK_THROWS_AS(parse_clip("{not json"), FormatError);
  CHECK_THROWS_AS(load_clip(scratch("missing.json")), IoError);

  ClipFile mismatch{kClipSchemaVersion, testing::chain3(), f.clip};
  CHECK_THROWS_AS(serialize_clip(mismatch), DimensionError);
}

TEST_CASE("manifests") {
  const fs::path dir = scratch("manifest_case");
  fs::create_directories(dir);
  ClipFile f{kClipSchemaVersion, Skeleton::humanoid21(),
             MotionClip{random_content(21, 4, 3), 60.0, 1, 0}};
  save_clip(dir / "a.json", f);
  DatasetManifest m;
  m.content_labels = {"walk", "run"};
  m.style_labels = {"neutral"};
  m.seed = 42;
  m.entries = {{"a.json", 1, 0, 4}};
  save_manifest(dir / "manifest.json", m);
  CHECK(load_manifest(dir / "manifest.json") == m);
  CHECK(manifest_hash(m) == manifest_hash(parse_manifest(serialize_manifest(m))));
  const Dataset d = load_dataset(dir / "manifest.json");
  CHECK(d.clips.size() == 1);
  CHECK(d.clips[0] == f.clip);

  DatasetManifest missing = m;
  missing.entries.push_back({"b.json", 0, 0, 4});
  save_manifest(dir / "missing.json", missing);
  CHECK_THROWS_AS(load_manifest(dir / "missing.json"), IoError);

  DatasetManifest bad_label = m;
  bad_label.entries[0].style_label = 3;
  CHECK_THROWS_AS(bad_label.validate(), FormatError);

  DatasetManifest wrong = m;
  wrong.entries[0].content_label = 0;
  save_manifest(dir / "wrong.json", wrong);
  CHECK_THROWS_AS(load_dataset(dir / "wrong.json"), FormatError);
}

TEST_CASE("BVH with zero rotations") {
  const std::string text = R"(HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
  JOINT LeftFoot
  {
    OFFSET 0.1 -0.8 0.05
    CHANNELS 3 Zrotation Yrotation Xrotation
    End Site
    {
      OFFSET 0 -0.1 0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.0166666667
0 0.9 0 0 0 0 0 0 0
0.1 0.9 0 0 0 0 0 0 0
)";
  const BvhMotion m = parse_bvh(text);
  CHECK(m.skeleton.joint_count() == 2);
  CHECK(m.skeleton.offsets[1] == Vector3(0.1, -0.8, 0.05));
  CHECK(m.skeleton.foot_joints == std::vector<int>{1});
  CHECK(std::abs(m.fps - 60.0) < 1e-6);
  for (Index f = 0; f < 2; ++f)
    for (int j = 0; j < 2; ++j) {
      Eigen::RowVector4d id(1, 0, 0, 0);
      CHECK(m.content.rotations.block(f, 4 * j, 1, 4) == id);
    }
  CHECK(m.content.root_translation(1, 0) == 0.1);
}

TEST_CASE("BVH single joint rotated 90 degrees about Z") {
  const std::string text = R"(HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
  End Site
  {
    OFFSET 0 1 0
  }
}
MOTION
Frames: 1
Frame Time: 0.01
0 0 0 90 0 0
)";
  const BvhMotion m = parse_bvh(text);
  const double h = std::sqrt(0.5);
  CHECK(std::abs(m.content.rotations(0, 0) - h) < 1e-9);
  CHECK(std::abs(m.content.rotations(0, 1)) < 1e-9);
  CHECK(std::abs(m.content.rotations(0, 2)) < 1e-9);
  CHECK(std::abs(m.content.rotations(0, 3) - h) < 1e-9);
}

TEST_CASE("BVH malformed input") {
  const RandomBvh good = random_bvh(3, 10, 1);
  CHECK_NOTHROW(parse_bvh(good.text));

  std::string short_rows = good.text.substr(0, good.text.rfind('\n', good.text.size() - 2) + 1);
  CHECK_THROWS_AS(parse_bvh(short_rows), FormatError);

  std::string no_motion = good.text.substr(0, good.text.find("MOTION"));
  CHECK_THROWS_AS(parse_bvh(no_motion), FormatError);

  std::string bad_order = good.text;
  const auto at = bad_order.find("rotation");
  bad_order.replace(at - 1, 1, "Q");
  CHECK_THROWS_AS(parse_bvh(bad_order), FormatError);

  std::string yxz = R"(HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Yrotation Xrotation Zrotation
}
MOTION
Frames: 1
Frame Time: 0.01
0 0 0 10 20 30
)";
  CHECK_THROWS_AS(parse_bvh(yxz), FormatError);
}

TEST_CASE("BVH then FK matches an Euler-matrix oracle") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const int J = 2 + static_cast<int>(seed % 4);
    const RandomBvh b = random_bvh(J, 5, seed);
    const BvhMotion m = parse_bvh(b.text);
    const StyleRepr pos = forward_kinematics(m.skeleton, m.content);
    const std::vector<int> order = emission_order(b.parents);
    // Channel offset of each joint in emission order.
    std::vector<int> start(J);
    int cursor = 0;
    for (int j : order) {
      start[j] = cursor;
      cursor += j == 0 ? 6 : 3;
    }
    double worst = 0.0;
    for (Index f = 0; f < 5; ++f) {
      std::vector<Eigen::Matrix3d> G(J);
      std::vector<Vector3> P(J);
      for (int j = 0; j < J; ++j) {  // parents precede children in index order
        const int rot = start[j] + (j == 0 ? 3 : 0);
        Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
        for (int k = 0; k < 3; ++k) R = R * axis_matrix(b.orders[j][k], b.data(f, rot + k));
        if (j == 0) {
          G[0] = R;
          P[0] = b.offsets[0] + Vector3(b.data(f, 0), b.data(f, 1), b.data(f, 2));
        } else {
          const int p = b.parents[j];
          G[j] = G[p] * R;
          P[j] = P[p] + G[p] * b.offsets[j];
        }
      }
      for (std::size_t k = 0; k < order.size(); ++k) {
        const Vector3 got = pos.positions.block(f, 3 * k, 1, 3).transpose();
        worst = std::max(worst, (got - P[order[k]]).norm());
      }
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("BVH joint map") {
  const std::string text = R"(HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
  JOINT Spine
  {
    OFFSET 0 0.1 0
    CHANNELS 3 Zrotation Yrotation Xrotation
    JOINT Chest
    {
      OFFSET 0 0.2 0
      CHANNELS 3 Zrotation Yrotation Xrotation
      JOINT Hand
      {
        OFFSET 0.3 0 0
        CHANNELS 3 Zrotation Yrotation Xrotation
      }
    }
  }
}
MOTION
Frames: 1
Frame Time: 0.01
0 1 0 0 0 0 0 0 0 30 0 0 0 0 0
)";
  // Spine dropped (identity rotation, folds exactly), Hand dropped as a leaf.
  const JointMap map = parse_joint_map(R"({"Hips": "hips", "Chest": "chest"})");
  const BvhMotion m = parse_bvh(text, map);
  REQUIRE(m.skeleton.joint_count() == 2);
  CHECK(m.skeleton.names == std::vector<std::string>{"hips", "chest"});
  CHECK((m.skeleton.offsets[1] - Vector3(0, 0.3, 0)).norm() < 1e-15);
  const BvhMotion full = parse_bvh(text);
  const Matrix a = forward_kinematics(m.skeleton, m.content).positions;
  const Matrix b = forward_kinematics(full.skeleton, full.content).positions;
  CHECK((a.block(0, 3, 1, 3) - b.block(0, 6, 1, 3)).norm() < 1e-12);
  CHECK_THROWS_AS(parse_bvh(text, JointMap{{"Chest", "chest"}}), FormatError);
  CHECK_THROWS_AS(parse_joint_map("[1, 2]"), FormatError);
}

TEST_CASE("retiming") {
  MotionClip clip{random_content(21, 240, 4), 120.0, 0, 0};
  const MotionClip half = retime(clip, 60.0);
  CHECK(half.frames() == 120);
  CHECK(half.fps == 60.0);
  CHECK(retime(clip, 120.0) == clip);
  const TokenSequence full = flatten(clip), dec = flatten(half);
  for (Index i = 0; i < 120; ++i) CHECK(dec.tokens.row(i) == full.tokens.row(2 * i));
  CHECK_THROWS_AS(retime(clip, 50.0), RangeError);
  CHECK(retime(clip, 50.0, true).frames() == 100);

  ContentRepr two = testing::identity_content(1, 2);
  const double h = std::sqrt(0.5);
  two.rotations.row(1) << h, 0, 0, h;
  const MotionClip up = retime(MotionClip{two, 1.0, 0, 0}, 2.0, true);
  REQUIRE(up.frames() == 3);
  const double c = std::cos(std::numbers::pi / 8), s = std::sin(std::numbers::pi / 8);
  const Eigen::RowVector4d mid = up.content().rotations.row(1);
  CHECK((mid - Eigen::RowVector4d(c, 0, 0, s)).norm() < 1e-9);
}
