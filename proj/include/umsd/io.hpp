#pragma once

// Clip and manifest files (JSON, schema_version 1), BVH ingestion and frame
// rate conversion.

#include "umsd/motion.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace umsd {

inline constexpr int kClipSchemaVersion = 1;
inline constexpr int kManifestSchemaVersion = 1;

struct ClipFile {
  int schema_version = kClipSchemaVersion;
  Skeleton skeleton;
  MotionClip clip;

  void validate() const;
  bool operator==(const ClipFile&) const = default;
};

/// Doubles are written in shortest round-trip form, so parse(serialize(x))
/// reproduces every value bit for bit.
std::string serialize_clip(const ClipFile& file);
/// Throws VersionError for an unsupported schema and FormatError for
/// malformed documents (ragged frames, missing fields, count mismatches).
ClipFile parse_clip(std::string_view text);

void save_clip(const std::filesystem::path& path, const ClipFile& file);
ClipFile load_clip(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int content_label = 0;
  int style_label = 0;
  Index frames = 0;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  std::vector<std::string> content_labels;
  std::vector<std::string> style_labels;
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;

  /// Labels must index the registries.
  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

std::string serialize_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(std::string_view text);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);
/// Also checks that every entry path exists next to the manifest.
DatasetManifest load_manifest(const std::filesystem::path& path);
/// Hex FNV-1a of the serialized manifest.
std::string manifest_hash(const DatasetManifest& m);

struct Dataset {
  DatasetManifest manifest;
  Skeleton skeleton;
  std::vector<MotionClip> clips;  // in manifest order
};

/// Manifest plus every clip. Throws FormatError if clips disagree on the
/// skeleton or their labels differ from the manifest entry.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// BVH joint name -> output joint name. Joints not in the map are dropped;
/// an interior dropped joint folds its rotation into its kept children and
/// its offset into theirs (exact while its rotation is the identity). An
/// empty map keeps every joint under its own name.
using JointMap = std::map<std::string, std::string>;

JointMap parse_joint_map(std::string_view json_text);

struct BvhMotion {
  Skeleton skeleton;
  ContentRepr content;
  double fps = 0.0;
};

/// HIERARCHY + MOTION subset with rotation orders ZYX, ZXY and XYZ. Offsets
/// and root positions are multiplied by `scale` (0.01 for centimeters).
/// Foot joints are those whose name contains "ankle", "foot" or "toe".
BvhMotion parse_bvh(std::string_view text, const JointMap& map = {}, double scale = 1.0);
BvhMotion load_bvh(const std::filesystem::path& path, const JointMap& map = {},
                   double scale = 1.0);

/// Change the frame rate. An integer ratio source / target keeps every k-th
/// frame; otherwise `interpolate` must be set and frames are resampled with
/// shortest-arc slerp (rotations) and linear interpolation (translations,
/// positions). Throws RangeError for a non-integer ratio without
/// interpolation.
MotionClip retime(const MotionClip& clip, double target_fps, bool interpolate = false);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace umsd
