#include "umsd/io.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace umsd {

using nlohmann::json;

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError(fmt::format("read failed for {}", path.string()));
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

namespace {

json matrix_rows(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix rows_matrix(const json& j, Index expected_cols, const char* what) {
  if (!j.is_array()) throw FormatError(fmt::format("{} must be an array of rows", what));
  Matrix m(static_cast<Index>(j.size()), expected_cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const json& row = j[r];
    if (!row.is_array() || static_cast<Index>(row.size()) != expected_cols)
      throw FormatError(fmt::format("{} row {} has {} values, expected {}", what, r,
                                    row.is_array() ? row.size() : 0, expected_cols));
    for (Index c = 0; c < expected_cols; ++c) {
      if (!row[c].is_number()) throw FormatError(fmt::format("{} holds a non-number", what));
      m(static_cast<Index>(r), c) = row[c].get<double>();
    }
  }
  return m;
}

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw FormatError(fmt::format("missing field '{}'", key));
  return j.at(key);
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("field '{}': {}", key, e.what()));
  }
}

json skeleton_json(const Skeleton& s) {
  json offsets = json::array();
  for (const Vector3& o : s.offsets) offsets.push_back({o.x(), o.y(), o.z()});
  return {{"parents", s.parents},
          {"offsets", offsets},
          {"foot_joints", s.foot_joints},
          {"names", s.names}};
}

Skeleton skeleton_from(const json& j) {
  Skeleton s;
  s.parents = get<std::vector<int>>(j, "parents");
  const Matrix off = rows_matrix(field(j, "offsets"), 3, "skeleton offsets");
  for (Index r = 0; r < off.rows(); ++r) s.offsets.push_back(off.row(r).transpose());
  s.foot_joints = get<std::vector<int>>(j, "foot_joints");
  if (j.contains("names")) s.names = get<std::vector<std::string>>(j, "names");
  try {
    s.validate();
  } catch (const Error& e) {
    throw FormatError(fmt::format("invalid skeleton: {}", e.what()));
  }
  return s;
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("{} is not valid JSON: {}", what, e.what()));
  }
}

}  // namespace

void ClipFile::validate() const {
  if (schema_version != kClipSchemaVersion)
    throw VersionError(fmt::format("unsupported clip schema_version {}", schema_version));
  skeleton.validate();
  clip.validate();
  if (clip.joint_count() != skeleton.joint_count())
    throw DimensionError(fmt::format("clip has {} joints, skeleton {}", clip.joint_count(),
                                     skeleton.joint_count()));
}

std::string serialize_clip(const ClipFile& file) {
  file.validate();
  const MotionClip& c = file.clip;
  json clip = {{"kind", c.kind() == ReprKind::kContent ? "content" : "style"},
               {"fps", c.fps},
               {"labels", {{"content", c.content_label}, {"style", c.style_label}}}};
  if (c.kind() == ReprKind::kContent) {
    clip["frames"] = matrix_rows(c.content().rotations);
    clip["root_translation"] = matrix_rows(c.content().root_translation);
  } else {
    clip["frames"] = matrix_rows(c.style().positions);
  }
  const json doc = {{"schema_version", file.schema_version},
                    {"skeleton", skeleton_json(file.skeleton)},
                    {"clip", clip}};
  return doc.dump(1) + "\n";
}

ClipFile parse_clip(std::string_view text) {
  const json doc = parse_json(text, "clip file");
  ClipFile f;
  f.schema_version = get<int>(doc, "schema_version");
  if (f.schema_version != kClipSchemaVersion)
    throw VersionError(fmt::format("unsupported clip schema_version {}", f.schema_version));
  f.skeleton = skeleton_from(field(doc, "skeleton"));
  const json& clip = field(doc, "clip");
  const auto kind = get<std::string>(clip, "kind");
  const int J = f.skeleton.joint_count();
  f.clip.fps = get<double>(clip, "fps");
  const json& labels = field(clip, "labels");
  f.clip.content_label = get<int>(labels, "content");
  f.clip.style_label = get<int>(labels, "style");
  if (kind == "content") {
    ContentRepr c;
    c.rotations = rows_matrix(field(clip, "frames"), 4 * J, "frames");
    c.root_translation = rows_matrix(field(clip, "root_translation"), 3, "root_translation");
    if (c.root_translation.rows() != c.rotations.rows())
      throw FormatError("root_translation and frames differ in length");
    f.clip.repr = std::move(c);
  } else if (kind == "style") {
    f.clip.repr = StyleRepr{rows_matrix(field(clip, "frames"), 3 * J, "frames")};
  } else {
    throw FormatError(fmt::format("unknown clip kind '{}'", kind));
  }
  try {
    f.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(fmt::format("invalid clip: {}", e.what()));
  }
  return f;
}

void save_clip(const std::filesystem::path& path, const ClipFile& file) {
  write_text_file(path, serialize_clip(file));
}

ClipFile load_clip(const std::filesystem::path& path) {
  try {
    return parse_clip(read_text_file(path));
  } catch (const FormatError& e) {
    if (dynamic_cast<const VersionError*>(&e))
      throw VersionError(fmt::format("{}: {}", path.string(), e.what()));
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void DatasetManifest::validate() const {
  if (schema_version != kManifestSchemaVersion)
    throw VersionError(fmt::format("unsupported manifest schema_version {}", schema_version));
  const int nc = static_cast<int>(content_labels.size());
  const int ns = static_cast<int>(style_labels.size());
  for (const ManifestEntry& e : entries) {
    if (e.content_label < 0 || e.content_label >= nc || e.style_label < 0 ||
        e.style_label >= ns)
      throw FormatError(fmt::format("manifest entry {} has an unregistered label", e.path));
    if (e.path.empty()) throw FormatError("manifest entry with empty path");
  }
}

std::string serialize_manifest(const DatasetManifest& m) {
  m.validate();
  json entries = json::array();
  for (const ManifestEntry& e : m.entries)
    entries.push_back({{"path", e.path},
                       {"content_label", e.content_label},
                       {"style_label", e.style_label},
                       {"frames", e.frames}});
  const json doc = {{"schema_version", m.schema_version},
                    {"content_labels", m.content_labels},
                    {"style_labels", m.style_labels},
                    {"seed", m.seed},
                    {"entries", entries}};
  return doc.dump(1) + "\n";
}

DatasetManifest parse_manifest(std::string_view text) {
  const json doc = parse_json(text, "manifest");
  DatasetManifest m;
  m.schema_version = get<int>(doc, "schema_version");
  if (m.schema_version != kManifestSchemaVersion)
    throw VersionError(fmt::format("unsupported manifest schema_version {}", m.schema_version));
  m.content_labels = get<std::vector<std::string>>(doc, "content_labels");
  m.style_labels = get<std::vector<std::string>>(doc, "style_labels");
  m.seed = get<std::uint64_t>(doc, "seed");
  const json& entries = field(doc, "entries");
  if (!entries.is_array()) throw FormatError("manifest entries must be an array");
  for (const json& e : entries)
    m.entries.push_back({get<std::string>(e, "path"), get<int>(e, "content_label"),
                         get<int>(e, "style_label"), get<Index>(e, "frames")});
  m.validate();
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  write_text_file(path, serialize_manifest(m));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  DatasetManifest m = parse_manifest(read_text_file(path));
  const auto dir = path.parent_path();
  for (const ManifestEntry& e : m.entries)
    if (!std::filesystem::exists(dir / e.path))
      throw IoError(fmt::format("manifest entry {} does not exist", (dir / e.path).string()));
  return m;
}

std::string manifest_hash(const DatasetManifest& m) {
  return hex64(fnv1a(serialize_manifest(m)));
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset d;
  d.manifest = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  for (const ManifestEntry& e : d.manifest.entries) {
    ClipFile f = load_clip(dir / e.path);
    if (d.clips.empty()) {
      d.skeleton = f.skeleton;
    } else if (!(f.skeleton == d.skeleton)) {
      throw FormatError(fmt::format("{} uses a different skeleton", e.path));
    }
    if (f.clip.content_label != e.content_label || f.clip.style_label != e.style_label ||
        f.clip.frames() != e.frames)
      throw FormatError(fmt::format("{} disagrees with its manifest entry", e.path));
    d.clips.push_back(std::move(f.clip));
  }
  return d;
}

JointMap parse_joint_map(std::string_view json_text) {
  const json doc = parse_json(json_text, "joint map");
  if (!doc.is_object()) throw FormatError("joint map must be an object of name -> name");
  JointMap map;
  for (const auto& [k, v] : doc.items()) {
    if (!v.is_string()) throw FormatError(fmt::format("joint map value for {} is not a name", k));
    map[k] = v.get<std::string>();
  }
  return map;
}

// ---------------------------------------------------------------------------
// BVH

namespace {

struct BvhJoint {
  std::string name;
  int parent = -1;
  Vector3 offset = Vector3::Zero();
  std::vector<std::string> channels;
  int channel_start = 0;
};

class BvhReader {
 public:
  explicit BvhReader(std::string_view text) : text_(text) {}

  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

  std::string next() {
    skip_space();
    if (pos_ >= text_.size()) throw FormatError("BVH ended unexpectedly");
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  void expect(std::string_view word) {
    const std::string got = next();
    if (got != word) throw FormatError(fmt::format("BVH: expected '{}', found '{}'", word, got));
  }

  double number() {
    const std::string tok = next();
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw FormatError(fmt::format("BVH: expected a number, found '{}'", tok));
    }
  }

  int integer() {
    const double v = number();
    if (v != std::floor(v) || v < 0) throw FormatError("BVH: expected a non-negative integer");
    return static_cast<int>(v);
  }

  /// Rest of the text split into non-empty lines.
  std::vector<std::string_view> remaining_lines() {
    std::vector<std::string_view> lines;
    while (pos_ < text_.size()) {
      std::size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      std::string_view line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      if (line.find_first_not_of(" \t\r") != std::string_view::npos) lines.push_back(line);
    }
    return lines;
  }

  /// Consume through the end of the current line.
  void finish_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    if (pos_ < text_.size()) ++pos_;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  std::string_view text_;
  std::size_t pos_ = 0;
};

void read_joint(BvhReader& r, std::vector<BvhJoint>& joints, int parent, std::string name,
                int& channel_count) {
  BvhJoint j;
  j.name = std::move(name);
  j.parent = parent;
  r.expect("{");
  r.expect("OFFSET");
  for (int k = 0; k < 3; ++k) j.offset[k] = r.number();
  r.expect("CHANNELS");
  const int n = r.integer();
  for (int k = 0; k < n; ++k) j.channels.push_back(r.next());
  j.channel_start = channel_count;
  channel_count += n;
  const int index = static_cast<int>(joints.size());
  joints.push_back(std::move(j));
  for (;;) {
    const std::string tok = r.next();
    if (tok == "}") return;
    if (tok == "JOINT") {
      read_joint(r, joints, index, r.next(), channel_count);
    } else if (tok == "End") {
      r.expect("Site");
      r.expect("{");
      r.expect("OFFSET");
      r.number();
      r.number();
      r.number();
      r.expect("}");
    } else {
      throw FormatError(fmt::format("BVH: unexpected '{}' in joint {}", tok, joints[index].name));
    }
  }
}

Eigen::Quaterniond euler_quaternion(const BvhJoint& j, const double* row) {
  std::string order;
  std::vector<double> angles;
  for (std::size_t k = 0; k < j.channels.size(); ++k) {
    const std::string& ch = j.channels[k];
    if (ch.size() == 9 && ch.substr(1) == "rotation") {
      order.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch[0]))));
      angles.push_back(row[j.channel_start + k] * M_PI / 180.0);
    }
  }
  if (order.empty()) return Eigen::Quaterniond::Identity();
  if (order != "ZYX" && order != "ZXY" && order != "XYZ")
    throw FormatError(fmt::format("BVH: unsupported rotation order {} on {}", order, j.name));
  Eigen::Quaterniond q = Eigen::Quaterniond::Identity();
  for (std::size_t k = 0; k < order.size(); ++k)
    q = q * axis_rotation<double>(order[k] - 'X', angles[k]);
  return q;
}

bool is_foot_name(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const char* key : {"ankle", "foot", "toe"})
    if (name.find(key) != std::string::npos) return true;
  return false;
}

}  // namespace

BvhMotion parse_bvh(std::string_view text, const JointMap& map, double scale) {
  BvhReader r(text);
  r.expect("HIERARCHY");
  r.expect("ROOT");
  std::vector<BvhJoint> joints;
  int channel_count = 0;
  read_joint(r, joints, -1, r.next(), channel_count);
  if (r.at_end()) throw FormatError("BVH: missing MOTION section");
  const std::string motion = r.next();
  if (motion != "MOTION") throw FormatError("BVH: missing MOTION section");
  r.expect("Frames:");
  const int frames = r.integer();
  r.expect("Frame");
  r.expect("Time:");
  const double frame_time = r.number();
  if (!(frame_time > 0)) throw FormatError("BVH: frame time must be positive");
  r.finish_line();

  for (const BvhJoint& j : joints)
    for (const std::string& ch : j.channels)
      if (ch != "Xposition" && ch != "Yposition" && ch != "Zposition" &&
          ch != "Xrotation" && ch != "Yrotation" && ch != "Zrotation")
        throw FormatError(fmt::format("BVH: unknown channel {} on {}", ch, j.name));

  const auto lines = r.remaining_lines();
  if (static_cast<int>(lines.size()) != frames)
    throw FormatError(fmt::format("BVH declares {} frames but has {} rows", frames, lines.size()));
  Matrix data(frames, channel_count);
  for (int f = 0; f < frames; ++f) {
    BvhReader row(lines[f]);
    for (int c = 0; c < channel_count; ++c) {
      if (row.at_end())
        throw FormatError(fmt::format("BVH frame {} has fewer than {} values", f, channel_count));
      data(f, c) = row.number();
    }
    if (!row.at_end())
      throw FormatError(fmt::format("BVH frame {} has more than {} values", f, channel_count));
  }

  // Which BVH joints survive, and where they land.
  const int B = static_cast<int>(joints.size());
  std::vector<int> out_index(B, -1);
  Skeleton skel;
  for (int b = 0; b < B; ++b) {
    std::string name = joints[b].name;
    if (!map.empty()) {
      auto it = map.find(name);
      if (it == map.end()) {
        if (b == 0) throw FormatError("joint map drops the BVH root");
        continue;
      }
      name = it->second;
    }
    int kept_parent = joints[b].parent;
    Vector3 offset = joints[b].offset * scale;
    while (kept_parent >= 0 && out_index[kept_parent] < 0) {
      offset += joints[kept_parent].offset * scale;
      kept_parent = joints[kept_parent].parent;
    }
    out_index[b] = skel.joint_count();
    skel.parents.push_back(kept_parent < 0 ? -1 : out_index[kept_parent]);
    skel.offsets.push_back(b == 0 ? Vector3::Zero() : offset);
    skel.names.push_back(name);
    if (is_foot_name(name)) skel.foot_joints.push_back(out_index[b]);
  }
  try {
    skel.validate();
  } catch (const Error& e) {
    throw FormatError(fmt::format("BVH skeleton is invalid: {}", e.what()));
  }

  const int J = skel.joint_count();
  ContentRepr content;
  content.rotations.resize(frames, 4 * J);
  content.root_translation = Matrix::Zero(frames, 3);
  std::vector<Eigen::Quaterniond> local(B);
  for (int f = 0; f < frames; ++f) {
    const RowVector vals = data.row(f);
    for (int b = 0; b < B; ++b) local[b] = euler_quaternion(joints[b], vals.data());
    for (int b = 0; b < B; ++b) {
      if (out_index[b] < 0) continue;
      Eigen::Quaterniond q = local[b];
      for (int a = joints[b].parent; a >= 0 && out_index[a] < 0; a = joints[a].parent)
        q = local[a] * q;
      q.normalize();
      const int j = out_index[b];
      content.rotations.block(f, 4 * j, 1, 4) << q.w(), q.x(), q.y(), q.z();
    }
    const BvhJoint& root = joints[0];
    Vector3 t = root.offset;
    for (std::size_t k = 0; k < root.channels.size(); ++k) {
      const std::string& ch = root.channels[k];
      if (ch.ends_with("position")) t[ch[0] - 'X'] += vals[root.channel_start + static_cast<Index>(k)];
    }
    content.root_translation.row(f) = (t * scale).transpose();
  }
  return {std::move(skel), std::move(content), 1.0 / frame_time};
}

BvhMotion load_bvh(const std::filesystem::path& path, const JointMap& map, double scale) {
  try {
    return parse_bvh(read_text_file(path), map, scale);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

// ---------------------------------------------------------------------------
// Retiming

MotionClip retime(const MotionClip& clip, double target_fps, bool interpolate) {
  clip.validate();
  if (!(target_fps > 0)) throw RangeError("target fps must be positive");
  if (target_fps == clip.fps) return clip;
  const double ratio = clip.fps / target_fps;
  const double k = std::round(ratio);
  const Index N = clip.frames();
  MotionClip out = clip;
  out.fps = target_fps;

  if (std::abs(ratio - k) < 1e-9 && k >= 1) {
    const Index stride = static_cast<Index>(k);
    const Index M = (N + stride - 1) / stride;
    auto decimate = [&](const Matrix& m) {
      Matrix d(M, m.cols());
      for (Index i = 0; i < M; ++i) d.row(i) = m.row(i * stride);
      return d;
    };
    if (clip.kind() == ReprKind::kContent) {
      out.repr = ContentRepr{decimate(clip.content().rotations),
                             decimate(clip.content().root_translation)};
    } else {
      out.repr = StyleRepr{decimate(clip.style().positions)};
    }
    out.validate();
    return out;
  }
  if (!interpolate)
    throw RangeError(fmt::format("{} fps -> {} fps is not an integer decimation; enable interpolation",
                                 clip.fps, target_fps));

  const Index M = static_cast<Index>(std::floor((N - 1) / ratio + 1e-9)) + 1;
  auto lerp_rows = [&](const Matrix& m, Index i) -> RowVector {
    const double s = i * ratio;
    const Index a = std::min<Index>(static_cast<Index>(std::floor(s)), N - 1);
    const Index b = std::min<Index>(a + 1, N - 1);
    const double u = s - a;
    return (1 - u) * m.row(a) + u * m.row(b);
  };
  if (clip.kind() == ReprKind::kStyle) {
    Matrix p(M, clip.style().positions.cols());
    for (Index i = 0; i < M; ++i) p.row(i) = lerp_rows(clip.style().positions, i);
    out.repr = StyleRepr{std::move(p)};
  } else {
    const ContentRepr& c = clip.content();
    const int J = c.joint_count();
    ContentRepr r;
    r.rotations.resize(M, 4 * J);
    r.root_translation.resize(M, 3);
    for (Index i = 0; i < M; ++i) {
      const double s = i * ratio;
      const Index a = std::min<Index>(static_cast<Index>(std::floor(s)), N - 1);
      const Index b = std::min<Index>(a + 1, N - 1);
      const double u = s - a;
      for (int j = 0; j < J; ++j) {
        const Eigen::Vector4d qa = c.rotations.block(a, 4 * j, 1, 4).transpose();
        const Eigen::Vector4d qb = c.rotations.block(b, 4 * j, 1, 4).transpose();
        Quat<double> q = slerp_shortest(quat_from_wxyz<double>(qa), quat_from_wxyz<double>(qb), u);
        q = canonical(q);
        r.rotations.block(i, 4 * j, 1, 4) = quat_to_wxyz(q).transpose();
      }
      r.root_translation.row(i) = lerp_rows(c.root_translation, i);
    }
    out.repr = std::move(r);
  }
  out.validate();
  return out;
}

}  // namespace umsd
