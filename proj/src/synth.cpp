#include "umsd/synth.hpp"

#include "umsd/rng.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <numbers>
#include <set>

namespace umsd {

using nlohmann::json;
using std::numbers::pi;

ContentKind parse_content_kind(const std::string& s) {
  if (s == "walk") return ContentKind::kWalk;
  if (s == "run") return ContentKind::kRun;
  if (s == "kick") return ContentKind::kKick;
  if (s == "jump") return ContentKind::kJump;
  throw RangeError(fmt::format("unknown content '{}' (walk, run, kick, jump)", s));
}

std::string to_string(ContentKind k) {
  switch (k) {
    case ContentKind::kWalk: return "walk";
    case ContentKind::kRun: return "run";
    case ContentKind::kKick: return "kick";
    case ContentKind::kJump: return "jump";
  }
  return "?";
}

std::vector<ContentKind> all_content_kinds() {
  return {ContentKind::kWalk, ContentKind::kRun, ContentKind::kKick, ContentKind::kJump};
}

void StyleParams::validate() const {
  if (!(amplitude_scale > 0)) throw RangeError(fmt::format("style {}: amplitude_scale must be > 0", name));
  if (!(tempo_scale >= 0.5 && tempo_scale <= 2.0))
    throw RangeError(fmt::format("style {}: tempo_scale must lie in [0.5, 2]", name));
  if (!(arm_swing_scale > 0)) throw RangeError(fmt::format("style {}: arm_swing_scale must be > 0", name));
  if (!(jitter >= 0)) throw RangeError(fmt::format("style {}: jitter must be >= 0", name));
  if (!std::isfinite(lean_angle) || !std::isfinite(bounce_gain))
    throw RangeError(fmt::format("style {}: non-finite parameter", name));
}

bool StyleParams::is_neutral() const {
  return amplitude_scale == 1.0 && lean_angle == 0.0 && bounce_gain == 0.0 &&
         tempo_scale == 1.0 && arm_swing_scale == 1.0;
}

std::vector<StyleParams> default_styles() {
  //       name       amp   lean   bounce tempo arm
  return {{"neutral", 1.0, 0.0, 0.0, 1.0, 1.0},
          {"proud", 1.1, -0.15, 0.3, 1.0, 1.3},
          {"old", 0.6, 0.30, 0.0, 0.7, 0.5},
          {"angry", 1.4, 0.15, 0.8, 1.3, 1.6},
          {"sexy", 1.0, -0.10, 0.5, 0.85, 1.1},
          {"sneaky", 0.8, 0.50, 0.2, 0.6, 0.7}};
}

namespace {

using Q = Eigen::Quaterniond;

Q rx(double a) { return axis_rotation<double>(0, a); }
Q ry(double a) { return axis_rotation<double>(1, a); }
Q rz(double a) { return axis_rotation<double>(2, a); }

void put(ContentRepr& c, Index n, int j, const Q& q) {
  const Q u = canonical(q.normalized());
  c.rotations.block<1, 4>(n, 4 * j) << u.w(), u.x(), u.y(), u.z();
}

Q get(const ContentRepr& c, Index n, int j) {
  return Q(c.rotations(n, 4 * j), c.rotations(n, 4 * j + 1), c.rotations(n, 4 * j + 2),
           c.rotations(n, 4 * j + 3));
}

void require_humanoid(const Skeleton& skel) {
  if (skel.joint_count() != joints::kCount || skel.find("hips") != joints::kHips ||
      skel.find("l_ankle") != joints::kLAnkle || skel.find("r_wrist") != joints::kRWrist)
    throw DimensionError("the motion generator needs the default 21-joint humanoid");
}

struct Perturbation {
  double phase, amp, speed;
};

Perturbation perturb(std::uint64_t seed) {
  Rng rng(seed);
  Perturbation p{};
  p.phase = rng.uniform(0.0, 2.0 * pi);
  p.amp = 1.0 + rng.uniform(-0.1, 0.1);
  p.speed = 1.0 + rng.uniform(-0.1, 0.1);
  return p;
}

struct Cyclic {
  double freq, speed, hip, knee_base, knee_amp, ankle, shoulder, elbow_base, elbow_amp, bounce,
      twist;
};

void cyclic_gait(ContentRepr& c, const Cyclic& g, const Perturbation& pr, double fps) {
  using namespace joints;
  const double a = pr.amp;
  for (Index n = 0; n < c.frames(); ++n) {
    const double t = n / fps;
    const double p = 2 * pi * g.freq * t + pr.phase;
    const double s = std::sin(p), co = std::cos(p);
    put(c, n, kLHip, rx(-a * g.hip * s));
    put(c, n, kRHip, rx(a * g.hip * s));
    put(c, n, kLKnee, rx(a * (g.knee_base + g.knee_amp * co)));
    put(c, n, kRKnee, rx(a * (g.knee_base - g.knee_amp * co)));
    put(c, n, kLAnkle, rx(a * g.ankle * s));
    put(c, n, kRAnkle, rx(-a * g.ankle * s));
    put(c, n, kLShoulder, rx(a * g.shoulder * s));
    put(c, n, kRShoulder, rx(-a * g.shoulder * s));
    put(c, n, kLElbow, rx(a * (g.elbow_base - g.elbow_amp * s)));
    put(c, n, kRElbow, rx(a * (g.elbow_base + g.elbow_amp * s)));
    put(c, n, kSpine, ry(a * g.twist * s));
    put(c, n, kSpine2, ry(-a * g.twist * s));
    c.root_translation(n, 0) = 0.0;
    c.root_translation(n, 1) = kRootHeight + g.bounce * std::cos(2 * p);
    c.root_translation(n, 2) = g.speed * pr.speed * t;
  }
}

void kick(ContentRepr& c, const Perturbation& pr, double fps) {
  using namespace joints;
  const double a = pr.amp;
  for (Index n = 0; n < c.frames(); ++n) {
    const double p = 2 * pi * 0.9 * n / fps + pr.phase;
    const double up = std::max(0.0, std::sin(p));
    const double k = up * up;
    // Stance sway keeps the whole body moving between kicks.
    const double sway = std::sin(2 * p);
    put(c, n, kRHip, rx(-a * (1.1 * k + 0.1 * sway)));
    put(c, n, kRKnee, rx(a * (0.15 + 0.8 * up * (1.0 - k) + 0.1 * sway)));
    put(c, n, kRAnkle, rx(a * 0.3 * k));
    put(c, n, kLHip, rx(a * 0.1 * sway));
    put(c, n, kLKnee, rx(a * (0.15 * k + 0.15 + 0.1 * sway)));
    put(c, n, kLShoulder, rz(a * 0.5 * k) * rx(a * (0.2 * k + 0.25 * sway)));
    put(c, n, kRShoulder, rz(-a * 0.5 * k) * rx(-a * (0.3 * k + 0.25 * sway)));
    put(c, n, kLElbow, rx(-a * (0.4 + 0.15 * sway)));
    put(c, n, kRElbow, rx(-a * (0.4 - 0.15 * sway)));
    put(c, n, kSpine, ry(a * 0.15 * k));
    c.root_translation(n, 0) = 0.0;
    c.root_translation(n, 1) = kRootHeight - 0.03 * k - 0.01 * (1 + sway);
    c.root_translation(n, 2) = 0.3 * pr.speed * n / fps;
  }
}

void jump(ContentRepr& c, const Perturbation& pr, double fps) {
  using namespace joints;
  const double a = pr.amp;
  for (Index n = 0; n < c.frames(); ++n) {
    const double p = 2 * pi * 0.9 * n / fps + pr.phase;
    const double air = std::max(0.0, std::sin(p));
    const double crouch = std::max(0.0, -std::sin(p));
    for (int hip : {kLHip, kRHip}) put(c, n, hip, rx(-a * (0.8 * air + 0.5 * crouch)));
    for (int knee : {kLKnee, kRKnee}) put(c, n, knee, rx(a * (1.2 * air + 0.9 * crouch)));
    for (int ankle : {kLAnkle, kRAnkle}) put(c, n, ankle, rx(-a * 0.4 * crouch + a * 0.3 * air));
    for (int sh : {kLShoulder, kRShoulder}) put(c, n, sh, rx(-a * (1.0 * air - 0.4 * crouch)));
    for (int el : {kLElbow, kRElbow}) put(c, n, el, rx(-a * 0.3));
    c.root_translation(n, 0) = 0.0;
    c.root_translation(n, 1) = kRootHeight + 0.35 * air - 0.15 * crouch;
    c.root_translation(n, 2) = 0.6 * pr.speed * n / fps;
  }
}

}  // namespace

ContentRepr generate_content(const Skeleton& skel, ContentKind kind, Index frames,
                             std::uint64_t seed, double fps) {
  require_humanoid(skel);
  if (frames < 16) throw RangeError("generated clips need at least 16 frames");
  if (!(fps > 0)) throw RangeError("fps must be positive");
  ContentRepr c;
  c.rotations = Matrix::Zero(frames, 4 * joints::kCount);
  for (int j = 0; j < joints::kCount; ++j) c.rotations.col(4 * j).setOnes();
  c.root_translation = Matrix::Zero(frames, 3);
  const Perturbation pr = perturb(seed);
  switch (kind) {
    case ContentKind::kWalk:
      cyclic_gait(c, {1.0, 1.2, 0.45, 0.3, 0.3, 0.15, 0.35, -0.3, 0.1, 0.02, 0.06}, pr, fps);
      break;
    case ContentKind::kRun:
      cyclic_gait(c, {1.4, 3.0, 0.75, 0.7, 0.5, 0.25, 0.6, -1.3, 0.2, 0.05, 0.1}, pr, fps);
      break;
    case ContentKind::kKick:
      kick(c, pr, fps);
      break;
    case ContentKind::kJump:
      jump(c, pr, fps);
      break;
  }
  return c;
}

ContentRepr stylize_content(const Skeleton& skel, const ContentRepr& content,
                            const StyleParams& params, double fps) {
  using namespace joints;
  require_humanoid(skel);
  params.validate();
  content.validate();
  ContentRepr out = content;
  const int J = content.joint_count();

  if (params.tempo_scale != 1.0) {
    const Index N = content.frames();
    const Index M = static_cast<Index>(std::floor((N - 1) / params.tempo_scale + 1e-9)) + 1;
    out.rotations.resize(M, 4 * J);
    out.root_translation.resize(M, 3);
    for (Index i = 0; i < M; ++i) {
      const double s = i * params.tempo_scale;
      const Index a = std::min<Index>(static_cast<Index>(std::floor(s)), N - 1);
      const Index b = std::min<Index>(a + 1, N - 1);
      const double u = s - static_cast<double>(a);
      for (int j = 0; j < J; ++j) put(out, i, j, slerp_shortest(get(content, a, j), get(content, b, j), u));
      out.root_translation.row(i) =
          (1 - u) * content.root_translation.row(a) + u * content.root_translation.row(b);
    }
    // Forward travel keeps its per-second speed under the new timing.
    const double z0 = out.root_translation(0, 2);
    for (Index i = 0; i < M; ++i)
      out.root_translation(i, 2) = z0 + (out.root_translation(i, 2) - z0) / params.tempo_scale;
  }

  if (params.amplitude_scale != 1.0 || params.arm_swing_scale != 1.0) {
    for (Index n = 0; n < out.frames(); ++n)
      for (int j = 1; j < J; ++j) {
        double e = params.amplitude_scale;
        if (j == kLShoulder || j == kRShoulder || j == kLElbow || j == kRElbow)
          e *= params.arm_swing_scale;
        if (e != 1.0) put(out, n, j, quat_pow(get(out, n, j), e));
      }
  }

  if (params.lean_angle != 0.0)
    for (Index n = 0; n < out.frames(); ++n)
      put(out, n, kSpine, rx(params.lean_angle) * get(out, n, kSpine));

  if (params.bounce_gain != 0.0)
    for (Index n = 0; n < out.frames(); ++n)
      out.root_translation(n, 1) +=
          params.bounce_gain * 0.05 * std::abs(std::sin(2 * pi * 2.0 * n / fps));
  return out;
}

StyleRepr apply_style(const Skeleton& skel, const ContentRepr& content, const StyleParams& params,
                      std::uint64_t seed, double fps) {
  StyleRepr out = forward_kinematics(skel, stylize_content(skel, content, params, fps));
  if (params.jitter > 0) {
    Rng rng(seed);
    out.positions += params.jitter * rng.normal_matrix(out.positions.rows(), out.positions.cols());
  }
  return out;
}

ContentRepr generate_styled(const Skeleton& skel, ContentKind kind, const StyleParams& style,
                            Index frames, std::uint64_t seed, double fps) {
  style.validate();
  const Index source =
      std::max<Index>(16, static_cast<Index>(std::ceil((frames - 1) * style.tempo_scale)) + 2);
  const ContentRepr styled =
      stylize_content(skel, generate_content(skel, kind, source, seed, fps), style, fps);
  return slice_frames(styled, 0, frames);
}

// ---------------------------------------------------------------------------
// Dataset

void DatasetConfig::validate() const {
  if (contents.empty()) throw RangeError("dataset needs at least one content");
  if (styles.empty()) throw RangeError("dataset needs at least one style");
  std::set<std::string> names;
  for (const StyleParams& s : styles) {
    s.validate();
    if (!names.insert(s.name).second) throw RangeError(fmt::format("duplicate style {}", s.name));
  }
  std::set<ContentKind> seen(contents.begin(), contents.end());
  if (seen.size() != contents.size()) throw RangeError("duplicate content in dataset config");
  if (clips_per_pair < 1) throw RangeError("clips_per_pair must be >= 1");
  if (min_frames < 16 || max_frames < min_frames)
    throw RangeError("frame range must satisfy 16 <= min <= max");
  if (!(fps > 0)) throw RangeError("fps must be positive");
}

DatasetConfig parse_dataset_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("dataset config is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw FormatError("dataset config must be an object");
  DatasetConfig c;
  try {
    for (const auto& [key, v] : doc.items()) {
      if (key == "contents") {
        c.contents.clear();
        for (const auto& s : v) c.contents.push_back(parse_content_kind(s.get<std::string>()));
      } else if (key == "styles") {
        c.styles.clear();
        for (const auto& s : v) {
          StyleParams p;
          for (const auto& [k, x] : s.items()) {
            if (k == "name") p.name = x.get<std::string>();
            else if (k == "amplitude_scale") p.amplitude_scale = x.get<double>();
            else if (k == "lean_angle") p.lean_angle = x.get<double>();
            else if (k == "bounce_gain") p.bounce_gain = x.get<double>();
            else if (k == "tempo_scale") p.tempo_scale = x.get<double>();
            else if (k == "arm_swing_scale") p.arm_swing_scale = x.get<double>();
            else if (k == "jitter") p.jitter = x.get<double>();
            else throw FormatError(fmt::format("unknown style field '{}'", k));
          }
          c.styles.push_back(p);
        }
      } else if (key == "clips_per_pair") {
        c.clips_per_pair = v.get<int>();
      } else if (key == "frames") {
        if (!v.is_array() || v.size() != 2) throw FormatError("frames must be [min, max]");
        c.min_frames = v[0].get<Index>();
        c.max_frames = v[1].get<Index>();
      } else if (key == "fps") {
        c.fps = v.get<double>();
      } else if (key == "seed") {
        c.seed = v.get<std::uint64_t>();
      } else {
        throw FormatError(fmt::format("unknown dataset config field '{}'", key));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(fmt::format("dataset config: {}", e.what()));
  }
  c.validate();
  return c;
}

std::string serialize_dataset_config(const DatasetConfig& c) {
  json contents = json::array();
  for (ContentKind k : c.contents) contents.push_back(to_string(k));
  json styles = json::array();
  for (const StyleParams& s : c.styles)
    styles.push_back({{"name", s.name},
                      {"amplitude_scale", s.amplitude_scale},
                      {"lean_angle", s.lean_angle},
                      {"bounce_gain", s.bounce_gain},
                      {"tempo_scale", s.tempo_scale},
                      {"arm_swing_scale", s.arm_swing_scale},
                      {"jitter", s.jitter}});
  const json doc = {{"contents", contents}, {"styles", styles},
                    {"clips_per_pair", c.clips_per_pair},
                    {"frames", {c.min_frames, c.max_frames}},
                    {"fps", c.fps}, {"seed", c.seed}};
  return doc.dump(2) + "\n";
}

namespace {

struct ClipPlan {
  int content_index, style_index, k;
  std::string path;
};

std::vector<ClipPlan> plan(const DatasetConfig& c) {
  std::vector<ClipPlan> out;
  for (std::size_t ci = 0; ci < c.contents.size(); ++ci)
    for (std::size_t si = 0; si < c.styles.size(); ++si)
      for (int k = 0; k < c.clips_per_pair; ++k)
        out.push_back({static_cast<int>(ci), static_cast<int>(si), k,
                       fmt::format("clips/{}_{}_{:02d}.json", to_string(c.contents[ci]),
                                   c.styles[si].name, k)});
  return out;
}

MotionClip make_clip(const DatasetConfig& c, const Skeleton& skel, const ClipPlan& p) {
  const auto kind = c.contents[p.content_index];
  const std::uint64_t clip_seed =
      Rng::derive(c.seed, {static_cast<std::uint64_t>(kind), static_cast<std::uint64_t>(p.style_index),
                           static_cast<std::uint64_t>(p.k)});
  Rng rng(clip_seed);
  const Index frames = rng.uniform_int(static_cast<int>(c.min_frames), static_cast<int>(c.max_frames));
  MotionClip clip;
  clip.repr = generate_styled(skel, kind, c.styles[p.style_index], frames,
                              Rng::derive(clip_seed, {1}), c.fps);
  clip.fps = c.fps;
  clip.content_label = p.content_index;
  clip.style_label = p.style_index;
  return clip;
}

}  // namespace

std::vector<MotionClip> generate_clips(const DatasetConfig& config, const Skeleton& skel) {
  config.validate();
  std::vector<MotionClip> clips;
  for (const ClipPlan& p : plan(config)) clips.push_back(make_clip(config, skel, p));
  return clips;
}

DatasetManifest build_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const Skeleton skel = Skeleton::humanoid21();
  DatasetManifest m;
  for (ContentKind k : config.contents) m.content_labels.push_back(to_string(k));
  for (const StyleParams& s : config.styles) m.style_labels.push_back(s.name);
  m.seed = config.seed;
  for (const ClipPlan& p : plan(config)) {
    ClipFile f{kClipSchemaVersion, skel, make_clip(config, skel, p)};
    save_clip(out_dir / p.path, f);
    m.entries.push_back({p.path, p.content_index, p.style_index, f.clip.frames()});
  }
  save_manifest(out_dir / "manifest.json", m);
  write_text_file(out_dir / "dataset_config.json", serialize_dataset_config(config));
  return m;
}

// ---------------------------------------------------------------------------
// Handcrafted statistics

RowVector handcrafted_features(const Skeleton& skel, const StyleRepr& clip, double fps) {
  require_humanoid(skel);
  using namespace joints;
  const Matrix& P = clip.positions;
  const Index N = P.rows();
  auto joint = [&](Index n, int j) { return Vector3(P.block<1, 3>(n, 3 * j).transpose()); };
  double lean = 0.0, y_mean = 0.0, y_sq = 0.0, foot = 0.0, wrist = 0.0;
  for (Index n = 0; n < N; ++n) {
    const Vector3 torso = joint(n, kNeck) - joint(n, kHips);
    lean += std::atan2(torso.z(), torso.y());
    const double y = P(n, 3 * kHips + 1);
    y_mean += y;
    y_sq += y * y;
    if (n > 0) {
      for (int j : {kLAnkle, kRAnkle})
        foot += ((joint(n, j) - joint(n, kHips)) - (joint(n - 1, j) - joint(n - 1, kHips))).norm();
      for (int j : {kLWrist, kRWrist})
        wrist += ((joint(n, j) - joint(n, kHips)) - (joint(n - 1, j) - joint(n - 1, kHips))).norm();
    }
  }
  const double inv = 1.0 / static_cast<double>(N);
  y_mean *= inv;
  const double var = std::max(0.0, y_sq * inv - y_mean * y_mean);
  const double per_sec = fps / (2.0 * static_cast<double>(N - 1));
  foot *= per_sec;
  wrist *= per_sec;
  // Log scales turn content-driven magnitude differences into offsets.
  RowVector f(4);
  f << lean * inv, std::log(var + 1e-6), std::log(foot + 1e-3),
      std::log(wrist + 1e-3) - std::log(foot + 1e-3);
  return f;
}

double nearest_neighbor_accuracy(const Matrix& features, const std::vector<int>& labels) {
  const Index n = features.rows();
  if (static_cast<Index>(labels.size()) != n || n < 2)
    throw DimensionError("nearest neighbour needs >= 2 labeled rows");
  const RowVector mean = features.colwise().mean();
  Matrix z = features.rowwise() - mean;
  for (Index c = 0; c < z.cols(); ++c) {
    const double sd = std::sqrt(z.col(c).squaredNorm() / static_cast<double>(n));
    if (sd > 0) z.col(c) /= sd;
  }
  int correct = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = -1;
    double best_d = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (z.row(i) - z.row(j)).squaredNorm();
      if (best < 0 || d < best_d) {
        best = j;
        best_d = d;
      }
    }
    if (labels[best] == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace umsd
