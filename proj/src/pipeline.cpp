#include "umsd/pipeline.hpp"

#include "umsd/attention.hpp"
#include "umsd/denoiser.hpp"
#include "umsd/rng.hpp"

#include <fmt/format.h>

#include <cmath>

namespace umsd {

ContentRepr transfer(const Checkpoint& ckpt, const Skeleton& skel, const ContentRepr& content,
                     const StyleRepr& style, std::uint64_t seed) {
  const ModelConfig& m = ckpt.config.model;
  content.validate();
  style.validate();
  if (skel.joint_count() != m.joints || content.joint_count() != m.joints ||
      style.joint_count() != m.joints)
    throw DimensionError(fmt::format("clips must have {} joints to match the checkpoint", m.joints));
  const ConditionTensor condition =
      umsd_forward(content_stream_tokens(content), style.positions, ckpt.params, m);
  const NoiseSchedule schedule = make_schedule(ckpt.config.schedule, m.timesteps);
  const DenoiseFn denoise = [&](const Matrix& x_t, int t, const ConditionTensor& c) {
    return msm_forward(x_t, t, c, Stream::kContent, ckpt.params, m);
  };
  Rng rng(seed);
  const Matrix x = sample(denoise, condition, content.frames(), m.content_state_width(), schedule, rng);
  ContentRepr out;
  out.rotations = x.leftCols(4 * m.joints);
  out.root_translation = m.diffuse_root ? Matrix(x.rightCols(3)) : content.root_translation;
  return normalize_quaternions(out);
}

double position_rmse(const Skeleton& skel, const ContentRepr& a, const ContentRepr& b) {
  if (a.frames() != b.frames()) throw DimensionError("position_rmse: frame counts differ");
  const Matrix d = forward_kinematics(skel, a).positions - forward_kinematics(skel, b).positions;
  return std::sqrt(d.squaredNorm() / static_cast<double>(d.rows() * skel.joint_count()));
}

ContentRepr crop(const ContentRepr& c, Index window) {
  if (c.frames() < window)
    throw RangeError(fmt::format("clip of {} frames is shorter than the window {}", c.frames(), window));
  return canonicalize_root(slice_frames(c, 0, window));
}

ReconstructionCheck reconstruction_check(const Checkpoint& ckpt, const Skeleton& skel,
                                         const std::vector<MotionClip>& clips, std::uint64_t seed) {
  const Index window = ckpt.config.window;
  std::vector<ContentRepr> crops;
  for (const MotionClip& c : clips) crops.push_back(crop(c.content(), window));
  ReconstructionCheck r;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::size_t j = i;
    for (std::size_t k = 1; k < clips.size(); ++k) {
      const std::size_t cand = (i + k) % clips.size();
      if (clips[cand].style_label == clips[i].style_label) {
        j = cand;
        break;
      }
    }
    if (j == i) continue;
    const auto s = static_cast<std::uint64_t>(i);
    const ContentRepr same =
        transfer(ckpt, skel, crops[i], forward_kinematics(skel, crops[i]), Rng::derive(seed, {0, s}));
    const ContentRepr other =
        transfer(ckpt, skel, crops[i], forward_kinematics(skel, crops[j]), Rng::derive(seed, {1, s}));
    r.same_clip_rmse += position_rmse(skel, same, crops[i]);
    r.validation_rmse += position_rmse(skel, other, crops[i]);
    ++r.pairs;
  }
  if (r.pairs == 0) throw RangeError("reconstruction check needs two clips sharing a style");
  r.same_clip_rmse /= r.pairs;
  r.validation_rmse /= r.pairs;
  r.passed = r.same_clip_rmse < kReconstructionSlack * r.validation_rmse;
  return r;
}

std::vector<MotionClip> evaluation_grid(const Checkpoint& ckpt, const Dataset& data,
                                        std::uint64_t seed) {
  const int contents = static_cast<int>(data.manifest.content_labels.size());
  const int styles = static_cast<int>(data.manifest.style_labels.size());
  const Index window = ckpt.config.window;
  std::vector<MotionClip> out;
  for (int c = 0; c < contents; ++c) {
    const MotionClip* content = nullptr;
    for (const MotionClip& clip : data.clips)
      if (clip.content_label == c && (!content || (content->style_label != 0 && clip.style_label == 0)))
        content = &clip;
    if (!content) continue;
    for (int s = 0; s < styles; ++s) {
      const MotionClip* style = nullptr;
      for (const MotionClip& clip : data.clips)
        if (clip.style_label == s && (!style || (style->content_label == c && clip.content_label != c)))
          style = &clip;
      if (!style) continue;
      MotionClip g;
      const ContentRepr cc = crop(content->content(), window);
      const StyleRepr ss = forward_kinematics(data.skeleton, crop(style->content(), window));
      g.repr = transfer(ckpt, data.skeleton, cc, ss,
                        Rng::derive(seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(s)}));
      g.fps = content->fps;
      g.content_label = c;
      g.style_label = s;
      out.push_back(std::move(g));
    }
  }
  if (out.empty()) throw RangeError("evaluation grid is empty");
  return out;
}

EvalExtractors train_extractors(const Dataset& data, std::uint64_t seed) {
  ExtractorConfig cfg;
  cfg.seed = Rng::derive(seed, {1});
  FeatureExtractor style = FeatureExtractor::train(
      data.skeleton, data.clips, LabelKind::kStyle, static_cast<int>(data.manifest.style_labels.size()), cfg);
  cfg.seed = Rng::derive(seed, {2});
  FeatureExtractor content = FeatureExtractor::train(
      data.skeleton, data.clips, LabelKind::kContent, static_cast<int>(data.manifest.content_labels.size()), cfg);
  return {std::move(style), std::move(content)};
}

std::vector<MetricRow> compute_metrics(const std::vector<MotionClip>& generated,
                                       const std::vector<MotionClip>& real,
                                       const EvalExtractors& ex, std::uint64_t seed,
                                       bool* fmd_regularized) {
  const Matrix gen = ex.style.features(generated);
  const Matrix ref = ex.style.features(real);
  const FrechetResult f = frechet_distance(gen, ref);
  if (fmd_regularized) *fmd_regularized = f.regularized;
  const auto n = static_cast<Index>(generated.size());
  return {{"fmd", f.value, n, seed},
          {"kmd", kmd(gen, ref, seed), n, seed},
          {"diversity", diversity(gen, 200, seed), n, seed},
          {"cra", recognition_accuracy(generated, ex.content.classifier(), LabelKind::kContent), n, seed},
          {"sra", recognition_accuracy(generated, ex.style.classifier(), LabelKind::kStyle), n, seed}};
}

}  // namespace umsd
