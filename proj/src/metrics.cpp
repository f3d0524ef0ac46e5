#include "umsd/metrics.hpp"

#include "umsd/rng.hpp"
#include "umsd/synth.hpp"

#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include <cmath>
#include <numeric>

namespace umsd {

namespace {

Matrix covariance(const Matrix& x) {
  if (x.rows() < 2) throw DimensionError("covariance needs at least two rows");
  const Matrix c = x.rowwise() - x.colwise().mean();
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::SelfAdjointEigenSolver<Matrix> eig(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(0.5 * (m + m.transpose()));
}

Matrix psd_sqrt(const Matrix& m) {
  const auto es = eig(m);
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

bool rank_deficient(const Matrix& cov) {
  const Vector ev = eig(cov).eigenvalues();
  return ev.minCoeff() <= 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
}

}  // namespace

FrechetResult frechet_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("fmd: feature widths differ");
  if (a.cols() < 1) throw DimensionError("fmd: empty features");
  Matrix sa = covariance(a), sb = covariance(b);
  FrechetResult r;
  if (rank_deficient(sa) || rank_deficient(sb)) {
    r.regularized = true;
    sa.diagonal().array() += kFrechetEps;
    sb.diagonal().array() += kFrechetEps;
  }
  const Matrix ra = psd_sqrt(sa);
  const Vector ev = eig(ra * sb * ra).eigenvalues().cwiseMax(0.0);
  const double cross = ev.cwiseSqrt().sum();
  const double mean_term = (a.colwise().mean() - b.colwise().mean()).squaredNorm();
  r.value = std::max(0.0, mean_term + sa.trace() + sb.trace() - 2.0 * cross);
  return r;
}

double polynomial_kernel(const RowVector& x, const RowVector& y) {
  const double v = x.dot(y) / static_cast<double>(x.size()) + 1.0;
  return v * v * v;
}

double mmd_unbiased(const Matrix& a, const Matrix& b) {
  const Index m = a.rows(), n = b.rows();
  if (a.cols() != b.cols()) throw DimensionError("kmd: feature widths differ");
  if (m < 2 || n < 2) throw DimensionError("kmd needs at least two rows per set");
  const double d = static_cast<double>(a.cols());
  auto kernel = [d](const Matrix& g) { return ((g.array() / d + 1.0).cube()).matrix(); };
  const Matrix kaa = kernel(a * a.transpose());
  const Matrix kbb = kernel(b * b.transpose());
  const Matrix kab = kernel(a * b.transpose());
  const double saa = kaa.sum() - kaa.trace();
  const double sbb = kbb.sum() - kbb.trace();
  return saa / static_cast<double>(m * (m - 1)) + sbb / static_cast<double>(n * (n - 1)) -
         2.0 * kab.sum() / static_cast<double>(m * n);
}

double kmd(const Matrix& a, const Matrix& b, std::uint64_t seed, int subsets, Index subset_size) {
  if (subsets < 1 || subset_size < 2) throw RangeError("kmd: need subsets >= 1 and size >= 2");
  if (a.rows() <= subset_size && b.rows() <= subset_size) return mmd_unbiased(a, b);
  Rng rng(seed);
  auto draw = [&](const Matrix& x) {
    if (x.rows() <= subset_size) return x;
    std::vector<Index> idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    // Partial Fisher-Yates.
    for (Index i = 0; i < subset_size; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i), static_cast<int>(x.rows() - 1)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    }
    Matrix out(subset_size, x.cols());
    for (Index i = 0; i < subset_size; ++i) out.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
    return out;
  };
  double total = 0.0;
  for (int s = 0; s < subsets; ++s) {
    const Matrix sa = draw(a);
    const Matrix sb = draw(b);
    total += mmd_unbiased(sa, sb);
  }
  return total / subsets;
}

double diversity(const Matrix& features, int n_pairs, std::uint64_t seed) {
  const Index n = features.rows();
  if (n < 2) throw DimensionError("diversity needs at least two rows");
  if (n_pairs < 1) throw RangeError("diversity needs n_pairs >= 1");
  Rng rng(seed);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::size_t cursor = perm.size();
  double total = 0.0;
  for (int k = 0; k < n_pairs; ++k) {
    if (cursor + 2 > perm.size()) {
      std::iota(perm.begin(), perm.end(), Index{0});
      for (std::size_t i = perm.size() - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)))]);
      cursor = 0;
    }
    total += (features.row(perm[cursor]) - features.row(perm[cursor + 1])).norm();
    cursor += 2;
  }
  return total / n_pairs;
}

double recognition_accuracy(const std::vector<MotionClip>& clips, const Classifier& classify,
                            LabelKind kind) {
  if (clips.empty()) throw RangeError("recognition accuracy of an empty clip set");
  int correct = 0;
  for (const MotionClip& c : clips)
    correct += classify(c) == (kind == LabelKind::kContent ? c.content_label : c.style_label);
  return static_cast<double>(correct) / static_cast<double>(clips.size());
}

Matrix classifier_tokens(const Skeleton& skel, const MotionClip& clip) {
  Matrix p = clip.kind() == ReprKind::kContent ? forward_kinematics(skel, clip.content()).positions
                                               : clip.style().positions;
  if (p.cols() != 3 * skel.joint_count()) throw DimensionError("clip does not match the skeleton");
  for (Index n = 0; n < p.rows(); ++n) {
    const double x = p(n, 0), z = p(n, 2);
    for (int j = 0; j < skel.joint_count(); ++j) {
      p(n, 3 * j) -= x;
      p(n, 3 * j + 2) -= z;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Feature extractor

void ExtractorConfig::validate() const {
  if (kernel < 1 || hidden < 1 || feature_dim < 2 || steps < 0 || !(lr >= 0))
    throw RangeError("invalid feature extractor config");
}

Matrix FeatureExtractor::normalized_tokens(const MotionClip& clip) const {
  const Matrix t = classifier_tokens(skel_, clip);
  return ((t.rowwise() - mean_).array().rowwise() * inv_std_.array()).matrix();
}

FeatureExtractor::Forward FeatureExtractor::forward(ad::Tape& tape, ParamBinder& b,
                                                    const MotionClip& clip) const {
  const ad::Var x = tape.constant(normalized_tokens(clip));
  const ad::Var conv = ad::gelu(ad::linear(ad::unfold_causal(x, config_.kernel), b("conv.weight"), b("conv.bias")));
  const ad::Var feat = ad::gelu(ad::linear(ad::mean_rows(conv), b("feat.weight"), b("feat.bias")));
  return {feat, ad::linear(feat, b("out.weight"), b("out.bias"))};
}

FeatureExtractor FeatureExtractor::train(const Skeleton& skel, const std::vector<MotionClip>& clips,
                                         LabelKind kind, int classes, const ExtractorConfig& config) {
  config.validate();
  if (clips.empty()) throw RangeError("feature extractor needs training clips");
  if (classes < 2) throw RangeError("feature extractor needs at least two classes");
  FeatureExtractor fx;
  fx.skel_ = skel;
  fx.config_ = config;
  fx.classes_ = classes;

  std::vector<int> labels;
  Index frames = 0;
  RowVector sum = RowVector::Zero(3 * skel.joint_count());
  RowVector sq = sum;
  for (const MotionClip& c : clips) {
    const int l = kind == LabelKind::kContent ? c.content_label : c.style_label;
    if (l < 0 || l >= classes) throw RangeError(fmt::format("label {} outside [0, {})", l, classes));
    labels.push_back(l);
    const Matrix t = classifier_tokens(skel, c);
    sum += t.colwise().sum();
    sq += t.array().square().matrix().colwise().sum();
    frames += t.rows();
  }
  fx.mean_ = sum / static_cast<double>(frames);
  const RowVector var = (sq / static_cast<double>(frames)).array() - fx.mean_.array().square();
  fx.inv_std_ = var.unaryExpr([](double v) { return v > 1e-12 ? 1.0 / std::sqrt(v) : 1.0; });

  const Index in = static_cast<Index>(config.kernel) * 3 * skel.joint_count();
  std::vector<ParamSpec> specs;
  declare_linear(specs, "conv", in, config.hidden);
  declare_linear(specs, "feat", config.hidden, config.feature_dim);
  declare_linear(specs, "out", config.feature_dim, classes);
  fx.params_ = init_params(specs, config.seed);

  AdamWConfig opt;
  opt.lr = config.lr;
  OptimizerState state = OptimizerState::zeros_like(fx.params_);
  for (int step = 0; step < config.steps; ++step) {
    ad::Tape tape;
    ParamBinder binder(tape, fx.params_);
    std::vector<ad::Var> logits;
    for (const MotionClip& c : clips) logits.push_back(fx.forward(tape, binder, c).logits);
    const ad::Var loss = ad::cross_entropy(ad::concat_rows(logits), labels);
    fx.final_loss_ = loss.value()(0, 0);
    if (!std::isfinite(fx.final_loss_)) throw NumericError("feature extractor loss is non-finite");
    tape.backward(loss);
    adamw_step(fx.params_, binder.gradients(), state, opt);
  }
  return fx;
}

RowVector FeatureExtractor::features(const MotionClip& clip) const {
  ad::Tape tape(false);
  ParamBinder binder(tape, params_);
  return forward(tape, binder, clip).features.value();
}

Matrix FeatureExtractor::features(const std::vector<MotionClip>& clips) const {
  Matrix out(static_cast<Index>(clips.size()), config_.feature_dim);
  for (std::size_t i = 0; i < clips.size(); ++i) out.row(static_cast<Index>(i)) = features(clips[i]);
  return out;
}

int FeatureExtractor::predict(const MotionClip& clip) const {
  ad::Tape tape(false);
  ParamBinder binder(tape, params_);
  Index best = 0;
  forward(tape, binder, clip).logits.value().row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

Classifier FeatureExtractor::classifier() const {
  return [self = *this](const MotionClip& c) { return self.predict(c); };
}

// ---------------------------------------------------------------------------
// Handcrafted baseline

HandcraftedClassifier::HandcraftedClassifier(const Skeleton& skel,
                                             const std::vector<MotionClip>& reference,
                                             LabelKind kind)
    : skel_(skel) {
  if (reference.empty()) throw RangeError("handcrafted classifier needs reference clips");
  features_.resize(static_cast<Index>(reference.size()), 4);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const MotionClip& c = reference[i];
    const StyleRepr p = c.kind() == ReprKind::kContent ? forward_kinematics(skel, c.content()) : c.style();
    features_.row(static_cast<Index>(i)) = handcrafted_features(skel, p, c.fps);
    labels_.push_back(kind == LabelKind::kContent ? c.content_label : c.style_label);
  }
  mean_ = features_.colwise().mean();
  const RowVector var = (features_.rowwise() - mean_).array().square().colwise().mean();
  inv_std_ = var.unaryExpr([](double v) { return v > 0 ? 1.0 / std::sqrt(v) : 1.0; });
  features_ = ((features_.rowwise() - mean_).array().rowwise() * inv_std_.array()).matrix();
}

int HandcraftedClassifier::operator()(const MotionClip& clip) const {
  const StyleRepr p = clip.kind() == ReprKind::kContent ? forward_kinematics(skel_, clip.content()) : clip.style();
  const RowVector f = ((handcrafted_features(skel_, p, clip.fps) - mean_).array() * inv_std_.array()).matrix();
  Index best = 0;
  (features_.rowwise() - f).rowwise().squaredNorm().minCoeff(&best);
  return labels_[static_cast<std::size_t>(best)];
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "metric,value,n,seed\n";
  for (const MetricRow& r : rows) out += fmt::format("{},{},{},{}\n", r.metric, r.value, r.n, r.seed);
  return out;
}

}  // namespace umsd
