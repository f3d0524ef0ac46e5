#pragma once

// Distribution distances between feature sets, diversity, recognition
// accuracy, and the small convolutional classifier that produces features.

#include "umsd/motion.hpp"
#include "umsd/params.hpp"
#include "umsd/training.hpp"

#include <functional>
#include <string>
#include <vector>

namespace umsd {

/// Added to both covariances when either is rank deficient.
inline constexpr double kFrechetEps = 1e-6;

struct FrechetResult {
  double value = 0.0;
  bool regularized = false;
};

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), rows are
/// samples, unbiased covariances. Clamped at zero.
FrechetResult frechet_distance(const Matrix& a, const Matrix& b);
inline double fmd(const Matrix& a, const Matrix& b) { return frechet_distance(a, b).value; }

/// (x . y / d + 1)^3
double polynomial_kernel(const RowVector& x, const RowVector& y);

/// Unbiased MMD^2 with the cubic polynomial kernel on all rows.
double mmd_unbiased(const Matrix& a, const Matrix& b);

/// MMD^2 averaged over `subsets` random subsets of `subset_size` rows per
/// set; sets no larger than subset_size are used whole, once.
double kmd(const Matrix& a, const Matrix& b, std::uint64_t seed = 0, int subsets = 10,
           Index subset_size = 50);

/// Mean Euclidean distance over n_pairs pairs. Pairs are drawn a random
/// permutation at a time, so pairs within a round share no row.
double diversity(const Matrix& features, int n_pairs, std::uint64_t seed);

enum class LabelKind { kContent, kStyle };

using Classifier = std::function<int(const MotionClip&)>;

/// Fraction of clips the classifier labels correctly. Throws RangeError on
/// an empty set.
double recognition_accuracy(const std::vector<MotionClip>& clips, const Classifier& classify,
                            LabelKind kind);

/// Per-frame classifier input: joint positions with the root's horizontal
/// position removed.
Matrix classifier_tokens(const Skeleton& skel, const MotionClip& clip);

struct ExtractorConfig {
  int kernel = 5;
  int hidden = 32;
  int feature_dim = 32;
  int steps = 400;
  double lr = 3e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Temporal convolution -> GELU -> mean pool -> dense (features) -> logits.
class FeatureExtractor {
 public:
  /// Trains on the clips' labels of the given kind with AdamW, full batch.
  static FeatureExtractor train(const Skeleton& skel, const std::vector<MotionClip>& clips,
                                LabelKind kind, int classes, const ExtractorConfig& config = {});

  /// Penultimate activations, one row per clip.
  Matrix features(const std::vector<MotionClip>& clips) const;
  RowVector features(const MotionClip& clip) const;
  int predict(const MotionClip& clip) const;
  Classifier classifier() const;

  int feature_dim() const { return config_.feature_dim; }
  int classes() const { return classes_; }
  /// Cross entropy of the last training step.
  double final_loss() const { return final_loss_; }

 private:
  struct Forward {
    ad::Var features;
    ad::Var logits;
  };
  Forward forward(ad::Tape& tape, ParamBinder& binder, const MotionClip& clip) const;
  Matrix normalized_tokens(const MotionClip& clip) const;

  Skeleton skel_;
  ExtractorConfig config_;
  int classes_ = 0;
  RowVector mean_, inv_std_;
  ParamSet params_;
  double final_loss_ = 0.0;
};

/// 1-NN on z-scored handcrafted statistics against a labeled reference set.
class HandcraftedClassifier {
 public:
  HandcraftedClassifier(const Skeleton& skel, const std::vector<MotionClip>& reference,
                        LabelKind kind);
  int operator()(const MotionClip& clip) const;

 private:
  Skeleton skel_;
  Matrix features_;
  RowVector mean_, inv_std_;
  std::vector<int> labels_;
};

struct MetricRow {
  std::string metric;
  double value = 0.0;
  Index n = 0;
  std::uint64_t seed = 0;
};

std::string metrics_csv(const std::vector<MetricRow>& rows);

}  // namespace umsd
