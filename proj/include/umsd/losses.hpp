#pragma once

// Training objective: diffusion content/style consistency (L1 between the
// x0 prediction and the clean stream, element averaged) plus position,
// velocity and foot-contact losses on forward kinematics of the content
// prediction.

#include "umsd/diffusion.hpp"
#include "umsd/model.hpp"
#include "umsd/motion.hpp"

#include <span>

namespace umsd {

struct LossWeights {
  double dcc = 1.0, dsc = 1.0, pos = 1.0, vel = 1.0, foot = 1.0;
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct LossReport {
  double dcc = 0.0, dsc = 0.0, pos = 0.0, vel = 0.0, foot = 0.0, total = 0.0;
};

struct ContactThresholds {
  double height = 0.05;  // meters
  double speed = 0.02;   // meters per frame
  bool operator==(const ContactThresholds&) const = default;
};

/// One (content clip, style clip) training pair in tensor form.
struct LossInputs {
  Matrix content_tokens;    // N_c x (4J + 3), encoder input
  Matrix content_state;     // N_c x content_state_width, diffused content
  Matrix root_translation;  // N_c x 3
  Matrix style_tokens;      // N_s x 3J
  Matrix target_positions;  // N_c x 3J, FK of the content clip
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> contact;  // (N_c - 1) x feet
};

LossInputs make_loss_inputs(const Skeleton& skel, const ContentRepr& content,
                            const StyleRepr& style, bool diffuse_root,
                            const ContactThresholds& contact = {});

struct DiffusionTerm {
  ad::Var loss;
  ad::Var prediction;
};

/// Noise x0 to step t, predict it back under `condition`, return the mean
/// absolute error and the prediction.
DiffusionTerm diffusion_consistency(StyleTransferModel& model, ad::Var condition,
                                    const Matrix& x0, int t, const NoiseSchedule& schedule,
                                    Rng& rng, Stream stream);

DiffusionTerm loss_dcc(StyleTransferModel& model, const LossInputs& in, int t,
                       const NoiseSchedule& schedule, Rng& rng);
DiffusionTerm loss_dsc(StyleTransferModel& model, const LossInputs& in, int t,
                       const NoiseSchedule& schedule, Rng& rng);

/// Joint positions of raw (unnormalized) quaternion rows, differentiable in
/// both the rotations (N x 4J) and root translation (N x 3).
ad::Var fk_positions(const Skeleton& skel, ad::Var rotations, ad::Var root);

/// Mean over N * J of squared joint distance.
ad::Var loss_pos(ad::Var pred_positions, const Matrix& target_positions);
/// Same on frame-difference velocities.
ad::Var loss_vel(ad::Var pred_positions, const Matrix& target_positions);
/// Mean squared foot velocity over the frames marked in contact; zero when
/// the mask is empty.
ad::Var loss_foot(ad::Var pred_positions, const Skeleton& skel,
                  const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& contact);

double loss_pos(const ContentRepr& pred, const ContentRepr& target, const Skeleton& skel);
double loss_vel(const ContentRepr& pred, const ContentRepr& target, const Skeleton& skel);
double loss_foot(const ContentRepr& pred, const Skeleton& skel,
                 const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& contact);

struct ItemLoss {
  ad::Var dcc, dsc, pos, vel, foot, total;
};

/// All five terms for one pair at timestep t. Geometric terms use the
/// content prediction of the dcc pass.
ItemLoss item_loss(StyleTransferModel& model, const Skeleton& skel, const LossInputs& in,
                   int t, const NoiseSchedule& schedule, Rng& rng, const LossWeights& w,
                   bool diffuse_root);

struct BatchLoss {
  ad::Var total;
  LossReport report;
};

/// Batch mean of item losses with t drawn uniformly from [1, T] per item.
BatchLoss total_loss(std::span<const LossInputs> batch, const LossWeights& weights,
                     StyleTransferModel& model, const Skeleton& skel,
                     const NoiseSchedule& schedule, Rng& rng, bool diffuse_root);

}  // namespace umsd
