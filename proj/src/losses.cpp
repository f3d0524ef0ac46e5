#include "umsd/losses.hpp"

#include <cmath>

namespace umsd {

void LossWeights::validate() const {
  for (double w : {dcc, dsc, pos, vel, foot})
    if (!(w >= 0.0) || !std::isfinite(w)) throw RangeError("loss weights must be non-negative");
}

LossInputs make_loss_inputs(const Skeleton& skel, const ContentRepr& content,
                            const StyleRepr& style, bool diffuse_root,
                            const ContactThresholds& contact) {
  content.validate();
  style.validate();
  if (content.joint_count() != skel.joint_count() || style.joint_count() != skel.joint_count())
    throw DimensionError("loss inputs: joint count does not match skeleton");
  LossInputs in;
  in.content_tokens = content_stream_tokens(content);
  in.content_state = diffuse_root ? in.content_tokens : content.rotations;
  in.root_translation = content.root_translation;
  in.style_tokens = style.positions;
  const StyleRepr target = forward_kinematics(skel, content);
  in.target_positions = target.positions;
  in.contact = foot_contact_mask(skel, target, contact.height, contact.speed);
  return in;
}

DiffusionTerm diffusion_consistency(StyleTransferModel& model, ad::Var condition,
                                    const Matrix& x0, int t, const NoiseSchedule& schedule,
                                    Rng& rng, Stream stream) {
  ad::Tape& tape = model.tape();
  const Noised noised = noise_to(x0, t, schedule, rng);
  ad::Var pred = model.denoise(tape.constant(noised.x_t), t, condition, stream);
  if (pred.rows() != x0.rows() || pred.cols() != x0.cols())
    throw DimensionError("denoiser output shape differs from its input");
  return {ad::mean_abs(ad::sub(pred, tape.constant(x0))), pred};
}

namespace {

ad::Var encode(StyleTransferModel& model, const LossInputs& in) {
  ad::Tape& tape = model.tape();
  return model.encode(tape.constant(in.content_tokens), tape.constant(in.style_tokens));
}

// Derivative of the rotation matrix of unit q = (w, x, y, z) contracted
// with G.
Eigen::Vector4d rotation_adjoint(const Eigen::Vector4d& q, const Eigen::Matrix3d& G) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Eigen::Vector4d g;
  g[0] = 2 * (-z * G(0, 1) + y * G(0, 2) + z * G(1, 0) - x * G(1, 2) - y * G(2, 0) + x * G(2, 1));
  g[1] = 2 * (y * G(0, 1) + z * G(0, 2) + y * G(1, 0) - 2 * x * G(1, 1) - w * G(1, 2) +
              z * G(2, 0) + w * G(2, 1) - 2 * x * G(2, 2));
  g[2] = 2 * (-2 * y * G(0, 0) + x * G(0, 1) + w * G(0, 2) + x * G(1, 0) + z * G(1, 2) -
              w * G(2, 0) + z * G(2, 1) - 2 * y * G(2, 2));
  g[3] = 2 * (-2 * z * G(0, 0) - w * G(0, 1) + x * G(0, 2) + w * G(1, 0) - 2 * z * G(1, 1) +
              y * G(1, 2) + x * G(2, 0) + y * G(2, 1));
  return g;
}

// Frame differences of foot joints: (N - 1) x 3F.
ad::Var foot_velocities(ad::Var positions, const Skeleton& skel) {
  std::vector<ad::Var> cols;
  for (int f : skel.foot_joints) cols.push_back(ad::slice_cols(positions, 3 * f, 3));
  ad::Var feet = ad::concat_cols(cols);
  const Index n = feet.rows();
  return ad::sub(ad::slice_rows(feet, 1, n - 1), ad::slice_rows(feet, 0, n - 1));
}

}  // namespace

DiffusionTerm loss_dcc(StyleTransferModel& model, const LossInputs& in, int t,
                       const NoiseSchedule& schedule, Rng& rng) {
  return diffusion_consistency(model, encode(model, in), in.content_state, t, schedule, rng,
                               Stream::kContent);
}

DiffusionTerm loss_dsc(StyleTransferModel& model, const LossInputs& in, int t,
                       const NoiseSchedule& schedule, Rng& rng) {
  return diffusion_consistency(model, encode(model, in), in.style_tokens, t, schedule, rng,
                               Stream::kStyle);
}

ad::Var fk_positions(const Skeleton& skel, ad::Var rotations, ad::Var root) {
  const int J = skel.joint_count();
  const Index N = rotations.rows();
  if (rotations.cols() != 4 * J) throw DimensionError("fk: rotation width must be 4J");
  if (root.rows() != N || root.cols() != 3) throw DimensionError("fk: root must be N x 3");

  const Matrix& Q = rotations.value();
  const Matrix& R = root.value();
  Matrix out(N, 3 * J);
  for (Index n = 0; n < N; ++n) {
    const Eigen::RowVectorXd q = Q.row(n);
    const Vector3 r = R.row(n).transpose();
    const auto pos = fk_frame<double>(skel, q, r);
    for (int j = 0; j < J; ++j) out.block(n, 3 * j, 1, 3) = pos.row(j);
  }

  return rotations.tape().push(
      std::move(out), {rotations, root},
      [skel, rotations, root, J, N](ad::Tape& t, const Matrix& g) {
        const Matrix& Q = t.value(rotations);
        Matrix gq = Matrix::Zero(N, 4 * J);
        Matrix groot = Matrix::Zero(N, 3);
        std::vector<Eigen::Matrix3d> local(J), global(J), gG(J);
        std::vector<Eigen::Vector4d> unit(J);
        std::vector<double> norms(J);
        std::vector<Vector3> gp(J);
        for (Index n = 0; n < N; ++n) {
          for (int j = 0; j < J; ++j) {
            const Eigen::Vector4d q = Q.block(n, 4 * j, 1, 4).transpose();
            norms[j] = q.norm();
            if (norms[j] < 1e-12) throw DegenerateError("fk: zero quaternion");
            unit[j] = q / norms[j];
            local[j] = Eigen::Quaterniond(unit[j][0], unit[j][1], unit[j][2], unit[j][3])
                           .toRotationMatrix();
            const int p = skel.parents[j];
            global[j] = p < 0 ? local[j] : Eigen::Matrix3d(global[p] * local[j]);
            gG[j].setZero();
            gp[j] = g.block(n, 3 * j, 1, 3).transpose();
          }
          for (int j = J; j-- > 0;) {
            const int p = skel.parents[j];
            Eigen::Matrix3d glocal;
            if (p < 0) {
              groot.row(n) += gp[j].transpose();
              glocal = gG[j];
            } else {
              gp[p] += gp[j];
              gG[p] += gp[j] * skel.offsets[j].transpose();
              gG[p] += gG[j] * local[j].transpose();
              glocal = global[p].transpose() * gG[j];
            }
            const Eigen::Vector4d gu = rotation_adjoint(unit[j], glocal);
            gq.block(n, 4 * j, 1, 4) =
                ((gu - unit[j] * unit[j].dot(gu)) / norms[j]).transpose();
          }
        }
        if (t.needs_grad(rotations)) t.accumulate(rotations, gq);
        if (t.needs_grad(root)) t.accumulate(root, groot);
      });
}

ad::Var loss_pos(ad::Var pred_positions, const Matrix& target_positions) {
  if (pred_positions.rows() != target_positions.rows() ||
      pred_positions.cols() != target_positions.cols())
    throw DimensionError("loss_pos: frame or joint count mismatch");
  ad::Tape& tape = pred_positions.tape();
  // mean_square also averages over the 3 coordinates.
  return ad::scale(ad::mean_square(ad::sub(pred_positions, tape.constant(target_positions))),
                   3.0);
}

ad::Var loss_vel(ad::Var pred_positions, const Matrix& target_positions) {
  if (pred_positions.rows() != target_positions.rows() ||
      pred_positions.cols() != target_positions.cols())
    throw DimensionError("loss_vel: frame or joint count mismatch");
  const Index n = pred_positions.rows();
  if (n < 2) throw DimensionError("loss_vel: needs at least two frames");
  ad::Tape& tape = pred_positions.tape();
  ad::Var pv = ad::sub(ad::slice_rows(pred_positions, 1, n - 1),
                       ad::slice_rows(pred_positions, 0, n - 1));
  const Matrix tv = target_positions.bottomRows(n - 1) - target_positions.topRows(n - 1);
  return ad::scale(ad::mean_square(ad::sub(pv, tape.constant(tv))), 3.0);
}

ad::Var loss_foot(ad::Var pred_positions, const Skeleton& skel,
                  const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& contact) {
  const Index n = pred_positions.rows();
  const Index F = static_cast<Index>(skel.foot_joints.size());
  if (contact.rows() != n - 1 || contact.cols() != F)
    throw DimensionError("loss_foot: contact mask must be (N - 1) x feet");
  ad::Tape& tape = pred_positions.tape();
  const Index count = contact.count();
  if (count == 0 || n < 2) return tape.constant(Matrix::Zero(1, 1));
  Matrix weights(n - 1, 3 * F);
  for (Index k = 0; k < n - 1; ++k)
    for (Index f = 0; f < F; ++f)
      weights.block(k, 3 * f, 1, 3).setConstant(contact(k, f) ? 1.0 : 0.0);
  ad::Var v = foot_velocities(pred_positions, skel);
  ad::Var masked = ad::cwise_mul(v, tape.constant(weights));
  return ad::scale(ad::sum(ad::cwise_mul(masked, masked)), 1.0 / static_cast<double>(count));
}

namespace {

template <typename Fn>
double plain(Fn&& fn) {
  ad::Tape tape(false);
  return fn(tape).value()(0, 0);
}

}  // namespace

double loss_pos(const ContentRepr& pred, const ContentRepr& target, const Skeleton& skel) {
  if (pred.frames() != target.frames()) throw DimensionError("loss_pos: frame count mismatch");
  const Matrix a = forward_kinematics(skel, pred).positions;
  const Matrix b = forward_kinematics(skel, target).positions;
  return plain([&](ad::Tape& t) { return loss_pos(t.constant(a), b); });
}

double loss_vel(const ContentRepr& pred, const ContentRepr& target, const Skeleton& skel) {
  if (pred.frames() != target.frames()) throw DimensionError("loss_vel: frame count mismatch");
  const Matrix a = forward_kinematics(skel, pred).positions;
  const Matrix b = forward_kinematics(skel, target).positions;
  return plain([&](ad::Tape& t) { return loss_vel(t.constant(a), b); });
}

double loss_foot(const ContentRepr& pred, const Skeleton& skel,
                 const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>& contact) {
  const Matrix a = forward_kinematics(skel, pred).positions;
  return plain([&](ad::Tape& t) { return loss_foot(t.constant(a), skel, contact); });
}

ItemLoss item_loss(StyleTransferModel& model, const Skeleton& skel, const LossInputs& in,
                   int t, const NoiseSchedule& schedule, Rng& rng, const LossWeights& w,
                   bool diffuse_root) {
  ad::Tape& tape = model.tape();
  ad::Var condition = encode(model, in);
  const DiffusionTerm dcc = diffusion_consistency(model, condition, in.content_state, t,
                                                  schedule, rng, Stream::kContent);
  const DiffusionTerm dsc = diffusion_consistency(model, condition, in.style_tokens, t,
                                                  schedule, rng, Stream::kStyle);
  const int J = skel.joint_count();
  ad::Var rotations = ad::slice_cols(dcc.prediction, 0, 4 * J);
  ad::Var root = diffuse_root ? ad::slice_cols(dcc.prediction, 4 * J, 3)
                              : tape.constant(in.root_translation);
  ad::Var positions = fk_positions(skel, rotations, root);

  ItemLoss out;
  out.dcc = dcc.loss;
  out.dsc = dsc.loss;
  out.pos = loss_pos(positions, in.target_positions);
  out.vel = loss_vel(positions, in.target_positions);
  out.foot = loss_foot(positions, skel, in.contact);
  out.total = ad::scale(out.dcc, w.dcc);
  for (auto [term, weight] : {std::pair{out.dsc, w.dsc}, std::pair{out.pos, w.pos},
                              std::pair{out.vel, w.vel}, std::pair{out.foot, w.foot}})
    out.total = ad::add(out.total, ad::scale(term, weight));
  return out;
}

BatchLoss total_loss(std::span<const LossInputs> batch, const LossWeights& weights,
                     StyleTransferModel& model, const Skeleton& skel,
                     const NoiseSchedule& schedule, Rng& rng, bool diffuse_root) {
  weights.validate();
  if (batch.empty()) throw DimensionError("total_loss: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  BatchLoss out;
  std::vector<ad::Var> totals;
  for (const LossInputs& in : batch) {
    const int t = static_cast<int>(rng.uniform_int(1, schedule.steps()));
    const ItemLoss item = item_loss(model, skel, in, t, schedule, rng, weights, diffuse_root);
    out.report.dcc += item.dcc.value()(0, 0) * inv;
    out.report.dsc += item.dsc.value()(0, 0) * inv;
    out.report.pos += item.pos.value()(0, 0) * inv;
    out.report.vel += item.vel.value()(0, 0) * inv;
    out.report.foot += item.foot.value()(0, 0) * inv;
    totals.push_back(item.total);
  }
  out.total = ad::mean(ad::concat_rows(totals));
  out.report.total = out.total.value()(0, 0);
  return out;
}

}  // namespace umsd
