#pragma once

// Motion-style state-space denoiser.
//
//   D_in  = [Proj(x_t); MLP(emb(t)); C]
//   D0    = Lin0(D_in)
//   block i (i = 1..3), with L_i = Lin_i(D_{i-1}) and u = CausalConv(L_i):
//       Dr_i = IN(Ssm_fwd(u) + Ssm_bwd(u))
//       D_i  = IN(L_i) + Dr_i
//   D_res = D0 + D_3
//   H     = LinAtt(D_res);  sigma = IN(H) + MHA(H)
//   D_out = FFN(sigma) + IN(sigma)
//   x0_hat = Head(D_out rows of the x_t span)
//
// Every IN carries its own per-channel scale and shift. The SSM is the
// selective diagonal form: delta = softplus(u W + b), B = u W_B, C = u W_C,
// A = -exp(A_log), so A < 0 and delta > 0 by construction.

#include "umsd/attention.hpp"
#include "umsd/params.hpp"

namespace umsd {

enum class Stream { kContent, kStyle };

/// Plain SSM weights: delta projection, B/C projections, A (d x S, negative)
/// and skip D (1 x d).
struct SsmWeights {
  Matrix w_delta;  // d x d
  Matrix b_delta;  // 1 x d
  Matrix w_b;      // d x S
  Matrix w_c;      // d x S
  Matrix a;        // d x S
  Matrix d;        // 1 x d
};

/// Selective scan of x under SSM weights.
Matrix ssm_scan(const Matrix& x, const SsmWeights& w, ScanDirection dir);

/// Sinusoidal embedding of a timestep at width `dim`.
RowVector timestep_features(int t, int dim);

void declare_msm_params(const ModelConfig& config, std::vector<ParamSpec>& specs);

/// Bound SSM layer; A is derived from the stored log-magnitudes.
struct SsmLayer {
  Linear delta;
  ad::Var w_b, w_c, a_log, skip;

  static SsmLayer bind(ParamBinder& b, const std::string& prefix);
  ad::Var operator()(ad::Var u, ScanDirection dir) const;
};

struct AffineNorm {
  ad::Var scale, shift;

  static AffineNorm bind(ParamBinder& b, const std::string& prefix) {
    return {b(prefix + ".scale"), b(prefix + ".shift")};
  }
  ad::Var operator()(ad::Var x) const {
    return ad::add_row(ad::mul_row(ad::instance_norm(x), scale), shift);
  }
};

struct MsmBlock {
  Linear lin;
  ad::Var conv_kernel, conv_bias;
  SsmLayer forward_ssm, backward_ssm;
  AffineNorm norm_ssm, norm_skip;

  static MsmBlock bind(ParamBinder& b, const std::string& prefix);
  ad::Var operator()(ad::Var prev) const;
};

void declare_msm_block(std::vector<ParamSpec>& specs, const std::string& prefix, Index d,
                       Index state, Index conv_width);

class MsmDenoiser {
 public:
  MsmDenoiser(ParamBinder& binder, const ModelConfig& config);

  /// 1 x d_model timestep token. Throws RangeError outside [0, T].
  ad::Var embed_timestep(int t) const;
  /// [x_t projected; timestep token; condition], each at d_model.
  ad::Var assemble_input(ad::Var x_t, int t, ad::Var condition, Stream stream) const;
  /// Predicted clean sequence with the same shape as x_t.
  ad::Var forward(ad::Var x_t, int t, ad::Var condition, Stream stream) const;

 private:
  ModelConfig config_;
  ad::Tape& tape_;
  Linear in_content_, in_style_, time1_, time2_, lin0_, lin_att_;
  std::vector<MsmBlock> blocks_;
  AffineNorm norm_att_, norm_out_;
  ad::Var mha_wq_, mha_wk_, mha_wv_;
  Linear mha_out_, ffn1_, ffn2_, out_content_, out_style_;
};

/// Plain evaluation of the denoiser.
Matrix msm_forward(const Matrix& x_t, int t, const ConditionTensor& condition,
                   Stream stream, const ParamSet& params, const ModelConfig& config);

}  // namespace umsd
