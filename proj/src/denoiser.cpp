#include "umsd/denoiser.hpp"

#include <cmath>
#include <fmt/format.h>

namespace umsd {

Matrix ssm_scan(const Matrix& x, const SsmWeights& w, ScanDirection dir) {
  if (x.rows() < 1) throw DimensionError("ssm_scan needs a non-empty sequence");
  if ((w.a.array() >= 0.0).any()) throw RangeError("ssm state matrix must be negative");
  Matrix pre = (x * w.w_delta).rowwise() + w.b_delta.row(0);
  SelectiveInputs<double> in{pre.unaryExpr([](double v) { return softplus(v); }),
                             x * w.w_b, x * w.w_c, w.a, w.d};
  return selective_scan<double>(x, in, dir);
}

RowVector timestep_features(int t, int dim) {
  RowVector e(dim);
  for (int i = 0; 2 * i < dim; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(dim));
    e[2 * i] = std::sin(t * freq);
    if (2 * i + 1 < dim) e[2 * i + 1] = std::cos(t * freq);
  }
  return e;
}

SsmLayer SsmLayer::bind(ParamBinder& b, const std::string& prefix) {
  return {Linear::bind(b, prefix + ".delta"), b(prefix + ".w_b"), b(prefix + ".w_c"),
          b(prefix + ".a_log"), b(prefix + ".skip")};
}

ad::Var SsmLayer::operator()(ad::Var u, ScanDirection dir) const {
  ad::Var dt = ad::softplus(delta(u));
  ad::Var B = ad::matmul(u, w_b);
  ad::Var C = ad::matmul(u, w_c);
  const ad::Var A = ad::neg_exp(a_log);
  if (dir == ScanDirection::kForward) return ad::selective_scan(u, dt, B, C, A, skip);
  const ad::Var y = ad::selective_scan(ad::reverse_rows(u), ad::reverse_rows(dt),
                                       ad::reverse_rows(B), ad::reverse_rows(C), A, skip);
  return ad::reverse_rows(y);
}

MsmBlock MsmBlock::bind(ParamBinder& b, const std::string& p) {
  return {Linear::bind(b, p + ".lin"),
          b(p + ".conv.kernel"),
          b(p + ".conv.bias"),
          SsmLayer::bind(b, p + ".ssm_fwd"),
          SsmLayer::bind(b, p + ".ssm_bwd"),
          AffineNorm::bind(b, p + ".norm_ssm"),
          AffineNorm::bind(b, p + ".norm_skip")};
}

ad::Var MsmBlock::operator()(ad::Var prev) const {
  const ad::Var l = lin(prev);
  const ad::Var u = ad::add_row(ad::causal_conv(l, conv_kernel), conv_bias);
  const ad::Var y = ad::add(forward_ssm(u, ScanDirection::kForward),
                            backward_ssm(u, ScanDirection::kBackward));
  return ad::add(norm_skip(l), norm_ssm(y));
}

namespace {

void declare_ssm(std::vector<ParamSpec>& specs, const std::string& p, Index d, Index S) {
  specs.push_back({p + ".delta.weight", d, d, Init::kXavier});
  specs.push_back({p + ".delta.bias", 1, d, Init::kDeltaBias});
  specs.push_back({p + ".w_b", d, S, Init::kXavier});
  specs.push_back({p + ".w_c", d, S, Init::kXavier});
  specs.push_back({p + ".a_log", d, S, Init::kSsmALog});
  specs.push_back({p + ".skip", 1, d, Init::kOnes});
}

void declare_norm(std::vector<ParamSpec>& specs, const std::string& p, Index d) {
  specs.push_back({p + ".scale", 1, d, Init::kOnes});
  specs.push_back({p + ".shift", 1, d, Init::kZeros});
}

}  // namespace

void declare_msm_block(std::vector<ParamSpec>& specs, const std::string& p, Index d,
                       Index state, Index conv_width) {
  declare_linear(specs, p + ".lin", d, d);
  specs.push_back({p + ".conv.kernel", conv_width, d, Init::kConv});
  specs.push_back({p + ".conv.bias", 1, d, Init::kZeros});
  declare_ssm(specs, p + ".ssm_fwd", d, state);
  declare_ssm(specs, p + ".ssm_bwd", d, state);
  declare_norm(specs, p + ".norm_ssm", d);
  declare_norm(specs, p + ".norm_skip", d);
}

void declare_msm_params(const ModelConfig& c, std::vector<ParamSpec>& specs) {
  const Index d = c.d_model;
  declare_linear(specs, "msm.in_content", c.content_state_width(), d);
  declare_linear(specs, "msm.in_style", c.style_width(), d);
  declare_linear(specs, "msm.time1", d, d);
  declare_linear(specs, "msm.time2", d, d);
  declare_linear(specs, "msm.lin0", d, d);
  for (int i = 1; i <= c.blocks; ++i)
    declare_msm_block(specs, fmt::format("msm.block{}", i), d, c.state_size, c.conv_width);
  declare_linear(specs, "msm.lin_att", d, d);
  declare_norm(specs, "msm.norm_att", d);
  specs.push_back({"msm.mha.wq", d, d, Init::kXavier});
  specs.push_back({"msm.mha.wk", d, d, Init::kXavier});
  specs.push_back({"msm.mha.wv", d, d, Init::kXavier});
  declare_linear(specs, "msm.mha.out", d, d);
  declare_linear(specs, "msm.ffn1", d, static_cast<Index>(c.ffn_ratio) * d);
  declare_linear(specs, "msm.ffn2", static_cast<Index>(c.ffn_ratio) * d, d);
  declare_norm(specs, "msm.norm_out", d);
  declare_linear(specs, "msm.out_content", d, c.content_state_width());
  declare_linear(specs, "msm.out_style", d, c.style_width());
}

MsmDenoiser::MsmDenoiser(ParamBinder& b, const ModelConfig& config)
    : config_(config), tape_(b.tape()) {
  in_content_ = Linear::bind(b, "msm.in_content");
  in_style_ = Linear::bind(b, "msm.in_style");
  time1_ = Linear::bind(b, "msm.time1");
  time2_ = Linear::bind(b, "msm.time2");
  lin0_ = Linear::bind(b, "msm.lin0");
  for (int i = 1; i <= config.blocks; ++i)
    blocks_.push_back(MsmBlock::bind(b, fmt::format("msm.block{}", i)));
  lin_att_ = Linear::bind(b, "msm.lin_att");
  norm_att_ = AffineNorm::bind(b, "msm.norm_att");
  mha_wq_ = b("msm.mha.wq");
  mha_wk_ = b("msm.mha.wk");
  mha_wv_ = b("msm.mha.wv");
  mha_out_ = Linear::bind(b, "msm.mha.out");
  ffn1_ = Linear::bind(b, "msm.ffn1");
  ffn2_ = Linear::bind(b, "msm.ffn2");
  norm_out_ = AffineNorm::bind(b, "msm.norm_out");
  out_content_ = Linear::bind(b, "msm.out_content");
  out_style_ = Linear::bind(b, "msm.out_style");
}

ad::Var MsmDenoiser::embed_timestep(int t) const {
  if (t < 0 || t > config_.timesteps)
    throw RangeError(fmt::format("timestep {} outside [0, {}]", t, config_.timesteps));
  const ad::Var e = tape_.constant(timestep_features(t, config_.d_model));
  return time2_(ad::gelu(time1_(e)));
}

ad::Var MsmDenoiser::assemble_input(ad::Var x_t, int t, ad::Var condition,
                                    Stream stream) const {
  if (x_t.rows() < 1) throw DimensionError("denoiser input must be non-empty");
  if (condition.rows() < 1) throw DimensionError("denoiser needs a non-empty condition");
  if (condition.cols() != config_.d_model)
    throw DimensionError("condition width must equal d_model");
  const Index width = stream == Stream::kContent ? config_.content_state_width()
                                                 : config_.style_width();
  if (x_t.cols() != width)
    throw DimensionError(fmt::format("noisy tokens have width {}, expected {}", x_t.cols(), width));
  const Linear& proj = stream == Stream::kContent ? in_content_ : in_style_;
  return ad::concat_rows({proj(x_t), embed_timestep(t), condition});
}

ad::Var MsmDenoiser::forward(ad::Var x_t, int t, ad::Var condition, Stream stream) const {
  const ad::Var din = assemble_input(x_t, t, condition, stream);
  const ad::Var d0 = lin0_(din);
  ad::Var d = d0;
  for (const MsmBlock& block : blocks_) d = block(d);
  const ad::Var dres = ad::add(d0, d);

  const ad::Var h = lin_att_(dres);
  const ad::Var mha = mha_out_(attend(h, h, mha_wq_, mha_wk_, mha_wv_, config_.mha_heads));
  const ad::Var sigma = ad::add(norm_att_(h), mha);
  const ad::Var dout = ad::add(ffn2_(ad::gelu(ffn1_(sigma))), norm_out_(sigma));

  const ad::Var span = ad::slice_rows(dout, 0, x_t.rows());
  return stream == Stream::kContent ? out_content_(span) : out_style_(span);
}

Matrix msm_forward(const Matrix& x_t, int t, const ConditionTensor& condition, Stream stream,
                   const ParamSet& params, const ModelConfig& config) {
  ad::Tape tape(false);
  ParamBinder binder(tape, params);
  MsmDenoiser net(binder, config);
  return net.forward(tape.constant(x_t), t, tape.constant(condition.tokens), stream).value();
}

}  // namespace umsd
