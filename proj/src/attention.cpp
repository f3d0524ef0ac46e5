#include "umsd/attention.hpp"

#include <cmath>
#include <fmt/format.h>

namespace umsd {

void AttentionConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw RangeError("d_model must be a positive multiple of n_heads");
  if (d_key() < 8) throw RangeError("attention key width must be >= 8");
}

Matrix positional_table(int max_len, int d_model) {
  Matrix table(max_len, d_model);
  for (int p = 0; p < max_len; ++p) {
    for (int i = 0; 2 * i < d_model; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(d_model));
      table(p, 2 * i) = std::sin(p * freq);
      if (2 * i + 1 < d_model) table(p, 2 * i + 1) = std::cos(p * freq);
    }
  }
  return table;
}

Matrix positional_encode(const Matrix& tokens, const Matrix& table) {
  if (tokens.rows() > table.rows())
    throw RangeError(fmt::format("sequence of {} tokens exceeds positional table of {}",
                                 tokens.rows(), table.rows()));
  if (tokens.cols() != table.cols()) throw DimensionError("positional table width mismatch");
  return tokens + table.topRows(tokens.rows());
}

ad::Var positional_encode(ad::Var tokens, const Matrix& table) {
  if (tokens.rows() > table.rows())
    throw RangeError(fmt::format("sequence of {} tokens exceeds positional table of {}",
                                 tokens.rows(), table.rows()));
  ad::Tape& t = tokens.tape();
  return ad::add(tokens, t.constant(table.topRows(tokens.rows())));
}

ad::Var attend(ad::Var query_src, ad::Var kv_src, ad::Var wq, ad::Var wk, ad::Var wv,
               int n_heads) {
  const Index d = query_src.cols();
  if (kv_src.cols() != d || wq.rows() != d || wk.rows() != kv_src.cols() ||
      wv.rows() != kv_src.cols())
    throw DimensionError("attend: token width mismatch");
  if (wq.cols() % n_heads != 0) throw DimensionError("attend: width not divisible by heads");
  const ad::Var q = ad::matmul(query_src, wq);
  const ad::Var k = ad::matmul(kv_src, wk);
  const ad::Var v = ad::matmul(kv_src, wv);
  const Index dk = wq.cols() / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  if (n_heads == 1)
    return ad::matmul(ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt)), v);
  std::vector<ad::Var> heads;
  for (int h = 0; h < n_heads; ++h) {
    const ad::Var qh = ad::slice_cols(q, h * dk, dk);
    const ad::Var kh = ad::slice_cols(k, h * dk, dk);
    const ad::Var vh = ad::slice_cols(v, h * dk, dk);
    heads.push_back(ad::matmul(
        ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt)), vh));
  }
  return ad::concat_cols(heads);
}

Matrix attend(const Matrix& query_src, const Matrix& kv_src, const Matrix& wq,
              const Matrix& wk, const Matrix& wv, int n_heads) {
  ad::Tape tape(false);
  return attend(tape.constant(query_src), tape.constant(kv_src), tape.constant(wq),
                tape.constant(wk), tape.constant(wv), n_heads)
      .value();
}

void declare_umsd_params(const ModelConfig& config, std::vector<ParamSpec>& specs) {
  const Index d = config.d_model;
  declare_linear(specs, "umsd.embed_content", config.content_token_width(), d);
  declare_linear(specs, "umsd.embed_style", config.style_width(), d);
  for (const char* stream : {"c", "s"})
    for (int stage = 1; stage <= 3; ++stage)
      for (const char* proj : {"wq", "wk", "wv"})
        specs.push_back({fmt::format("umsd.{}{}.{}", stream, stage, proj), d, d, Init::kXavier});
  declare_linear(specs, "umsd.out", d, d);
}

UmsdAttention::UmsdAttention(ParamBinder& b, const ModelConfig& config)
    : config_(config), pe_table_(positional_table(config.max_len, config.d_model)) {
  embed_content_ = Linear::bind(b, "umsd.embed_content");
  embed_style_ = Linear::bind(b, "umsd.embed_style");
  out_ = Linear::bind(b, "umsd.out");
  for (int stage = 0; stage < 3; ++stage) {
    content_[stage] = {b(fmt::format("umsd.c{}.wq", stage + 1)),
                       b(fmt::format("umsd.c{}.wk", stage + 1)),
                       b(fmt::format("umsd.c{}.wv", stage + 1))};
    style_[stage] = {b(fmt::format("umsd.s{}.wq", stage + 1)),
                     b(fmt::format("umsd.s{}.wk", stage + 1)),
                     b(fmt::format("umsd.s{}.wv", stage + 1))};
  }
}

ad::Var UmsdAttention::forward(ad::Var content, ad::Var style) const {
  if (content.rows() < 1 || style.rows() < 1)
    throw DimensionError("fusion encoder needs non-empty content and style streams");
  const int h = config_.attn_heads;
  auto cross = [h](ad::Var q_src, const Projection& qp, ad::Var kv_src, const Projection& kvp) {
    return attend(q_src, kv_src, qp.wq, kvp.wk, kvp.wv, h);
  };

  const ad::Var zc1 = positional_encode(embed_content_(content), pe_table_);
  const ad::Var zs1 = positional_encode(embed_style_(style), pe_table_);

  const ad::Var zs2 = cross(zs1, style_[0], zc1, content_[0]);
  const ad::Var zc2 = cross(zc1, content_[0], zs1, style_[0]);
  const ad::Var zs3 = cross(zs2, style_[1], zs2, style_[1]);
  const ad::Var zc3 = cross(zc2, content_[1], zc2, content_[1]);
  const ad::Var zs4 = cross(zs3, style_[2], zc3, content_[2]);
  const ad::Var zc4 = cross(zc3, content_[2], zs3, style_[2]);

  const ad::Var zu1 = ad::concat_rows({zc1, zs1});
  const ad::Var zu2 = ad::concat_rows({zc4, zs4});
  return ad::add(zu1, out_(zu2));
}

ConditionTensor umsd_forward(const Matrix& content, const Matrix& style,
                             const ParamSet& params, const ModelConfig& config) {
  ad::Tape tape(false);
  ParamBinder binder(tape, params);
  UmsdAttention encoder(binder, config);
  const ad::Var out = encoder.forward(tape.constant(content), tape.constant(style));
  return {out.value(), content.rows()};
}

}  // namespace umsd
