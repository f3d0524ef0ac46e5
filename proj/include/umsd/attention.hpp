#pragma once

// One-stream fusion encoder. Content and style tokens are embedded to a
// shared width, position encoded and concatenated into Z1 = [Zc1; Zs1]. Three
// attention stages then run on each stream:
//
//   style:   Zs2 = attend(Zs1 <- Zc1)   cross
//            Zs3 = attend(Zs2 <- Zs2)   self
//            Zs4 = attend(Zs3 <- Zc3)   cross
//   content: the mirror image with the roles of c and s swapped.
//
// The condition is Z1 + Linear([Zc4; Zs4]). Each (stream, stage) pair owns
// its own query/key/value projections; queries use the query stream's
// projection and keys/values use the key stream's.

#include "umsd/condition.hpp"
#include "umsd/params.hpp"

namespace umsd {

struct AttentionConfig {
  int d_model = 64;
  int n_heads = 4;

  int d_key() const { return d_model / n_heads; }
  void validate() const;
};

/// Sinusoidal table, max_len x d_model: column 2i holds sin(p / 10000^(2i/d)),
/// column 2i + 1 the matching cosine.
Matrix positional_table(int max_len, int d_model);

/// tokens + table rows [0, N). Throws RangeError if N exceeds the table.
Matrix positional_encode(const Matrix& tokens, const Matrix& table);
ad::Var positional_encode(ad::Var tokens, const Matrix& table);

/// Scaled dot-product attention of query tokens over key/value tokens.
/// Projections are d_model x d_model; with n_heads > 1 their columns split
/// into heads of width d_model / n_heads whose outputs are concatenated.
ad::Var attend(ad::Var query_src, ad::Var kv_src, ad::Var wq, ad::Var wk, ad::Var wv,
               int n_heads);
Matrix attend(const Matrix& query_src, const Matrix& kv_src, const Matrix& wq,
              const Matrix& wk, const Matrix& wv, int n_heads);

void declare_umsd_params(const ModelConfig& config, std::vector<ParamSpec>& specs);

class UmsdAttention {
 public:
  UmsdAttention(ParamBinder& binder, const ModelConfig& config);

  /// content: N_c x (4J + 3), style: N_s x 3J. Returns Z_out.
  ad::Var forward(ad::Var content, ad::Var style) const;

 private:
  struct Projection {
    ad::Var wq, wk, wv;
  };
  ModelConfig config_;
  Matrix pe_table_;
  Linear embed_content_, embed_style_, out_;
  Projection content_[3], style_[3];
};

/// Plain evaluation of the encoder.
ConditionTensor umsd_forward(const Matrix& content, const Matrix& style,
                             const ParamSet& params, const ModelConfig& config);

}  // namespace umsd
