#pragma once

#include "umsd/common.hpp"

namespace umsd {

/// Fused token sequence produced by the fusion encoder and consumed by the
/// denoiser. Content-derived rows come first.
struct ConditionTensor {
  Matrix tokens;  // (N_c + N_s) x d_model
  Index split_index = 0;

  Index size() const { return tokens.rows(); }
};

}  // namespace umsd
