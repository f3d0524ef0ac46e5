#pragma once

// Model hyperparameters, the named parameter container and its binding onto
// an autodiff tape.

#include "umsd/autodiff.hpp"

#include <map>
#include <string>
#include <vector>

namespace umsd {

struct ModelConfig {
  int joints = 21;
  /// Include root translation in the diffused content state.
  bool diffuse_root = false;
  int d_model = 64;
  /// Heads of the fusion attention; 1 is the plain single-head form.
  int attn_heads = 4;
  /// Heads of the denoiser's multi-head attention.
  int mha_heads = 4;
  int state_size = 16;
  int conv_width = 4;
  int ffn_ratio = 4;
  int blocks = 3;
  /// Capacity of the positional-encoding table.
  int max_len = 512;
  /// Diffusion steps T; the denoiser accepts timesteps in [0, T].
  int timesteps = 50;

  /// Width of a content token entering the fusion encoder: rotations + root.
  int content_token_width() const { return 4 * joints + 3; }
  /// Width of the diffused content state.
  int content_state_width() const { return 4 * joints + (diffuse_root ? 3 : 0); }
  int style_width() const { return 3 * joints; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Init {
  kXavier,    // uniform in +-sqrt(6 / (fan_in + fan_out))
  kZeros,
  kOnes,
  kConv,      // uniform in +-1 / sqrt(taps)
  kSsmALog,   // log(1 .. S) per channel, so A = -(1 .. S)
  kDeltaBias  // softplus^-1 of a log-uniform step in [1e-3, 1e-1]
};

struct ParamSpec {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Init init = Init::kXavier;
};

/// Ordered set of named matrices. Flat indexing walks tensors in insertion
/// order and each tensor in column-major order.
class ParamSet {
 public:
  void add(std::string name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Matrix& operator[](const std::string& name) const;
  Matrix& at(const std::string& name);

  std::size_t tensor_count() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Matrix& value(std::size_t i) const { return values_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }

  Index flat_size() const;
  double flat(Index i) const;
  void set_flat(Index i, double v);
  /// Name and (row, col) of a flat index.
  std::string describe(Index i) const;

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;

  bool operator==(const ParamSet& o) const {
    return names_ == o.names_ && values_ == o.values_;
  }

 private:
  std::pair<std::size_t, Index> locate(Index i) const;

  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::map<std::string, std::size_t> index_;
};

/// Every tensor of the full model for a configuration.
std::vector<ParamSpec> model_param_specs(const ModelConfig& config);

/// Random initialization of each listed tensor, deterministic in seed.
ParamSet init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed);
ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

/// Places parameters on a tape on first use and collects their gradients.
class ParamBinder {
 public:
  ParamBinder(ad::Tape& tape, const ParamSet& params) : tape_(tape), params_(params) {}

  ad::Var operator()(const std::string& name);
  ad::Tape& tape() const { return tape_; }
  const ParamSet& params() const { return params_; }

  /// Gradients in ParamSet layout; exactly zero for parameters never bound
  /// or never reached by backward.
  ParamSet gradients() const;

 private:
  ad::Tape& tape_;
  const ParamSet& params_;
  std::map<std::string, ad::Var> bound_;
};

// Affine layer y = x W + b; W is in x out.
struct Linear {
  ad::Var weight;
  ad::Var bias;

  static Linear bind(ParamBinder& b, const std::string& prefix) {
    return {b(prefix + ".weight"), b(prefix + ".bias")};
  }
  ad::Var operator()(ad::Var x) const { return ad::linear(x, weight, bias); }
};

inline void declare_linear(std::vector<ParamSpec>& specs, const std::string& prefix,
                           Index in, Index out, bool bias = true) {
  specs.push_back({prefix + ".weight", in, out, Init::kXavier});
  if (bias) specs.push_back({prefix + ".bias", 1, out, Init::kZeros});
}

}  // namespace umsd
