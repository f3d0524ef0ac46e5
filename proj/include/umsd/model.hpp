#pragma once

#include "umsd/attention.hpp"
#include "umsd/denoiser.hpp"

namespace umsd {

/// What the training objective needs from a model: fuse the clean streams
/// into a condition and predict clean motion from a noisy sequence.
class StyleTransferModel {
 public:
  virtual ~StyleTransferModel() = default;
  /// Tape that receives the model's operations.
  virtual ad::Tape& tape() = 0;
  virtual ad::Var encode(ad::Var content_tokens, ad::Var style_tokens) = 0;
  virtual ad::Var denoise(ad::Var x_t, int t, ad::Var condition, Stream stream) = 0;
};

/// Fusion encoder + denoiser with parameters bound on one tape.
class UmsdNetwork final : public StyleTransferModel {
 public:
  UmsdNetwork(ParamBinder& binder, const ModelConfig& config)
      : tape_(binder.tape()), encoder_(binder, config), denoiser_(binder, config) {}

  ad::Tape& tape() override { return tape_; }

  ad::Var encode(ad::Var content_tokens, ad::Var style_tokens) override {
    return encoder_.forward(content_tokens, style_tokens);
  }
  ad::Var denoise(ad::Var x_t, int t, ad::Var condition, Stream stream) override {
    return denoiser_.forward(x_t, t, condition, stream);
  }

 private:
  ad::Tape& tape_;
  UmsdAttention encoder_;
  MsmDenoiser denoiser_;
};

}  // namespace umsd
