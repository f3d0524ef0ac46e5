#pragma once

// Gaussian diffusion over token sequences with x0-prediction sampling.
//
// Forward step:  q(x_t | x_{t-1}) = N(sqrt(alpha_t) x_{t-1}, (1 - alpha_t) I)
// Marginal:      x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps
// Posterior:     q(x_{t-1} | x_t, x0) = N(c1_t x0 + c2_t x_t, sigma_t^2 I)

#include "umsd/condition.hpp"
#include "umsd/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace umsd {

enum class ScheduleKind { kCosine, kLinear };
enum class PosteriorVariance {
  kPosterior,  // beta-tilde
  kBeta
};

ScheduleKind parse_schedule_kind(const std::string& s);
std::string to_string(ScheduleKind k);

class NoiseSchedule {
 public:
  /// Cosine (s = 0.008, betas clipped at 0.999) or linear betas spanning
  /// [1e-4, 2e-2] at T = 1000, rescaled by 1000 / T. Throws RangeError for
  /// T < 1.
  static NoiseSchedule make(ScheduleKind kind, int T,
                            PosteriorVariance variance = PosteriorVariance::kPosterior);
  /// Explicit per-step alphas in (0, 1]; alpha = 1 is a noise-free step.
  static NoiseSchedule from_alphas(const std::vector<double>& alphas,
                                   PosteriorVariance variance = PosteriorVariance::kPosterior);

  int steps() const { return static_cast<int>(alpha_.size()) - 1; }
  // 1-based in t; alpha_bar(0) = 1.
  double alpha(int t) const { return alpha_.at(checked(t, 1)); }
  double beta(int t) const { return 1.0 - alpha(t); }
  double alpha_bar(int t) const { return alpha_bar_.at(checked(t, 0)); }
  double c1(int t) const { return c1_.at(checked(t, 1)); }
  double c2(int t) const { return c2_.at(checked(t, 1)); }
  double sigma(int t) const { return sigma_.at(checked(t, 1)); }

  /// Throws RangeError unless 1 <= t <= T.
  void check_step(int t) const;

 private:
  int checked(int t, int lo) const;
  void finish(PosteriorVariance variance);

  std::vector<double> alpha_;      // index 0 unused (1.0)
  std::vector<double> alpha_bar_;  // index 0 = 1
  std::vector<double> c1_, c2_, sigma_;
};

inline NoiseSchedule make_schedule(ScheduleKind kind, int T) {
  return NoiseSchedule::make(kind, T);
}

/// One forward noising step from x_{t-1} to x_t.
Matrix noise_step(const Matrix& x_prev, int t, const NoiseSchedule& s, Rng& rng);

struct Noised {
  Matrix x_t;
  Matrix eps;
};

/// Closed-form jump from x_0 to x_t; returns the noise that was used.
Noised noise_to(const Matrix& x0, int t, const NoiseSchedule& s, Rng& rng);
/// Same with caller-supplied noise.
Matrix noise_to(const Matrix& x0, int t, const NoiseSchedule& s, const Matrix& eps);

Matrix posterior_mean(const Matrix& x_t, const Matrix& x0_hat, int t, const NoiseSchedule& s);

/// Draw x_{t-1}; at t = 1 the posterior mean is returned without noise.
Matrix posterior_step(const Matrix& x_t, const Matrix& x0_hat, int t, const NoiseSchedule& s,
                      Rng& rng);

using DenoiseFn = std::function<Matrix(const Matrix& x_t, int t, const ConditionTensor&)>;

/// Ancestral sampling from x_T ~ N(0, I): at each t the denoiser predicts
/// x0 and the posterior step moves to t - 1.
Matrix sample(const DenoiseFn& denoiser, const ConditionTensor& condition, Index rows,
              Index cols, const NoiseSchedule& s, Rng& rng);

}  // namespace umsd
