#include "umsd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>

namespace umsd {

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "cosine") return ScheduleKind::kCosine;
  if (s == "linear") return ScheduleKind::kLinear;
  throw RangeError("unknown schedule kind '" + s + "'");
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::kCosine ? "cosine" : "linear";
}

NoiseSchedule NoiseSchedule::make(ScheduleKind kind, int T, PosteriorVariance variance) {
  if (T < 1) throw RangeError(fmt::format("schedule needs T >= 1, got {}", T));
  std::vector<double> alphas(T);
  if (kind == ScheduleKind::kCosine) {
    constexpr double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int t = 1; t <= T; ++t) {
      const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
      alphas[t - 1] = 1.0 - beta;
    }
  } else {
    const double scale = 1000.0 / T;
    const double lo = scale * 1e-4, hi = std::min(scale * 2e-2, 0.999);
    for (int t = 1; t <= T; ++t) {
      const double beta = T == 1 ? lo : lo + (hi - lo) * (t - 1) / double(T - 1);
      alphas[t - 1] = 1.0 - beta;
    }
  }
  for (double a : alphas)
    if (!(a > 0.0 && a < 1.0)) throw RangeError("schedule produced alpha outside (0, 1)");
  return from_alphas(alphas, variance);
}

NoiseSchedule NoiseSchedule::from_alphas(const std::vector<double>& alphas,
                                         PosteriorVariance variance) {
  if (alphas.empty()) throw RangeError("schedule needs at least one step");
  NoiseSchedule s;
  s.alpha_.assign(1, 1.0);
  s.alpha_bar_.assign(1, 1.0);
  for (double a : alphas) {
    if (!(a > 0.0 && a <= 1.0)) throw RangeError("alpha must lie in (0, 1]");
    s.alpha_.push_back(a);
    s.alpha_bar_.push_back(s.alpha_bar_.back() * a);
  }
  s.finish(variance);
  return s;
}

void NoiseSchedule::finish(PosteriorVariance variance) {
  const int T = steps();
  c1_.assign(T + 1, 0.0);
  c2_.assign(T + 1, 0.0);
  sigma_.assign(T + 1, 0.0);
  for (int t = 1; t <= T; ++t) {
    const double ab = alpha_bar_[t], ab_prev = alpha_bar_[t - 1];
    const double beta = 1.0 - alpha_[t];
    const double denom = 1.0 - ab;
    if (denom <= 0.0) {
      // No noise has been added yet, so x0 is known exactly.
      c1_[t] = 1.0;
      c2_[t] = 0.0;
      sigma_[t] = 0.0;
      continue;
    }
    c1_[t] = beta * std::sqrt(ab_prev) / denom;
    c2_[t] = std::sqrt(alpha_[t]) * (1.0 - ab_prev) / denom;
    const double var =
        variance == PosteriorVariance::kPosterior ? beta * (1.0 - ab_prev) / denom : beta;
    sigma_[t] = t == 1 ? 0.0 : std::sqrt(std::max(var, 0.0));
  }
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps())
    throw RangeError(fmt::format("timestep {} outside [1, {}]", t, steps()));
}

int NoiseSchedule::checked(int t, int lo) const {
  if (t < lo || t > steps())
    throw RangeError(fmt::format("timestep {} outside [{}, {}]", t, lo, steps()));
  return t;
}

Matrix noise_step(const Matrix& x_prev, int t, const NoiseSchedule& s, Rng& rng) {
  s.check_step(t);
  const double a = s.alpha(t);
  return std::sqrt(a) * x_prev + std::sqrt(1.0 - a) * rng.normal_matrix(x_prev.rows(), x_prev.cols());
}

Matrix noise_to(const Matrix& x0, int t, const NoiseSchedule& s, const Matrix& eps) {
  s.check_step(t);
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
    throw DimensionError("noise shape must match x0");
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Noised noise_to(const Matrix& x0, int t, const NoiseSchedule& s, Rng& rng) {
  s.check_step(t);
  Matrix eps = rng.normal_matrix(x0.rows(), x0.cols());
  Matrix xt = noise_to(x0, t, s, eps);
  return {std::move(xt), std::move(eps)};
}

Matrix posterior_mean(const Matrix& x_t, const Matrix& x0_hat, int t, const NoiseSchedule& s) {
  s.check_step(t);
  if (x_t.rows() != x0_hat.rows() || x_t.cols() != x0_hat.cols())
    throw DimensionError("posterior: x_t and x0_hat shapes differ");
  return s.c1(t) * x0_hat + s.c2(t) * x_t;
}

Matrix posterior_step(const Matrix& x_t, const Matrix& x0_hat, int t, const NoiseSchedule& s,
                      Rng& rng) {
  Matrix mean = posterior_mean(x_t, x0_hat, t, s);
  if (t == 1 || s.sigma(t) == 0.0) return mean;
  return mean + s.sigma(t) * rng.normal_matrix(x_t.rows(), x_t.cols());
}

Matrix sample(const DenoiseFn& denoiser, const ConditionTensor& condition, Index rows,
              Index cols, const NoiseSchedule& s, Rng& rng) {
  Matrix x = rng.normal_matrix(rows, cols);
  for (int t = s.steps(); t >= 1; --t) {
    const Matrix x0_hat = denoiser(x, t, condition);
    if (x0_hat.rows() != rows || x0_hat.cols() != cols)
      throw DimensionError("denoiser changed the sequence shape");
    x = posterior_step(x, x0_hat, t, s, rng);
  }
  return x;
}

}  // namespace umsd
