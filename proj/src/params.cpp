#include "umsd/params.hpp"

#include "umsd/attention.hpp"
#include "umsd/denoiser.hpp"
#include "umsd/rng.hpp"

#include <cmath>
#include <fmt/format.h>

namespace umsd {

void ModelConfig::validate() const {
  if (joints < 1) throw RangeError("model.joints must be >= 1");
  if (d_model < 1 || attn_heads < 1 || mha_heads < 1)
    throw RangeError("model widths and head counts must be positive");
  if (d_model % attn_heads != 0 || d_model % mha_heads != 0)
    throw RangeError("model.d_model must be divisible by the head counts");
  if (d_model / attn_heads < 8)
    throw RangeError("attention key width d_model / attn_heads must be >= 8");
  if (state_size < 1 || conv_width < 1 || ffn_ratio < 1 || blocks < 1 || max_len < 1)
    throw RangeError("model sizes must be positive");
  if (timesteps < 1) throw RangeError("model.timesteps must be >= 1");
}

void ParamSet::add(std::string name, Matrix value) {
  if (index_.count(name)) throw Error("duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

const Matrix& ParamSet::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter " + name);
  return values_[it->second];
}

Matrix& ParamSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown parameter " + name);
  return values_[it->second];
}

Index ParamSet::flat_size() const {
  Index n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

std::pair<std::size_t, Index> ParamSet::locate(Index i) const {
  for (std::size_t t = 0; t < values_.size(); ++t) {
    if (i < values_[t].size()) return {t, i};
    i -= values_[t].size();
  }
  throw RangeError("flat parameter index out of range");
}

double ParamSet::flat(Index i) const {
  auto [t, k] = locate(i);
  return values_[t].data()[k];
}

void ParamSet::set_flat(Index i, double v) {
  auto [t, k] = locate(i);
  values_[t].data()[k] = v;
}

std::string ParamSet::describe(Index i) const {
  auto [t, k] = locate(i);
  const Index rows = values_[t].rows();
  return fmt::format("{}[{},{}]", names_[t], k % rows, k / rows);
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t t = 0; t < values_.size(); ++t)
    out.add(names_[t], Matrix::Zero(values_[t].rows(), values_[t].cols()));
  return out;
}

bool ParamSet::same_layout(const ParamSet& o) const {
  if (names_ != o.names_) return false;
  for (std::size_t t = 0; t < values_.size(); ++t)
    if (values_[t].rows() != o.values_[t].rows() || values_[t].cols() != o.values_[t].cols())
      return false;
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& v : values_)
    if (!v.allFinite()) return false;
  return true;
}

std::vector<ParamSpec> model_param_specs(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> specs;
  declare_umsd_params(config, specs);
  declare_msm_params(config, specs);
  return specs;
}

ParamSet init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet out;
  for (const auto& s : specs) {
    Matrix m(s.rows, s.cols);
    switch (s.init) {
      case Init::kXavier: {
        const double a = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
        for (Index c = 0; c < s.cols; ++c)
          for (Index r = 0; r < s.rows; ++r) m(r, c) = rng.uniform(-a, a);
        break;
      }
      case Init::kZeros:
        m.setZero();
        break;
      case Init::kOnes:
        m.setOnes();
        break;
      case Init::kConv: {
        const double a = 1.0 / std::sqrt(static_cast<double>(s.rows));
        for (Index c = 0; c < s.cols; ++c)
          for (Index r = 0; r < s.rows; ++r) m(r, c) = rng.uniform(-a, a);
        break;
      }
      case Init::kSsmALog:
        for (Index r = 0; r < s.rows; ++r)
          for (Index c = 0; c < s.cols; ++c) m(r, c) = std::log(static_cast<double>(c + 1));
        break;
      case Init::kDeltaBias:
        for (Index c = 0; c < s.cols; ++c)
          for (Index r = 0; r < s.rows; ++r) {
            const double step = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
            m(r, c) = step + std::log(-std::expm1(-step));  // softplus^-1
          }
        break;
    }
    out.add(s.name, std::move(m));
  }
  return out;
}

ParamSet init_params(const ModelConfig& config, std::uint64_t seed) {
  return init_params(model_param_specs(config), seed);
}

ad::Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const ad::Var v = tape_.variable(params_[name]);
  bound_.emplace(name, v);
  return v;
}

ParamSet ParamBinder::gradients() const {
  ParamSet out = params_.zeros_like();
  for (const auto& [name, var] : bound_) out.at(name) = tape_.grad(var);
  return out;
}

}  // namespace umsd
