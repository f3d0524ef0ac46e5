#include "umsd/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace umsd::ad {

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, record_, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_)
    for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{},
                        needs, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(fn));
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Matrix::Zero(n.value.rows(), n.value.cols());
}

void Tape::backward(Var root) {
  if (root.rows() != 1 || root.cols() != 1)
    throw DimensionError("backward needs a scalar root");
  if (!record_) throw Error("backward on a non-recording tape");
  accumulate(root, Matrix::Constant(1, 1, 1.0));
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimension mismatch");
  Tape& t = a.tape();
  return t.push(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var transpose(Var a) {
  return a.tape().push(a.value().transpose(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.transpose());
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape().push(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape().push(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var cwise_mul(Var a, Var b) {
  require_same_shape(a, b, "cwise_mul");
  return a.tape().push(a.value().cwiseProduct(b.value()), {a, b},
                       [a, b](Tape& t, const Matrix& g) {
                         if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
                         if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
                       });
}

Var scale(Var a, double s) {
  return a.tape().push(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) {
    t.accumulate(a, g * s);
  });
}

Var add_row(Var x, Var b) {
  if (b.rows() != 1 || b.cols() != x.cols()) throw DimensionError("add_row: bias must be 1 x d");
  Matrix out = x.value().rowwise() + b.value().row(0);
  return x.tape().push(std::move(out), {x, b}, [x, b](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (t.needs_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

Var mul_row(Var x, Var s) {
  if (s.rows() != 1 || s.cols() != x.cols()) throw DimensionError("mul_row: scale must be 1 x d");
  Matrix out = x.value().array().rowwise() * s.value().row(0).array();
  return x.tape().push(std::move(out), {x, s}, [x, s](Tape& t, const Matrix& g) {
    if (t.needs_grad(x))
      t.accumulate(x, (g.array().rowwise() * t.value(s).row(0).array()).matrix());
    if (t.needs_grad(s)) t.accumulate(s, g.cwiseProduct(t.value(x)).colwise().sum());
  });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw DimensionError("concat_rows: width mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().push(std::move(out), parts,
                              [inputs](Tape& t, const Matrix& g) {
                                Index r = 0;
                                for (const Var& p : inputs) {
                                  const Index n = t.value(p).rows();
                                  t.accumulate(p, g.middleRows(r, n));
                                  r += n;
                                }
                              });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: height mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().push(std::move(out), parts,
                              [inputs](Tape& t, const Matrix& g) {
                                Index c = 0;
                                for (const Var& p : inputs) {
                                  const Index n = t.value(p).cols();
                                  t.accumulate(p, g.middleCols(c, n));
                                  c += n;
                                }
                              });
}

Var slice_rows(Var x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows())
    throw DimensionError("slice_rows: out of range");
  return x.tape().push(x.value().middleRows(begin, count), {x},
                       [x, begin, count](Tape& t, const Matrix& g) {
                         Matrix full = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
                         full.middleRows(begin, count) = g;
                         t.accumulate(x, full);
                       });
}

Var slice_cols(Var x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols())
    throw DimensionError("slice_cols: out of range");
  return x.tape().push(x.value().middleCols(begin, count), {x},
                       [x, begin, count](Tape& t, const Matrix& g) {
                         Matrix full = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
                         full.middleCols(begin, count) = g;
                         t.accumulate(x, full);
                       });
}

Var reverse_rows(Var x) {
  return x.tape().push(x.value().colwise().reverse(), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, g.colwise().reverse());
  });
}

Var unfold_causal(Var x, Index width) {
  if (width < 1) throw DimensionError("unfold_causal: width must be >= 1");
  const Index L = x.rows(), d = x.cols();
  Matrix out = Matrix::Zero(L, width * d);
  for (Index j = 0; j < width && j < L; ++j)
    out.block(j, j * d, L - j, d) = x.value().topRows(L - j);
  return x.tape().push(std::move(out), {x}, [x, width](Tape& t, const Matrix& g) {
    const Index L = t.value(x).rows(), d = t.value(x).cols();
    Matrix gx = Matrix::Zero(L, d);
    for (Index j = 0; j < width && j < L; ++j) gx.topRows(L - j) += g.block(j, j * d, L - j, d);
    t.accumulate(x, gx);
  });
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var gelu(Var x) {
  Matrix out = x.value().unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  });
  return x.tape().push(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    const Matrix d = t.value(x).unaryExpr([](double v) {
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      return 0.5 * (1.0 + th) +
             0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

Var softplus(Var x) {
  Matrix out = x.value().unaryExpr([](double v) { return umsd::softplus(v); });
  return x.tape().push(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    const Matrix s = t.value(x).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    t.accumulate(x, g.cwiseProduct(s));
  });
}

Var neg_exp(Var x) {
  Matrix out = -x.value().array().exp().matrix();
  return x.tape().push(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, -g.cwiseProduct(t.value(x).array().exp().matrix()));
  });
}

Var softmax_rows(Var x) {
  Matrix y = x.value();
  for (Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  Matrix saved = y;
  return x.tape().push(std::move(y), {x}, [x, saved](Tape& t, const Matrix& g) {
    const Eigen::VectorXd dot = g.cwiseProduct(saved).rowwise().sum();
    t.accumulate(x, saved.cwiseProduct(g.colwise() - dot));
  });
}

Var causal_conv(Var x, Var kernel) {
  Matrix y = umsd::causal_conv<double>(x.value(), kernel.value());
  return x.tape().push(std::move(y), {x, kernel}, [x, kernel](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(x);
    const Matrix& kv = t.value(kernel);
    const Index L = xv.rows();
    if (t.needs_grad(x)) {
      Matrix gx = Matrix::Zero(L, xv.cols());
      for (Index j = 0; j < kv.rows() && j < L; ++j)
        gx.topRows(L - j).array() += g.bottomRows(L - j).array().rowwise() * kv.row(j).array();
      t.accumulate(x, gx);
    }
    if (t.needs_grad(kernel)) {
      Matrix gk = Matrix::Zero(kv.rows(), kv.cols());
      for (Index j = 0; j < kv.rows() && j < L; ++j)
        gk.row(j) = g.bottomRows(L - j).cwiseProduct(xv.topRows(L - j)).colwise().sum();
      t.accumulate(kernel, gk);
    }
  });
}

Var instance_norm(Var x) {
  Matrix y = umsd::instance_norm<double>(x.value());
  const Index L = x.rows();
  const RowVector mean = x.value().colwise().mean();
  const RowVector var =
      (x.value().rowwise() - mean).array().square().colwise().sum() / double(L);
  const RowVector inv = (var.array() + kInstanceNormEps * kInstanceNormEps).rsqrt();
  Matrix saved = y;
  return x.tape().push(std::move(y), {x}, [x, saved, inv](Tape& t, const Matrix& g) {
    const RowVector gmean = g.colwise().mean();
    const RowVector gymean = g.cwiseProduct(saved).colwise().mean();
    Matrix gx = (g.rowwise() - gmean) - (saved.array().rowwise() * gymean.array()).matrix();
    gx.array().rowwise() *= inv.array();
    t.accumulate(x, gx);
  });
}

Var selective_scan(Var u, Var delta, Var B, Var C, Var A, Var D) {
  SelectiveInputs<double> in{delta.value(), B.value(), C.value(), A.value(), D.value()};
  auto states = selective_states<double>(u.value(), in);
  Matrix y = selective_readout<double>(u.value(), in, states);
  return u.tape().push(
      std::move(y), {u, delta, B, C, A, D},
      [u, delta, B, C, A, D, states = std::move(states)](Tape& t, const Matrix& gy) {
        const Matrix& uv = t.value(u);
        const Matrix& dv = t.value(delta);
        const Matrix& bv = t.value(B);
        const Matrix& cv = t.value(C);
        const Matrix& av = t.value(A);
        const Matrix& Dv = t.value(D);
        const Index L = uv.rows(), d = uv.cols(), S = av.cols();

        Matrix gu = gy.array().rowwise() * Dv.row(0).array();
        Matrix gdelta = Matrix::Zero(L, d);
        Matrix gB = Matrix::Zero(L, S);
        Matrix gC(L, S);
        Matrix gA = Matrix::Zero(d, S);
        const RowVector gD = gy.cwiseProduct(uv).colwise().sum();

        StateArray<double> G = StateArray<double>::Zero(d, S);
        StateArray<double> next_decay = StateArray<double>::Zero(d, S);
        for (Index k = L; k-- > 0;) {
          gC.row(k) = gy.row(k) * states[k].matrix();
          // Adjoint of h_k: direct readout plus the carry from h_{k+1}.
          G = (gy.row(k).transpose() * cv.row(k)).array() + next_decay * G;
          const StateArray<double> decay =
              (av.array().colwise() * dv.row(k).transpose().array()).exp();
          if (k > 0) {
            const StateArray<double> gdecay_a = G * states[k - 1] * decay;
            gdelta.row(k) += (gdecay_a * av.array()).rowwise().sum().transpose().matrix();
            gA += (gdecay_a.colwise() * dv.row(k).transpose().array()).matrix();
          }
          const Vector GB = G.matrix() * bv.row(k).transpose();  // d
          gdelta.row(k) += uv.row(k).cwiseProduct(GB.transpose());
          gu.row(k) += dv.row(k).cwiseProduct(GB.transpose());
          gB.row(k) = (dv.row(k).cwiseProduct(uv.row(k))) * G.matrix();
          next_decay = decay;
        }
        t.accumulate(u, gu);
        t.accumulate(delta, gdelta);
        t.accumulate(B, gB);
        t.accumulate(C, gC);
        t.accumulate(A, gA);
        t.accumulate(D, gD);
      });
}

Var sum(Var x) {
  return x.tape().push(Matrix::Constant(1, 1, x.value().sum()), {x},
                       [x](Tape& t, const Matrix& g) {
                         t.accumulate(x, Matrix::Constant(t.value(x).rows(),
                                                          t.value(x).cols(), g(0, 0)));
                       });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var mean_abs(Var x) {
  const double n = static_cast<double>(x.value().size());
  return x.tape().push(Matrix::Constant(1, 1, x.value().cwiseAbs().sum() / n), {x},
                       [x, n](Tape& t, const Matrix& g) {
                         const Matrix s = t.value(x).unaryExpr([](double v) {
                           return static_cast<double>((v > 0.0) - (v < 0.0));
                         });
                         t.accumulate(x, s * (g(0, 0) / n));
                       });
}

Var mean_square(Var x) {
  const double n = static_cast<double>(x.value().size());
  return x.tape().push(Matrix::Constant(1, 1, x.value().squaredNorm() / n), {x},
                       [x, n](Tape& t, const Matrix& g) {
                         t.accumulate(x, t.value(x) * (2.0 * g(0, 0) / n));
                       });
}

Var mean_rows(Var x) {
  const double n = static_cast<double>(x.rows());
  return x.tape().push(x.value().colwise().mean(), {x}, [x, n](Tape& t, const Matrix& g) {
    t.accumulate(x, g.replicate(t.value(x).rows(), 1) / n);
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& z = logits.value();
  if (static_cast<Index>(labels.size()) != z.rows())
    throw DimensionError("cross_entropy: one label per row required");
  Matrix p(z.rows(), z.cols());
  double loss = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int label = labels[r];
    if (label < 0 || label >= z.cols()) throw RangeError("cross_entropy: label out of range");
    const double m = z.row(r).maxCoeff();
    p.row(r) = (z.row(r).array() - m).exp();
    const double total = p.row(r).sum();
    p.row(r) /= total;
    loss += -(z(r, label) - m - std::log(total));
  }
  const double n = static_cast<double>(z.rows());
  std::vector<int> lab(labels.begin(), labels.end());
  return logits.tape().push(Matrix::Constant(1, 1, loss / n), {logits},
                            [logits, p, lab, n](Tape& t, const Matrix& g) {
                              Matrix gz = p;
                              for (Index r = 0; r < gz.rows(); ++r) gz(r, lab[r]) -= 1.0;
                              t.accumulate(logits, gz * (g(0, 0) / n));
                            });
}

}  // namespace umsd::ad
