#include "endoclip/tensor.hpp"

#include "endoclip/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace endoclip {

std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->tracked = requires_grad;
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return Tensor(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor(std::move(m));
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str());
  return node_->value(0, 0);
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  node_->tracked = on;
  if (!on) clear_grad();
}

Matrix& Tensor::grad_buffer() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad = Matrix::Zero(rows(), cols()); }

Tensor Tape::record(Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Tensor Tape::record(Matrix value, std::span<const Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(value));
  const bool tracked =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.tracked(); });
  if (tracked) {
    out.node_->tracked = true;
    records_.push_back({out, std::move(backward)});
  }
  return out;
}

void Tape::run_backward() {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output.has_grad()) it->backward(it->output.grad());
  }
}

void backward(const Tensor& loss, Tape& tape) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward requires a scalar loss, got " + loss.shape_str());
  }
  Tensor seed = loss;
  if (!seed.tracked()) return;
  seed.grad_buffer()(0, 0) += 1.0;
  tape.run_backward();
}

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  Matrix out = a.value() * b.value();
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix& g) mutable {
    accumulate_grad(a, g * b.value().transpose());
    accumulate_grad(b, a.value().transpose() * g);
  });
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " + a.shape_str() + " vs " +
                         b.shape_str() + "^T");
  }
  Matrix out = a.value() * b.value().transpose();
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix& g) mutable {
    accumulate_grad(a, g * b.value());
    accumulate_grad(b, g.transpose() * a.value());
  });
}

Tensor row_dots(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("row_dots: width mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), bv.rows());
  for (Index i = 0; i < av.rows(); ++i) {
    for (Index j = 0; j < bv.rows(); ++j) {
      double acc = 0.0;
      for (Index k = 0; k < av.cols(); ++k) acc += av(i, k) * bv(j, k);
      out(i, j) = acc;
    }
  }
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix& g) mutable {
    accumulate_grad(a, g * b.value());
    accumulate_grad(b, g.transpose() * a.value());
  });
}

Tensor transpose(Tape& tape, const Tensor& a) {
  Matrix out = a.value().transpose();
  return tape.record(std::move(out), {a},
                     [a](const Matrix& g) mutable { accumulate_grad(a, g.transpose()); });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Matrix out = a.value() + b.value();
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix& g) mutable {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Matrix out = a.value() - b.value();
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix& g) mutable {
    accumulate_grad(a, g);
    accumulate_grad(b, -g);
  });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return tape.record(std::move(out), {a, b}, [a, b](const Matrix& g) mutable {
    accumulate_grad(a, g.cwiseProduct(b.value()));
    accumulate_grad(b, g.cwiseProduct(a.value()));
  });
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + bias.shape_str() + " does not match " +
                         x.shape_str());
  }
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return tape.record(std::move(out), {x, bias}, [x, bias](const Matrix& g) mutable {
    accumulate_grad(x, g);
    accumulate_grad(bias, g.colwise().sum());
  });
}

Tensor scale(Tape& tape, const Tensor& a, double s) {
  Matrix out = a.value() * s;
  return tape.record(std::move(out), {a}, [a, s](const Matrix& g) mutable { accumulate_grad(a, g * s); });
}

Tensor mul_const(Tape& tape, const Tensor& a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) {
    throw DimensionError("mul_const: shape mismatch " + a.shape_str() + " vs " +
                         shape_string(c.rows(), c.cols()));
  }
  Matrix out = a.value().cwiseProduct(c);
  return tape.record(std::move(out), {a},
                     [a, c](const Matrix& g) mutable { accumulate_grad(a, g.cwiseProduct(c)); });
}

Tensor add_const(Tape& tape, const Tensor& a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) {
    throw DimensionError("add_const: shape mismatch " + a.shape_str() + " vs " +
                         shape_string(c.rows(), c.cols()));
  }
  Matrix out = a.value() + c;
  return tape.record(std::move(out), {a}, [a](const Matrix& g) mutable { accumulate_grad(a, g); });
}

Tensor log(Tape& tape, const Tensor& a) {
  Matrix out = a.value().array().log().matrix();
  return tape.record(std::move(out), {a}, [a](const Matrix& g) mutable {
    accumulate_grad(a, g.cwiseQuotient(a.value()));
  });
}

Tensor gelu(Tape& tape, const Tensor& a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = a.value().unaryExpr(
      [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  return tape.record(std::move(out), {a}, [a, inv_sqrt2](const Matrix& g) mutable {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = a.value().unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    accumulate_grad(a, g.cwiseProduct(d));
  });
}

Tensor sum(Tape& tape, const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape.record(std::move(out), {a}, [a](const Matrix& g) mutable {
    accumulate_grad(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Tensor mean(Tape& tape, const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean of empty tensor");
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

namespace {

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

Tensor row_softmax(Tape& tape, const Tensor& x) {
  Matrix out = softmax_rows(x.value());
  Matrix y = out;
  return tape.record(std::move(out), {x}, [x, y](const Matrix& g) mutable {
    // dx = y * (g - sum(g * y))
    Matrix dx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      dx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    accumulate_grad(x, dx);
  });
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const Index d = x.cols();
  if (d < 1) throw DimensionError("layer_norm: empty feature axis " + x.shape_str());
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: affine " + gain.shape_str() + "/" + bias.shape_str() +
                         " does not match " + x.shape_str());
  }
  Matrix xhat(x.rows(), d);
  RowVector inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.value().row(i).array() - mu).matrix() * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return tape.record(std::move(out), {x, gain, bias},
                     [x, gain, bias, xhat, inv_std](const Matrix& g) mutable {
                       const double n = static_cast<double>(xhat.cols());
                       accumulate_grad(gain, g.cwiseProduct(xhat).colwise().sum());
                       accumulate_grad(bias, g.colwise().sum());
                       if (!x.tracked()) return;
                       Matrix gx = (g.array().rowwise() * gain.value().row(0).array()).matrix();
                       Matrix dx(gx.rows(), gx.cols());
                       for (Index i = 0; i < gx.rows(); ++i) {
                         const double m1 = gx.row(i).sum() / n;
                         const double m2 = gx.row(i).dot(xhat.row(i)) / n;
                         dx.row(i) = inv_std(i) *
                                     (gx.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
                       }
                       accumulate_grad(x, dx);
                     });
}

Tensor l2_normalize_rows(Tape& tape, const Tensor& x) {
  Matrix out(x.rows(), x.cols());
  RowVector norms(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    norms(i) = x.value().row(i).norm();
    if (norms(i) == 0.0) throw ContractError("l2_normalize_rows: zero row " + std::to_string(i));
    out.row(i) = x.value().row(i) / norms(i);
  }
  Matrix y = out;
  return tape.record(std::move(out), {x}, [x, y, norms](const Matrix& g) mutable {
    Matrix dx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      dx.row(i) = (g.row(i) - y.row(i) * g.row(i).dot(y.row(i))) / norms(i);
    }
    accumulate_grad(x, dx);
  });
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  const Index m = logits.rows();
  if (static_cast<Index>(labels.size()) != m) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         logits.shape_str() + " logits");
  }
  if (m == 0) throw ContractError("cross_entropy: empty batch");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab) {
    if (l < 0 || l >= logits.cols()) {
      throw ContractError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                          std::to_string(logits.cols()) + ")");
    }
  }
  Matrix probs = softmax_rows(logits.value());
  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    const auto row = logits.value().row(i);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    total += lse - row(lab[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(m);
  return tape.record(std::move(out), {logits},
                     [logits, probs, lab](const Matrix& g) mutable {
                       Matrix d = probs;
                       for (std::size_t i = 0; i < lab.size(); ++i) d(i, lab[i]) -= 1.0;
                       accumulate_grad(logits, d * (g(0, 0) / static_cast<double>(lab.size())));
                     });
}

Tensor slice_rows(Tape& tape, const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + a.shape_str());
  }
  Matrix out = a.value().middleRows(start, count);
  return tape.record(std::move(out), {a}, [a, start, count](const Matrix& g) mutable {
    if (a.tracked()) a.grad_buffer().middleRows(start, count) += g;
  });
}

Tensor slice_cols(Tape& tape, const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + a.shape_str());
  }
  Matrix out = a.value().middleCols(start, count);
  return tape.record(std::move(out), {a}, [a, start, count](const Matrix& g) mutable {
    if (a.tracked()) a.grad_buffer().middleCols(start, count) += g;
  });
}

Tensor vstack(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("vstack of nothing");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("vstack: width mismatch " + parts.front().shape_str() + " vs " +
                           p.shape_str());
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), parts, [inputs](const Matrix& g) mutable {
    Index r = 0;
    for (auto& p : inputs) {
      accumulate_grad(p, g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

Tensor hstack(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("hstack of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("hstack: height mismatch " + parts.front().shape_str() + " vs " +
                           p.shape_str());
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), parts, [inputs](const Matrix& g) mutable {
    Index c = 0;
    for (auto& p : inputs) {
      accumulate_grad(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

double finite_diff_check(const std::function<Tensor(Tape&)>& f, std::span<Tensor> params,
                         double step) {
  if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    Tensor loss = f(tape);
    backward(loss, tape);
  }
  auto eval = [&] {
    Tape tape;
    return f(tape).item();
  };
  double worst = 0.0;
  for (auto& p : params) {
    const Matrix analytic = p.grad();
    Matrix& v = p.mutable_value();
    for (Index i = 0; i < v.size(); ++i) {
      double& x = v.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = eval();
      x = saved - step;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.data()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

}  // namespace endoclip
