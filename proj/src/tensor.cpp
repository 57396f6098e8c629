#include "chanrec/tensor.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace chanrec::tensor {

const Matrix& Var::value() const { return tape_->value(index_); }
const Matrix& Var::grad() const { return tape_->grad(index_); }

void Tape::check_finite(const Matrix& m, const char* op) {
  if (!m.allFinite())
    throw DataError(std::string("tensor op produced non-finite values: ") + op);
}

Var Tape::emit(Matrix value, bool requires_grad, std::function<void()> backward_fn) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_ref(Var v) {
  Node& node = nodes_[static_cast<std::size_t>(v.index_)];
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::accumulate(Var v, const Matrix& delta) {
  if (!nodes_[static_cast<std::size_t>(v.index_)].requires_grad) return;
  grad_ref(v) += delta;
}

Var Tape::leaf(Matrix value, bool requires_grad) {
  check_finite(value, "leaf");
  return emit(std::move(value), requires_grad, nullptr);
}

Var Tape::matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions disagree");
  Matrix out = a.value() * b.value();
  check_finite(out, "matmul");
  const bool needs = a.tape_->nodes_[static_cast<std::size_t>(a.index_)].requires_grad ||
                     b.tape_->nodes_[static_cast<std::size_t>(b.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, b, result]() {
      const Matrix& dc = tape->grad(result.index_);
      tape->accumulate(a, dc * b.value().transpose());
      tape->accumulate(b, a.value().transpose() * dc);
    };
  }
  return result;
}

Var Tape::add(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("add: shape mismatch");
  Matrix out = a.value() + b.value();
  check_finite(out, "add");
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad ||
                     nodes_[static_cast<std::size_t>(b.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, b, result]() {
      const Matrix& dc = tape->grad(result.index_);
      tape->accumulate(a, dc);
      tape->accumulate(b, dc);
    };
  }
  return result;
}

Var Tape::sub(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("sub: shape mismatch");
  Matrix out = a.value() - b.value();
  check_finite(out, "sub");
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad ||
                     nodes_[static_cast<std::size_t>(b.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, b, result]() {
      const Matrix& dc = tape->grad(result.index_);
      tape->accumulate(a, dc);
      tape->accumulate(b, -dc);
    };
  }
  return result;
}

Var Tape::mul(Var a, Var b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("mul: shape mismatch");
  Matrix out = a.value().cwiseProduct(b.value());
  check_finite(out, "mul");
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad ||
                     nodes_[static_cast<std::size_t>(b.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, b, result]() {
      const Matrix& dc = tape->grad(result.index_);
      tape->accumulate(a, dc.cwiseProduct(b.value()));
      tape->accumulate(b, dc.cwiseProduct(a.value()));
    };
  }
  return result;
}

Var Tape::scale(Var a, double factor) {
  Matrix out = a.value() * factor;
  check_finite(out, "scale");
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, factor, result]() {
      tape->accumulate(a, tape->grad(result.index_) * factor);
    };
  }
  return result;
}

Var Tape::add_row_broadcast(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row_broadcast: row must be 1×cols(a)");
  Matrix out = a.value().rowwise() + row.value().row(0);
  check_finite(out, "add_row_broadcast");
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad ||
                     nodes_[static_cast<std::size_t>(row.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, row, result]() {
      const Matrix& dc = tape->grad(result.index_);
      tape->accumulate(a, dc);
      tape->accumulate(row, dc.colwise().sum());
    };
  }
  return result;
}

Var Tape::repeat_rows(Var row, Eigen::Index n) {
  if (row.rows() != 1) throw DimensionError("repeat_rows: input must be a single row");
  Matrix out = row.value().replicate(n, 1);
  const bool needs = nodes_[static_cast<std::size_t>(row.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, row, result]() {
      tape->accumulate(row, tape->grad(result.index_).colwise().sum());
    };
  }
  return result;
}

Var Tape::transpose(Var a) {
  Matrix out = a.value().transpose();
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, result]() {
      tape->accumulate(a, tape->grad(result.index_).transpose());
    };
  }
  return result;
}

Var Tape::slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || begin + count > a.cols()) throw DimensionError("slice_cols: out of range");
  Matrix out = a.value().middleCols(begin, count);
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, begin, count, result]() {
      Matrix delta = Matrix::Zero(a.rows(), a.cols());
      delta.middleCols(begin, count) = tape->grad(result.index_);
      tape->accumulate(a, delta);
    };
  }
  return result;
}

Var Tape::slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || begin + count > a.rows()) throw DimensionError("slice_rows: out of range");
  Matrix out = a.value().middleRows(begin, count);
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, begin, count, result]() {
      Matrix delta = Matrix::Zero(a.rows(), a.cols());
      delta.middleRows(begin, count) = tape->grad(result.index_);
      tape->accumulate(a, delta);
    };
  }
  return result;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  bool needs = false;
  for (const Var& p : parts) {
    if (p.rows() != parts.front().rows()) throw DimensionError("concat_cols: row mismatch");
    cols += p.cols();
    needs = needs || nodes_[static_cast<std::size_t>(p.index_)].requires_grad;
  }
  Matrix out(parts.front().rows(), cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    std::vector<Var> inputs = parts;
    nodes_.back().backward_fn = [tape, inputs, result]() {
      const Matrix& dc = tape->grad(result.index_);
      Eigen::Index at = 0;
      for (const Var& p : inputs) {
        tape->accumulate(p, dc.middleCols(at, p.cols()));
        at += p.cols();
      }
    };
  }
  return result;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Eigen::Index rows = 0;
  bool needs = false;
  for (const Var& p : parts) {
    if (p.cols() != parts.front().cols()) throw DimensionError("concat_rows: column mismatch");
    rows += p.rows();
    needs = needs || nodes_[static_cast<std::size_t>(p.index_)].requires_grad;
  }
  Matrix out(rows, parts.front().cols());
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    std::vector<Var> inputs = parts;
    nodes_.back().backward_fn = [tape, inputs, result]() {
      const Matrix& dc = tape->grad(result.index_);
      Eigen::Index at = 0;
      for (const Var& p : inputs) {
        tape->accumulate(p, dc.middleRows(at, p.rows()));
        at += p.rows();
      }
    };
  }
  return result;
}

Var Tape::tanh(Var a) {
  Matrix out = a.value().array().tanh();
  check_finite(out, "tanh");
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, result]() {
      const Matrix& y = tape->value(result.index_);
      tape->accumulate(a, tape->grad(result.index_).cwiseProduct(
                              (1.0 - y.array().square()).matrix()));
    };
  }
  return result;
}

Var Tape::relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, result]() {
      const Matrix mask = (a.value().array() > 0.0).cast<double>();
      tape->accumulate(a, tape->grad(result.index_).cwiseProduct(mask));
    };
  }
  return result;
}

Var Tape::sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  });
  check_finite(out, "sigmoid");
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, result]() {
      const Matrix& y = tape->value(result.index_);
      tape->accumulate(a, tape->grad(result.index_).cwiseProduct(
                              (y.array() * (1.0 - y.array())).matrix()));
    };
  }
  return result;
}

Var Tape::softmax(Var a, int axis) {
  if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
  Matrix out = a.value();
  if (axis == 1) {
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      const double mx = out.row(r).maxCoeff();
      out.row(r) = (out.row(r).array() - mx).exp();
      out.row(r) /= out.row(r).sum();
    }
  } else {
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const double mx = out.col(c).maxCoeff();
      out.col(c) = (out.col(c).array() - mx).exp();
      out.col(c) /= out.col(c).sum();
    }
  }
  check_finite(out, "softmax");
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, axis, result]() {
      const Matrix& y = tape->value(result.index_);
      const Matrix& dy = tape->grad(result.index_);
      Matrix dx(y.rows(), y.cols());
      if (axis == 1) {
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
          const double dot = dy.row(r).dot(y.row(r));
          dx.row(r) = y.row(r).cwiseProduct(dy.row(r).array().matrix() -
                                            Eigen::RowVectorXd::Constant(y.cols(), dot));
        }
      } else {
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
          const double dot = dy.col(c).dot(y.col(c));
          dx.col(c) = y.col(c).cwiseProduct(dy.col(c) - Vector::Constant(y.rows(), dot));
        }
      }
      tape->accumulate(a, dx);
    };
  }
  return result;
}

Var Tape::layer_norm(Var x, Var gain, Var bias) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
      bias.cols() != x.cols())
    throw DimensionError("layer_norm: gain/bias must be 1×cols(x)");
  constexpr double kEps = 1e-5;
  const Eigen::Index d = x.cols();
  Matrix xhat(x.rows(), d);
  Vector inv_sigma(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_sigma[r] = 1.0 / std::sqrt(var + kEps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_sigma[r];
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  check_finite(out, "layer_norm");
  const bool needs = nodes_[static_cast<std::size_t>(x.index_)].requires_grad ||
                     nodes_[static_cast<std::size_t>(gain.index_)].requires_grad ||
                     nodes_[static_cast<std::size_t>(bias.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, x, gain, bias, xhat, inv_sigma, d, result]() {
      const Matrix& dy = tape->grad(result.index_);
      tape->accumulate(gain, (dy.array() * xhat.array()).colwise().sum().matrix());
      tape->accumulate(bias, dy.colwise().sum());
      Matrix dx(dy.rows(), d);
      for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const Eigen::RowVectorXd dxhat =
            dy.row(r).cwiseProduct(gain.value().row(0));
        const double m1 = dxhat.mean();
        const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) =
            inv_sigma[r] * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
      }
      tape->accumulate(x, dx);
    };
  }
  return result;
}

Var Tape::dropout(Var x, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
  if (!train || p == 0.0) {
    // Identity at eval time; still a node so graphs have a stable shape.
    return scale(x, 1.0);
  }
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 - p;
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      mask(r, c) = rng.bernoulli(p) ? 0.0 : 1.0 / keep;
  Matrix out = x.value().cwiseProduct(mask);
  const bool needs = nodes_[static_cast<std::size_t>(x.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, x, mask, result]() {
      tape->accumulate(x, tape->grad(result.index_).cwiseProduct(mask));
    };
  }
  return result;
}

Var Tape::embedding_lookup(Var table, const std::vector<int>& indices) {
  Matrix out(static_cast<Eigen::Index>(indices.size()), table.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= table.rows())
      throw DimensionError("embedding_lookup: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = table.value().row(indices[k]);
  }
  const bool needs = nodes_[static_cast<std::size_t>(table.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    std::vector<int> ix = indices;
    nodes_.back().backward_fn = [tape, table, ix, result]() {
      const Matrix& dc = tape->grad(result.index_);
      Matrix delta = Matrix::Zero(table.rows(), table.cols());
      for (std::size_t k = 0; k < ix.size(); ++k)
        delta.row(ix[k]) += dc.row(static_cast<Eigen::Index>(k));
      tape->accumulate(table, delta);
    };
  }
  return result;
}

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const bool needs = nodes_[static_cast<std::size_t>(a.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    nodes_.back().backward_fn = [tape, a, result]() {
      tape->accumulate(a, Matrix::Constant(a.rows(), a.cols(), tape->grad(result.index_)(0, 0)));
    };
  }
  return result;
}

Var Tape::mean(Var a) {
  const double inv = 1.0 / static_cast<double>(a.rows() * a.cols());
  return scale(sum(a), inv);
}

Var Tape::bce_with_logits(Var logits, const Matrix& labels) {
  if (labels.rows() != logits.rows() || labels.cols() != logits.cols())
    throw DimensionError("bce_with_logits: label shape mismatch");
  const Matrix& z = logits.value();
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const double v = z(r, c);
      const double softplus = v > 30.0 ? v : std::log1p(std::exp(std::min(v, 30.0)));
      total += softplus - labels(r, c) * v;
    }
  const double inv = 1.0 / static_cast<double>(z.rows() * z.cols());
  Matrix out(1, 1);
  out(0, 0) = total * inv;
  check_finite(out, "bce_with_logits");
  const bool needs = nodes_[static_cast<std::size_t>(logits.index_)].requires_grad;
  Var result = emit(std::move(out), needs, nullptr);
  if (needs) {
    Tape* tape = this;
    Matrix y = labels;
    nodes_.back().backward_fn = [tape, logits, y, inv, result]() {
      const double upstream = tape->grad(result.index_)(0, 0);
      const Matrix sig = logits.value().unaryExpr([](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      });
      tape->accumulate(logits, (sig - y) * (inv * upstream));
    };
  }
  return result;
}

void Tape::backward(Var out) {
  if (out.tape_ != this) throw DimensionError("backward: var from another tape");
  if (out.rows() != 1 || out.cols() != 1) throw DimensionError("backward: output must be scalar");
  grad_ref(out)(0, 0) = 1.0;
  for (int i = out.index_; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.requires_grad && node.backward_fn && node.grad.size() != 0) node.backward_fn();
  }
}

void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) throw DimensionError("adam_step: param/grad count mismatch");
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state size mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    const Matrix& g = grads[k];
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw DimensionError("adam_step: gradient shape mismatch");
    state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * g;
    state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * g.cwiseProduct(g);
    const Matrix mhat = state.m[k] / bc1;
    const Matrix vhat = state.v[k] / bc2;
    p -= config.learning_rate *
         mhat.cwiseQuotient(vhat.cwiseSqrt() + Matrix::Constant(p.rows(), p.cols(), config.epsilon));
  }
}

double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                  const std::vector<Matrix>& params, double step) {
  std::vector<Matrix> grads;
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Matrix& p : params) vars.push_back(tape.leaf(p, true));
    Var out = build(tape, vars);
    tape.backward(out);
    for (const Var& v : vars)
      grads.push_back(v.grad().size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : v.grad());
  }

  auto eval = [&build](const std::vector<Matrix>& p) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(p.size());
    for (const Matrix& m : p) vars.push_back(tape.leaf(m, false));
    return build(tape, vars).value()(0, 0);
  };

  double worst = 0.0;
  std::vector<Matrix> probe = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index r = 0; r < params[k].rows(); ++r)
      for (Eigen::Index c = 0; c < params[k].cols(); ++c) {
        const double keep = probe[k](r, c);
        probe[k](r, c) = keep + step;
        const double up = eval(probe);
        probe[k](r, c) = keep - step;
        const double down = eval(probe);
        probe[k](r, c) = keep;
        const double fd = (up - down) / (2.0 * step);
        const double ad = grads[k](r, c);
        const double rel = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
        worst = std::max(worst, rel);
      }
  }
  return worst;
}

Matrix& ParamStore::add(const std::string& name, Matrix init) {
  if (has(name)) throw ConfigError("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(init));
  return entries_.back().second;
}

Matrix& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].second;
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

BoundParams bind_params(Tape& tape, const ParamStore& store, bool requires_grad) {
  BoundParams bound;
  bound.store = &store;
  bound.vars.reserve(store.size());
  for (const auto& [name, value] : store.entries()) {
    (void)name;
    bound.vars.push_back(tape.leaf(value, requires_grad));
  }
  return bound;
}

namespace {

constexpr char kMagic[4] = {'C', 'R', 'C', 'K'};

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& metadata_json,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  write_pod<std::uint32_t>(out, 1);  // version
  write_pod<std::uint64_t>(out, params.size());
  for (const auto& [name, m] : params.entries()) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod<double>(out, m(r, c));
  }
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(metadata_json.size()));
  out.write(metadata_json.data(), static_cast<std::streamsize>(metadata_json.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path, std::string* metadata_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  const auto version = read_pod<std::uint32_t>(in);
  if (version != 1) throw DataError("unsupported checkpoint version");
  const auto count = read_pod<std::uint64_t>(in);
  ParamStore params;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = static_cast<Eigen::Index>(read_pod<std::uint64_t>(in));
    const auto cols = static_cast<Eigen::Index>(read_pod<std::uint64_t>(in));
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_pod<double>(in);
    params.add(name, std::move(m));
  }
  const auto meta_len = read_pod<std::uint64_t>(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw DataError("checkpoint: truncated metadata");
  if (metadata_json != nullptr) *metadata_json = std::move(meta);
  return params;
}

}  // namespace chanrec::tensor
