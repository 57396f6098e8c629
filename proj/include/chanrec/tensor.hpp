#pragma once

#include "chanrec/core.hpp"
#include "chanrec/rng.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace chanrec::tensor {

class Tape;

// Handle to a node on a tape. Values are dense double-precision matrices
// (vectors are single-row or single-column); every op checks its output for
// non-finite entries so NaNs fail fast instead of propagating.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  int index_ = -1;
};

// Reverse-mode tape. Records ops in execution order; backward() walks the
// record once in reverse. One tape per training step, single-owner.
class Tape {
 public:
  Var leaf(Matrix value, bool requires_grad = false);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double factor);
  Var add_row_broadcast(Var a, Var row);     // add a 1×n row to every row of a
  Var repeat_rows(Var row, Eigen::Index n);  // tile a 1×d row into n×d
  Var transpose(Var a);
  Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
  Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);

  Var tanh(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);
  // axis 1: each row sums to one; axis 0: each column. Max-subtraction keeps
  // huge logits finite.
  Var softmax(Var a, int axis);
  Var layer_norm(Var x, Var gain, Var bias);  // per-row normalization
  Var dropout(Var x, double p, Rng& rng, bool train);
  Var embedding_lookup(Var table, const std::vector<int>& indices);

  Var sum(Var a);
  Var mean(Var a);
  // mean over entries of softplus(z) - y*z, the stable form of sigmoid+BCE
  Var bce_with_logits(Var logits, const Matrix& labels);

  // Seeds d(out)/d(out)=1 and sweeps the tape once in reverse topological
  // (= recording) order. `out` must be 1×1.
  void backward(Var out);

  const Matrix& value(int index) const { return nodes_[static_cast<std::size_t>(index)].value; }
  const Matrix& grad(int index) const { return nodes_[static_cast<std::size_t>(index)].grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void()> backward_fn;
  };

  Var emit(Matrix value, bool requires_grad, std::function<void()> backward_fn);
  Matrix& grad_ref(Var v);
  void accumulate(Var v, const Matrix& delta);
  static void check_finite(const Matrix& m, const char* op);

  std::vector<Node> nodes_;
  friend class Var;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

// Standard Adam with bias correction. Parameter/gradient lists must line up
// in size and order; state is created lazily on first use.
void adam_step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamConfig& config);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Rebuilds the graph under central perturbation of every parameter entry and
// compares against the tape gradients. Returns the worst relative error
// |ad-fd| / max(1, |ad|, |fd|). The builder must be deterministic.
double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                  const std::vector<Matrix>& params, double step = 1e-5);

// ---------------------------------------------------------------------------
// Named parameters + checkpointing
// ---------------------------------------------------------------------------

class ParamStore {
 public:
  Matrix& add(const std::string& name, Matrix init);
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }

  const std::vector<std::pair<std::string, Matrix>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Matrix>>& entries() { return entries_; }

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// All parameters of a store placed on a tape, addressable by name.
struct BoundParams {
  std::vector<Var> vars;  // store order
  const ParamStore* store = nullptr;

  Var at(const std::string& name) const { return vars[store->index_of(name)]; }
};

BoundParams bind_params(Tape& tape, const ParamStore& store, bool requires_grad);

// Flat little-endian binary: header, then per tensor name/rows/cols/row-major
// doubles, then a JSON metadata blob. Round-trips bit-exactly.
void save_checkpoint(const ParamStore& params, const std::string& metadata_json,
                     const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path, std::string* metadata_json = nullptr);

}  // namespace chanrec::tensor
