#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mistake/util.hpp"

namespace mistake::nn {

/// Shape-tagged row-major array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor vec(std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  bool operator==(const Tensor&) const = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value

  Parameter() = default;
  Parameter(std::string n, Tensor v);
  void zero_grad();
};

using ParamId = std::size_t;

/// Owns parameters; ids stay valid across copies, so a copied store is a
/// usable checkpoint of the model it belongs to.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor init);
  Parameter& p(ParamId id) { return params_.at(id); }
  const Parameter& p(ParamId id) const { return params_.at(id); }
  std::size_t size() const { return params_.size(); }
  void zero_grads();

  void save(std::ostream& out) const;   // text checkpoint section, format v1
  void load(std::istream& in);          // replaces values; shapes must match

 private:
  std::deque<Parameter> params_;
};

// Initializers. Matrices are [fan_out x fan_in].
Tensor glorot_uniform(std::size_t fan_out, std::size_t fan_in, util::Rng& rng);
Tensor uniform_init(std::vector<std::size_t> shape, double bound, util::Rng& rng);

/// Reverse-mode tape over a ParameterStore. Nodes are created in topological
/// order; backward() walks them in reverse and accumulates parameter
/// gradients into the store. Build one tape per example.
class Tape {
 public:
  using Node = std::size_t;

  explicit Tape(ParameterStore& params) : params_(&params) {}
  Tape(const Tape&) = delete;  // node closures capture this
  Tape& operator=(const Tape&) = delete;

  Node input(Tensor value);
  Node param(ParamId id);
  /// Row `index` of a [V x E] table; backward touches only that row.
  Node embedding(ParamId table, std::size_t index);
  /// W[m x n] * x[n] + b[m].
  Node affine(ParamId w, ParamId b, Node x);
  Node concat(std::span<const Node> parts);
  Node tanh(Node x);
  Node sigmoid(Node x);

  struct LstmState {
    Node h;
    Node c;
  };
  LstmState lstm_initial(std::size_t hidden_dim);
  /// Standard LSTM cell, gate order (i, f, g, o) stacked in w_x [4H x E],
  /// w_h [4H x H], b [4H].
  LstmState lstm_step(Node x, LstmState prev, ParamId w_x, ParamId w_h, ParamId b);

  /// Binary cross-entropy on a scalar probability, clamped to
  /// [1e-7, 1 - 1e-7].
  Node bce_loss(Node p, double label);

  const Tensor& value(Node n) const { return nodes_[n].value; }
  double scalar(Node n) const;

  /// Seeds d(root) = 1 and accumulates into parameter grads.
  void backward(Node root);

 private:
  struct TapeNode {
    Tensor value;
    Tensor grad;
    std::function<void()> back;  // empty for constant leaves
  };

  Node push(Tensor value, std::function<void()> back = {});
  Node push_param_hook(Node n, ParamId id);
  ParameterStore* params_;
  std::vector<TapeNode> nodes_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  /// Bias-corrected update from accumulated grads; increments the step
  /// counter and zeroes grads.
  void step(ParameterStore& params);
  std::uint64_t steps() const { return t_; }
  double learning_rate() const { return cfg_.lr; }
  void set_learning_rate(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;  // indexed by ParamId
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

/// `run` must compute a scalar loss and accumulate analytic gradients into
/// `params` (it is called with grads pre-zeroed). Every parameter entry is
/// then perturbed by +/-eps and the central difference compared against the
/// analytic gradient; the relative error divisor is max(1, |a|, |n|).
GradCheckResult gradient_check(const std::function<double()>& run, ParameterStore& params, double eps);

}  // namespace mistake::nn
