#pragma once

// Minimal scalar reverse-mode differentiation. Each node stores its value and
// the partial derivatives with respect to its arguments, computed when the
// node is created; the backward sweep is a single pass over the node list.
// Expensive composite computations (a whole Kalman filter, say) enter the
// tape as one n-ary node whose partials come from a hand-written adjoint.

#include <cstdint>
#include <span>
#include <vector>

namespace dsem::ad {

class Tape;

/// Handle to a tape node. Arithmetic on handles records new nodes.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;

  double value() const;
};

class Tape {
 public:
  /// Independent input; inputs are numbered in creation order.
  Var input(double value);
  /// Node without arguments.
  Var constant(double value);
  /// Node with explicit partials d value / d args[k].
  Var node(double value, std::span<const Var> args, std::span<const double> partials);
  Var node(double value, Var a, double da);
  Var node(double value, Var a, double da, Var b, double db);

  double value(Var v) const { return values_[v.index]; }
  std::size_t size() const { return values_.size(); }
  std::size_t inputs() const { return input_nodes_.size(); }

  /// d output / d input_k for every input, in input order.
  std::vector<double> gradient(Var output) const;

  void clear();

 private:
  std::vector<double> values_;
  std::vector<std::uint32_t> arg_begin_{0};
  std::vector<std::uint32_t> args_;
  std::vector<double> partials_;
  std::vector<std::uint32_t> input_nodes_;
};

inline double Var::value() const { return tape->value(*this); }

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sqrt(Var a);
Var square(Var a);

/// Sum of a list of nodes as a single node.
Var sum(std::span<const Var> terms);
/// Sum_k w_k x_k as a single node.
Var dot(std::span<const Var> x, std::span<const double> w);

}  // namespace dsem::ad
