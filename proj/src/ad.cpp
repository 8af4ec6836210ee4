#include "dsem/ad.hpp"

#include <cmath>

namespace dsem::ad {

Var Tape::input(double value) {
  Var v = constant(value);
  input_nodes_.push_back(v.index);
  return v;
}

Var Tape::constant(double value) {
  values_.push_back(value);
  arg_begin_.push_back(static_cast<std::uint32_t>(args_.size()));
  return {this, static_cast<std::uint32_t>(values_.size() - 1)};
}

Var Tape::node(double value, std::span<const Var> args, std::span<const double> partials) {
  for (std::size_t k = 0; k < args.size(); ++k) {
    args_.push_back(args[k].index);
    partials_.push_back(partials[k]);
  }
  values_.push_back(value);
  arg_begin_.push_back(static_cast<std::uint32_t>(args_.size()));
  return {this, static_cast<std::uint32_t>(values_.size() - 1)};
}

Var Tape::node(double value, Var a, double da) {
  args_.push_back(a.index);
  partials_.push_back(da);
  values_.push_back(value);
  arg_begin_.push_back(static_cast<std::uint32_t>(args_.size()));
  return {this, static_cast<std::uint32_t>(values_.size() - 1)};
}

Var Tape::node(double value, Var a, double da, Var b, double db) {
  args_.push_back(a.index);
  partials_.push_back(da);
  args_.push_back(b.index);
  partials_.push_back(db);
  values_.push_back(value);
  arg_begin_.push_back(static_cast<std::uint32_t>(args_.size()));
  return {this, static_cast<std::uint32_t>(values_.size() - 1)};
}

std::vector<double> Tape::gradient(Var output) const {
  std::vector<double> adj(values_.size(), 0.0);
  adj[output.index] = 1.0;
  for (std::size_t n = output.index + 1; n-- > 0;) {
    const double a = adj[n];
    if (a == 0.0) continue;
    for (std::uint32_t k = arg_begin_[n]; k < arg_begin_[n + 1]; ++k) adj[args_[k]] += a * partials_[k];
  }
  std::vector<double> out(input_nodes_.size());
  for (std::size_t k = 0; k < input_nodes_.size(); ++k) out[k] = adj[input_nodes_[k]];
  return out;
}

void Tape::clear() {
  values_.clear();
  arg_begin_.assign(1, 0);
  args_.clear();
  partials_.clear();
  input_nodes_.clear();
}

Var operator+(Var a, Var b) { return a.tape->node(a.value() + b.value(), a, 1.0, b, 1.0); }
Var operator-(Var a, Var b) { return a.tape->node(a.value() - b.value(), a, 1.0, b, -1.0); }
Var operator*(Var a, Var b) {
  const double x = a.value(), y = b.value();
  return a.tape->node(x * y, a, y, b, x);
}
Var operator/(Var a, Var b) {
  const double x = a.value(), y = b.value();
  return a.tape->node(x / y, a, 1.0 / y, b, -x / (y * y));
}
Var operator-(Var a) { return a.tape->node(-a.value(), a, -1.0); }
Var operator+(Var a, double b) { return a.tape->node(a.value() + b, a, 1.0); }
Var operator+(double a, Var b) { return b + a; }
Var operator-(Var a, double b) { return a.tape->node(a.value() - b, a, 1.0); }
Var operator-(double a, Var b) { return b.tape->node(a - b.value(), b, -1.0); }
Var operator*(Var a, double b) { return a.tape->node(a.value() * b, a, b); }
Var operator*(double a, Var b) { return b * a; }
Var operator/(Var a, double b) { return a.tape->node(a.value() / b, a, 1.0 / b); }
Var operator/(double a, Var b) {
  const double y = b.value();
  return b.tape->node(a / y, b, -a / (y * y));
}

Var exp(Var a) {
  const double e = std::exp(a.value());
  return a.tape->node(e, a, e);
}
Var log(Var a) { return a.tape->node(std::log(a.value()), a, 1.0 / a.value()); }
Var tanh(Var a) {
  const double t = std::tanh(a.value());
  return a.tape->node(t, a, 1.0 - t * t);
}
Var sqrt(Var a) {
  const double s = std::sqrt(a.value());
  return a.tape->node(s, a, 0.5 / s);
}
Var square(Var a) { return a.tape->node(a.value() * a.value(), a, 2.0 * a.value()); }

Var sum(std::span<const Var> terms) {
  double v = 0.0;
  for (const Var& t : terms) v += t.value();
  std::vector<double> ones(terms.size(), 1.0);
  return terms.front().tape->node(v, terms, ones);
}

Var dot(std::span<const Var> x, std::span<const double> w) {
  double v = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) v += w[k] * x[k].value();
  return x.front().tape->node(v, x, w);
}

}  // namespace dsem::ad
