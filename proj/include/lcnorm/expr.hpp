#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcnorm/interval.hpp"

namespace lcnorm {

// Differentiable expressions over radial variables r_1..r_n.
// Node set: constants, r_j, the squared-radius sum r_1^2+...+r_n^2,
// +, -, *, /, neg, log, exp and integer powers. Trees are immutable and
// shared; safe to evaluate concurrently.

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& m) : std::runtime_error(m) {}
};

class ExprError : public std::runtime_error {
 public:
  explicit ExprError(const std::string& m) : std::runtime_error(m) {}
};

// Thrown when a quotient cannot be verified nonvanishing on the declared
// domain; carries the sub-box on which verification failed so the caller
// can split there.
class DomainSplitRequired : public std::runtime_error {
 public:
  DomainSplitRequired(const std::string& m, std::vector<Interval> where)
      : std::runtime_error(m), box(std::move(where)) {}
  std::vector<Interval> box;
};

enum class Op { Const, Var, R2Sum, Add, Sub, Mul, Div, Neg, Log, Exp, IPow };

struct ExprNode {
  Op op;
  double value = 0.0;   // Const
  int var = -1;         // Var
  long long expo = 0;   // IPow
  std::shared_ptr<const ExprNode> a, b;
  int size = 1;
  int depth = 1;
};

struct ExprLimits {
  int max_nodes = 200000;
  int max_depth = 512;
};

class Expr {
 public:
  Expr();  // zero
  static Expr constant(double c);
  static Expr var(int j);  // r_{j+1}; j is 0-based
  static Expr r2sum();

  // Quotient whose denominator is checked nonvanishing on `box` by
  // bisected interval evaluation; throws DomainSplitRequired otherwise.
  static Expr quotient(const Expr& num, const Expr& den,
                       std::span<const Interval> box);

  friend Expr operator+(const Expr& x, const Expr& y);
  friend Expr operator-(const Expr& x, const Expr& y);
  friend Expr operator*(const Expr& x, const Expr& y);
  friend Expr operator/(const Expr& x, const Expr& y);  // unchecked build
  Expr operator-() const;

  static Expr log(const Expr& x);
  static Expr exp(const Expr& x);
  Expr ipow(long long k) const;

  double eval(std::span<const double> r) const;
  Interval eval_interval(std::span<const Interval> box) const;

  Expr diff(int var) const;
  Expr substitute_var(int from, int to) const;      // r_from := r_to
  Expr substitute_const(int var, double c) const;   // r_var := c

  bool is_constant() const;
  double constant_value() const;  // pre: is_constant()
  int size() const { return node_ ? node_->size : 1; }
  int depth() const { return node_ ? node_->depth : 1; }
  int max_var() const;  // largest variable index used, -1 if none

  std::string sexpr() const;
  static Expr parse(const std::string& text);

  static ExprLimits& limits();

  const std::shared_ptr<const ExprNode>& node() const { return node_; }

 private:
  explicit Expr(std::shared_ptr<const ExprNode> n) : node_(std::move(n)) {}
  std::shared_ptr<const ExprNode> node_;
  friend struct ExprBuilder;
};

// Verified positivity of e on box via interval evaluation with bisection.
bool verify_positive(const Expr& e, std::span<const Interval> box,
                     int max_bisect_depth = 14);

// Same, restricted to the region cut out by the constraints
// r_{p.first} <= r_{p.second}; sub-boxes violating a constraint are pruned.
bool verify_positive_chained(const Expr& e, std::span<const Interval> box,
                             const std::vector<std::pair<int, int>>& le_pairs,
                             int max_bisect_depth = 14);

// Checks every division denominator (nonvanishing) and log argument
// (positive) of e on box; throws DomainSplitRequired on failure.
void validate_domain(const Expr& e, std::span<const Interval> box);

// Flat postfix program for fast repeated evaluation of one expression.
class ExprTape {
 public:
  ExprTape() = default;
  explicit ExprTape(const Expr& e);
  double eval(std::span<const double> r) const;

 private:
  struct Instr {
    Op op;
    double c;
    int var;
    long long k;
  };
  std::vector<Instr> code_;
  mutable std::vector<double> stack_;  // reused; tapes are not shared across threads
};

}  // namespace lcnorm
