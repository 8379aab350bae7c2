#include "lcnorm/expr.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace lcnorm {

using NodePtr = std::shared_ptr<const ExprNode>;

ExprLimits& Expr::limits() {
  static ExprLimits lim;
  return lim;
}

struct ExprBuilder {
  static Expr wrap(NodePtr n) { return Expr(std::move(n)); }

  static NodePtr leaf(Op op, double v = 0.0, int var = -1) {
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->value = v;
    n->var = var;
    return n;
  }

  static NodePtr node(Op op, NodePtr a, NodePtr b = nullptr, long long k = 0) {
    auto n = std::make_shared<ExprNode>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    n->expo = k;
    n->size = 1 + (n->a ? n->a->size : 0) + (n->b ? n->b->size : 0);
    n->depth = 1 + std::max(n->a ? n->a->depth : 0, n->b ? n->b->depth : 0);
    const auto& lim = Expr::limits();
    if (n->size > lim.max_nodes || n->depth > lim.max_depth)
      throw ExprError("expression exceeds configured size/depth limit");
    return n;
  }

  static bool is_const(const NodePtr& n, double v) {
    return n->op == Op::Const && n->value == v;
  }

  static NodePtr add(NodePtr a, NodePtr b) {
    if (a->op == Op::Const && b->op == Op::Const)
      return leaf(Op::Const, a->value + b->value);
    if (is_const(a, 0.0)) return b;
    if (is_const(b, 0.0)) return a;
    return node(Op::Add, std::move(a), std::move(b));
  }
  static NodePtr sub(NodePtr a, NodePtr b) {
    if (a->op == Op::Const && b->op == Op::Const)
      return leaf(Op::Const, a->value - b->value);
    if (is_const(b, 0.0)) return a;
    if (is_const(a, 0.0)) return node(Op::Neg, std::move(b));
    return node(Op::Sub, std::move(a), std::move(b));
  }
  static NodePtr mul(NodePtr a, NodePtr b) {
    if (a->op == Op::Const && b->op == Op::Const)
      return leaf(Op::Const, a->value * b->value);
    if (is_const(a, 0.0) || is_const(b, 0.0)) return leaf(Op::Const, 0.0);
    if (is_const(a, 1.0)) return b;
    if (is_const(b, 1.0)) return a;
    return node(Op::Mul, std::move(a), std::move(b));
  }
  static NodePtr div(NodePtr a, NodePtr b) {
    if (is_const(a, 0.0)) return leaf(Op::Const, 0.0);
    if (is_const(b, 1.0)) return a;
    if (a->op == Op::Const && b->op == Op::Const && b->value != 0.0)
      return leaf(Op::Const, a->value / b->value);
    return node(Op::Div, std::move(a), std::move(b));
  }
  static NodePtr neg(NodePtr a) {
    if (a->op == Op::Const) return leaf(Op::Const, -a->value);
    if (a->op == Op::Neg) return a->a;
    return node(Op::Neg, std::move(a));
  }
  static NodePtr log_(NodePtr a) {
    if (is_const(a, 1.0)) return leaf(Op::Const, 0.0);
    return node(Op::Log, std::move(a));
  }
  static NodePtr exp_(NodePtr a) {
    if (is_const(a, 0.0)) return leaf(Op::Const, 1.0);
    return node(Op::Exp, std::move(a));
  }
  static NodePtr ipow(NodePtr a, long long k) {
    if (k == 0) return leaf(Op::Const, 1.0);
    if (k == 1) return a;
    if (a->op == Op::Const) return leaf(Op::Const, std::pow(a->value, double(k)));
    return node(Op::IPow, std::move(a), nullptr, k);
  }
};

Expr::Expr() : node_(ExprBuilder::leaf(Op::Const, 0.0)) {}
Expr Expr::constant(double c) { return Expr(ExprBuilder::leaf(Op::Const, c)); }
Expr Expr::var(int j) {
  if (j < 0) throw ExprError("negative variable index");
  return Expr(ExprBuilder::leaf(Op::Var, 0.0, j));
}
Expr Expr::r2sum() { return Expr(ExprBuilder::leaf(Op::R2Sum)); }

Expr operator+(const Expr& x, const Expr& y) {
  return Expr(ExprBuilder::add(x.node_, y.node_));
}
Expr operator-(const Expr& x, const Expr& y) {
  return Expr(ExprBuilder::sub(x.node_, y.node_));
}
Expr operator*(const Expr& x, const Expr& y) {
  return Expr(ExprBuilder::mul(x.node_, y.node_));
}
Expr operator/(const Expr& x, const Expr& y) {
  return Expr(ExprBuilder::div(x.node_, y.node_));
}
Expr Expr::operator-() const { return Expr(ExprBuilder::neg(node_)); }
Expr Expr::log(const Expr& x) { return Expr(ExprBuilder::log_(x.node_)); }
Expr Expr::exp(const Expr& x) { return Expr(ExprBuilder::exp_(x.node_)); }
Expr Expr::ipow(long long k) const { return Expr(ExprBuilder::ipow(node_, k)); }

Expr Expr::quotient(const Expr& num, const Expr& den,
                    std::span<const Interval> box) {
  Expr q = num / den;
  validate_domain(q, box);
  return q;
}

bool Expr::is_constant() const { return node_->op == Op::Const; }
double Expr::constant_value() const { return node_->value; }

static int max_var_rec(const NodePtr& n) {
  int m = n->op == Op::Var ? n->var : -1;
  if (n->a) m = std::max(m, max_var_rec(n->a));
  if (n->b) m = std::max(m, max_var_rec(n->b));
  return m;
}
int Expr::max_var() const { return max_var_rec(node_); }

// ---------------------------------------------------------------- eval

static std::string render(const NodePtr& n);

static double eval_rec(const NodePtr& n, std::span<const double> r) {
  switch (n->op) {
    case Op::Const: return n->value;
    case Op::Var:
      if (n->var >= (int)r.size())
        throw EvalError("variable r" + std::to_string(n->var + 1) +
                        " outside point dimension");
      return r[n->var];
    case Op::R2Sum: {
      double s = 0.0;
      for (double x : r) s += x * x;
      return s;
    }
    case Op::Add: return eval_rec(n->a, r) + eval_rec(n->b, r);
    case Op::Sub: return eval_rec(n->a, r) - eval_rec(n->b, r);
    case Op::Mul: return eval_rec(n->a, r) * eval_rec(n->b, r);
    case Op::Div: {
      double den = eval_rec(n->b, r);
      if (den == 0.0)
        throw EvalError("division by zero in " + render(n));
      return eval_rec(n->a, r) / den;
    }
    case Op::Neg: return -eval_rec(n->a, r);
    case Op::Log: {
      double a = eval_rec(n->a, r);
      if (a <= 0.0)
        throw EvalError("log of nonpositive argument in " + render(n));
      return std::log(a);
    }
    case Op::Exp: return std::exp(eval_rec(n->a, r));
    case Op::IPow: {
      double a = eval_rec(n->a, r);
      if (n->expo < 0 && a == 0.0)
        throw EvalError("zero base with negative power in " + render(n));
      double p = 1.0, base = a;
      long long k = n->expo < 0 ? -n->expo : n->expo;
      while (k) {
        if (k & 1) p *= base;
        base *= base;
        k >>= 1;
      }
      return n->expo < 0 ? 1.0 / p : p;
    }
  }
  throw EvalError("corrupt expression node");
}

double Expr::eval(std::span<const double> r) const { return eval_rec(node_, r); }

static Interval ieval_rec(const NodePtr& n, std::span<const Interval> box) {
  switch (n->op) {
    case Op::Const: return Interval::point(n->value);
    case Op::Var:
      if (n->var >= (int)box.size())
        throw EvalError("variable outside box dimension");
      return box[n->var];
    case Op::R2Sum: {
      Interval s = Interval::point(0.0);
      for (const auto& x : box) s = s + ipow_int(x, 2);
      return s;
    }
    case Op::Add: return ieval_rec(n->a, box) + ieval_rec(n->b, box);
    case Op::Sub: return ieval_rec(n->a, box) - ieval_rec(n->b, box);
    case Op::Mul: return ieval_rec(n->a, box) * ieval_rec(n->b, box);
    case Op::Div: return ieval_rec(n->a, box) / ieval_rec(n->b, box);
    case Op::Neg: return -ieval_rec(n->a, box);
    case Op::Log: return ilog(ieval_rec(n->a, box));
    case Op::Exp: return iexp(ieval_rec(n->a, box));
    case Op::IPow: return ipow_int(ieval_rec(n->a, box), n->expo);
  }
  throw EvalError("corrupt expression node");
}

Interval Expr::eval_interval(std::span<const Interval> box) const {
  return ieval_rec(node_, box);
}

// ---------------------------------------------------------------- diff

static NodePtr diff_rec(const NodePtr& n, int v) {
  using B = ExprBuilder;
  switch (n->op) {
    case Op::Const: return B::leaf(Op::Const, 0.0);
    case Op::Var: return B::leaf(Op::Const, n->var == v ? 1.0 : 0.0);
    case Op::R2Sum:  // d/dr_v sum r_j^2 = 2 r_v
      return B::mul(B::leaf(Op::Const, 2.0), B::leaf(Op::Var, 0.0, v));
    case Op::Add: return B::add(diff_rec(n->a, v), diff_rec(n->b, v));
    case Op::Sub: return B::sub(diff_rec(n->a, v), diff_rec(n->b, v));
    case Op::Mul:
      return B::add(B::mul(diff_rec(n->a, v), n->b),
                    B::mul(n->a, diff_rec(n->b, v)));
    case Op::Div:
      // (a/b)' = a'/b - a b'/b^2
      return B::sub(B::div(diff_rec(n->a, v), n->b),
                    B::div(B::mul(n->a, diff_rec(n->b, v)),
                           B::ipow(n->b, 2)));
    case Op::Neg: return B::neg(diff_rec(n->a, v));
    case Op::Log: return B::div(diff_rec(n->a, v), n->a);
    case Op::Exp: return B::mul(diff_rec(n->a, v), B::exp_(n->a));
    case Op::IPow:
      return B::mul(B::mul(B::leaf(Op::Const, double(n->expo)),
                           B::ipow(n->a, n->expo - 1)),
                    diff_rec(n->a, v));
  }
  throw ExprError("corrupt expression node");
}

Expr Expr::diff(int v) const { return Expr(diff_rec(node_, v)); }

// ---------------------------------------------------------- substitution

static NodePtr subst_rec(const NodePtr& n, int from,
                         const NodePtr& replacement, bool r2sum_forbidden) {
  using B = ExprBuilder;
  switch (n->op) {
    case Op::Const: return n;
    case Op::Var: return n->var == from ? replacement : n;
    case Op::R2Sum:
      if (r2sum_forbidden)
        throw ExprError(
            "substitution into r2sum is ambiguous; expand it first");
      return n;
    case Op::Add: return B::add(subst_rec(n->a, from, replacement, r2sum_forbidden),
                                subst_rec(n->b, from, replacement, r2sum_forbidden));
    case Op::Sub: return B::sub(subst_rec(n->a, from, replacement, r2sum_forbidden),
                                subst_rec(n->b, from, replacement, r2sum_forbidden));
    case Op::Mul: return B::mul(subst_rec(n->a, from, replacement, r2sum_forbidden),
                                subst_rec(n->b, from, replacement, r2sum_forbidden));
    case Op::Div: return B::div(subst_rec(n->a, from, replacement, r2sum_forbidden),
                                subst_rec(n->b, from, replacement, r2sum_forbidden));
    case Op::Neg: return B::neg(subst_rec(n->a, from, replacement, r2sum_forbidden));
    case Op::Log: return B::log_(subst_rec(n->a, from, replacement, r2sum_forbidden));
    case Op::Exp: return B::exp_(subst_rec(n->a, from, replacement, r2sum_forbidden));
    case Op::IPow:
      return B::ipow(subst_rec(n->a, from, replacement, r2sum_forbidden), n->expo);
  }
  throw ExprError("corrupt expression node");
}

static bool uses_r2sum(const NodePtr& n) {
  if (n->op == Op::R2Sum) return true;
  if (n->a && uses_r2sum(n->a)) return true;
  if (n->b && uses_r2sum(n->b)) return true;
  return false;
}

Expr Expr::substitute_var(int from, int to) const {
  return Expr(subst_rec(node_, from, ExprBuilder::leaf(Op::Var, 0.0, to),
                        uses_r2sum(node_)));
}
Expr Expr::substitute_const(int var, double c) const {
  return Expr(subst_rec(node_, var, ExprBuilder::leaf(Op::Const, c),
                        uses_r2sum(node_)));
}

// ----------------------------------------------------- domain checking

namespace {

bool verify_positive_rec(const Expr& e, std::vector<Interval>& box, int depth) {  // NOLINT(misc-no-recursion)
  Interval v = e.eval_interval(box);
  if (v.positive()) return true;
  if (v.hi <= 0.0) return false;
  if (depth <= 0) return false;
  // bisect the widest coordinate
  int widest = 0;
  double w = -1.0;
  for (size_t j = 0; j < box.size(); ++j)
    if (box[j].width() > w) { w = box[j].width(); widest = (int)j; }
  if (w <= 1e-13 * (1.0 + std::fabs(box[widest].lo))) return false;
  Interval save = box[widest];
  double mid = 0.5 * (save.lo + save.hi);
  box[widest] = Interval(save.lo, mid);
  bool left = verify_positive_rec(e, box, depth - 1);
  box[widest] = Interval(mid, save.hi);
  bool right = left && verify_positive_rec(e, box, depth - 1);
  box[widest] = save;
  return left && right;
}

bool verify_nonvanishing(const Expr& e, std::vector<Interval> box, int depth) {
  Interval v = e.eval_interval(box);
  if (!v.contains_zero()) return true;
  Expr neg = -e;
  std::vector<Interval> b2 = box;
  return verify_positive_rec(e, box, depth) || verify_positive_rec(neg, b2, depth);
}

void validate_rec(const NodePtr& n, std::span<const Interval> box) {
  if (n->a) validate_rec(n->a, box);
  if (n->b) validate_rec(n->b, box);
  if (n->op == Op::Div) {
    Expr den = ExprBuilder::wrap(n->b);
    if (!verify_nonvanishing(den, std::vector<Interval>(box.begin(), box.end()), 14))
      throw DomainSplitRequired(
          "denominator not verifiably nonvanishing on domain: " + render(n->b),
          std::vector<Interval>(box.begin(), box.end()));
  }
  if (n->op == Op::Log) {
    Expr arg = ExprBuilder::wrap(n->a);
    std::vector<Interval> b(box.begin(), box.end());
    if (!verify_positive_rec(arg, b, 14))
      throw DomainSplitRequired(
          "log argument not verifiably positive on domain: " + render(n->a),
          std::vector<Interval>(box.begin(), box.end()));
  }
}

}  // namespace

bool verify_positive(const Expr& e, std::span<const Interval> box,
                     int max_bisect_depth) {
  std::vector<Interval> b(box.begin(), box.end());
  return verify_positive_rec(e, b, max_bisect_depth);
}

namespace {

bool verify_chained_rec(const Expr& e, std::vector<Interval>& box,
                        const std::vector<std::pair<int, int>>& pairs,
                        int depth) {
  for (const auto& [i, j] : pairs)
    if (box[i].lo > box[j].hi) return true;  // region empty here
  Interval v = e.eval_interval(box);
  if (v.positive()) return true;
  if (depth <= 0) return false;
  int widest = 0;
  double w = -1.0;
  for (size_t j = 0; j < box.size(); ++j)
    if (box[j].width() > w) { w = box[j].width(); widest = (int)j; }
  if (w <= 1e-12) return false;
  Interval save = box[widest];
  const double mid = 0.5 * (save.lo + save.hi);
  box[widest] = Interval(save.lo, mid);
  bool ok = verify_chained_rec(e, box, pairs, depth - 1);
  if (ok) {
    box[widest] = Interval(mid, save.hi);
    ok = verify_chained_rec(e, box, pairs, depth - 1);
  }
  box[widest] = save;
  return ok;
}

}  // namespace

bool verify_positive_chained(const Expr& e, std::span<const Interval> box,
                             const std::vector<std::pair<int, int>>& le_pairs,
                             int max_bisect_depth) {
  std::vector<Interval> b(box.begin(), box.end());
  return verify_chained_rec(e, b, le_pairs, max_bisect_depth);
}

void validate_domain(const Expr& e, std::span<const Interval> box) {
  validate_rec(e.node(), box);
}

// ------------------------------------------------------------- s-expr

static std::string render(const NodePtr& n) {
  std::ostringstream os;
  switch (n->op) {
    case Op::Const: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", n->value);
      os << buf;
      break;
    }
    case Op::Var: os << "r" << (n->var + 1); break;
    case Op::R2Sum: os << "(r2sum)"; break;
    case Op::Add: os << "(add " << render(n->a) << " " << render(n->b) << ")"; break;
    case Op::Sub: os << "(sub " << render(n->a) << " " << render(n->b) << ")"; break;
    case Op::Mul: os << "(mul " << render(n->a) << " " << render(n->b) << ")"; break;
    case Op::Div: os << "(div " << render(n->a) << " " << render(n->b) << ")"; break;
    case Op::Neg: os << "(neg " << render(n->a) << ")"; break;
    case Op::Log: os << "(log " << render(n->a) << ")"; break;
    case Op::Exp: os << "(exp " << render(n->a) << ")"; break;
    case Op::IPow:
      os << "(ipow " << render(n->a) << " " << n->expo << ")";
      break;
  }
  return os.str();
}

std::string Expr::sexpr() const { return render(node_); }

namespace {

struct Parser {
  const std::string& s;
  size_t pos = 0;

  explicit Parser(const std::string& text) : s(text) {}

  void skip() {
    while (pos < s.size() && std::isspace((unsigned char)s[pos])) ++pos;
  }
  [[noreturn]] void fail(const std::string& m) {
    throw ExprError("s-expression parse error at offset " +
                    std::to_string(pos) + ": " + m);
  }
  std::string atom() {
    size_t start = pos;
    while (pos < s.size() && !std::isspace((unsigned char)s[pos]) &&
           s[pos] != '(' && s[pos] != ')')
      ++pos;
    if (start == pos) fail("expected atom");
    return s.substr(start, pos - start);
  }

  Expr expr() {
    skip();
    if (pos >= s.size()) fail("unexpected end of input");
    if (s[pos] != '(') {
      std::string a = atom();
      if (a.size() >= 2 && a[0] == 'r' && std::isdigit((unsigned char)a[1])) {
        int idx = std::atoi(a.c_str() + 1);
        if (idx >= 1) return Expr::var(idx - 1);
      }
      char* end = nullptr;
      double v = std::strtod(a.c_str(), &end);
      if (end == nullptr || *end != '\0') fail("unrecognised atom '" + a + "'");
      return Expr::constant(v);
    }
    ++pos;  // '('
    skip();
    std::string op = atom();
    std::vector<Expr> args;
    long long expo = 0;
    bool have_expo = false;
    for (;;) {
      skip();
      if (pos >= s.size()) fail("missing ')'");
      if (s[pos] == ')') { ++pos; break; }
      if (op == "ipow" && args.size() == 1) {
        std::string a = atom();
        char* end = nullptr;
        expo = std::strtoll(a.c_str(), &end, 10);
        if (end == nullptr || *end != '\0') fail("ipow exponent must be integer");
        have_expo = true;
        continue;
      }
      args.push_back(expr());
    }
    auto need = [&](size_t n) {
      if (args.size() != n)
        fail("operator '" + op + "' expects " + std::to_string(n) + " argument(s)");
    };
    if (op == "r2sum") { need(0); return Expr::r2sum(); }
    if (op == "neg") { need(1); return -args[0]; }
    if (op == "log") { need(1); return Expr::log(args[0]); }
    if (op == "exp") { need(1); return Expr::exp(args[0]); }
    if (op == "ipow") {
      need(1);
      if (!have_expo) fail("ipow needs an integer exponent");
      return args[0].ipow(expo);
    }
    if (op == "add" || op == "mul") {
      if (args.size() < 2) fail("'" + op + "' expects at least 2 arguments");
      Expr acc = args[0];
      for (size_t i = 1; i < args.size(); ++i)
        acc = op == "add" ? acc + args[i] : acc * args[i];
      return acc;
    }
    if (op == "sub") { need(2); return args[0] - args[1]; }
    if (op == "div") { need(2); return args[0] / args[1]; }
    fail("unknown operator '" + op + "'");
  }
};

}  // namespace

Expr Expr::parse(const std::string& text) {
  Parser p(text);
  Expr e = p.expr();
  p.skip();
  if (p.pos != text.size())
    throw ExprError("trailing characters after s-expression");
  return e;
}

// --------------------------------------------------------------- tape

ExprTape::ExprTape(const Expr& e) {
  // postfix emission
  struct Emit {
    std::vector<Instr>& code;
    void walk(const NodePtr& n) {
      if (n->a) walk(n->a);
      if (n->b) walk(n->b);
      code.push_back({n->op, n->value, n->var, n->expo});
    }
  };
  Emit em{code_};
  em.walk(e.node());
  stack_.reserve(e.depth() + 2);
}

double ExprTape::eval(std::span<const double> r) const {
  auto& st = stack_;
  st.clear();
  for (const auto& in : code_) {
    switch (in.op) {
      case Op::Const: st.push_back(in.c); break;
      case Op::Var: st.push_back(r[in.var]); break;
      case Op::R2Sum: {
        double s = 0.0;
        for (double x : r) s += x * x;
        st.push_back(s);
        break;
      }
      case Op::Add: { double b = st.back(); st.pop_back(); st.back() += b; break; }
      case Op::Sub: { double b = st.back(); st.pop_back(); st.back() -= b; break; }
      case Op::Mul: { double b = st.back(); st.pop_back(); st.back() *= b; break; }
      case Op::Div: { double b = st.back(); st.pop_back(); st.back() /= b; break; }
      case Op::Neg: st.back() = -st.back(); break;
      case Op::Log: st.back() = std::log(st.back()); break;
      case Op::Exp: st.back() = std::exp(st.back()); break;
      case Op::IPow: {
        double base = st.back(), p = 1.0;
        long long k = in.k < 0 ? -in.k : in.k;
        while (k) { if (k & 1) p *= base; base *= base; k >>= 1; }
        st.back() = in.k < 0 ? 1.0 / p : p;
        break;
      }
    }
  }
  return st.back();
}

}  // namespace lcnorm
