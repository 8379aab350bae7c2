#pragma once

// Internal machinery for the residue module: radial pieces over chart
// boxes, the integration-by-parts stage chains, and the corner-resolved
// quadrature that completes the borderline log tails in closed form.

#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <vector>

#include "lcnorm/expr.hpp"
#include "lcnorm/model.hpp"
#include "lcnorm/quad.hpp"
#include "lcnorm/residue.hpp"

namespace lcnorm::residue::detail {

// deep threshold in w = -log u; beyond it every smooth factor equals its
// face value to double precision and the |psi| tail integrates in closed
// form
constexpr double kDeepW = 40.0;
constexpr double kResolvedWMax = 45.0;

enum class DimKind { Lc, PowU, ResolvedR };

struct DimSpec {
  DimKind kind = DimKind::PowU;
  double nu = 0.0;     // psi log-coefficient carried by this axis
  double u_lo = 0.0;   // lower bound in u (PowU only)
  double u_hi = 1.0;   // upper bound in u when hi_var < 0
  int hi_var = -1;     // upper bound is u_{hi_var} (r_{hi_var} for ResolvedR)
  bool alive = true;
};

// One radial integral
//   pref(zeta) * Int_cell Smooth(r) * prod(measures) *
//                |psi|^{-q} * L^{-taupow(zeta)}
// with L = b + log|psi|, measures: Lc du/u, PowU du, ResolvedR dr,
// pref = zeta and taupow = 1 + zeta for stage integrals (eps_pref),
// pref = 1 and taupow = zeta for kernels.
struct Piece {
  int nax = 0;
  std::vector<DimSpec> dims;
  std::vector<int> bind_var;      // axis -> target axis, -1 if none
  std::vector<double> bind_const; // axis -> constant r value (NaN if none)
  Expr smooth;
  Expr apos;  // |psi| = sum_axes nu_j * (-2 log r_j) + apos(r)
  double b = 1.0;
  int q = 0;
  bool eps_pref = true;
  bool weightless = false;  // q = 0 and no L factor (plain density integral)
  std::vector<std::pair<int, int>> chain;  // u_first < u_second on the cell

  mutable std::unique_ptr<ExprTape> smooth_tape, apos_tape;

  Piece() = default;
  Piece(Piece&&) = default;
  Piece& operator=(Piece&&) = default;
  Piece(const Piece& o)
      : nax(o.nax), dims(o.dims), bind_var(o.bind_var),
        bind_const(o.bind_const), smooth(o.smooth), apos(o.apos), b(o.b),
        q(o.q), eps_pref(o.eps_pref), weightless(o.weightless),
        chain(o.chain) {}
  Piece& operator=(const Piece& o) {
    if (this == &o) return *this;
    nax = o.nax; dims = o.dims; bind_var = o.bind_var;
    bind_const = o.bind_const; smooth = o.smooth; apos = o.apos; b = o.b;
    q = o.q; eps_pref = o.eps_pref; weightless = o.weightless;
    chain = o.chain;
    smooth_tape.reset();
    apos_tape.reset();
    return *this;
  }

  void make_tapes() const {
    if (!smooth_tape) smooth_tape = std::make_unique<ExprTape>(smooth);
    if (!apos_tape) apos_tape = std::make_unique<ExprTape>(apos);
  }
  // resolve an axis through the bindings to a live axis or a constant
  double resolve_r(int axis, std::span<const double> r) const {
    int a = axis;
    for (int guard = 0; guard <= nax; ++guard) {
      if (bind_var[a] >= 0) { a = bind_var[a]; continue; }
      if (!std::isnan(bind_const[a])) return bind_const[a];
      return r[a];
    }
    throw ResidueError("binding cycle");
  }
  int resolve_axis(int axis) const {  // live axis this one is bound to, or -1 if const
    int a = axis;
    for (int guard = 0; guard <= nax; ++guard) {
      if (bind_var[a] >= 0) { a = bind_var[a]; continue; }
      if (!std::isnan(bind_const[a])) return -1;
      return a;
    }
    throw ResidueError("binding cycle");
  }
  double nu_effective(int live_axis) const {
    double s = 0.0;
    for (int j = 0; j < nax; ++j)
      if (resolve_axis(j) == live_axis) s += dims[j].nu;
    return s;
  }
  // derivative along the class of a live axis (chain rule through binds)
  Expr class_diff(const Expr& e, int live_axis) const {
    Expr out = Expr::constant(0.0);
    for (int j = 0; j < nax; ++j)
      if (resolve_axis(j) == live_axis) out = out + e.diff(j);
    return out;
  }
  std::vector<Interval> hull() const;  // r-intervals per axis
  double u_hi_resolved(int axis) const;  // constant upper bound of the u range
};

struct EvalScratch {
  std::vector<double> r;
  double dropped = 0.0;
};

ValueErr eval_piece(const Piece& P, double zeta, const EvalOptions& opt);

// ---------------------------------------------------------------- stages

class SubdivisionRequired : public ResidueError {
 public:
  explicit SubdivisionRequired(const std::string& m) : ResidueError(m) {}
};

struct Stage {
  Piece piece;
  bool built = false;
  int ibp_axis = -1;
  struct Child {
    double weight;
    std::unique_ptr<Stage> stage;
  };
  struct Kern {
    double weight;
    Piece piece;
  };
  std::vector<Child> children;
  std::vector<Kern> kernels;

  bool has_live_lc() const {
    for (int j = 0; j < piece.nax; ++j)
      if (piece.dims[j].alive && piece.dims[j].kind == DimKind::Lc) return true;
    return false;
  }
  void build();
};

struct StageCtx {
  EvalOptions opt;
  double base_eps = 0.0;
  std::map<std::pair<const Stage*, int>, ValueErr> memo;
  std::map<std::pair<const Piece*, int>, ValueErr> kernel_memo;
};

ValueErr eval_stage(Stage& S, int shift, StageCtx& ctx);

void collect_kernels(Stage& S, double weight,
                     std::vector<std::pair<double, const Piece*>>& out);

// ---------------------------------------------------------------- atoms

struct Atom {
  int chart = 0;
  std::complex<double> coeff;  // c_f conj(c_g) pi^n
  int lc_count = 0;
  bool full_codim = false;
  std::vector<int> lc_axes;
  double nu_product = 1.0;
  Piece direct;
  std::vector<Piece> plain_cells;
  std::vector<std::unique_ptr<Stage>> stage_cells;
  Piece lc_face;  // weightless face integral for the lc-measure value
};

struct Evaluator {
  int n = 0;
  int sigma = 1;
  double b = 1.0;
  std::vector<Atom> atoms;

  enum class CellMode { None, FullCodim, All };

  // Builds the atom set; when cells are requested the whole stage
  // cascade is constructed eagerly, retrying with a finer lc split until
  // every sign factor verifies.
  static Evaluator build(const model::ProjectiveModel& m,
                         const model::Section& f, const model::Section& g,
                         int sigma, CellMode cells);
  static Evaluator build_at_split(const model::ProjectiveModel& m,
                                  const model::Section& f,
                                  const model::Section& g, int sigma,
                                  CellMode cells, double lc_split);

  std::complex<double> rtf_direct(double eps, const EvalOptions& opt,
                                  double* err_out) const;
  std::complex<double> rtf_cont(double eps, const EvalOptions& opt,
                                double* err_out);
  std::complex<double> rhs(double eps, const EvalOptions& opt,
                           double* err_out);
  std::complex<double> lc_norm(const EvalOptions& opt, double* err_out) const;
};

// eps * prod_{k=1}^{s-1} (k+eps) * sym^s_{sigma-1}
double paper_coeff(int sigma, int s, double eps);

}  // namespace lcnorm::residue::detail
