#include "lcnorm/residue.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "residue_internal.hpp"

namespace lcnorm::residue {

using detail::Evaluator;

namespace {

ValueErr as_value(std::complex<double> v, double err) {
  return {v.real(), err + std::fabs(v.imag())};
}

}  // namespace

ValueErr rtf(const model::ProjectiveModel& m, const model::Section& f,
             int sigma, double eps, const EvalOptions& opt) {
  if (!(eps > 0.0))
    throw ResidueError("rtf requires eps > 0; use rtf_continued for the "
                       "analytic continuation");
  auto ev = Evaluator::build(m, f, f, sigma, Evaluator::CellMode::None);
  double err = 0.0;
  auto v = ev.rtf_direct(eps, opt, &err);
  return as_value(v, err);
}

ValueErr rtf_continued(const model::ProjectiveModel& m,
                       const model::Section& f, int sigma, double eps,
                       const EvalOptions& opt) {
  auto ev = Evaluator::build(m, f, f, sigma, Evaluator::CellMode::FullCodim);
  double err = 0.0;
  auto v = ev.rtf_cont(eps, opt, &err);
  // each strip crossing amplifies the error budget
  double amp = 1.0;
  if (eps < 1.0) {
    double csum = 0.0;
    for (int s = 1; s <= sigma - 1; ++s)
      csum += std::fabs(sym_coeff(sigma, s).to_double());
    const int strips = (int)std::ceil(std::max(0.0, -eps)) + 1;
    for (int i = 0; i < strips; ++i) amp *= (1.0 + std::fabs(eps) * csum);
  }
  return as_value(v, err * amp);
}

ValueErr recursion_rhs(const model::ProjectiveModel& m,
                       const model::Section& f, int sigma, double eps,
                       const EvalOptions& opt) {
  auto ev = Evaluator::build(m, f, f, sigma, Evaluator::CellMode::FullCodim);
  double err = 0.0;
  auto v = ev.rhs(eps, opt, &err);
  return as_value(v, err);
}

ValueErr recursion_lhs(const model::ProjectiveModel& m,
                       const model::Section& f, int sigma, double eps,
                       const EvalOptions& opt) {
  if (!(eps > 0.0)) throw ResidueError("recursion_lhs requires eps > 0");
  auto ev = Evaluator::build(m, f, f, sigma, Evaluator::CellMode::None);
  double err = 0.0;
  ValueErr acc = as_value(ev.rtf_direct(eps, opt, &err), err);
  for (int s = 1; s <= sigma - 1; ++s) {
    const double c = detail::paper_coeff(sigma, s, eps);
    double e2 = 0.0;
    auto v2 = ev.rtf_direct(s + eps, opt, &e2);
    acc += c * as_value(v2, e2);
  }
  return acc;
}

ValueErr lc_measure_norm(const model::ProjectiveModel& m,
                         const model::Section& f, int sigma,
                         const EvalOptions& opt) {
  auto ev = Evaluator::build(m, f, f, sigma, Evaluator::CellMode::None);
  double err = 0.0;
  auto v = ev.lc_norm(opt, &err);
  return as_value(v, err);
}

std::complex<double> pairing(const model::ProjectiveModel& m,
                             const model::Section& f,
                             const model::Section& g, int sigma, double eps,
                             const EvalOptions& opt) {
  auto ev = Evaluator::build(m, f, g, sigma, Evaluator::CellMode::None);
  double err = 0.0;
  if (eps == 0.0) return ev.lc_norm(opt, &err);
  if (eps < 0.0) throw ResidueError("pairing requires eps >= 0");
  return ev.rtf_direct(eps, opt, &err);
}

// ------------------------------------------------------------- tables

Rational sym_coeff(int sigma, int s) {
  if (sigma < 1) throw ResidueError("sym_coeff: sigma must be >= 1");
  if (s < 0 || s > sigma - 1)
    throw ResidueError("sym_coeff: s out of range 0..sigma-1");
  std::vector<Rational> xs;
  for (int k = 1; k <= sigma - 1; ++k) xs.emplace_back(1, k);
  return sym_elementary(xs, s);
}

Rational sym_elementary(const std::vector<Rational>& xs, int s) {
  if (s < 0 || s > (int)xs.size())
    throw ResidueError("sym_elementary: degree out of range");
  // e_0..e_m via the Newton triangle
  std::vector<Rational> e(s + 1, Rational(0));
  e[0] = Rational(1);
  for (const Rational& x : xs)
    for (int j = s; j >= 1; --j) e[j] = e[j] + x * e[j - 1];
  return e[s];
}

SymTable SymTable::make(int sigma) {
  SymTable t;
  t.sigma = sigma;
  for (int s = 0; s <= sigma - 1; ++s) t.coeffs.push_back(sym_coeff(sigma, s));
  return t;
}

std::pair<double, double> xlogx_bound(double x, double eps, double s) {
  if (!(x > 0.0) || x > 1.0)
    throw ResidueError("xlogx_bound: x must lie in (0, 1]");
  if (!(eps > 0.0)) throw ResidueError("xlogx_bound: eps must be positive");
  if (s < 0.0) throw ResidueError("xlogx_bound: s must be >= 0");
  const double lhs =
      s == 0.0 ? std::pow(x, eps)
               : std::pow(x, eps) * std::pow(std::fabs(std::log(x)), s);
  // 0^0 treated as 1
  const double rhs = s == 0.0 ? 1.0 : std::pow(s / (std::numbers::e * eps), s);
  return {lhs, rhs};
}

BoundCheck smooth_weight_bound_check(const model::ProjectiveModel& m,
                                     const model::Section& f, int sigma,
                                     double eps, const EvalOptions& opt) {
  // phi_sm := phi_L (smooth here), so phi_L - phi_sm = 0 <= 0.
  // lhs = Int |f|^2 e^{-phi_L}; rhs = (C/eps) rtf(eps) with
  // C = ((sigma+1)/e)^{sigma+1} * l * ((1+eps)/e)^{1+eps}.
  auto ev = Evaluator::build(m, f, f, sigma, Evaluator::CellMode::None);
  double lhs = 0.0, lerr = 0.0;
  {
    // reuse the atoms, integrating the bare density (q = 0, no L)
    for (const auto& A : ev.atoms) {
      detail::Piece p = A.direct;
      p.q = 0;
      p.eps_pref = false;
      p.weightless = true;
      // |f|^2 e^{-phi_L} carries (1+|x|^2)^{-d} e^{-c_phi} instead of the
      // residue weight's (1+|x|^2)^{T-d} e^{-c_phi-c_psi} prod u^{-w}:
      // rebuild the smooth factor accordingly
      Expr one_plus = Expr::constant(1.0) + Expr::r2sum();
      // the residue atom integrand carries
      //   e^{-c_phi-c_psi} (1+S)^{T-d} prod_{e_j>=1} u^{e_j}
      // with measures du/u on lc axes; the plain density wanted here is
      //   e^{-c_phi} (1+S)^{-d} prod_j u^{a_j}
      // with plain du everywhere, so multiply by
      //   e^{c_psi} (1+S)^{-T} prod_j u^{w_j} prod_{lc axes} u^{-1}
      Expr ratio = Expr::constant(std::exp(m.psi_offset())) *
                   one_plus.ipow(-(long long)std::llround(m.log1p_coeff()));
      for (int j = 0; j < p.nax; ++j) {
        long long w = std::llround(A.direct.dims[j].nu);
        if (A.direct.dims[j].kind == detail::DimKind::Lc) w -= 1;
        if (w != 0) ratio = ratio * Expr::var(j).ipow(2 * w);
      }
      for (int j = 0; j < p.nax; ++j) {
        p.dims[j].kind = detail::DimKind::PowU;
        p.dims[j].u_lo = 0.0;
        p.dims[j].u_hi = 1.0;
        p.dims[j].hi_var = -1;
      }
      p.smooth = A.direct.smooth * ratio;
      auto v = detail::eval_piece(p, 0.0, opt);
      lhs += (A.coeff * v.value).real();
      lerr += std::abs(A.coeff) * v.error;
    }
  }
  double rerr = 0.0;
  auto r = ev.rtf_direct(eps, opt, &rerr);
  const double e = std::numbers::e;
  const double C = std::pow((sigma + 1) / e, sigma + 1) * m.ell() *
                   std::pow((1.0 + eps) / e, 1.0 + eps);
  BoundCheck out;
  out.lhs = lhs;
  out.rhs = (C / eps) * r.real();
  out.holds = out.lhs <= out.rhs + 4.0 * (lerr + (C / eps) * rerr) + 1e-12;
  return out;
}

RemarkCheck small_codim_identity(const model::ProjectiveModel& m,
                                 const model::Section& f, int sigma,
                                 int chart, double eps,
                                 const EvalOptions& opt) {
  auto ev = Evaluator::build(m, f, f, sigma, Evaluator::CellMode::All);
  RemarkCheck out;
  int sp = -1;
  ValueErr lhs, rhs;
  for (auto& A : ev.atoms) {
    if (A.chart != chart) continue;
    if (A.lc_count == 0 || A.full_codim)
      throw ResidueError(
          "small_codim_identity: chart must have 1 <= sigma' < sigma");
    if (sp < 0) sp = A.lc_count;
    if (sp != A.lc_count)
      throw ResidueError("small_codim_identity: mixed sigma' on the chart");
    // lhs: A(eps) + eps sum_s prod (k+eps) sym^s(1/(sigma-sigma'),...,1/(sigma-1)) A(s+eps)
    std::vector<Rational> xs;
    for (int k = sigma - sp; k <= sigma - 1; ++k) xs.emplace_back(1, k);
    ValueErr acc = detail::eval_piece(A.direct, eps, opt);
    for (int s = 1; s <= sp; ++s) {
      double c = eps;
      for (int k = 1; k <= s - 1; ++k) c *= (k + eps);
      c *= sym_elementary(xs, s).to_double();
      acc += c * detail::eval_piece(A.direct, s + eps, opt);
    }
    lhs += ValueErr{A.coeff.real() * acc.value, std::abs(A.coeff) * acc.error};
    // rhs: kernel assembly of the chain run on the atom's cells
    ValueErr racc;
    for (auto& st : A.stage_cells) {
      std::vector<std::pair<double, const detail::Piece*>> ks;
      detail::collect_kernels(*st, 1.0, ks);
      for (auto& [w, piece] : ks) racc += w * detail::eval_piece(*piece, eps, opt);
    }
    for (auto& p : A.plain_cells) {
      ValueErr acc2 = detail::eval_piece(p, eps, opt);
      for (int s = 1; s <= sp; ++s) {
        double c = eps;
        for (int k = 1; k <= s - 1; ++k) c *= (k + eps);
        c *= sym_elementary(xs, s).to_double();
        acc2 += c * detail::eval_piece(p, s + eps, opt);
      }
      racc += acc2;
    }
    rhs += ValueErr{A.coeff.real() * racc.value, std::abs(A.coeff) * racc.error};
  }
  if (sp < 0)
    throw ResidueError("small_codim_identity: no contributing atoms on chart");
  out.sigma_prime = sp;
  out.lhs = lhs.value;
  out.lhs_err = lhs.error;
  out.rhs = rhs.value;
  out.rhs_err = rhs.error;
  return out;
}

// ------------------------------------------------------------ profiles

std::vector<double> default_eps_grid() {
  return {0.05, 0.1, 0.2, 0.25, 0.4, 0.5, 1.0, 2.0};
}

ResidueProfile profile(const model::ProjectiveModel& m,
                       const model::Section& f, const std::string& name,
                       int sigma, const std::vector<double>& grid,
                       const EvalOptions& opt) {
  ResidueProfile p;
  p.section = name;
  p.sigma = sigma;
  p.b = m.b();
  p.points.resize(grid.size());
  auto ev = Evaluator::build(m, f, f, sigma, Evaluator::CellMode::None);
  EvalOptions inner = opt;
  inner.parallel = false;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (opt.parallel)
#endif
  for (int i = 0; i < (int)grid.size(); ++i) {
    double err = 0.0;
    auto v = ev.rtf_direct(grid[i], inner, &err);
    p.points[i] = {grid[i], v.real(), err};
  }
  return p;
}

void write_profile_csv(std::ostream& os, const ResidueProfile& p) {
  os << "epsilon,value,error,sigma,b,section\n";
  char buf[256];
  for (const auto& pt : p.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d,%.17g,%s\n", pt.eps,
                  pt.value, pt.error, p.sigma, p.b, p.section.c_str());
    os << buf;
  }
}

double extrapolate_to_zero(const std::vector<double>& eps,
                           const std::vector<double>& vals) {
  if (eps.size() != vals.size() || eps.empty())
    throw ResidueError("extrapolate_to_zero: bad sample arrays");
  // Lagrange interpolation evaluated at 0
  double acc = 0.0;
  for (size_t i = 0; i < eps.size(); ++i) {
    double li = 1.0;
    for (size_t j = 0; j < eps.size(); ++j) {
      if (i == j) continue;
      li *= (0.0 - eps[j]) / (eps[i] - eps[j]);
    }
    acc += vals[i] * li;
  }
  return acc;
}

}  // namespace lcnorm::residue
