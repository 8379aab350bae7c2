#include "residue_internal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lcnorm::residue::detail {

namespace {

double binom(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * double(n - k + i) / double(i);
  return r;
}

// Tint(kappa, B) = Int_0^inf e^{-kappa s} (B + s)^{-tau} ds, analytic in B
// on the narrow range the corner blocks produce; cached per (tau, b) as a
// Chebyshev interpolant per kappa.
struct TailQuadCache {
  double tau = 0.0;
  double lo = 0.0, hi = 1.0;  // B-domain
  static constexpr int N = 48;
  std::map<int, std::vector<double>> cheb;

  static double raw(int kappa, double B, double tau) {
    const double smax = (45.0 + 12.0 * std::max(0.0, -tau)) / kappa + 5.0;
    auto f = [&](double s) {
      return std::exp(-kappa * s) * std::pow(B + s, -tau);
    };
    auto r = quad::gk_adaptive(f, 0.0, smax, 1e-12, 1e-300, 400000);
    return r.value;
  }

  double eval(int kappa, double B) {
    if (B < lo || B > hi) return raw(kappa, B, tau);
    auto it = cheb.find(kappa);
    if (it == cheb.end()) {
      std::vector<double> fv(N), c(N);
      for (int j = 0; j < N; ++j) {
        const double x = std::cos(std::numbers::pi * (j + 0.5) / N);
        fv[j] = raw(kappa, 0.5 * (lo + hi) + 0.5 * (hi - lo) * x, tau);
      }
      for (int k = 0; k < N; ++k) {
        double s = 0.0;
        for (int j = 0; j < N; ++j)
          s += fv[j] * std::cos(std::numbers::pi * k * (j + 0.5) / N);
        c[k] = 2.0 * s / N;
      }
      it = cheb.emplace(kappa, std::move(c)).first;
    }
    const auto& c = it->second;
    const double x = (2.0 * B - lo - hi) / (hi - lo);
    double b0 = 0.0, b1 = 0.0;
    for (int k = N - 1; k >= 1; --k) {
      const double t = 2.0 * x * b0 - b1 + c[k];
      b1 = b0;
      b0 = t;
    }
    return x * b0 - b1 + 0.5 * c[0];
  }
};

// F_k(Y) = Int_Y^inf y^{-q} (b + log y)^{-tau} (y-Y)^{k-1}/(k-1)! dy.
// Needs k <= q and tau > 1 when k == q (the borderline case, closed form
// for the leading term).
double tail_Fk(double Y, int k, int q, double tau, double b,
               TailQuadCache& cache) {
  if (k > q) throw ResidueError("divergent corner block (k > q)");
  if (Y <= 1.0) throw ResidueError("tail function needs Y > 1");
  const double B = b + std::log(Y);
  double fact = 1.0;
  for (int i = 2; i <= k - 1; ++i) fact *= i;
  double total = 0.0;
  for (int i = 0; i <= k - 1; ++i) {
    const int kappa = q - 1 - i;
    double Ti;
    if (kappa == 0) {
      if (tau <= 1.0 + 1e-14)
        throw ResidueError(
            "borderline corner requires a positive epsilon (tau > 1)");
      Ti = std::pow(B, 1.0 - tau) / (tau - 1.0);
    } else {
      // Int_Y^inf y^{i-q}(...) dy = Y^{i-q+1} Tint(kappa, B)
      Ti = std::pow(Y, double(i - q + 1)) * cache.eval(kappa, B);
    }
    double sign = ((k - 1 - i) % 2 == 0) ? 1.0 : -1.0;
    double c = binom(k - 1, i) * sign * std::pow(Y, double(k - 1 - i)) / fact;
    total += c * Ti;
  }
  return total;
}

}  // namespace

std::vector<Interval> Piece::hull() const {
  std::vector<Interval> box(nax, Interval::point(0.0));
  // resolve constant hulls; var-bounded axes inherit the target's hull,
  // processed until stable
  std::vector<double> hi(nax, 1.0);
  for (int pass = 0; pass < nax + 2; ++pass) {
    for (int j = 0; j < nax; ++j) {
      if (bind_var[j] >= 0) { hi[j] = hi[bind_var[j]]; continue; }
      if (!std::isnan(bind_const[j])) { hi[j] = bind_const[j] * bind_const[j]; continue; }
      double h = dims[j].u_hi;
      if (dims[j].hi_var >= 0) h = std::min(1.0, hi[dims[j].hi_var]);
      hi[j] = h;
    }
  }
  for (int j = 0; j < nax; ++j) {
    if (!std::isnan(bind_const[j]) && bind_var[j] < 0)
      box[j] = Interval::point(bind_const[j]);
    else
      box[j] = Interval(0.0, std::sqrt(hi[j]));
  }
  return box;
}

double Piece::u_hi_resolved(int axis) const {
  double h = dims[axis].u_hi;
  int hv = dims[axis].hi_var;
  int guard = 0;
  while (hv >= 0 && guard++ <= nax) {
    h = std::min(h, dims[hv].u_hi);
    hv = dims[hv].hi_var;
  }
  return h;
}

// ------------------------------------------------------------ regions

namespace {

struct RegionEval {
  const Piece& P;
  double tau;
  const EvalOptions& opt;
  TailQuadCache& tails;
  std::uint32_t deep = 0;  // bit per axis
  std::vector<int> order;       // quadrature axes, outer -> inner
  std::vector<int> deep_order;  // deep axes, chain-min (deepest) first
  std::vector<double> cur;  // per axis: w (Lc), u (PowU), w^r (ResolvedR)
  std::vector<double> rv;   // per axis: current r (0 for deep)
  double last_err = 0.0;    // error estimate of the most recent level() call

  RegionEval(const Piece& p, double tau_, const EvalOptions& o,
             TailQuadCache& tc)
      : P(p), tau(tau_), opt(o), tails(tc), cur(p.nax, 0.0), rv(p.nax, 0.0) {}

  bool is_deep(int axis) const { return (deep >> axis) & 1u; }

  void set_axis(int a, double x) {
    cur[a] = x;
    switch (P.dims[a].kind) {
      case DimKind::Lc: rv[a] = std::exp(-0.5 * x); break;        // w
      case DimKind::PowU: rv[a] = std::sqrt(x); break;            // u
      case DimKind::ResolvedR: rv[a] = std::exp(-x); break;       // w^r
    }
  }

  double abs_psi_partial() const {
    // contributions of all axes whose class is not deep, plus apos with
    // deep classes at r = 0
    double s = P.apos_tape->eval(rv);
    for (int j = 0; j < P.nax; ++j) {
      if (P.dims[j].nu == 0.0) continue;
      int a = P.resolve_axis(j);
      if (a >= 0 && is_deep(a)) continue;
      double r = P.resolve_r(j, rv);
      s += P.dims[j].nu * (-2.0) * std::log(r);
    }
    return s;
  }

  double block_value() const {
    std::vector<double> coeff(P.nax, 0.0);
    for (int a : deep_order) coeff[a] = P.nu_effective(a);
    double C = 0.0, prod = 1.0;
    int k = 0;
    for (int a : deep_order) {
      const double ca = coeff[a];
      prod *= ca;
      ++k;
      // lower limit of w_a: the chain-next if deep, else the threshold
      int next = -1;
      for (auto& [i, j] : P.chain)
        if (i == a) { next = j; break; }
      if (next >= 0 && is_deep(next))
        coeff[next] += ca;
      else
        C += ca * kDeepW;
    }
    const double arg = C + abs_psi_partial();
    return tail_Fk(arg, k, P.q, tau, P.b, tails) / prod;
  }

  double integrand() {
    last_err = 0.0;
    double meas = 1.0;
    for (int j = 0; j < P.nax; ++j) {
      if (!P.dims[j].alive) rv[j] = P.resolve_r(j, rv);
      else if (P.dims[j].kind == DimKind::ResolvedR) meas *= rv[j];
    }
    double F = P.smooth_tape->eval(rv) * meas;
    if (F == 0.0) return 0.0;
    if (!deep_order.empty()) {
      F *= block_value();
    } else if (!P.weightless) {
      const double apsi = abs_psi_partial();
      if (apsi <= 1e-12) throw ResidueError("|psi| vanished on a cell");
      F *= std::pow(apsi, double(-P.q));
      if (tau != 0.0) F *= std::pow(P.b + std::log(apsi), -tau);
    }
    return F;
  }

  double level(size_t idx) {
    if (idx == order.size()) return integrand();
    const int a = order[idx];
    const auto& d = P.dims[a];
    double lo = 0.0, hi = 1.0;
    if (d.kind == DimKind::Lc) {
      lo = -std::log(d.u_hi);
      if (d.hi_var >= 0) {
        int t = P.resolve_axis(d.hi_var);
        if (t >= 0 && P.dims[t].kind == DimKind::Lc)
          lo = std::max(lo, cur[t]);
        else
          lo = std::max(lo, -2.0 * std::log(P.resolve_r(d.hi_var, rv)));
      }
      hi = kDeepW;
    } else if (d.kind == DimKind::PowU) {
      lo = d.u_lo;
      hi = d.u_hi;
      if (d.hi_var >= 0) {
        const double rr = P.resolve_r(d.hi_var, rv);
        hi = std::min(hi, rr * rr);
      }
    } else {  // ResolvedR: w^r over (-log r_hi, max)
      double rhi = std::sqrt(P.u_hi_resolved(a));
      if (d.hi_var >= 0) rhi = std::min(rhi, P.resolve_r(d.hi_var, rv));
      if (rhi <= 0.0) { last_err = 0.0; return 0.0; }
      lo = -std::log(rhi);
      hi = kResolvedWMax;
    }
    if (lo >= hi) {
      last_err = 0.0;
      return 0.0;
    }
    double max_inner = 0.0;
    auto f = [&](double x) {
      set_axis(a, x);
      const double v = level(idx + 1);
      max_inner = std::max(max_inner, last_err);
      return v;
    };
    auto r = quad::gk_adaptive(f, lo, hi, opt.rel_tol * 0.05,
                               opt.abs_floor * 1e-3, 400000);
    last_err = r.error + max_inner * (hi - lo);
    return r.value;
  }

  ValueErr run() {
    const double v = level(0);
    return {v, last_err};
  }
};

}  // namespace

ValueErr eval_piece(const Piece& P, double zeta, const EvalOptions& opt) {
  P.make_tapes();
  const double pref = P.eps_pref ? zeta : 1.0;
  if (pref == 0.0) return {0.0, 0.0};
  const double tau = P.weightless ? 0.0 : (P.eps_pref ? 1.0 + zeta : zeta);

  std::vector<int> live_lc, live_other;
  for (int j = 0; j < P.nax; ++j) {
    if (!P.dims[j].alive) continue;
    (P.dims[j].kind == DimKind::Lc ? live_lc : live_other).push_back(j);
  }

  TailQuadCache tails;
  tails.tau = tau;
  tails.lo = P.b + 2.0;
  tails.hi = P.b + 18.0;

  ValueErr total;
  const size_t nmasks = size_t(1) << live_lc.size();
  for (size_t mask = 0; mask < nmasks; ++mask) {
    std::uint32_t deep = 0;
    for (size_t i = 0; i < live_lc.size(); ++i)
      if (mask & (size_t(1) << i)) deep |= (1u << live_lc[i]);

    // down-closed along chains: u_i < u_j and j deep forces i deep
    bool ok = true;
    for (auto& [i, j] : P.chain) {
      bool jd = (deep >> j) & 1u, id = (deep >> i) & 1u;
      if (jd && !id &&
          std::find(live_lc.begin(), live_lc.end(), i) != live_lc.end()) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    RegionEval re(P, tau, opt, tails);
    re.deep = deep;

    // drop regions whose non-lc bounds collapse against a deep axis
    bool drop = false;
    for (int j = 0; j < P.nax; ++j) {
      if (!P.dims[j].alive || ((deep >> j) & 1u)) continue;
      int hv = P.dims[j].hi_var;
      if (hv >= 0) {
        int t = P.resolve_axis(hv);
        if (t >= 0 && ((deep >> t) & 1u)) drop = true;
      }
    }
    // chain pairs forcing a shallow PowU dim under a deep one
    for (auto& [i, j] : P.chain) {
      if (((deep >> j) & 1u) && P.dims[i].alive &&
          P.dims[i].kind == DimKind::PowU)
        drop = true;
    }
    if (drop) {
      total.error += std::exp(-0.5 * kDeepW);
      continue;
    }

    // quadrature order: dims whose bounds are referenced come first
    std::vector<int> rest;
    for (int j : live_lc)
      if (!((deep >> j) & 1u)) rest.push_back(j);
    for (int j : live_other) rest.push_back(j);
    // dependency edges: x depends on hi_var target
    std::vector<int> ord;
    std::vector<bool> placed(P.nax, false);
    bool progress = true;
    while (ord.size() < rest.size() && progress) {
      progress = false;
      for (int j : rest) {
        if (placed[j]) continue;
        int hv = P.dims[j].hi_var;
        int t = hv >= 0 ? P.resolve_axis(hv) : -1;
        bool ready = (t < 0) || ((deep >> t) & 1u) || placed[t] ||
                     std::find(rest.begin(), rest.end(), t) == rest.end();
        if (ready) {
          ord.push_back(j);
          placed[j] = true;
          progress = true;
        }
      }
    }
    if (ord.size() < rest.size())
      throw ResidueError("cyclic bound dependency in cell");
    re.order = ord;

    // deep processing order: chain-min first within chains
    std::vector<int> dd;
    for (int j : live_lc)
      if ((deep >> j) & 1u) dd.push_back(j);
    std::vector<int> dord;
    std::vector<bool> used(P.nax, false);
    while (dord.size() < dd.size()) {
      bool any = false;
      for (int j : dd) {
        if (used[j]) continue;
        bool blocked = false;
        for (auto& [i, jj] : P.chain)
          if (jj == j && ((deep >> i) & 1u) && !used[i]) blocked = true;
        if (!blocked) {
          dord.push_back(j);
          used[j] = true;
          any = true;
        }
      }
      if (!any) throw ResidueError("cyclic chain order");
    }
    re.deep_order = dord;

    total += re.run();
  }
  return {pref * total.value, std::fabs(pref) * total.error};
}

// -------------------------------------------------------------- stages

void Stage::build() {
  if (built) return;
  built = true;
  Piece& P = piece;

  // chain-minimal live lc axis (never the second element of a pair)
  int axis = -1;
  for (int j = 0; j < P.nax && axis < 0; ++j) {
    if (!P.dims[j].alive || P.dims[j].kind != DimKind::Lc) continue;
    bool second = false;
    for (auto& [i, jj] : P.chain)
      if (jj == j && P.dims[i].alive && P.dims[i].kind == DimKind::Lc)
        second = true;
    if (!second) axis = j;
  }
  if (axis < 0) return;  // no live lc direction: terminal
  ibp_axis = axis;

  const double nueff = P.nu_effective(axis);
  Expr D = Expr::constant(1.0) -
           (Expr::var(axis) / Expr::constant(2.0 * nueff)) *
               P.class_diff(P.apos, axis);
  {
    auto box = P.hull();
    // verify the sign factor with the chain constraints of this cell
    std::vector<Interval> b2 = box;
    if (!verify_positive_chained(D, b2, P.chain, 16))
      throw SubdivisionRequired(
          "sign factor 1 + (r/2nu) d(alpha)/dr not verifiably positive; "
          "the cell needs further subdivision");
  }
  Expr G = P.smooth / (Expr::constant(nueff) * D);

  const int q = P.q;
  const auto& dm = P.dims[axis];

  auto make_face = [&](Piece& np) {
    np = P;
    np.smooth_tape.reset();
    np.apos_tape.reset();
    np.q = q - 1;
    np.smooth = G;
    np.dims[axis].alive = false;
    if (dm.hi_var >= 0) {
      const int tgt = dm.hi_var;
      np.bind_var[axis] = tgt;
      std::vector<std::pair<int, int>> nc;
      for (auto pr : np.chain) {
        if (pr.first == axis && pr.second == tgt) continue;  // the face itself
        if (pr.second == axis) pr.second = tgt;
        if (pr.first == axis) pr.first = tgt;
        if (pr.first != pr.second) nc.push_back(pr);
      }
      np.chain = nc;
    } else {
      np.bind_const[axis] = std::sqrt(dm.u_hi);
      std::vector<std::pair<int, int>> nc;
      for (auto pr : np.chain) {
        if (pr.second == axis) {
          // u_x < u_axis = const: tighten x's constant bound
          np.dims[pr.first].u_hi = std::min(np.dims[pr.first].u_hi, dm.u_hi);
          np.dims[pr.first].hi_var = -1;
          continue;
        }
        if (pr.first == axis) continue;
        nc.push_back(pr);
      }
      np.chain = nc;
    }
  };

  auto make_main = [&](Piece& np) {
    np = P;
    np.smooth_tape.reset();
    np.apos_tape.reset();
    np.q = q - 1;
    np.smooth = P.class_diff(G, axis);
    np.dims[axis].kind = DimKind::ResolvedR;
    std::vector<std::pair<int, int>> nc;
    for (auto pr : np.chain)
      if (pr.first != axis && pr.second != axis) nc.push_back(pr);
    np.chain = nc;
  };

  if (q >= 2) {
    const double w = 1.0 / double(q - 1);
    {
      Child c;
      c.weight = +w;
      c.stage = std::make_unique<Stage>();
      make_face(c.stage->piece);
      children.push_back(std::move(c));
    }
    {
      Child c;
      c.weight = -w;
      c.stage = std::make_unique<Stage>();
      make_main(c.stage->piece);
      children.push_back(std::move(c));
    }
  } else {  // q == 1: kernels with L^{-zeta}
    {
      Kern kf;
      kf.weight = +1.0;
      make_face(kf.piece);
      kf.piece.q = 0;
      kf.piece.eps_pref = false;
      kernels.push_back(std::move(kf));
    }
    {
      Kern km;
      km.weight = -1.0;
      make_main(km.piece);
      km.piece.q = 0;
      km.piece.eps_pref = false;
      kernels.push_back(std::move(km));
    }
  }
}

ValueErr eval_stage(Stage& S, int shift, StageCtx& ctx) {
  const double zeta = ctx.base_eps + shift;
  const auto key = std::make_pair((const Stage*)&S, shift);
  if (auto it = ctx.memo.find(key); it != ctx.memo.end()) return it->second;
  ValueErr out;
  if (zeta > 1.0 || !S.has_live_lc()) {
    out = eval_piece(S.piece, zeta, ctx.opt);
  } else {
    S.build();
    const int q = S.piece.q;
    if (q >= 2) {
      ValueErr up = eval_stage(S, shift + 1, ctx);
      out += (-zeta / double(q - 1)) * up;
    }
    for (auto& c : S.children) out += c.weight * eval_stage(*c.stage, shift, ctx);
    for (auto& k : S.kernels) {
      const auto kk = std::make_pair((const Piece*)&k.piece, shift);
      auto kit = ctx.kernel_memo.find(kk);
      if (kit == ctx.kernel_memo.end())
        kit = ctx.kernel_memo.emplace(kk, eval_piece(k.piece, zeta, ctx.opt)).first;
      out += k.weight * kit->second;
    }
  }
  ctx.memo[key] = out;
  return out;
}

void collect_kernels(Stage& S, double weight,
                     std::vector<std::pair<double, const Piece*>>& out) {
  if (!S.has_live_lc()) {
    out.emplace_back(weight, &S.piece);
    return;
  }
  S.build();
  for (auto& c : S.children) collect_kernels(*c.stage, weight * c.weight, out);
  for (auto& k : S.kernels) out.emplace_back(weight * k.weight, &k.piece);
}

// --------------------------------------------------------------- atoms

double paper_coeff(int sigma, int s, double eps) {
  double prod = eps;
  for (int k = 1; k <= s - 1; ++k) prod *= (k + eps);
  return prod * sym_coeff(sigma, s).to_double();
}

namespace {

Piece base_piece(const model::SncChart& sc, const model::ProjectiveModel& m,
                 const std::vector<int>& expo) {
  Piece P;
  P.nax = sc.n;
  P.dims.assign(sc.n, {});
  P.bind_var.assign(sc.n, -1);
  P.bind_const.assign(sc.n, std::numeric_limits<double>::quiet_NaN());
  const double T = m.log1p_coeff();
  const double dd = m.degree();
  const double pexp = T - dd;
  if (std::fabs(pexp - std::llround(pexp)) > 1e-9)
    throw ResidueError("non-integer density exponent unsupported");
  Expr one_plus = Expr::constant(1.0) + Expr::r2sum();
  Expr smooth = Expr::constant(std::exp(-(m.phi_offset() + m.psi_offset()))) *
                one_plus.ipow(std::llround(pexp));
  for (int j = 0; j < sc.n; ++j) {
    const int w = (int)std::llround(sc.nu[j]);
    const int e = expo[j] - w;
    P.dims[j].nu = sc.nu[j];
    if (e >= 1) smooth = smooth * Expr::var(j).ipow(2LL * e);
    P.dims[j].kind = (e == -1) ? DimKind::Lc : DimKind::PowU;
  }
  P.smooth = smooth;
  P.apos = Expr::constant(T) * Expr::log(one_plus) +
           Expr::constant(-m.psi_offset());
  P.b = m.b();
  P.eps_pref = true;
  return P;
}

}  // namespace

namespace {

void build_stage_tree(Stage& s) {
  if (!s.has_live_lc()) return;
  s.build();
  for (auto& c : s.children) build_stage_tree(*c.stage);
}

}  // namespace

Evaluator Evaluator::build(const model::ProjectiveModel& m,
                           const model::Section& f, const model::Section& g,
                           int sigma, CellMode cells) {
  if (cells == CellMode::None) return build_at_split(m, f, g, sigma, cells, 0.5);
  std::string last;
  for (double split : {0.5, 0.25, 0.125, 0.0625}) {
    try {
      Evaluator ev = build_at_split(m, f, g, sigma, cells, split);
      for (auto& A : ev.atoms)
        for (auto& st : A.stage_cells) build_stage_tree(*st);
      return ev;
    } catch (const SubdivisionRequired& ex) {
      last = ex.what();
    } catch (const model::ModelError& ex) {
      last = ex.what();
    }
  }
  throw SubdivisionRequired(
      "no admissible lc split found down to u = 1/16: " + last);
}

Evaluator Evaluator::build_at_split(const model::ProjectiveModel& m,
                                    const model::Section& f,
                                    const model::Section& g, int sigma,
                                    CellMode cells, double lc_split) {
  if (sigma < 1)
    throw ResidueError("sigma must be a positive integer (the family starts "
                       "at sigma = 1)");
  Evaluator E;
  E.n = m.n();
  E.sigma = sigma;
  E.b = m.b();
  const double pin = std::pow(std::numbers::pi, m.n());

  for (int k = 0; k <= m.n(); ++k) {
    model::SncChart sc = m.localize(k, lc_split);
    auto cf = m.chart_coefficients(f, k);
    auto cg = m.chart_coefficients(g, k);
    for (const auto& [a, ca] : cf) {
      auto it = cg.find(a);
      if (it == cg.end()) continue;
      const std::complex<double> coeff = ca * std::conj(it->second);
      if (coeff == std::complex<double>(0.0, 0.0)) continue;

      Atom A;
      A.chart = k;
      A.coeff = coeff * pin;
      for (int j = 0; j < sc.n; ++j) {
        const int e = a[j] - (int)std::llround(sc.nu[j]);
        if (e <= -1) A.lc_axes.push_back(j);
      }
      A.lc_count = (int)A.lc_axes.size();
      if (A.lc_count > sigma)
        throw ResidueError(
            "R(eps)[sigma] diverges: the section does not vanish on the "
            "lc centres of codimension > sigma meeting chart U_" +
            std::to_string(k));
      A.full_codim = (A.lc_count == sigma);
      for (int j : A.lc_axes) A.nu_product *= sc.nu[j];

      A.direct = base_piece(sc, m, a);
      A.direct.q = sigma;

      // closed-form lc face: lc axes pinned to 0, no weight factors
      A.lc_face = A.direct;
      A.lc_face.q = 0;
      A.lc_face.eps_pref = false;
      A.lc_face.weightless = true;
      for (int j : A.lc_axes) {
        A.lc_face.dims[j].alive = false;
        A.lc_face.bind_const[j] = 0.0;
      }

      const bool want_stages =
          (cells == CellMode::All && A.lc_count >= 1) ||
          (cells == CellMode::FullCodim && A.full_codim);
      if (want_stages) {
        for (const auto& cell : sc.cells) {
          Piece cp = base_piece(sc, m, a);
          cp.q = sigma;
          int active = 0;
          for (int j = 0; j < sc.n; ++j) {
            cp.dims[j].u_lo = cell.u_bounds[j].first;
            cp.dims[j].u_hi = cell.u_bounds[j].second;
            const bool is_lc = cp.dims[j].kind == DimKind::Lc;
            const bool low_half = cell.u_bounds[j].first == 0.0 &&
                                  cell.u_bounds[j].second < 1.0;
            if (is_lc && (!low_half && cell.u_bounds[j].first > 0.0)) {
              // lc direction restricted away from its pole: fold the
              // du/u measure into the smooth factor
              cp.dims[j].kind = DimKind::PowU;
              cp.smooth = cp.smooth * Expr::var(j).ipow(-2);
            } else if (is_lc) {
              ++active;
            }
          }
          for (size_t t = 0; t + 1 < cell.chain.size(); ++t)
            cp.chain.emplace_back(cell.chain[t], cell.chain[t + 1]);
          for (size_t t = 0; t < cell.chain.size(); ++t) {
            int ax = cell.chain[t];
            if (t + 1 < cell.chain.size()) cp.dims[ax].hi_var = cell.chain[t + 1];
          }
          const bool chain_all = want_stages && active == A.lc_count;
          if (chain_all) {
            auto st = std::make_unique<Stage>();
            st->piece = std::move(cp);
            A.stage_cells.push_back(std::move(st));
          } else {
            A.plain_cells.push_back(std::move(cp));
          }
        }
      }
      E.atoms.push_back(std::move(A));
    }
  }
  return E;
}

std::complex<double> Evaluator::rtf_direct(double eps, const EvalOptions& opt,
                                           double* err_out) const {
  std::vector<std::complex<double>> vals(atoms.size());
  std::vector<double> errs(atoms.size(), 0.0);
  std::exception_ptr eptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (opt.parallel)
#endif
  for (int i = 0; i < (int)atoms.size(); ++i) {
    try {
      ValueErr v = eval_piece(atoms[i].direct, eps, opt);
      vals[i] = atoms[i].coeff * v.value;
      errs[i] = std::abs(atoms[i].coeff) * v.error;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!eptr) eptr = std::current_exception();
    }
  }
  if (eptr) std::rethrow_exception(eptr);
  std::complex<double> total;
  double err = 0.0;
  for (size_t i = 0; i < vals.size(); ++i) {
    total += vals[i];
    err += errs[i];
  }
  if (err_out) *err_out = err;
  return total;
}

std::complex<double> Evaluator::rtf_cont(double eps, const EvalOptions& opt,
                                         double* err_out) {
  std::vector<std::complex<double>> vals(atoms.size());
  std::vector<double> errs(atoms.size(), 0.0);
  std::exception_ptr eptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (opt.parallel)
#endif
  for (int i = 0; i < (int)atoms.size(); ++i) {
    try {
      Atom& A = atoms[i];
      ValueErr acc;
      if (A.full_codim) {
        StageCtx ctx;
        ctx.opt = opt;
        ctx.base_eps = eps;
        for (auto& st : A.stage_cells) acc += eval_stage(*st, 0, ctx);
        for (auto& p : A.plain_cells) acc += eval_piece(p, eps, opt);
      } else {
        acc = eval_piece(A.direct, eps, opt);
      }
      vals[i] = A.coeff * acc.value;
      errs[i] = std::abs(A.coeff) * acc.error;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!eptr) eptr = std::current_exception();
    }
  }
  if (eptr) std::rethrow_exception(eptr);
  std::complex<double> total;
  double err = 0.0;
  for (size_t i = 0; i < vals.size(); ++i) {
    total += vals[i];
    err += errs[i];
  }
  if (err_out) *err_out = err;
  return total;
}

std::complex<double> Evaluator::rhs(double eps, const EvalOptions& opt,
                                    double* err_out) {
  std::vector<std::complex<double>> vals(atoms.size());
  std::vector<double> errs(atoms.size(), 0.0);
  std::exception_ptr eptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (opt.parallel)
#endif
  for (int i = 0; i < (int)atoms.size(); ++i) {
    try {
      Atom& A = atoms[i];
      ValueErr acc;
      auto identity_combo = [&](const Piece& p) {
        ValueErr v = eval_piece(p, eps, opt);
        for (int s = 1; s <= sigma - 1; ++s) {
          const double cst = paper_coeff(sigma, s, eps);
          v += cst * eval_piece(p, s + eps, opt);
        }
        return v;
      };
      if (A.full_codim) {
        for (auto& st : A.stage_cells) {
          std::vector<std::pair<double, const Piece*>> ks;
          collect_kernels(*st, 1.0, ks);
          for (auto& [w, piece] : ks) acc += w * eval_piece(*piece, eps, opt);
        }
        for (auto& p : A.plain_cells) acc += identity_combo(p);
      } else {
        acc = identity_combo(A.direct);
      }
      vals[i] = A.coeff * acc.value;
      errs[i] = std::abs(A.coeff) * acc.error;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!eptr) eptr = std::current_exception();
    }
  }
  if (eptr) std::rethrow_exception(eptr);
  std::complex<double> total;
  double err = 0.0;
  for (size_t i = 0; i < vals.size(); ++i) {
    total += vals[i];
    err += errs[i];
  }
  if (err_out) *err_out = err;
  return total;
}

std::complex<double> Evaluator::lc_norm(const EvalOptions& opt,
                                        double* err_out) const {
  double fact = 1.0;
  for (int i = 2; i <= sigma - 1; ++i) fact *= i;
  std::complex<double> total;
  double err = 0.0;
  for (const auto& A : atoms) {
    if (!A.full_codim) continue;
    ValueErr v = eval_piece(A.lc_face, 0.0, opt);
    const double scale = 1.0 / (fact * A.nu_product);
    total += A.coeff * (scale * v.value);
    err += std::abs(A.coeff) * scale * v.error;
  }
  if (err_out) *err_out = err;
  return total;
}

}  // namespace lcnorm::residue::detail
