#include "lcnorm/quad.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lcnorm::quad {

namespace {

// Gauss-Kronrod 7-15 (QUADPACK dqk15 abscissae/weights on [-1,1]).
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
  double a, b;
  double value;
  double error;
};

void gk15(const std::function<double(double)>& f, double a, double b,
          double& value, double& error) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double resg = kWg[3] * fc;
  double resk = kWgk[7] * fc;
  for (int i = 0; i < 7; ++i) {
    const double dx = h * kXgk[i];
    const double fsum = f(c - dx) + f(c + dx);
    resk += kWgk[i] * fsum;
    if (i % 2 == 1) resg += kWg[i / 2] * fsum;
  }
  value = resk * h;
  const double d = std::fabs(resk - resg) * std::fabs(h);
  error = d > 0.0 ? std::min(d, std::pow(200.0 * d, 1.5)) : 0.0;
}

}  // namespace

Gk1d gk_adaptive(const std::function<double(double)>& f, double a, double b,
                 double rel_tol, double abs_tol, std::uint64_t max_evals) {
  Gk1d out;
  if (a == b) return out;
  std::vector<Panel> done;
  std::vector<Panel> work;
  Panel p0{a, b, 0, 0};
  gk15(f, a, b, p0.value, p0.error);
  out.evaluations = 15;
  work.push_back(p0);

  auto total = [&] {
    double v = 0;
    for (auto& p : done) v += p.value;
    for (auto& p : work) v += p.value;
    return v;
  };
  auto total_err = [&] {
    double e = 0;
    for (auto& p : done) e += p.error;
    for (auto& p : work) e += p.error;
    return e;
  };

  while (!work.empty()) {
    const double tol = std::max(abs_tol, rel_tol * std::fabs(total()));
    if (total_err() <= tol) break;
    if (out.evaluations + 30 > max_evals) {
      out.converged = false;
      break;
    }
    // refine the worst panel
    size_t worst = 0;
    for (size_t i = 1; i < work.size(); ++i)
      if (work[i].error > work[worst].error) worst = i;
    Panel p = work[worst];
    work.erase(work.begin() + worst);
    const double eps_w = 1e-15 * (std::fabs(p.a) + std::fabs(p.b)) + 1e-300;
    if (p.b - p.a <= eps_w || p.error <= abs_tol / 64.0) {
      done.push_back(p);
      continue;
    }
    const double mid = 0.5 * (p.a + p.b);
    Panel l{p.a, mid, 0, 0}, r{mid, p.b, 0, 0};
    gk15(f, l.a, l.b, l.value, l.error);
    gk15(f, r.a, r.b, r.value, r.error);
    out.evaluations += 30;
    work.push_back(l);
    work.push_back(r);
  }

  // deterministic final accumulation in position order
  done.insert(done.end(), work.begin(), work.end());
  std::sort(done.begin(), done.end(),
            [](const Panel& x, const Panel& y) { return x.a < y.a; });
  double sum = 0.0, comp = 0.0, err = 0.0;
  for (const auto& p : done) {
    const double y = p.value - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    err += p.error;
  }
  out.value = sum;
  out.error = err;
  return out;
}

namespace {

// Composed map t in (0,1) -> u with jacobian, from the declared endpoint
// data of one dimension.
struct DimMap {
  double lower, upper;
  int mpow;        // t-power handling the lower-endpoint singularity
  int kinf;        // (1-s)-power for the infinite tail, 0 if finite
  double scale;    // (upper-lower) for finite dims

  explicit DimMap(const Dim& d) : lower(d.lower), upper(d.upper) {
    const double p = std::max(d.power0, -0.99);
    mpow = std::max(1, (int)std::ceil(2.0 / (1.0 + p)));
    if (d.log_power0 != 0.0) mpow = std::max(mpow, 3);
    if (std::isinf(d.upper)) {
      const double dec = std::max(d.decay, 1.01);
      kinf = std::max(1, (int)std::ceil(2.0 / (dec - 1.0)));
      scale = 1.0;
    } else {
      kinf = 0;
      scale = d.upper - d.lower;
    }
  }

  // returns u, writes jacobian
  double map(double t, double& jac) const {
    double s = t, ds = 1.0;
    for (int i = 1; i < mpow; ++i) ds *= t;
    s = ds * t;              // s = t^mpow
    ds *= mpow;              // ds = mpow t^{mpow-1}
    if (kinf == 0) {
      jac = scale * ds;
      return lower + scale * s;
    }
    const double omt = 1.0 - s;
    double g = 1.0, dg = 1.0;
    for (int i = 0; i < kinf; ++i) g *= omt;
    // u = lower + s / (1-s)^k ; du/ds = (1 + (k-1) s) / (1-s)^{k+1}
    dg = (1.0 + (kinf - 1.0) * s) / (g * omt);
    jac = ds * dg;
    return lower + s / g;
  }
};

struct IterCtx {
  const Integrand* g;
  std::vector<DimMap> maps;
  double rel_tol;
  Options opt;
  std::atomic<std::uint64_t> evals{0};
  std::atomic<bool> over_budget{false};
};

double iterate_dim(IterCtx& ctx, int depth, std::vector<double>& point,
                   double level_rel, double level_abs, double& err_out);

double inner_value(IterCtx& ctx, int depth, std::vector<double>& point,
                   double t, double level_rel, double level_abs,
                   double& err_out) {
  double jac = 0.0;
  const double u = ctx.maps[depth].map(t, jac);
  point[depth] = u;
  if (depth + 1 == ctx.g->m) {
    err_out = 0.0;
    ctx.evals.fetch_add(1, std::memory_order_relaxed);
    if (ctx.evals.load(std::memory_order_relaxed) > ctx.opt.budget)
      ctx.over_budget.store(true, std::memory_order_relaxed);
    return ctx.g->f(point) * jac;
  }
  double e = 0.0;
  const double v = iterate_dim(ctx, depth + 1, point, level_rel, level_abs, e);
  err_out = e * jac;
  return v * jac;
}

double iterate_dim(IterCtx& ctx, int depth, std::vector<double>& point,
                   double level_rel, double level_abs, double& err_out) {
  double inner_err_max = 0.0;
  auto f1 = [&](double t) -> double {
    double e = 0.0;
    const double v = inner_value(ctx, depth, point, t, level_rel * 0.5,
                                 level_abs * 0.25, e);
    inner_err_max = std::max(inner_err_max, e);
    return v;
  };
  Gk1d r = gk_adaptive(f1, 0.0, 1.0, level_rel, level_abs,
                       ctx.opt.budget);
  err_out = r.error + inner_err_max;
  return r.value;
}

}  // namespace

QuadResult integrate(const Integrand& g, double rel_tol, const Options& opt) {
  if (g.m < 1 || (int)g.dims.size() != g.m)
    throw std::invalid_argument("integrate: dimension mismatch");
  for (const auto& d : g.dims) {
    if (d.power0 <= -1.0)
      throw std::invalid_argument("integrate: endpoint power must be > -1");
    if (std::isinf(d.upper) && d.decay <= 1.0)
      throw std::invalid_argument("integrate: decay at infinity must be > 1");
  }
  IterCtx ctx;
  ctx.g = &g;
  for (const auto& d : g.dims) ctx.maps.emplace_back(d);
  ctx.rel_tol = rel_tol;
  ctx.opt = opt;

  // fixed outermost panels; parallel or serial, identical reduction order
  const int np = std::max(1, opt.outer_panels);
  std::vector<double> pv(np, 0.0), pe(np, 0.0);

  auto run_panel = [&](int i) {
    std::vector<double> point(g.m, 0.0);
    double inner_err_max = 0.0;
    auto f1 = [&](double t) -> double {
      double e = 0.0;
      const double v = inner_value(ctx, 0, point, t, rel_tol * 0.5,
                                   opt.abs_floor * 0.25, e);
      inner_err_max = std::max(inner_err_max, e);
      return v;
    };
    const double a = double(i) / np, b = double(i + 1) / np;
    Gk1d r = gk_adaptive(f1, a, b, rel_tol, opt.abs_floor / np, opt.budget);
    pv[i] = r.value;
    pe[i] = r.error + inner_err_max;
  };

#ifdef _OPENMP
  if (opt.parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < np; ++i) run_panel(i);
  } else
#endif
  {
    for (int i = 0; i < np; ++i) run_panel(i);
  }

  QuadResult out;
  double comp = 0.0;
  for (int i = 0; i < np; ++i) {
    const double y = pv[i] - comp;
    const double t = out.value + y;
    comp = (t - out.value) - y;
    out.value = t;
    out.error_estimate += pe[i];
  }
  out.evaluations = ctx.evals.load();
  if (ctx.over_budget.load())
    throw BudgetExceeded("integrate: evaluation budget exceeded", out);
  return out;
}

QuadResult mc_estimate(const Integrand& g, std::uint64_t samples,
                       std::uint64_t seed, bool parallel) {
  if (g.m < 1 || (int)g.dims.size() != g.m)
    throw std::invalid_argument("mc_estimate: dimension mismatch");
  std::vector<DimMap> maps;
  for (const auto& d : g.dims) maps.emplace_back(d);

  const int nchunks = 256;
  const std::uint64_t per = (samples + nchunks - 1) / nchunks;
  std::vector<double> csum(nchunks, 0.0), csq(nchunks, 0.0);
  std::vector<std::uint64_t> cn(nchunks, 0);

  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };

  auto run_chunk = [&](int c) {
    std::mt19937_64 rng(splitmix(seed + 1) ^ splitmix((std::uint64_t)c * 7919));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> point(g.m, 0.0);
    const std::uint64_t n0 = (std::uint64_t)c * per;
    if (n0 >= samples) return;
    const std::uint64_t n = std::min(per, samples - n0);
    double s = 0.0, s2 = 0.0;
    for (std::uint64_t i = 0; i < n; ++i) {
      double w = 1.0;
      for (int j = 0; j < g.m; ++j) {
        double jac = 0.0;
        double t = uni(rng);
        // avoid the exact endpoints
        t = std::min(std::max(t, 1e-16), 1.0 - 1e-16);
        point[j] = maps[j].map(t, jac);
        w *= jac;
      }
      const double v = g.f(point) * w;
      s += v;
      s2 += v * v;
    }
    csum[c] = s;
    csq[c] = s2;
    cn[c] = n;
  };

#ifdef _OPENMP
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int c = 0; c < nchunks; ++c) run_chunk(c);
  } else
#endif
  {
    for (int c = 0; c < nchunks; ++c) run_chunk(c);
  }

  double sum = 0.0, sumsq = 0.0;
  std::uint64_t n = 0;
  for (int c = 0; c < nchunks; ++c) {
    sum += csum[c];
    sumsq += csq[c];
    n += cn[c];
  }
  QuadResult out;
  out.evaluations = n;
  if (n == 0) return out;
  const double mean = sum / double(n);
  out.value = mean;
  const double var =
      n > 1 ? std::max(0.0, (sumsq - double(n) * mean * mean) / double(n - 1))
            : 0.0;
  out.error_estimate = std::sqrt(var / double(n));
  return out;
}

}  // namespace lcnorm::quad
