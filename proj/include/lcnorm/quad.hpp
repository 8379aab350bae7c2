#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace lcnorm::quad {

struct QuadResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::uint64_t evaluations = 0;
};

class BudgetExceeded : public std::runtime_error {
 public:
  BudgetExceeded(const std::string& m, QuadResult best_so_far)
      : std::runtime_error(m), best(best_so_far) {}
  QuadResult best;
};

// One integration variable with its declared endpoint behaviour.
// The integrand may blow up like (u-lower)^{power0} (power0 > -1,
// possibly times a power of |log(u-lower)|) at the lower endpoint and
// must decay at least like u^{-decay} (decay > 1) when upper is +inf.
struct Dim {
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
  double power0 = 0.0;
  double log_power0 = 0.0;
  double decay = 2.0;
};

struct Integrand {
  int m = 1;
  std::function<double(std::span<const double>)> f;
  std::vector<Dim> dims;
};

struct Options {
  double abs_floor = 1e-12;
  std::uint64_t budget = 100000000;
  bool parallel = true;
  int outer_panels = 16;
};

// Iterated (dimension-by-dimension) adaptive Gauss-Kronrod integration
// after per-dimension variable changes derived from the declared
// exponents. Deterministic for fixed tolerance; the parallel path
// pre-splits the outermost dimension into fixed panels and reduces in
// fixed order, so results are identical to the serial path.
QuadResult integrate(const Integrand& g, double rel_tol,
                     const Options& opt = {});

// Plain Monte-Carlo with the same per-dimension importance maps used by
// integrate(). Reproducible for a fixed seed independent of threading.
QuadResult mc_estimate(const Integrand& g, std::uint64_t samples,
                       std::uint64_t seed, bool parallel = true);

// 1D adaptive Gauss-Kronrod 7-15 core on a finite interval, reused by
// the residue machinery.
struct Gk1d {
  double value = 0.0;
  double error = 0.0;
  std::uint64_t evaluations = 0;
  bool converged = true;
};
Gk1d gk_adaptive(const std::function<double(double)>& f, double a, double b,
                 double rel_tol, double abs_tol,
                 std::uint64_t max_evals = 2000000);

}  // namespace lcnorm::quad
