#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "lcnorm/model.hpp"
#include "lcnorm/rational.hpp"

namespace lcnorm::residue {

class ResidueError : public std::runtime_error {
 public:
  explicit ResidueError(const std::string& m) : std::runtime_error(m) {}
};

struct ValueErr {
  double value = 0.0;
  double error = 0.0;
  ValueErr& operator+=(const ValueErr& o) {
    value += o.value;
    error += o.error;
    return *this;
  }
  friend ValueErr operator*(double c, const ValueErr& v) {
    return {c * v.value, std::fabs(c) * v.error};
  }
};

struct EvalOptions {
  double rel_tol = 1e-7;
  double abs_floor = 1e-12;
  std::uint64_t budget = 100000000;
  bool parallel = true;
};

// Residue function R_f(eps)[sigma] for eps > 0, computed after torus
// reduction as radial integrals over the unit-polydisc decomposition of
// projective space.
ValueErr rtf(const model::ProjectiveModel& m, const model::Section& f,
             int sigma, double eps, const EvalOptions& opt = {});

// Analytic continuation of eps -> R_f(eps)[sigma] through the
// integration-by-parts identity; defined for every real eps.
ValueErr rtf_continued(const model::ProjectiveModel& m,
                       const model::Section& f, int sigma, double eps,
                       const EvalOptions& opt = {});

// Right-hand side of the recursion identity
//   rtf(eps) + eps sum_s prod_k (k+eps) sym^s rtf(s+eps) = rhs(eps),
// assembled from the boundary-free kernels of the integration-by-parts
// chain; finite for every real eps.
ValueErr recursion_rhs(const model::ProjectiveModel& m,
                       const model::Section& f, int sigma, double eps,
                       const EvalOptions& opt = {});

// Left-hand side of the same identity from direct quadrature (eps > 0).
ValueErr recursion_lhs(const model::ProjectiveModel& m,
                       const model::Section& f, int sigma, double eps,
                       const EvalOptions& opt = {});

// lc-measure squared norm: the closed-form value of R_f(0)[sigma].
ValueErr lc_measure_norm(const model::ProjectiveModel& m,
                         const model::Section& f, int sigma,
                         const EvalOptions& opt = {});

// Hermitian pairings <f,g>(eps)[sigma]; eps = 0 routes to the lc-measure
// polarization. Exact torus reduction: only shared monomials contribute.
std::complex<double> pairing(const model::ProjectiveModel& m,
                             const model::Section& f,
                             const model::Section& g, int sigma, double eps,
                             const EvalOptions& opt = {});

// sym^s(1, 1/2, ..., 1/(sigma-1)); sym^0 = 1
Rational sym_coeff(int sigma, int s);

struct SymTable {
  int sigma = 1;
  std::vector<Rational> coeffs;  // index s = 0..sigma-1
  static SymTable make(int sigma);
};

// general sym^s(x_1..x_m) over exact rationals
Rational sym_elementary(const std::vector<Rational>& xs, int s);

// x^eps |log x|^s <= s^s / (e^s eps^s) on (0,1]; returns (lhs, rhs)
std::pair<double, double> xlogx_bound(double x, double eps, double s);

struct BoundCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

// Smooth-weight comparison: Int |f|^2 e^{-phi_sm} <= (C/eps) rtf(eps)
// with C = ((sigma+1)/e)^{sigma+1} * l * ((1+eps)/e)^{1+eps}, under the
// normalisation phi_L - phi_sm <= 0 (phi_sm := phi_L here, which is
// smooth for these models).
BoundCheck smooth_weight_bound_check(const model::ProjectiveModel& m,
                                     const model::Section& f, int sigma,
                                     double eps, const EvalOptions& opt = {});

// Small-codimension identity on one chart with lc^sigma intersecting the
// chart box trivially (sigma' = j_S < sigma): checks the variant with
// coefficients sym^s(1/(sigma-sigma'), ..., 1/(sigma-1)).
struct RemarkCheck {
  double lhs = 0.0, rhs = 0.0;
  double lhs_err = 0.0, rhs_err = 0.0;
  int sigma_prime = 0;
};
RemarkCheck small_codim_identity(const model::ProjectiveModel& m,
                                 const model::Section& f, int sigma,
                                 int chart, double eps,
                                 const EvalOptions& opt = {});

struct ProfilePoint {
  double eps = 0.0;
  double value = 0.0;
  double error = 0.0;
};

struct ResidueProfile {
  std::string section;
  int sigma = 1;
  double b = 1.0;
  std::vector<ProfilePoint> points;
};

std::vector<double> default_eps_grid();

ResidueProfile profile(const model::ProjectiveModel& m,
                       const model::Section& f, const std::string& name,
                       int sigma, const std::vector<double>& grid,
                       const EvalOptions& opt = {});

// CSV schema: epsilon,value,error,sigma,b,section
void write_profile_csv(std::ostream& os, const ResidueProfile& p);

// polynomial extrapolation of samples (eps_i, v_i) to eps = 0
double extrapolate_to_zero(const std::vector<double>& eps,
                           const std::vector<double>& vals);

}  // namespace lcnorm::residue
