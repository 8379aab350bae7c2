#pragma once

#include <complex>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lcnorm/expr.hpp"

namespace lcnorm::model {

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& m) : std::runtime_error(m) {}
};

// Polynomial section of K otimes O(d) in inhomogeneous coordinates on U_0,
// stored as monomial exponent vector -> complex coefficient.
struct Section {
  int n = 0;
  std::map<std::vector<int>, std::complex<double>> terms;

  int degree() const;
  Section& add_term(std::vector<int> a, std::complex<double> c);
};

// psi = sum_j w_j log|X_j/X_0|^2 - T log(1 + sum |x_j|^2) + offset
struct PsiSpec {
  std::vector<std::pair<int, double>> log_terms;  // (j >= 1, w_j)
  double log1p_coeff = 0.0;                       // T
  double offset = 0.0;
};

// One cell of the verified subdomain decomposition of a chart box, in
// u = r^2 coordinates. An empty chain means no ordering constraint;
// otherwise u_{chain[0]} < u_{chain[1]} < ... holds on the cell.
struct ChartCell {
  std::vector<std::pair<double, double>> u_bounds;
  std::vector<int> chain;
};

// Local snc presentation of the weights on one chart box: the closed unit
// polydisc (inside the polyradius-2 coordinate polydisc) with
//   psi   = sum nu_j log|z_j|^2 + alpha,
//   phi~L = sum c_j log|z_j|^2 + beta.
// lc directions (nu_j > 0) come with the sign condition
// 1 + (r_j / 2 nu_j) d(alpha)/dr_j > 0 verified per cell.
struct SncChart {
  int n = 0;
  int chart = 0;                  // which U_k
  std::vector<int> coord_label;   // global coordinate index per local axis
  int j_S = 0;                    // number of lc directions
  std::vector<int> lc_dirs;       // local axes with nu > 0
  std::vector<double> nu;         // per local axis
  std::vector<double> c;          // phi~_L log coefficients (zero here)
  std::vector<double> klt;        // klt exponents of the reference density
  Expr alpha;                     // smooth remainder of psi
  Expr beta;                      // smooth remainder of phi~_L
  double b = 1.0;                 // normalization, l = e^b
  std::vector<ChartCell> cells;   // verified decomposition

  // 1 + (r_j / 2 nu_j) d(alpha)/dr_j as an expression, for lc axis j
  Expr sign_factor(int axis) const;
};

struct LcCentre {
  std::vector<int> axes;  // 1-based positions among the lc directions
  int chart = 0;
};

std::vector<LcCentre> lc_centres(const SncChart& chart, int sigma_prime);

class ProjectiveModel {
 public:
  ProjectiveModel(int n, int degree, double phi_offset, PsiSpec psi, double b);

  static ProjectiveModel from_file(const std::string& path);
  static ProjectiveModel from_text(const std::string& text,
                                   const std::string& origin = "<string>");

  int n() const { return n_; }
  int degree() const { return d_; }
  int section_degree_bound() const { return d_ - n_ - 1; }
  double phi_offset() const { return phi_offset_; }
  double psi_offset() const { return psi_.offset; }
  double b() const { return b_; }
  double ell() const { return std::exp(b_); }
  const PsiSpec& psi_spec() const { return psi_; }
  std::optional<int> default_sigma() const { return default_sigma_; }

  // homogeneous psi weights w_0..w_n with w_0 = T - sum_{j>=1} w_j
  const std::vector<double>& hom_weights() const { return w_; }
  double log1p_coeff() const { return psi_.log1p_coeff; }
  std::vector<int> s_components() const;
  int sigma_mlc() const;

  double sup_psi() const;
  double inf_abs_psi() const { return -sup_psi(); }

  double psi_eval(int chart, std::span<const std::complex<double>> pt) const;
  double phiL_eval(int chart, std::span<const std::complex<double>> pt) const;

  ProjectiveModel normalized(double b) const;

  // copy with the normalization constant replaced (l = e^b); unlike
  // normalized() this allows any b >= 0 with e^b |psi| > 1
  ProjectiveModel with_b(double b) const;

  SncChart localize(int chart, double lc_split = 0.5) const;

  const std::map<std::string, Section>& sections() const { return sections_; }
  const Section& section(const std::string& name) const;
  void add_section(const std::string& name, Section s);

  // chart transfer: local monomial exponents (per local axis) -> |coeff|^2
  // pairs preserved; returns exponent vector over chart-local axes
  std::map<std::vector<int>, std::complex<double>> chart_coefficients(
      const Section& s, int chart) const;

  // validation: psi < 0, |l psi| > 1, first-jumping-number diagnostic
  void validate() const;

 private:
  int n_, d_;
  double phi_offset_;
  PsiSpec psi_;
  double b_;
  std::vector<double> w_;
  std::map<std::string, Section> sections_;
  std::optional<int> default_sigma_;
};

}  // namespace lcnorm::model
