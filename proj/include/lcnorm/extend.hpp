#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lcnorm/model.hpp"
#include "lcnorm/residue.hpp"

namespace lcnorm::extend {

class ExtendError : public std::runtime_error {
 public:
  explicit ExtendError(const std::string& m) : std::runtime_error(m) {}
};

using Basis = std::vector<std::pair<std::string, model::Section>>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

// Gram matrix [<f_j, f_k>(eps)[sigma]]; eps = 0 routes to the lc-measure
// polarization. Every entry is computed independently, so hermiticity is
// a meaningful check on the quadrature rather than a construction.
Matrix gram(const model::ProjectiveModel& m, const Basis& basis, int sigma,
            double eps, const residue::EvalOptions& opt = {});

struct GramPair {
  std::vector<std::string> labels;
  Matrix g0, g1;
  int sigma = 1;
  double b = 1.0;
};

GramPair gram_pair(const model::ProjectiveModel& m, const Basis& basis,
                   int sigma, const residue::EvalOptions& opt = {});

// H[sigma] = numerical kernel of G0; E = G1-orthogonal complement.
// Columns are coefficient vectors in the given basis.
struct Decomposition {
  Matrix h;  // basis of H[sigma]
  Matrix e;  // basis of E
};

Decomposition decompose(const model::ProjectiveModel& m, const Basis& basis,
                        int sigma, const residue::EvalOptions& opt = {},
                        double kernel_rel_threshold = 1e-8);

// The unique F in E with F = f mod H[sigma], minimizing <.,.>(1)[sigma]
// over all extensions; returned as a coefficient vector in the basis.
Vector minimal_extension(const model::ProjectiveModel& m, const Basis& basis,
                         const Vector& target_coeffs, int sigma,
                         const residue::EvalOptions& opt = {});

model::Section section_from_coeffs(const Basis& basis, const Vector& coeffs);

// A <= B in the Loewner order up to tol: min eig(B - A) >= -tol.
bool loewner_leq(const Matrix& a, const Matrix& b, double tol);

struct CminReport {
  bool found = false;
  double b_star = 0.0;
  double gap_eigenvalue = 0.0;  // min eig(I - G1^Phi) at b_star
  int iterations = 0;
  bool monotone_validated = true;
};

// Smallest b in [b_lo, b_hi] (bisection to 1e-3) such that, with the
// E-basis orthonormalized against G0, G1(b) <= I in the Loewner order.
CminReport find_cmin(const model::ProjectiveModel& m, const Basis& basis,
                     int sigma, double b_lo, double b_hi,
                     const residue::EvalOptions& opt = {});

// Inductive extension driver over sigma = sigma_mlc .. 1: at each level
// splits the remainder into its minimal E-part and reports
// R|F_sigma|(1)[sigma] against R|F_sigma|(0)[sigma].
struct ChainStep {
  int sigma = 1;
  double r1 = 0.0;  // R|F_sigma|(1)[sigma]
  double r0 = 0.0;  // R|F_sigma|(0)[sigma]
  Vector coeffs;
};

std::vector<ChainStep> conjecture_chain(const model::ProjectiveModel& m,
                                        const Basis& basis,
                                        const Vector& target,
                                        const residue::EvalOptions& opt = {});

}  // namespace lcnorm::extend
