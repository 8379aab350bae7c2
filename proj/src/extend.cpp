#include "lcnorm/extend.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>

namespace lcnorm::extend {

Matrix gram(const model::ProjectiveModel& m, const Basis& basis, int sigma,
            double eps, const residue::EvalOptions& opt) {
  const int n = (int)basis.size();
  Matrix g(n, n);
  std::vector<std::pair<int, int>> jobs;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) jobs.emplace_back(i, j);
  std::vector<std::complex<double>> vals(jobs.size());
  residue::EvalOptions inner = opt;
  inner.parallel = false;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (opt.parallel)
#endif
  for (int t = 0; t < (int)jobs.size(); ++t) {
    auto [i, j] = jobs[t];
    vals[t] =
        residue::pairing(m, basis[i].second, basis[j].second, sigma, eps, inner);
  }
  for (size_t t = 0; t < jobs.size(); ++t) g(jobs[t].first, jobs[t].second) = vals[t];
  return g;
}

GramPair gram_pair(const model::ProjectiveModel& m, const Basis& basis,
                   int sigma, const residue::EvalOptions& opt) {
  GramPair p;
  for (auto& [name, s] : basis) {
    (void)s;
    p.labels.push_back(name);
  }
  p.sigma = sigma;
  p.b = m.b();
  p.g0 = gram(m, basis, sigma, 0.0, opt);
  p.g1 = gram(m, basis, sigma, 1.0, opt);
  return p;
}

namespace {

Matrix hermitize(const Matrix& g) { return 0.5 * (g + g.adjoint()); }

Decomposition split_spaces(const Matrix& g0, const Matrix& g1,
                           double kernel_rel_threshold) {
  const int n = (int)g0.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> es0(g0);
  const auto& ev = es0.eigenvalues();
  const double lmax = std::max(ev.maxCoeff(), 0.0);
  const double thr = kernel_rel_threshold * std::max(lmax, 1e-300);

  std::vector<int> ker;
  for (int i = 0; i < n; ++i)
    if (ev(i) < thr) ker.push_back(i);

  Decomposition d;
  d.h.resize(n, (int)ker.size());
  for (int c = 0; c < (int)ker.size(); ++c)
    d.h.col(c) = es0.eigenvectors().col(ker[c]);

  Eigen::SelfAdjointEigenSolver<Matrix> es1(g1);
  const double c1max = es1.eigenvalues().maxCoeff();
  const double c1min = es1.eigenvalues().minCoeff();
  if (!(c1min > 1e-12 * std::max(c1max, 1e-300)))
    throw ExtendError("decompose: G1 is ill-conditioned on the span "
                      "(condition number above 1e12)");
  if (ker.empty()) {
    d.e = Matrix::Identity(n, n);
    return d;
  }
  if ((int)ker.size() == n) {
    d.e.resize(n, 0);
    return d;
  }
  Matrix a = d.h.adjoint() * g1;  // k x n; E = null(a)
  Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullV);
  const int k = (int)ker.size();
  d.e = svd.matrixV().rightCols(n - k);
  return d;
}

}  // namespace

Decomposition decompose(const model::ProjectiveModel& m, const Basis& basis,
                        int sigma, const residue::EvalOptions& opt,
                        double kernel_rel_threshold) {
  Matrix g0 = hermitize(gram(m, basis, sigma, 0.0, opt));
  Matrix g1 = hermitize(gram(m, basis, sigma, 1.0, opt));
  return split_spaces(g0, g1, kernel_rel_threshold);
}

Vector minimal_extension(const model::ProjectiveModel& m, const Basis& basis,
                         const Vector& target_coeffs, int sigma,
                         const residue::EvalOptions& opt) {
  const int n = (int)basis.size();
  if (target_coeffs.size() != n)
    throw ExtendError("minimal_extension: target has wrong dimension");
  Decomposition d = decompose(m, basis, sigma, opt);
  if (d.h.cols() == 0) return target_coeffs;  // H[sigma] trivial
  if (d.e.cols() == 0) {
    // target must be the zero class
    if (target_coeffs.norm() > 0 &&
        (target_coeffs -
         d.h * (d.h.adjoint() * d.h).ldlt().solve(d.h.adjoint() * target_coeffs))
                .norm() > 1e-10 * target_coeffs.norm())
      throw ExtendError("minimal_extension: target class not in the image of E");
    return Vector::Zero(n);
  }
  Matrix g1 = hermitize(gram(m, basis, sigma, 1.0, opt));
  // F = f - H (H* G1 H)^{-1} H* G1 f ; then <F, h>(1) = 0 for h in H
  Matrix hgh = d.h.adjoint() * g1 * d.h;
  Vector beta = hgh.ldlt().solve(d.h.adjoint() * g1 * target_coeffs);
  return target_coeffs - d.h * beta;
}

model::Section section_from_coeffs(const Basis& basis, const Vector& coeffs) {
  if (basis.empty()) throw ExtendError("empty basis");
  model::Section out;
  out.n = basis[0].second.n;
  for (int i = 0; i < (int)basis.size(); ++i) {
    for (const auto& [a, c] : basis[i].second.terms) {
      std::complex<double> v = coeffs(i) * c;
      if (v != std::complex<double>(0.0, 0.0)) out.terms[a] += v;
    }
  }
  return out;
}

bool loewner_leq(const Matrix& a, const Matrix& b, double tol) {
  if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
    throw ExtendError("loewner_leq: size mismatch");
  const double scale = std::max({a.cwiseAbs().maxCoeff(),
                                 b.cwiseAbs().maxCoeff(), 1e-300});
  if ((a - a.adjoint()).cwiseAbs().maxCoeff() > 1e-9 * scale ||
      (b - b.adjoint()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw ExtendError("loewner_leq: inputs are not hermitian");
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitize(b - a));
  return es.eigenvalues().minCoeff() >= -tol;
}

namespace {

// min eig(I - Phi* G1(b) Phi) with Phi a G0-orthonormal basis of E,
// E the G1(b)-orthogonal complement of ker G0
double loewner_gap(const model::ProjectiveModel& m, const Basis& basis,
                   int sigma, double b, const Matrix& g0,
                   const residue::EvalOptions& opt) {
  Matrix g1 = hermitize(gram(m.with_b(b), basis, sigma, 1.0, opt));
  Decomposition d = split_spaces(g0, g1, 1e-8);
  if (d.e.cols() == 0) return 1.0;  // E trivial: inequality vacuous
  Matrix g0e = hermitize(d.e.adjoint() * g0 * d.e);
  Eigen::SelfAdjointEigenSolver<Matrix> es0(g0e);
  Matrix w(d.e.cols(), d.e.cols());
  for (int c = 0; c < (int)d.e.cols(); ++c)
    w.col(c) = es0.eigenvectors().col(c) / std::sqrt(es0.eigenvalues()(c));
  Matrix phi = d.e * w;
  Matrix g1e = hermitize(phi.adjoint() * g1 * phi);
  Eigen::SelfAdjointEigenSolver<Matrix> es(
      Matrix::Identity(g1e.rows(), g1e.cols()) - g1e);
  return es.eigenvalues().minCoeff();
}

}  // namespace

CminReport find_cmin(const model::ProjectiveModel& m, const Basis& basis,
                     int sigma, double b_lo, double b_hi,
                     const residue::EvalOptions& opt) {
  if (!(b_lo > 0.0) || !(b_hi > b_lo))
    throw ExtendError("find_cmin: need 0 < b_lo < b_hi");
  CminReport rep;
  Matrix g0 = hermitize(gram(m, basis, sigma, 0.0, opt));  // b-invariant

  // entrywise monotone decrease of |G1| on a 5-point grid
  {
    Matrix prev;
    bool mono = true;
    for (int i = 0; i < 5; ++i) {
      const double b = b_lo + (b_hi - b_lo) * i / 4.0;
      Matrix g1 = gram(m.with_b(b), basis, sigma, 1.0, opt);
      if (prev.size() > 0 &&
          ((g1.cwiseAbs() - prev.cwiseAbs()).maxCoeff() > 1e-8 * prev.cwiseAbs().maxCoeff()))
        mono = false;
      prev = g1;
    }
    rep.monotone_validated = mono;
  }

  auto gap_at = [&](double b) {
    ++rep.iterations;
    return loewner_gap(m, basis, sigma, b, g0, opt);
  };

  const double tol_gap = -1e-10;
  double glo = gap_at(b_lo);
  if (glo >= tol_gap) {
    rep.found = true;
    rep.b_star = b_lo;
    rep.gap_eigenvalue = glo;
    return rep;
  }
  double ghi = gap_at(b_hi);
  if (ghi < tol_gap) {
    rep.found = false;
    rep.b_star = b_hi;
    rep.gap_eigenvalue = ghi;
    return rep;
  }

  if (!rep.monotone_validated) {
    // grid search fallback
    const int steps = 64;
    for (int i = 1; i <= steps; ++i) {
      const double b = b_lo + (b_hi - b_lo) * i / steps;
      const double g = gap_at(b);
      if (g >= tol_gap) {
        rep.found = true;
        rep.b_star = b;
        rep.gap_eigenvalue = g;
        return rep;
      }
    }
    rep.found = false;
    rep.b_star = b_hi;
    rep.gap_eigenvalue = ghi;
    return rep;
  }

  double lo = b_lo, hi = b_hi, ghi_cur = ghi;
  while (hi - lo > 1e-3) {
    const double mid = 0.5 * (lo + hi);
    const double g = gap_at(mid);
    if (g >= tol_gap) {
      hi = mid;
      ghi_cur = g;
    } else {
      lo = mid;
    }
  }
  rep.found = true;
  rep.b_star = hi;
  rep.gap_eigenvalue = ghi_cur;
  return rep;
}

std::vector<ChainStep> conjecture_chain(const model::ProjectiveModel& m,
                                        const Basis& basis,
                                        const Vector& target,
                                        const residue::EvalOptions& opt) {
  std::vector<ChainStep> steps;
  Vector remainder = target;
  const int smax = m.sigma_mlc();
  for (int sigma = smax; sigma >= 1; --sigma) {
    ChainStep st;
    st.sigma = sigma;
    st.coeffs = minimal_extension(m, basis, remainder, sigma, opt);
    model::Section fs = section_from_coeffs(basis, st.coeffs);
    if (fs.terms.empty()) {
      st.r1 = st.r0 = 0.0;
    } else {
      st.r1 = residue::rtf(m, fs, sigma, 1.0, opt).value;
      st.r0 = residue::lc_measure_norm(m, fs, sigma, opt).value;
    }
    steps.push_back(st);
    remainder -= st.coeffs;
  }
  return steps;
}

}  // namespace lcnorm::extend
