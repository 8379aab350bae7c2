#include "lcnorm/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace lcnorm::model {

// ----------------------------------------------------------- sections

int Section::degree() const {
  int deg = 0;
  for (const auto& [a, c] : terms) {
    (void)c;
    deg = std::max(deg, std::accumulate(a.begin(), a.end(), 0));
  }
  return deg;
}

Section& Section::add_term(std::vector<int> a, std::complex<double> c) {
  if ((int)a.size() != n)
    throw ModelError("section term has wrong number of exponents");
  for (int e : a)
    if (e < 0) throw ModelError("negative monomial exponent");
  terms[std::move(a)] += c;
  return *this;
}

// ----------------------------------------------------------- lc centres

std::vector<LcCentre> lc_centres(const SncChart& chart, int sigma_prime) {
  if (sigma_prime < 1) throw ModelError("lc_centres: sigma' must be >= 1");
  std::vector<LcCentre> out;
  if (sigma_prime > chart.j_S) return out;
  std::vector<int> idx(sigma_prime);
  // enumerate sigma'-subsets of {1..j_S} in lexicographic order
  for (int i = 0; i < sigma_prime; ++i) idx[i] = i;
  for (;;) {
    LcCentre c;
    c.chart = chart.chart;
    for (int i : idx) c.axes.push_back(i + 1);
    out.push_back(std::move(c));
    int i = sigma_prime - 1;
    while (i >= 0 && idx[i] == chart.j_S - sigma_prime + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int k = i + 1; k < sigma_prime; ++k) idx[k] = idx[k - 1] + 1;
  }
  return out;
}

Expr SncChart::sign_factor(int axis) const {
  if (nu[axis] <= 0.0)
    throw ModelError("sign_factor: axis is not an lc direction");
  Expr da = alpha.diff(axis);
  return Expr::constant(1.0) +
         (Expr::var(axis) / Expr::constant(2.0 * nu[axis])) * da;
}

// ---------------------------------------------------------- mini parser
//
// Just enough of a key-value-with-tables reader for the model files:
// [table] and [table.sub] headers, `key = value` entries, numbers and
// (possibly nested, possibly multi-line) arrays, # comments.

namespace {

struct Value {
  enum Kind { Num, Arr } kind = Num;
  double num = 0.0;
  std::vector<Value> arr;
};

struct MiniToml {
  std::map<std::string, Value> entries;

  bool has(const std::string& k) const { return entries.count(k) > 0; }
  double num(const std::string& k) const {
    auto it = entries.find(k);
    if (it == entries.end() || it->second.kind != Value::Num)
      throw ModelError("model file: missing numeric key '" + k + "'");
    return it->second.num;
  }
  double num_or(const std::string& k, double dflt) const {
    auto it = entries.find(k);
    if (it == entries.end()) return dflt;
    if (it->second.kind != Value::Num)
      throw ModelError("model file: key '" + k + "' must be a number");
    return it->second.num;
  }
  const Value* find(const std::string& k) const {
    auto it = entries.find(k);
    return it == entries.end() ? nullptr : &it->second;
  }
  std::vector<std::string> keys_with_prefix(const std::string& p) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries) {
      (void)v;
      if (k.rfind(p, 0) == 0) out.push_back(k);
    }
    return out;
  }
};

void strip_comment(std::string& line) {
  auto pos = line.find('#');
  if (pos != std::string::npos) line.erase(pos);
}

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace((unsigned char)s[a])) ++a;
  while (b > a && std::isspace((unsigned char)s[b - 1])) --b;
  return s.substr(a, b - a);
}

Value parse_value(const std::string& text, const std::string& where);

Value parse_array(const std::string& text, const std::string& where) {
  Value v;
  v.kind = Value::Arr;
  size_t i = 1;  // past '['
  int depth = 0;
  std::string cur;
  auto flush = [&] {
    std::string t = trim(cur);
    if (!t.empty()) v.arr.push_back(parse_value(t, where));
    cur.clear();
  };
  for (; i < text.size(); ++i) {
    char ch = text[i];
    if (ch == '[') { ++depth; cur += ch; }
    else if (ch == ']') {
      if (depth == 0) { flush(); return v; }
      --depth; cur += ch;
    } else if (ch == ',' && depth == 0) flush();
    else cur += ch;
  }
  throw ModelError(where + ": unterminated array");
}

Value parse_value(const std::string& text, const std::string& where) {
  if (!text.empty() && text[0] == '[') return parse_array(text, where);
  char* end = nullptr;
  Value v;
  v.num = std::strtod(text.c_str(), &end);
  if (end == nullptr || *end != '\0')
    throw ModelError(where + ": cannot parse value '" + text + "'");
  return v;
}

MiniToml parse_minitoml(const std::string& text, const std::string& origin) {
  MiniToml out;
  std::istringstream in(text);
  std::string line, prefix;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    strip_comment(line);
    std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']') throw ModelError(where + ": malformed table header");
      prefix = trim(t.substr(1, t.size() - 2));
      if (prefix.empty()) throw ModelError(where + ": empty table name");
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ModelError(where + ": expected 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    // multi-line arrays: accumulate until brackets balance
    auto balance = [](const std::string& s) {
      int d = 0;
      for (char c : s) { if (c == '[') ++d; else if (c == ']') --d; }
      return d;
    };
    while (!val.empty() && val[0] == '[' && balance(val) != 0) {
      std::string more;
      if (!std::getline(in, more))
        throw ModelError(where + ": unterminated array");
      ++lineno;
      strip_comment(more);
      val += " " + trim(more);
    }
    if (key.empty() || val.empty())
      throw ModelError(where + ": expected 'key = value'");
    std::string full = prefix.empty() ? key : prefix + "." + key;
    out.entries[full] = parse_value(val, where);
  }
  return out;
}

}  // namespace

// ------------------------------------------------------- model proper

ProjectiveModel::ProjectiveModel(int n, int degree, double phi_offset,
                                 PsiSpec psi, double b)
    : n_(n), d_(degree), phi_offset_(phi_offset), psi_(std::move(psi)), b_(b) {
  if (n_ < 1) throw ModelError("model dimension must be >= 1");
  if (d_ < n_ + 1)
    throw ModelError("line bundle degree must be at least n+1 so that "
                     "K (x) L has sections");
  w_.assign(n_ + 1, 0.0);
  double sum = 0.0;
  for (auto& [j, wj] : psi_.log_terms) {
    if (j < 1 || j > n_) throw ModelError("psi log term index out of range");
    if (wj < 0.0) throw ModelError("psi log coefficients must be >= 0");
    w_[j] += wj;
    sum += wj;
  }
  w_[0] = psi_.log1p_coeff - sum;
  if (w_[0] < -1e-12)
    throw ModelError("psi log1p coefficient smaller than the sum of log "
                     "coefficients; psi would be positive near infinity");
  if (w_[0] < 0.0) w_[0] = 0.0;
}

std::vector<int> ProjectiveModel::s_components() const {
  std::vector<int> out;
  for (int j = 0; j <= n_; ++j)
    if (w_[j] > 0.0) out.push_back(j);
  return out;
}

int ProjectiveModel::sigma_mlc() const {
  return std::min<int>((int)s_components().size(), n_);
}

double ProjectiveModel::sup_psi() const {
  // sup over P^n of sum w_j log t_j + c on the simplex sum t_j = 1,
  // attained at t_j = w_j / T
  const double T = psi_.log1p_coeff;
  double s = psi_.offset;
  for (int j = 0; j <= n_; ++j)
    if (w_[j] > 0.0) s += w_[j] * std::log(w_[j] / T);
  return s;
}

double ProjectiveModel::psi_eval(
    int chart, std::span<const std::complex<double>> pt) const {
  if (chart < 0 || chart > n_) throw ModelError("chart index out of range");
  if ((int)pt.size() != n_) throw ModelError("point has wrong dimension");
  // local coordinate i holds X_g / X_chart where g = global label
  double s = psi_.offset;
  double sum_u = 0.0;
  int i = 0;
  for (int g = 0; g <= n_; ++g) {
    if (g == chart) continue;
    const double u = std::norm(pt[i]);
    sum_u += u;
    if (w_[g] > 0.0) {
      if (u == 0.0) return -std::numeric_limits<double>::infinity();
      s += w_[g] * std::log(u);
    }
    ++i;
  }
  s -= psi_.log1p_coeff * std::log1p(sum_u);
  return s;
}

double ProjectiveModel::phiL_eval(
    int chart, std::span<const std::complex<double>> pt) const {
  if (chart < 0 || chart > n_) throw ModelError("chart index out of range");
  if ((int)pt.size() != n_) throw ModelError("point has wrong dimension");
  double sum_u = 0.0;
  for (const auto& z : pt) sum_u += std::norm(z);
  return d_ * std::log1p(sum_u) + phi_offset_;
}

ProjectiveModel ProjectiveModel::normalized(double b) const {
  if (b < 1.0)
    throw ModelError("normalize: target b must be >= 1");
  ProjectiveModel m = *this;
  m.b_ = b;  // l := e^b; psi and phi_L unchanged, so phi_L + psi is kept
  return m;
}

ProjectiveModel ProjectiveModel::with_b(double b) const {
  if (b < 0.0) throw ModelError("with_b: b must be nonnegative");
  ProjectiveModel m = *this;
  m.b_ = b;
  if (std::exp(b) * m.inf_abs_psi() <= 1.0)
    throw ModelError("with_b: |l psi| must exceed 1");
  return m;
}

const Section& ProjectiveModel::section(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end())
    throw ModelError("unknown section '" + name + "'");
  return it->second;
}

void ProjectiveModel::add_section(const std::string& name, Section s) {
  if (s.n != n_) throw ModelError("section dimension mismatch");
  if (s.degree() > section_degree_bound())
    throw ModelError("section '" + name + "' exceeds the degree bound " +
                     std::to_string(section_degree_bound()));
  sections_[name] = std::move(s);
}

std::map<std::vector<int>, std::complex<double>>
ProjectiveModel::chart_coefficients(const Section& s, int chart) const {
  if (chart < 0 || chart > n_) throw ModelError("chart index out of range");
  const int bound = section_degree_bound();
  std::map<std::vector<int>, std::complex<double>> out;
  for (const auto& [a, coeff] : s.terms) {
    // homogenize: hat a_0 = bound - |a|, hat a_j = a_j
    std::vector<int> hat(n_ + 1, 0);
    int total = 0;
    for (int j = 1; j <= n_; ++j) {
      hat[j] = a[j - 1];
      total += a[j - 1];
    }
    hat[0] = bound - total;
    if (hat[0] < 0) throw ModelError("section exceeds degree bound");
    std::vector<int> local;
    local.reserve(n_);
    for (int g = 0; g <= n_; ++g)
      if (g != chart) local.push_back(hat[g]);
    out[std::move(local)] += coeff;
  }
  return out;
}

void ProjectiveModel::validate() const {
  // first-jumping-number diagnostic: along each lc direction the exponent
  // bookkeeping c_j + m nu_j must cross 1 exactly at m = 1, i.e. every
  // nonzero weight equals 1 (c_j = 0 for these models)
  for (int j = 0; j <= n_; ++j) {
    if (w_[j] != 0.0 && std::fabs(w_[j] - 1.0) > 1e-12)
      throw ModelError(
          "jumping-number diagnostic failed: weight " + std::to_string(w_[j]) +
          " on component " + std::to_string(j) +
          " makes the multiplier ideal jump at m = " +
          std::to_string(1.0 / w_[j]) + " instead of m = 1");
  }
  if (sup_psi() >= 0.0) throw ModelError("psi is not negative everywhere");
  if (inf_abs_psi() < 1.0 - 1e-12)
    throw ModelError("|psi| must be at least 1 on X for the chosen offsets");
  if (!(b_ > 0.0)) throw ModelError("normalization b must be positive");
  if (std::exp(b_) * inf_abs_psi() <= 1.0)
    throw ModelError("|l psi| must exceed 1 on X");
  for (const auto& [name, s] : sections_) {
    if (s.degree() > section_degree_bound())
      throw ModelError("section '" + name + "' exceeds the degree bound");
  }
}

// ------------------------------------------------------------ localize

namespace {

std::vector<std::pair<int, int>> chain_pairs(const std::vector<int>& chain) {
  std::vector<std::pair<int, int>> out;
  for (size_t t = 0; t + 1 < chain.size(); ++t)
    out.emplace_back(chain[t], chain[t + 1]);
  return out;
}

std::vector<Interval> r_box(const std::vector<std::pair<double, double>>& ub) {
  std::vector<Interval> out;
  out.reserve(ub.size());
  for (auto& [lo, hi] : ub)
    out.emplace_back(std::sqrt(std::max(0.0, lo)), std::sqrt(hi));
  return out;
}

}  // namespace

SncChart ProjectiveModel::localize(int chart, double lc_split) const {
  if (chart < 0 || chart > n_) throw ModelError("chart index out of range");
  SncChart sc;
  sc.n = n_;
  sc.chart = chart;
  sc.b = b_;
  for (int g = 0; g <= n_; ++g)
    if (g != chart) sc.coord_label.push_back(g);
  sc.nu.resize(n_);
  for (int i = 0; i < n_; ++i) sc.nu[i] = w_[sc.coord_label[i]];
  for (int i = 0; i < n_; ++i)
    if (sc.nu[i] > 0.0) sc.lc_dirs.push_back(i);
  sc.j_S = (int)sc.lc_dirs.size();
  sc.c.assign(n_, 0.0);
  sc.klt.assign(n_, 0.0);

  const double T = psi_.log1p_coeff;
  const int s_total = (int)s_components().size();
  Expr one_plus = Expr::constant(1.0) + Expr::r2sum();
  sc.alpha = Expr::constant(-T) * Expr::log(one_plus) +
             Expr::constant(psi_.offset);
  sc.beta = Expr::constant(double(d_ - T + s_total)) * Expr::log(one_plus) +
            Expr::constant(phi_offset_ + psi_.offset);

  if (!(lc_split > 0.0) || lc_split >= 1.0)
    throw ModelError("localize: lc_split must lie in (0, 1)");
  // subdomain decomposition: split each lc direction at u = lc_split and
  // keep the sign factors verifiably positive on every cell, adding an
  // ordering chain where the plain part does not verify
  const size_t nlc = sc.lc_dirs.size();
  for (size_t mask = 0; mask < (size_t(1) << nlc); ++mask) {
    ChartCell cell;
    cell.u_bounds.assign(n_, {0.0, 1.0});
    std::vector<int> active;
    for (size_t i = 0; i < nlc; ++i) {
      int axis = sc.lc_dirs[i];
      if (mask & (size_t(1) << i)) {
        cell.u_bounds[axis] = {lc_split, 1.0};
      } else {
        cell.u_bounds[axis] = {0.0, lc_split};
        active.push_back(axis);
      }
    }
    bool all_ok = true;
    for (int axis : active) {
      auto box = r_box(cell.u_bounds);
      if (!verify_positive(sc.sign_factor(axis), box, 14)) {
        all_ok = false;
        break;
      }
    }
    if (all_ok) {
      sc.cells.push_back(std::move(cell));
      continue;
    }
    // sorted variants over the active directions
    std::vector<int> perm = active;
    std::sort(perm.begin(), perm.end());
    bool any_fail = false;
    do {
      ChartCell sorted_cell = cell;
      sorted_cell.chain = perm;
      auto box = r_box(sorted_cell.u_bounds);
      // the chain constrains in r the same way as in u
      if (!verify_positive_chained(sc.sign_factor(perm[0]), box,
                                   chain_pairs(perm), 16))
        any_fail = true;
      sc.cells.push_back(std::move(sorted_cell));
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (any_fail)
      throw ModelError(
          "localize: sign factor not verifiably positive on chart " +
          std::to_string(chart) +
          " even after ordering splits; further subdivision required");
  }
  return sc;
}

// --------------------------------------------------------------- files

ProjectiveModel ProjectiveModel::from_text(const std::string& text,
                                           const std::string& origin) {
  MiniToml t = parse_minitoml(text, origin);
  const int n = (int)t.num("model.n");
  const int d = (int)t.num("model.degree");
  const double phi_off = t.num_or("model.phi_offset", 1.0);
  const double b = t.num_or("model.b", 1.0);

  PsiSpec psi;
  psi.log1p_coeff = t.num("psi.log1p_coeff");
  psi.offset = t.num("psi.offset");
  const Value* lt = t.find("psi.log_terms");
  if (lt == nullptr || lt->kind != Value::Arr)
    throw ModelError(origin + ": psi.log_terms must be an array of pairs");
  for (const auto& pair : lt->arr) {
    if (pair.kind != Value::Arr || pair.arr.size() != 2 ||
        pair.arr[0].kind != Value::Num || pair.arr[1].kind != Value::Num)
      throw ModelError(origin + ": each psi log term must be [index, coeff]");
    psi.log_terms.emplace_back((int)pair.arr[0].num, pair.arr[1].num);
  }

  ProjectiveModel m(n, d, phi_off, psi, b);
  if (t.has("model.sigma")) m.default_sigma_ = (int)t.num("model.sigma");

  for (const std::string& key : t.keys_with_prefix("sections.")) {
    // sections.NAME.terms
    const std::string rest = key.substr(std::string("sections.").size());
    auto dot = rest.find('.');
    if (dot == std::string::npos) continue;
    const std::string name = rest.substr(0, dot);
    if (rest.substr(dot + 1) != "terms") continue;
    const Value* tv = t.find(key);
    if (tv == nullptr || tv->kind != Value::Arr)
      throw ModelError(origin + ": " + key + " must be an array");
    Section s;
    s.n = n;
    for (const auto& term : tv->arr) {
      if (term.kind != Value::Arr || (int)term.arr.size() != n + 2)
        throw ModelError(origin + ": section term must be [a_1..a_n, re, im]");
      std::vector<int> a(n);
      for (int j = 0; j < n; ++j) {
        if (term.arr[j].kind != Value::Num)
          throw ModelError(origin + ": bad exponent in section term");
        a[j] = (int)term.arr[j].num;
      }
      s.add_term(std::move(a),
                 {term.arr[n].num, term.arr[n + 1].num});
    }
    m.add_section(name, std::move(s));
  }
  m.validate();
  return m;
}

ProjectiveModel ProjectiveModel::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), path);
}

}  // namespace lcnorm::model
