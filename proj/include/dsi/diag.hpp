#pragma once

#include <Eigen/SVD>

#include <cctype>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dsi/core.hpp"
#include "dsi/io.hpp"
#include "dsi/stats.hpp"

namespace dsi::diag {

// ---------------------------------------------------------------------------
// Quantile bands
// ---------------------------------------------------------------------------

/// Per-component quantiles: n_f x probs.size(), column j holds the band for
/// probs[j] at every (quantity, time).
inline Matrix quantile_bands(const Ensemble& e, const std::vector<double>& probs) {
  if (e.size() < 2) throw SchemaError("quantile bands need at least two members");
  for (double p : probs)
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("quantile probabilities must lie in (0, 1)");
  Matrix out(e.schema()->n_f(), static_cast<Index>(probs.size()));
  std::vector<double> row(static_cast<std::size_t>(e.size()));
  for (Index j = 0; j < out.rows(); ++j) {
    for (Index i = 0; i < e.size(); ++i) row[static_cast<std::size_t>(i)] = e.matrix()(j, i);
    std::sort(row.begin(), row.end());
    for (std::size_t k = 0; k < probs.size(); ++k)
      out(j, static_cast<Index>(k)) = stats::interpolated_quantile(row, probs[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

enum class DivisionPolicy { null_marker, clamp };

/// Denominators with magnitude below this are guarded.
inline constexpr double division_guard = 1e-12;

namespace detail {

using Block = Eigen::ArrayXXd;  // n_t x n_r

/// Shell-style match with '*' (any run) and '?' (one character).
inline bool glob_match(const char* pat, const char* s) {
  if (*pat == '\0') return *s == '\0';
  if (*pat == '*') return glob_match(pat + 1, s) || (*s != '\0' && glob_match(pat, s + 1));
  if (*s == '\0') return false;
  return (*pat == '?' || *pat == *s) && glob_match(pat + 1, s + 1);
}

/// Recursive-descent evaluator over whole (n_t x n_r) blocks:
///   expr   := term (('+' | '-') term)*
///   term   := unary (('*' | '/') unary)*
///   unary  := '-' unary | atom
///   atom   := number | NAME | 'sum' '(' pattern ')' | '(' expr ')'
class Evaluator {
 public:
  Evaluator(const Ensemble& e, DivisionPolicy policy, std::string text)
      : e_(e), policy_(policy), text_(std::move(text)) {}

  Block run() {
    Block v = expr();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return v;
  }

 private:
  const Ensemble& e_;
  DivisionPolicy policy_;
  std::string text_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("derived quantity '" + text_ + "': " + what + " at position " + std::to_string(pos_));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Block quantity(Index q) const {
    const Index n_t = e_.schema()->n_t();
    return e_.matrix().middleRows(q * n_t, n_t).array();
  }

  Block expr() {
    Block v = term();
    for (;;) {
      if (accept('+')) v += term();
      else if (accept('-')) v -= term();
      else return v;
    }
  }

  Block term() {
    Block v = unary();
    for (;;) {
      if (accept('*')) {
        v *= unary();
      } else if (accept('/')) {
        v = divide(v, unary());
      } else {
        return v;
      }
    }
  }

  Block divide(const Block& num, const Block& den) const {
    Block out(num.rows(), num.cols());
    for (Index k = 0; k < out.size(); ++k) {
      const double d = den.data()[k];
      if (std::abs(d) >= division_guard) {
        out.data()[k] = num.data()[k] / d;
      } else if (policy_ == DivisionPolicy::null_marker) {
        out.data()[k] = std::numeric_limits<double>::quiet_NaN();
      } else {
        out.data()[k] = num.data()[k] / (d < 0.0 ? -division_guard : division_guard);
      }
    }
    return out;
  }

  Block unary() {
    if (accept('-')) return -unary();
    return atom();
  }

  std::string identifier() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    return text_.substr(start, pos_ - start);
  }

  Block atom() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of expression");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Block v = expr();
      if (!accept(')')) fail("missing ')'");
      return v;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* begin = text_.c_str() + pos_;
      char* end = nullptr;
      const double value = std::strtod(begin, &end);
      pos_ += static_cast<std::size_t>(end - begin);
      return Block::Constant(e_.schema()->n_t(), e_.size(), value);
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::string name = identifier();
      if (name == "sum" && accept('(')) return group_sum();
      const auto& names = e_.schema()->quantity_names();
      const auto it = std::find(names.begin(), names.end(), name);
      if (it == names.end()) fail("unknown quantity '" + name + "'");
      return quantity(static_cast<Index>(it - names.begin()));
    }
    fail("unexpected '" + std::string(1, c) + "'");
  }

  Block group_sum() {
    skip_space();
    const std::size_t close = text_.find(')', pos_);
    if (close == std::string::npos) fail("missing ')' after sum pattern");
    std::string pattern = text_.substr(pos_, close - pos_);
    while (!pattern.empty() && std::isspace(static_cast<unsigned char>(pattern.back()))) pattern.pop_back();
    pos_ = close + 1;
    Block v = Block::Zero(e_.schema()->n_t(), e_.size());
    Index matched = 0;
    const auto& names = e_.schema()->quantity_names();
    for (std::size_t q = 0; q < names.size(); ++q) {
      if (glob_match(pattern.c_str(), names[q].c_str())) {
        v += quantity(static_cast<Index>(q));
        ++matched;
      }
    }
    if (matched == 0) fail("pattern '" + pattern + "' matches no quantity");
    return v;
  }
};

}  // namespace detail

/// Splits "NAME = expr" into its parts; a bare expression names itself.
inline std::pair<std::string, std::string> split_definition(const std::string& def) {
  const auto eq = def.find('=');
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
  };
  if (eq == std::string::npos) return {trim(def), trim(def)};
  return {trim(def.substr(0, eq)), trim(def.substr(eq + 1))};
}

/// Evaluates each definition ("NAME = expr" or a bare expression) per member
/// and time step; the result has one quantity per definition on the same
/// time grid.
inline Ensemble derived_quantities(const Ensemble& e, const std::vector<std::string>& definitions,
                                   DivisionPolicy policy = DivisionPolicy::null_marker) {
  if (definitions.empty()) throw ConfigError("no derived quantities requested");
  const Index n_t = e.schema()->n_t();
  std::vector<std::string> names;
  Matrix out(n_t * static_cast<Index>(definitions.size()), e.size());
  for (std::size_t k = 0; k < definitions.size(); ++k) {
    auto [name, text] = split_definition(definitions[k]);
    if (name.empty() || text.empty()) throw ConfigError("empty derived quantity definition");
    out.middleRows(static_cast<Index>(k) * n_t, n_t) = detail::Evaluator(e, policy, text).run().matrix();
    names.push_back(name);
  }
  return {make_schema(std::move(names), e.schema()->times()), std::move(out), e.ids()};
}

inline Ensemble derived_quantity(const Ensemble& e, const std::string& definition,
                                 DivisionPolicy policy = DivisionPolicy::null_marker) {
  return derived_quantities(e, {definition}, policy);
}

/// Standard derived quantities for an injector/producer schema: per-producer
/// liquid rate and water cut, field sums and the injection-production
/// difference.
inline std::vector<std::string> standard_derived(const DataSchema& s) {
  std::vector<std::string> defs;
  const auto& names = s.quantity_names();
  auto has = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  for (const auto& n : names) {
    if (n.size() > 4 && n.substr(n.size() - 4) == "_WPR") {
      const std::string well = n.substr(0, n.size() - 4);
      if (!has(well + "_OPR")) continue;
      defs.push_back(well + "_LIQ = " + well + "_WPR + " + well + "_OPR");
      defs.push_back(well + "_WCUT = " + well + "_WPR / (" + well + "_WPR + " + well + "_OPR)");
    }
  }
  auto any = [&](const char* pat) {
    for (const auto& n : names)
      if (detail::glob_match(pat, n.c_str())) return true;
    return false;
  };
  if (any("*_WIR")) defs.push_back("FIELD_WIR = sum(*_WIR)");
  if (any("*_WPR")) defs.push_back("FIELD_WPR = sum(*_WPR)");
  if (any("*_OPR")) defs.push_back("FIELD_OPR = sum(*_OPR)");
  if (any("*_WPR") && any("*_OPR")) defs.push_back("FIELD_LIQ = sum(*_WPR) + sum(*_OPR)");
  if (any("*_WIR") && any("*_WPR") && any("*_OPR"))
    defs.push_back("FIELD_INJ_MINUS_PROD = sum(*_WIR) - sum(*_WPR) - sum(*_OPR)");
  return defs;
}

/// Field injection-production balance over members and times after `after_time`.
struct FieldBalance {
  double mean_difference = 0.0;  // mean of sum(*_WIR) - sum(*_WPR) - sum(*_OPR)
  double mean_rate = 0.0;        // mean of (injection + production) / 2
  Index samples = 0;

  double relative() const { return std::abs(mean_difference) / mean_rate; }
};

inline FieldBalance field_balance(const Ensemble& e, double after_time) {
  const auto fields = derived_quantities(
      e, {"INJ = sum(*_WIR)", "PROD = sum(*_WPR) + sum(*_OPR)"}, DivisionPolicy::null_marker);
  const auto& s = *fields.schema();
  FieldBalance out;
  double diff = 0.0, rate = 0.0;
  for (Index t = 0; t < s.n_t(); ++t) {
    if (!(s.times()[static_cast<std::size_t>(t)] > after_time)) continue;
    for (Index i = 0; i < e.size(); ++i) {
      const double inj = fields.matrix()(t, i), prod = fields.matrix()(s.n_t() + t, i);
      diff += inj - prod;
      rate += 0.5 * (inj + prod);
      ++out.samples;
    }
  }
  if (out.samples == 0) throw ConfigError("no report times after " + std::to_string(after_time));
  out.mean_difference = diff / static_cast<double>(out.samples);
  out.mean_rate = rate / static_cast<double>(out.samples);
  if (!(out.mean_rate > division_guard)) throw NumericalError("field rate is zero; balance undefined");
  return out;
}

// ---------------------------------------------------------------------------
// Covariance and correlation series
// ---------------------------------------------------------------------------

struct CorrCovSeries {
  Vector covariance;   // per time step
  Vector correlation;  // NaN where either variance is zero
};

inline CorrCovSeries corr_cov_series(const Ensemble& e, const std::string& qty_a, const std::string& qty_b) {
  if (e.size() < 2) throw SchemaError("covariance series need at least two members");
  const auto& s = *e.schema();
  const Index n_t = s.n_t();
  const Matrix a = e.matrix().middleRows(s.quantity_index(qty_a) * n_t, n_t);
  const Matrix b = e.matrix().middleRows(s.quantity_index(qty_b) * n_t, n_t);
  const Matrix ac = a.colwise() - a.rowwise().mean();
  const Matrix bc = b.colwise() - b.rowwise().mean();
  const double denom = static_cast<double>(e.size() - 1);
  CorrCovSeries out{Vector(n_t), Vector(n_t)};
  for (Index t = 0; t < n_t; ++t) {
    const double cov = ac.row(t).dot(bc.row(t)) / denom;
    const double va = ac.row(t).squaredNorm() / denom;
    const double vb = bc.row(t).squaredNorm() / denom;
    out.covariance[t] = cov;
    out.correlation[t] = (va > 0.0 && vb > 0.0) ? std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0)
                                                 : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mahalanobis distance
// ---------------------------------------------------------------------------

/// Energy-truncated SVD of a reference ensemble: C = U Sigma^2 U^T.
struct MahalanobisBasis {
  SchemaPtr schema;
  Vector mean;
  Matrix u;      // n_f x k
  Vector sigma;  // k
  Index k = 0;
  double energy = 0.0;           // requested fraction
  double retained_energy = 0.0;  // achieved fraction
  Vector all_singular_values;
};

inline MahalanobisBasis fit_mahalanobis(const Ensemble& reference, double energy) {
  if (reference.size() < 2) throw SchemaError("Mahalanobis basis needs at least two reference members");
  const Matrix centered = centered_data_matrix(reference);
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  const Vector mean = reference.matrix().rowwise().mean();
  if (!(sv[0] > 1e-13 * (1.0 + mean.cwiseAbs().maxCoeff())))
    throw NumericalError("degenerate reference ensemble: all members are identical");
  MahalanobisBasis b;
  b.schema = reference.schema();
  b.mean = mean;
  b.k = stats::energy_rank(sv, energy);
  b.u = svd.matrixU().leftCols(b.k);
  b.sigma = sv.head(b.k);
  b.energy = energy;
  b.retained_energy = stats::retained_energy(sv, b.k);
  b.all_singular_values = sv;
  return b;
}

/// D_M = |Sigma^-1 U^T (d - mean)|.
inline double mahalanobis_distance(const MahalanobisBasis& b, const Vector& d) {
  if (d.size() != b.mean.size()) throw SchemaError("data vector does not match the Mahalanobis basis");
  return (b.u.transpose() * (d - b.mean)).cwiseQuotient(b.sigma).norm();
}

inline std::vector<double> mahalanobis_distances(const MahalanobisBasis& b, const Ensemble& e) {
  if (!same_schema(e.schema(), b.schema)) throw SchemaError("ensemble does not match the Mahalanobis basis");
  const Matrix w = (b.u.transpose() * (e.matrix().colwise() - b.mean)).array().colwise() / b.sigma.array();
  std::vector<double> out(static_cast<std::size_t>(e.size()));
  for (Index i = 0; i < e.size(); ++i) out[static_cast<std::size_t>(i)] = w.col(i).norm();
  return out;
}

struct DmComparison {
  std::map<std::string, std::vector<double>> sorted_dm;
  std::map<std::string, double> ks_vs_reference;
  std::string reference;
};

/// Sorted D_M values of every named ensemble and the two-sample KS statistic
/// of each against the named reference.
inline DmComparison dm_cdf_compare(const MahalanobisBasis& b, const std::map<std::string, Ensemble>& ensembles,
                                   const std::string& reference) {
  if (ensembles.size() < 2) throw ConfigError("D_M comparison needs at least two ensembles");
  if (!ensembles.contains(reference)) throw ConfigError("reference ensemble '" + reference + "' not given");
  DmComparison out;
  out.reference = reference;
  for (const auto& [name, e] : ensembles) {
    auto dm = mahalanobis_distances(b, e);
    std::sort(dm.begin(), dm.end());
    out.sorted_dm[name] = std::move(dm);
  }
  for (const auto& [name, dm] : out.sorted_dm) out.ks_vs_reference[name] = stats::ks_two_sample(dm, out.sorted_dm[reference]);
  return out;
}

// ---------------------------------------------------------------------------
// Tidy CSV output
// ---------------------------------------------------------------------------

/// Columns: quantity,time,prob,value.
inline void write_bands_csv(const std::filesystem::path& path, const Ensemble& e, const std::vector<double>& probs) {
  const Matrix bands = quantile_bands(e, probs);
  const auto& s = *e.schema();
  auto out = io::open_for_write(path);
  out << "quantity,time,prob,value\n";
  for (Index q = 0; q < s.n_qoi(); ++q)
    for (Index t = 0; t < s.n_t(); ++t)
      for (std::size_t k = 0; k < probs.size(); ++k)
        out << s.quantity_names()[static_cast<std::size_t>(q)] << ',' << io::format_double(s.times()[static_cast<std::size_t>(t)])
            << ',' << io::format_double(probs[k]) << ',' << io::format_double(bands(s.flat_index(q, t), static_cast<Index>(k)))
            << '\n';
}

/// Columns: member,quantity,time_a,value_a,time_b,value_b.
inline void write_crossplot_csv(const std::filesystem::path& path, const Ensemble& e, const std::string& quantity,
                                double time_a, double time_b) {
  const auto& s = *e.schema();
  const Index q = s.quantity_index(quantity);
  const Index ra = s.flat_index(q, s.time_index(time_a)), rb = s.flat_index(q, s.time_index(time_b));
  auto out = io::open_for_write(path);
  out << "member,quantity,time_a,value_a,time_b,value_b\n";
  for (Index i = 0; i < e.size(); ++i)
    out << e.id(i) << ',' << quantity << ',' << io::format_double(time_a) << ',' << io::format_double(e.matrix()(ra, i))
        << ',' << io::format_double(time_b) << ',' << io::format_double(e.matrix()(rb, i)) << '\n';
}

/// Columns: time,covariance,correlation (correlation "nan" where undefined).
inline void write_corr_cov_csv(const std::filesystem::path& path, const DataSchema& s, const CorrCovSeries& c) {
  auto out = io::open_for_write(path);
  out << "time,covariance,correlation\n";
  for (Index t = 0; t < s.n_t(); ++t)
    out << io::format_double(s.times()[static_cast<std::size_t>(t)]) << ',' << io::format_double(c.covariance[t]) << ','
        << io::format_double(c.correlation[t]) << '\n';
}

/// Columns: ensemble,rank,dm,cdf with cdf = rank / n.
inline void write_dm_cdf_csv(const std::filesystem::path& path, const DmComparison& c) {
  auto out = io::open_for_write(path);
  out << "ensemble,rank,dm,cdf\n";
  for (const auto& [name, dm] : c.sorted_dm) {
    const double n = static_cast<double>(dm.size());
    for (std::size_t i = 0; i < dm.size(); ++i)
      out << name << ',' << i + 1 << ',' << io::format_double(dm[i]) << ','
          << io::format_double(static_cast<double>(i + 1) / n) << '\n';
  }
}

}  // namespace dsi::diag
