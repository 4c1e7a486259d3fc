#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

#include "dsi/core.hpp"
#include "dsi/io.hpp"
#include "dsi/stats.hpp"

namespace dsi::pcaht {

/// How many principal components to keep: an energy fraction in (0, 1] or
/// an explicit count.
struct Truncation {
  std::optional<double> energy;
  std::optional<Index> n_latent;

  static Truncation by_energy(double e) { return {e, std::nullopt}; }
  static Truncation explicit_count(Index n) { return {std::nullopt, n}; }
};

/// Linear parameterization d = phi xi + mean with phi = U_l Sigma_l.
struct PcaBasis {
  SchemaPtr schema;
  Vector mean;
  Matrix phi;          // n_f x n_l
  Matrix u;            // n_f x n_l, orthonormal columns
  Vector singular_values;  // all min(n_f, n_r) values of the centered matrix
  Index n_members = 0;

  Index n_latent() const { return phi.cols(); }
  Vector retained_singular_values() const { return singular_values.head(n_latent()); }
};

inline PcaBasis fit_pca(const Ensemble& e, const Truncation& trunc) {
  if (e.size() < 2) throw SchemaError("PCA needs at least two members");
  const Matrix centered = centered_data_matrix(e);
  Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinU);
  const Vector& sv = svd.singularValues();
  const Vector mean = e.matrix().rowwise().mean();
  if (!(sv[0] > 1e-13 * (1.0 + mean.cwiseAbs().maxCoeff())))
    throw NumericalError("degenerate ensemble: all members are identical");

  Index n_l = 0;
  if (trunc.n_latent) {
    n_l = *trunc.n_latent;
    if (n_l < 1 || n_l > e.size() - 1 || n_l > sv.size())
      throw ConfigError("latent dimension " + std::to_string(n_l) + " must lie in [1, n_r - 1]");
  } else {
    n_l = stats::energy_rank(sv, trunc.energy.value_or(1.0));
  }

  PcaBasis basis;
  basis.schema = e.schema();
  basis.mean = mean;
  basis.u = svd.matrixU().leftCols(n_l);
  basis.phi = basis.u * sv.head(n_l).asDiagonal();
  basis.singular_values = sv;
  basis.n_members = e.size();
  return basis;
}

inline DataVector pca_decode(const PcaBasis& basis, const Vector& xi) {
  if (xi.size() != basis.n_latent())
    throw SchemaError("latent vector has length " + std::to_string(xi.size()) + ", basis expects " +
                      std::to_string(basis.n_latent()));
  return {basis.schema, basis.phi * xi + basis.mean};
}

/// Whitened projection xi = Sigma_l^-1 U_l^T (d - mean).
inline Vector pca_encode(const PcaBasis& basis, const DataVector& d) {
  if (!same_schema(d.schema(), basis.schema)) throw SchemaError("data vector does not match PCA schema");
  const Vector s = basis.retained_singular_values();
  if ((s.array() <= 0.0).any()) throw NumericalError("zero singular value in retained PCA block");
  return (basis.u.transpose() * (d.flat() - basis.mean)).cwiseQuotient(s);
}

/// Per-component histogram transformation tables: the sorted prior samples
/// (empirical target CDF) and the Gaussian parameters of d^PCA.
struct MarginalCdfTable {
  SchemaPtr schema;
  RowMatrix sorted;  // n_f x n_r, each row nondecreasing
  Vector gauss_mean;
  Vector gauss_std;

  std::span<const double> row(Index j) const {
    return {sorted.data() + j * sorted.cols(), static_cast<std::size_t>(sorted.cols())};
  }

  /// h_T for a single component j.
  double transform(Index j, double x) const {
    const double sd = gauss_std[j];
    const double u = sd > 0.0 ? stats::normal_cdf((x - gauss_mean[j]) / sd) : 0.5;
    return stats::interpolated_quantile(row(j), u);
  }
};

inline MarginalCdfTable fit_ht(const Ensemble& e, const PcaBasis& basis) {
  if (!same_schema(e.schema(), basis.schema)) throw SchemaError("ensemble does not match PCA schema");
  MarginalCdfTable table;
  table.schema = e.schema();
  table.sorted = e.matrix();
  for (Index j = 0; j < table.sorted.rows(); ++j) {
    auto r = table.sorted.row(j);
    std::sort(r.begin(), r.end());
  }
  table.gauss_mean = basis.mean;
  table.gauss_std = basis.phi.rowwise().norm();
  return table;
}

inline DataVector apply_ht(const MarginalCdfTable& table, const DataVector& d_pca) {
  if (!same_schema(d_pca.schema(), table.schema)) throw SchemaError("data vector does not match HT schema");
  Vector out(d_pca.size());
  for (Index j = 0; j < out.size(); ++j) out[j] = table.transform(j, d_pca.flat()[j]);
  return {table.schema, std::move(out)};
}

/// PCA decoder optionally followed by HT; the latent map used by samplers.
struct PcaHtModel {
  PcaBasis basis;
  std::optional<MarginalCdfTable> table;

  DataVector decode(const Vector& xi) const {
    DataVector d = pca_decode(basis, xi);
    return table ? apply_ht(*table, d) : d;
  }

  /// Decoded values at the given flattened rows only.
  Vector decode_rows(const Vector& xi, const std::vector<Index>& rows) const {
    Vector out = basis.phi(rows, Eigen::all) * xi;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto kk = static_cast<Index>(k);
      out[kk] += basis.mean[rows[k]];
      if (table) out[kk] = table->transform(rows[k], out[kk]);
    }
    return out;
  }
};

// Persistence: <dir>/pca_basis.json (metadata) with matrices in
// pca_mean.csv, pca_phi.csv, pca_u.csv and, if HT is fitted,
// ht_sorted.csv and ht_gauss.csv (columns mean, std).

inline void save(const std::filesystem::path& dir, const PcaHtModel& model) {
  const auto& b = model.basis;
  io::json meta = {{"format", "dsi-pca-basis"},
                   {"version", 1},
                   {"n_f", b.schema->n_f()},
                   {"n_latent", b.n_latent()},
                   {"n_members", b.n_members},
                   {"quantity_names", b.schema->quantity_names()},
                   {"times", b.schema->times()},
                   {"singular_values", io::to_json(b.singular_values)},
                   {"histogram_transform", model.table.has_value()}};
  io::write_json(dir / "pca_basis.json", meta);
  io::write_matrix_csv(dir / "pca_mean.csv", b.mean);
  io::write_matrix_csv(dir / "pca_phi.csv", b.phi);
  io::write_matrix_csv(dir / "pca_u.csv", b.u);
  if (model.table) {
    io::write_matrix_csv(dir / "ht_sorted.csv", model.table->sorted);
    Matrix gauss(b.mean.size(), 2);
    gauss << model.table->gauss_mean, model.table->gauss_std;
    io::write_matrix_csv(dir / "ht_gauss.csv", gauss);
  }
}

inline PcaHtModel load(const std::filesystem::path& dir) {
  const auto meta = io::read_json(dir / "pca_basis.json");
  if (meta.value("format", "") != "dsi-pca-basis" || meta.value("version", 0) != 1)
    throw IoError("unsupported PCA basis format in " + dir.string());
  PcaHtModel model;
  auto& b = model.basis;
  b.schema = make_schema(meta.at("quantity_names").get<std::vector<std::string>>(),
                         meta.at("times").get<std::vector<double>>());
  b.singular_values = io::vector_from_json(meta.at("singular_values"));
  b.n_members = meta.at("n_members").get<Index>();
  b.mean = io::read_matrix_csv(dir / "pca_mean.csv").col(0);
  b.phi = io::read_matrix_csv(dir / "pca_phi.csv");
  b.u = io::read_matrix_csv(dir / "pca_u.csv");
  if (b.mean.size() != b.schema->n_f() || b.phi.rows() != b.schema->n_f() || b.u.rows() != b.phi.rows() ||
      b.u.cols() != b.phi.cols())
    throw SchemaError("PCA basis matrices do not match the stored schema");
  if (meta.at("histogram_transform").get<bool>()) {
    MarginalCdfTable t;
    t.schema = b.schema;
    t.sorted = io::read_matrix_csv(dir / "ht_sorted.csv");
    const Matrix gauss = io::read_matrix_csv(dir / "ht_gauss.csv");
    if (t.sorted.rows() != b.schema->n_f() || gauss.rows() != b.schema->n_f() || gauss.cols() != 2)
      throw SchemaError("HT tables do not match the stored schema");
    t.gauss_mean = gauss.col(0);
    t.gauss_std = gauss.col(1);
    model.table = std::move(t);
  }
  return model;
}

}  // namespace dsi::pcaht
