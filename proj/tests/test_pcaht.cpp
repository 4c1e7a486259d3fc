#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "dsi/pcaht.hpp"
#include "dsi/stats.hpp"
#include "dsi/synth.hpp"

namespace {

using namespace dsi;
using pcaht::Truncation;

Ensemble gaussian_ensemble(Index n_f, Index n, std::uint64_t seed) {
  Rng rng(seed);
  auto s = regular_schema({"G"}, 0.0, 1.0, n_f);
  Matrix m(n_f, n);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  // mix components so the covariance is not diagonal
  Matrix mix = Matrix::Identity(n_f, n_f);
  for (Index i = 0; i + 1 < n_f; ++i) mix(i + 1, i) = 0.5;
  return {s, (mix * m).colwise() + Vector::LinSpaced(n_f, 1.0, 2.0)};
}

const Ensemble& tank_prior() {
  static const Ensemble e = synth::generate_tank_ensemble(synth::TankPriorConfig{}, synth::tank_schema(), 800, 1);
  return e;
}

TEST(FitPca, RankOneEnsembleKeepsOneComponent) {
  auto s = regular_schema({"A", "B"}, 0.0, 1.0, 3);
  const Vector v = Vector::LinSpaced(6, 1.0, 6.0);
  Matrix m(6, 5);
  for (Index i = 0; i < 5; ++i) m.col(i) = (0.5 * static_cast<double>(i) - 1.0) * v;
  for (double energy : {0.1, 0.5, 0.99, 1.0}) EXPECT_EQ(pcaht::fit_pca({s, m}, Truncation::by_energy(energy)).n_latent(), 1);
}

TEST(FitPca, FullEnergyKeepsNumericalRank) {
  const auto e = gaussian_ensemble(10, 6, 3);
  const auto b = pcaht::fit_pca(e, Truncation::by_energy(1.0));
  EXPECT_EQ(b.n_latent(), 5);
}

TEST(FitPca, ExplicitCountAndLimits) {
  const auto b = pcaht::fit_pca(tank_prior(), Truncation::explicit_count(31));
  EXPECT_EQ(b.n_latent(), 31);
  EXPECT_THROW(pcaht::fit_pca(gaussian_ensemble(10, 6, 3), Truncation::explicit_count(6)), ConfigError);
  EXPECT_THROW(pcaht::fit_pca(gaussian_ensemble(10, 6, 3), Truncation::explicit_count(0)), ConfigError);
}

TEST(FitPca, DegenerateEnsembleIsError) {
  auto s = regular_schema({"A"}, 0.0, 1.0, 4);
  EXPECT_THROW(pcaht::fit_pca({s, Vector::Constant(4, 2.5).replicate(1, 5)}, Truncation::by_energy(0.9)),
               NumericalError);
}

TEST(FitPca, BasisInvariants) {
  const auto b = pcaht::fit_pca(tank_prior(), Truncation::by_energy(0.999));
  const Index l = b.n_latent();
  EXPECT_LE((b.u.transpose() * b.u - Matrix::Identity(l, l)).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE((b.phi - b.u * b.retained_singular_values().asDiagonal()).cwiseAbs().maxCoeff(), 1e-10);
  for (Index k = 1; k < b.singular_values.size(); ++k) EXPECT_LE(b.singular_values[k], b.singular_values[k - 1]);
  EXPECT_GE(b.singular_values.minCoeff(), 0.0);
  EXPECT_GE(stats::retained_energy(b.singular_values, l), 0.999);
  EXPECT_LT(stats::retained_energy(b.singular_values, l - 1), 0.999);
}

TEST(PcaDecode, OriginAndBasisColumn) {
  const auto b = pcaht::fit_pca(gaussian_ensemble(8, 30, 1), Truncation::explicit_count(4));
  EXPECT_EQ(pcaht::pca_decode(b, Vector::Zero(4)).flat(), b.mean);
  EXPECT_LE((pcaht::pca_decode(b, Vector::Unit(4, 0)).flat() - b.mean - b.phi.col(0)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(pcaht::pca_decode(b, Vector::Zero(3)), SchemaError);
}

TEST(PcaDecode, ReconstructionWithinTruncationResidual) {
  const auto& e = tank_prior();
  for (Index n_l : {5, 15, 31}) {
    const auto b = pcaht::fit_pca(e, Truncation::explicit_count(n_l));
    Matrix resid(e.matrix().rows(), e.size());
    for (Index i = 0; i < e.size(); ++i)
      resid.col(i) = pcaht::pca_decode(b, pcaht::pca_encode(b, e.member(i))).flat() - e.matrix().col(i);
    const Matrix centered = e.matrix().colwise() - b.mean;
    const double rel = resid.norm() / centered.norm();
    EXPECT_LE(rel, std::sqrt(1.0 - stats::retained_energy(b.singular_values, n_l)) + 1e-8);
  }
}

TEST(PcaEncode, MeanMapsToOriginAndPriorIsWhitened) {
  const auto& e = tank_prior();
  const auto b = pcaht::fit_pca(e, Truncation::explicit_count(31));
  EXPECT_LE(pcaht::pca_encode(b, DataVector(e.schema(), b.mean)).cwiseAbs().maxCoeff(), 1e-8);
  Matrix xi(31, e.size());
  for (Index i = 0; i < e.size(); ++i) xi.col(i) = pcaht::pca_encode(b, e.member(i));
  for (Index k = 0; k < 31; ++k) {
    const double mean = xi.row(k).mean();
    const double var = (xi.row(k).array() - mean).square().sum() / static_cast<double>(e.size() - 1);
    EXPECT_NEAR(mean, 0.0, 1e-8);
    EXPECT_GE(var, 0.8);
    EXPECT_LE(var, 1.2);
  }
}

TEST(PcaEncode, LeftInverseOfDecode) {
  const auto b = pcaht::fit_pca(tank_prior(), Truncation::explicit_count(31));
  Rng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    Vector xi(31);
    for (Index k = 0; k < 31; ++k) xi[k] = rng.normal();
    EXPECT_LE((pcaht::pca_encode(b, pcaht::pca_decode(b, xi)) - xi).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(FitHt, ConstantComponentIsAStep) {
  auto e = gaussian_ensemble(5, 40, 2);
  e.matrix().row(2).setConstant(7.25);
  const auto b = pcaht::fit_pca(e, Truncation::by_energy(1.0));
  const auto t = pcaht::fit_ht(e, b);
  EXPECT_LE(t.gauss_std[2], 1e-12);
  for (double x : {-1e6, 0.0, 7.25, 3e3}) EXPECT_EQ(t.transform(2, x), 7.25);
}

TEST(FitHt, RankOneStdIsAbsoluteColumn) {
  auto s = regular_schema({"A"}, 0.0, 1.0, 4);
  const Vector c{{1.0, -2.0, 0.5, 3.0}};
  Matrix m(4, 6);
  for (Index i = 0; i < 6; ++i) m.col(i) = static_cast<double>(i * i % 5) * c;
  const Ensemble e(s, m);
  const auto b = pcaht::fit_pca(e, Truncation::by_energy(1.0));
  ASSERT_EQ(b.n_latent(), 1);
  const auto t = pcaht::fit_ht(e, b);
  EXPECT_LE((t.gauss_std - b.phi.col(0).cwiseAbs()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FitHt, GaussianPriorGivesNearIdentity) {
  const auto e = gaussian_ensemble(6, 4000, 9);
  const auto b = pcaht::fit_pca(e, Truncation::by_energy(1.0));
  const auto t = pcaht::fit_ht(e, b);
  for (Index j = 0; j < 6; ++j) {
    const double sd = t.gauss_std[j];
    for (double z = -1.28; z <= 1.28; z += 0.16) {
      const double x = t.gauss_mean[j] + z * sd;
      EXPECT_LE(std::abs(t.transform(j, x) - x), 0.1 * sd) << "component " << j << " z " << z;
    }
  }
}

TEST(ApplyHt, MedianMaximumAndMonotone) {
  const auto& e = tank_prior();
  const auto b = pcaht::fit_pca(e, Truncation::explicit_count(31));
  const auto t = pcaht::fit_ht(e, b);
  for (Index j : {0, 150, 333, 799}) {
    const auto row = t.row(j);
    EXPECT_DOUBLE_EQ(t.transform(j, t.gauss_mean[j]), stats::interpolated_quantile(row, 0.5));
    EXPECT_EQ(t.transform(j, 1e300), row.back());
    EXPECT_EQ(t.transform(j, -1e300), row.front());
    double prev = -INFINITY;
    for (double z = -5.0; z <= 5.0; z += 0.05) {
      const double y = t.transform(j, t.gauss_mean[j] + z * t.gauss_std[j]);
      EXPECT_GE(y, prev);
      EXPECT_GE(y, row.front());
      EXPECT_LE(y, row.back());
      prev = y;
    }
  }
}

TEST(ApplyHt, PreservesPriorMarginals) {
  const auto& e = tank_prior();
  pcaht::PcaHtModel model{pcaht::fit_pca(e, Truncation::explicit_count(31)), std::nullopt};
  model.table = pcaht::fit_ht(e, model.basis);
  Rng rng(17);
  Matrix out(e.matrix().rows(), 800);
  for (Index i = 0; i < 800; ++i) {
    Vector xi(31);
    for (Index k = 0; k < 31; ++k) xi[k] = rng.normal();
    out.col(i) = model.decode(xi).flat();
  }
  double worst = 0.0;
  for (Index j = 0; j < out.rows(); ++j) {
    const Vector a = out.row(j), p = e.matrix().row(j);
    worst = std::max(worst, stats::ks_two_sample({a.data(), a.data() + a.size()}, {p.data(), p.data() + p.size()}));
  }
  EXPECT_LE(worst, 0.08);
}

TEST(PcaHtModel, DecodeRowsMatchesFullDecode) {
  const auto& e = tank_prior();
  pcaht::PcaHtModel model{pcaht::fit_pca(e, Truncation::explicit_count(31)), std::nullopt};
  model.table = pcaht::fit_ht(e, model.basis);
  Vector xi = Vector::LinSpaced(31, -1.0, 1.0);
  const std::vector<Index> rows{0, 17, 205, 799};
  const Vector full = model.decode(xi).flat();
  const Vector part = model.decode_rows(xi, rows);
  for (std::size_t k = 0; k < rows.size(); ++k) EXPECT_DOUBLE_EQ(part[static_cast<Index>(k)], full[rows[k]]);
}

TEST(PcaHtModel, PersistenceRoundTrip) {
  const auto e = gaussian_ensemble(7, 25, 6);
  pcaht::PcaHtModel model{pcaht::fit_pca(e, Truncation::by_energy(0.95)), std::nullopt};
  model.table = pcaht::fit_ht(e, model.basis);
  const auto dir = std::filesystem::temp_directory_path() / "dsi_test_pcaht";
  std::filesystem::remove_all(dir);
  pcaht::save(dir, model);
  const auto back = pcaht::load(dir);
  EXPECT_EQ(back.basis.phi, model.basis.phi);
  EXPECT_EQ(back.basis.mean, model.basis.mean);
  ASSERT_TRUE(back.table.has_value());
  EXPECT_EQ(back.table->sorted, model.table->sorted);
  const Vector xi = Vector::Constant(model.basis.n_latent(), 0.3);
  EXPECT_EQ(back.decode(xi).flat(), model.decode(xi).flat());
  std::filesystem::remove_all(dir);
  EXPECT_THROW(pcaht::load(dir), MissingArtifactError);
}

}  // namespace
