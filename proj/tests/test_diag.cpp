#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "dsi/assim.hpp"
#include "dsi/diag.hpp"
#include "dsi/rs.hpp"
#include "fixtures.hpp"

namespace {

using namespace dsi;
using namespace dsi::diag;

Ensemble one_quantity(const std::vector<double>& values) {
  auto schema = regular_schema({"X"}, 0.0, 1.0, 2);
  Matrix m(2, static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m.col(static_cast<Index>(i)).setConstant(values[i]);
  return {schema, m};
}

Ensemble random_ensemble(Index n_qoi, Index n_t, Index n, std::uint64_t seed) {
  std::vector<std::string> names;
  for (Index q = 0; q < n_qoi; ++q) names.push_back("Q" + std::to_string(q));
  auto schema = regular_schema(names, 1.0, 1.0, n_t);
  Rng rng(seed);
  Matrix m(schema->n_f(), n);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
  // Give the columns some correlation structure.
  for (Index r = 1; r < m.rows(); ++r) m.row(r) += 0.6 * m.row(r - 1);
  return {schema, m};
}

// ---------------------------------------------------------------------------
// Quantile bands
// ---------------------------------------------------------------------------

TEST(QuantileBands, TwoMembersMedianInterpolates) {
  const Matrix b = quantile_bands(one_quantity({0.0, 10.0}), {0.5});
  EXPECT_DOUBLE_EQ(b(0, 0), 5.0);
}

TEST(QuantileBands, ConstantEnsemble) {
  const Matrix b = quantile_bands(one_quantity({3.0, 3.0, 3.0, 3.0}), {0.1, 0.5, 0.9});
  EXPECT_TRUE((b.array() == 3.0).all());
}

TEST(QuantileBands, PlottingPositionRule) {
  std::vector<double> v(100);
  for (std::size_t i = 0; i < 100; ++i) v[i] = static_cast<double>(100 - i);  // unsorted input
  const Matrix b = quantile_bands(one_quantity(v), {0.1});
  // h = 0.1 * 99 = 9.9 -> x(10) + 0.9 (x(11) - x(10)) = 10 + 0.9.
  EXPECT_NEAR(b(0, 0), 10.9, 1e-12);
}

TEST(QuantileBands, MonotoneInProbability) {
  const auto e = random_ensemble(2, 5, 37, 4);
  const Matrix b = quantile_bands(e, {0.05, 0.1, 0.3, 0.5, 0.77, 0.9, 0.99});
  for (Index j = 1; j < b.cols(); ++j) EXPECT_TRUE((b.col(j).array() >= b.col(j - 1).array()).all());
}

TEST(QuantileBands, RejectsBadInput) {
  EXPECT_THROW(quantile_bands(one_quantity({1.0, 2.0}), {0.0}), ConfigError);
  EXPECT_THROW(quantile_bands(one_quantity({1.0, 2.0}), {1.0}), ConfigError);
  EXPECT_THROW(quantile_bands(one_quantity({1.0}), {0.5}), SchemaError);
}

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

TEST(Derived, TankFieldBalanceIsZero) {
  const auto schema = synth::tank_schema();
  const auto e = synth::generate_tank_ensemble({}, schema, 50, 3);
  const auto d = derived_quantity(e, "BAL = sum(*_WIR) - sum(P*_WPR) - sum(P*_OPR)");
  const auto inj = derived_quantity(e, "sum(I?_WIR)");
  EXPECT_EQ(d.schema()->quantity_names(), std::vector<std::string>{"BAL"});
  EXPECT_EQ(inj.schema()->quantity_names(), std::vector<std::string>{"sum(I?_WIR)"});
  EXPECT_LT(d.matrix().cwiseAbs().maxCoeff(), 1e-10 * inj.matrix().cwiseAbs().maxCoeff());
}

TEST(Derived, WaterCutOfEqualPhasesIsHalf) {
  auto schema = regular_schema({"P1_WPR", "P1_OPR"}, 0.0, 1.0, 3);
  Matrix m(6, 2);
  m << 1, 4, 2, 5, 3, 6, 1, 4, 2, 5, 3, 6;
  const auto d = derived_quantities(Ensemble(schema, m), standard_derived(*schema));
  const Index wcut = d.schema()->quantity_index("P1_WCUT");
  const Index liq = d.schema()->quantity_index("P1_LIQ");
  EXPECT_TRUE((d.matrix().middleRows(wcut * 3, 3).array() == 0.5).all());
  EXPECT_DOUBLE_EQ(d.matrix()(liq * 3 + 2, 1), 12.0);
}

TEST(Derived, OperatorPrecedenceAndUnaryMinus) {
  auto schema = regular_schema({"A", "B"}, 0.0, 1.0, 2);
  Matrix m(4, 1);
  m << 2, 3, 5, 7;
  const Ensemble e(schema, m);
  const auto d = derived_quantity(e, "2 + A * B - -(A - B) / 2");
  // t0: 2 + 10 + (2 - 5)/2 = 10.5; t1: 2 + 21 + (3 - 7)/2 = 21.
  EXPECT_DOUBLE_EQ(d.matrix()(0, 0), 10.5);
  EXPECT_DOUBLE_EQ(d.matrix()(1, 0), 21.0);
}

TEST(Derived, DivisionPolicies) {
  auto schema = regular_schema({"A", "B"}, 0.0, 1.0, 2);
  Matrix m(4, 1);
  m << 1, 2, 0, 4;
  const Ensemble e(schema, m);
  const auto nulls = derived_quantity(e, "A / B", DivisionPolicy::null_marker);
  EXPECT_TRUE(std::isnan(nulls.matrix()(0, 0)));
  EXPECT_DOUBLE_EQ(nulls.matrix()(1, 0), 0.5);
  const auto clamped = derived_quantity(e, "A / B", DivisionPolicy::clamp);
  EXPECT_DOUBLE_EQ(clamped.matrix()(0, 0), 1.0 / division_guard);
}

TEST(Derived, ErrorsNameTheProblem) {
  const auto e = synth::generate_tank_ensemble({}, synth::tank_schema(), 3, 1);
  EXPECT_THROW(derived_quantity(e, "P9_WPR + 1"), ConfigError);
  EXPECT_THROW(derived_quantity(e, "sum(X*)"), ConfigError);
  EXPECT_THROW(derived_quantity(e, "(P1_WPR"), ConfigError);
  EXPECT_THROW(derived_quantity(e, "P1_WPR +"), ConfigError);
  EXPECT_THROW(derived_quantity(e, "P1_WPR P1_OPR"), ConfigError);
}

TEST(Derived, LiquidCrossPlotInput) {
  const auto schema = synth::tank_schema();
  const auto e = synth::generate_tank_ensemble({}, schema, 20, 9);
  const auto liq = derived_quantity(e, "P3_LIQ = P3_WPR + P3_OPR");
  const auto dir = std::filesystem::temp_directory_path() / "dsi_test_diag";
  std::filesystem::remove_all(dir);
  write_crossplot_csv(dir / "cross.csv", liq, "P3_LIQ", 300.0, 1800.0);
  std::ifstream in(dir / "cross.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "member,quantity,time_a,value_a,time_b,value_b");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 20);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Correlation series
// ---------------------------------------------------------------------------

TEST(CorrCov, SelfAndNegatedCorrelation) {
  const auto e = random_ensemble(1, 4, 30, 2);
  auto with_neg = derived_quantities(e, {"Q0 = Q0", "N = -Q0", "C = 0 * Q0 + 1"});
  const auto self = corr_cov_series(with_neg, "Q0", "Q0");
  const auto neg = corr_cov_series(with_neg, "Q0", "N");
  const auto flat = corr_cov_series(with_neg, "Q0", "C");
  for (Index t = 0; t < 4; ++t) {
    EXPECT_NEAR(self.correlation[t], 1.0, 1e-12);
    EXPECT_NEAR(neg.correlation[t], -1.0, 1e-12);
    EXPECT_NEAR(neg.covariance[t], -self.covariance[t], 1e-12);
    EXPECT_TRUE(std::isnan(flat.correlation[t]));
    EXPECT_EQ(flat.covariance[t], 0.0);
  }
}

TEST(CorrCov, BoundedCorrelation) {
  const auto e = random_ensemble(3, 6, 12, 8);
  const auto c = corr_cov_series(e, "Q0", "Q2");
  EXPECT_LE(c.correlation.cwiseAbs().maxCoeff(), 1.0);
}

TEST(CorrCov, EsmdaPosteriorKeepsFieldBalanceCorrelated) {
  const auto schema = synth::tank_schema();
  const auto prior = synth::generate_tank_ensemble({}, schema, 300, 13);
  Rng rng(14);
  const auto truth = synth::simulate_tank(synth::sample_tank_params({}, rng), schema);
  const auto obs = fixture::noisy_observations(truth, fixture::tank_entries(*schema), 0.1, rng);
  const auto post = assim::esmda_update_data(prior, obs, assim::uniform_config(4, 15)).posterior;
  const auto field = derived_quantities(post, {"INJ = sum(*_WIR)", "PROD = sum(*_WPR) + sum(*_OPR)"});
  const auto c = corr_cov_series(field, "INJ", "PROD");
  for (Index t = 0; t < schema->n_t(); ++t)
    if (schema->times()[static_cast<std::size_t>(t)] > 600.0) EXPECT_GT(c.correlation[t], 0.99);
}

// ---------------------------------------------------------------------------
// Mahalanobis distance
// ---------------------------------------------------------------------------

TEST(Mahalanobis, RankOneReference) {
  auto schema = regular_schema({"A"}, 0.0, 1.0, 4);
  const Vector dir{{1.0, -2.0, 0.5, 3.0}};
  Matrix m(4, 6);
  for (Index i = 0; i < 6; ++i) m.col(i) = static_cast<double>(i) * dir;
  const auto b = fit_mahalanobis(Ensemble(schema, m), 0.99);
  EXPECT_EQ(b.k, 1);
}

TEST(Mahalanobis, CenterAndUnitDirection) {
  const auto e = random_ensemble(2, 5, 40, 21);
  const auto b = fit_mahalanobis(e, 0.99);
  EXPECT_NEAR(mahalanobis_distance(b, b.mean), 0.0, 1e-14);
  EXPECT_NEAR(mahalanobis_distance(b, b.mean + b.sigma[0] * b.u.col(0)), 1.0, 1e-12);
  EXPECT_LT((b.u.transpose() * b.u - Matrix::Identity(b.k, b.k)).cwiseAbs().maxCoeff(), 1e-8);
  for (Index j = 1; j < b.k; ++j) EXPECT_GE(b.sigma[j - 1], b.sigma[j]);
  EXPECT_GT(b.sigma.minCoeff(), 0.0);
}

TEST(Mahalanobis, ReferenceMeanSquareIsNearK) {
  const auto e = random_ensemble(2, 10, 120, 22);
  const auto b = fit_mahalanobis(e, 0.99);
  double mean_sq = 0.0;
  for (double dm : mahalanobis_distances(b, e)) mean_sq += dm * dm / 120.0;
  EXPECT_NEAR(mean_sq, static_cast<double>(b.k), 0.2 * static_cast<double>(b.k));
}

TEST(Mahalanobis, EnergyCriterionIsMinimal) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto e = random_ensemble(3, 7, 25, 30 + seed);
    for (double energy : {0.5, 0.9, 0.99, 0.999}) {
      const auto b = fit_mahalanobis(e, energy);
      EXPECT_GE(stats::retained_energy(b.all_singular_values, b.k), energy);
      if (b.k > 1) EXPECT_LT(stats::retained_energy(b.all_singular_values, b.k - 1), energy);
      EXPECT_EQ(b.retained_energy, stats::retained_energy(b.all_singular_values, b.k));
    }
  }
}

TEST(Mahalanobis, InvariantUnderOrthogonalChangeOfBasis) {
  const auto e = random_ensemble(2, 4, 30, 23);
  const auto q_mat = Eigen::HouseholderQR<Matrix>(random_ensemble(2, 4, 8, 24).matrix().leftCols(8)).householderQ() *
                     Matrix::Identity(8, 8);
  const Ensemble rotated(e.schema(), q_mat * e.matrix());
  const auto a = fit_mahalanobis(e, 0.99);
  const auto b = fit_mahalanobis(rotated, 0.99);
  Rng rng(25);
  Vector d(8);
  for (Index k = 0; k < 8; ++k) d[k] = rng.normal();
  EXPECT_NEAR(mahalanobis_distance(a, d), mahalanobis_distance(b, q_mat * d), 1e-10);
}

TEST(Mahalanobis, DegenerateReferenceRejected) {
  EXPECT_THROW(fit_mahalanobis(one_quantity({2.0, 2.0, 2.0}), 0.99), NumericalError);
  EXPECT_THROW(fit_mahalanobis(one_quantity({2.0}), 0.99), SchemaError);
}

TEST(DmCompare, SelfComparisonIsZeroAndPriorSeparates) {
  const auto schema = synth::tank_schema(2, 3, 30.0, 30.0, 20);
  const auto prior = synth::generate_tank_ensemble({}, schema, 100000, 41);
  Rng rng(42);
  const auto truth = synth::simulate_tank(synth::sample_tank_params({}, rng), schema);
  const auto obs = fixture::noisy_observations(truth, fixture::tank_entries(*schema), 0.1, rng);
  const auto r = rs::rejection_sample(prior, obs, 43);
  ASSERT_GE(r.accepted.size(), 5u);
  const auto accepted = prior.subset(r.accepted);
  const auto basis = fit_mahalanobis(accepted, 0.99);
  const auto c = dm_cdf_compare(basis, {{"rs", accepted}, {"prior", prior.subset([] {
                                                              std::vector<Index> v(800);
                                                              std::iota(v.begin(), v.end(), 0);
                                                              return v;
                                                            }())}},
                                "rs");
  EXPECT_EQ(c.ks_vs_reference.at("rs"), 0.0);
  EXPECT_GT(c.ks_vs_reference.at("prior"), 0.5);
  EXPECT_THROW(dm_cdf_compare(basis, {{"rs", accepted}}, "rs"), ConfigError);
}

TEST(TidyCsv, BandsHaveOneRowPerComponentAndProb) {
  const auto e = random_ensemble(2, 3, 10, 5);
  const auto dir = std::filesystem::temp_directory_path() / "dsi_test_diag_bands";
  std::filesystem::remove_all(dir);
  write_bands_csv(dir / "bands.csv", e, {0.1, 0.5, 0.9});
  std::ifstream in(dir / "bands.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "quantity,time,prob,value");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2 * 3 * 3);
  std::filesystem::remove_all(dir);
}

}  // namespace
