#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dsi/assim.hpp"
#include "dsi/synth.hpp"

namespace dsi::fixture {

/// Small linear-Gaussian problem: two quantities over six steps driven by four
/// parameters through smooth basis functions.
inline synth::LinearGaussianModel linear_fixture() {
  synth::LinearGaussianModel m;
  m.schema = regular_schema({"A", "B"}, 1.0, 1.0, 6);
  const Index n_f = m.schema->n_f(), n_m = 4;
  m.forward.resize(n_f, n_m);
  for (Index q = 0; q < 2; ++q)
    for (Index t = 0; t < 6; ++t)
      for (Index k = 0; k < n_m; ++k)
        m.forward(q * 6 + t, k) = std::cos(0.4 * static_cast<double>((k + 1) * (t + 1)) + 0.7 * static_cast<double>(q * k)) +
                                  (k == q ? 0.5 : 0.0);
  m.prior_mean = Vector{{4.0, -2.0, 1.0, 3.0}};
  m.prior_cov = Matrix::Identity(n_m, n_m);
  m.prior_cov(0, 1) = m.prior_cov(1, 0) = 0.3;
  m.prior_cov(2, 3) = m.prior_cov(3, 2) = -0.2;
  return m;
}

/// Observations of `model` at the given entries from parameters m_true, with
/// the given noise level; values are the exact model outputs (no noise) so
/// tests stay deterministic.
inline ObservationSet linear_observations(const synth::LinearGaussianModel& model, const Vector& m_true,
                                          const std::vector<ObservationEntry>& entries, double sigma) {
  const DataVector d = synth::simulate_linear(model, m_true);
  Vector values(static_cast<Index>(entries.size()));
  for (std::size_t k = 0; k < entries.size(); ++k)
    values[static_cast<Index>(k)] = d(entries[k].quantity, entries[k].time);
  return {entries, values, Vector::Constant(values.size(), sigma)};
}

inline std::vector<ObservationEntry> linear_entries() { return {{0, 1}, {0, 3}, {1, 2}, {1, 4}}; }

/// Latent map of the linear model with xi ~ N(0, I): d = G (mu + L xi).
inline assim::LatentDecoder linear_decoder(const synth::LinearGaussianModel& model) {
  const Matrix gl = model.forward * model.prior_cholesky();
  const Vector offset = model.forward * model.prior_mean;
  assim::LatentDecoder dec;
  dec.schema = model.schema;
  dec.n_latent = model.n_m();
  dec.full = [gl, offset](const Matrix& xi) -> Matrix { return (gl * xi).colwise() + offset; };
  dec.rows = [gl, offset](const Matrix& xi, const std::vector<Index>& rows) -> Matrix {
    return (gl(rows, Eigen::all) * xi).colwise() + offset(rows);
  };
  return dec;
}

/// Observation entries of the tank history-match setup: injector rates and
/// the third producer's phase rates at 180, 360 and 540 days.
inline std::vector<ObservationEntry> tank_entries(const DataSchema& s) {
  std::vector<ObservationEntry> out;
  for (const char* q : {"I1_WIR", "I2_WIR", "P3_WPR", "P3_OPR"})
    for (double t : {180.0, 360.0, 540.0}) out.push_back({s.quantity_index(q), s.time_index(t)});
  return out;
}

/// Noisy observations of `truth` with standard deviation fraction * |value|.
inline ObservationSet noisy_observations(const DataVector& truth, const std::vector<ObservationEntry>& entries,
                                         double fraction, Rng& rng) {
  Vector values(static_cast<Index>(entries.size())), sd(values.size());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto kk = static_cast<Index>(k);
    const double v = truth(entries[k].quantity, entries[k].time);
    sd[kk] = fraction * std::abs(v);
    values[kk] = v + sd[kk] * rng.normal();
  }
  return {entries, values, sd};
}

}  // namespace dsi::fixture
