#pragma once

#include <cmath>
#include <vector>

#include "dsi/core.hpp"
#include "dsi/rng.hpp"

namespace dsi::rs {

struct RsResult {
  std::vector<Index> accepted;  // positions in the proposal set, ascending
  Vector probability;           // acceptance probability per proposal
  Vector mismatch;              // O_i per proposal
  Index proposals = 0;
  double min_mismatch = 0.0;
};

/// O_i = 0.5 (H d_i - d_obs)^T C_D^-1 (H d_i - d_obs) for every member.
inline Vector data_mismatch(const Ensemble& e, const ObservationSet& obs) {
  obs.require_positive_errors();
  const Matrix r = (select_hm(e, obs).colwise() - obs.values()).array().colwise() / obs.error_std().array();
  return 0.5 * r.colwise().squaredNorm().transpose();
}

/// Accepts proposal i with probability exp(-(O_i - min O)), using one
/// uniform draw from the stream derive_seed(seed, ids[i]).
inline RsResult rejection_sample_mismatch(const Vector& mismatch, const std::vector<std::uint64_t>& ids,
                                          std::uint64_t seed) {
  if (mismatch.size() < 1) throw SchemaError("rejection sampling needs at least one proposal");
  if (static_cast<Index>(ids.size()) != mismatch.size()) throw SchemaError("one id per proposal required");
  if (!mismatch.allFinite()) throw NumericalError("non-finite data mismatch in rejection sampling");
  RsResult out;
  out.proposals = mismatch.size();
  out.mismatch = mismatch;
  out.min_mismatch = mismatch.minCoeff();
  out.probability = (-(mismatch.array() - out.min_mismatch)).exp().matrix();
  for (Index i = 0; i < mismatch.size(); ++i) {
    Rng rng(derive_seed(seed, ids[static_cast<std::size_t>(i)]));
    if (rng.uniform() < out.probability[i]) out.accepted.push_back(i);
  }
  return out;
}

inline RsResult rejection_sample(const Ensemble& e, const ObservationSet& obs, std::uint64_t seed) {
  return rejection_sample_mismatch(data_mismatch(e, obs), e.ids(), seed);
}

}  // namespace dsi::rs
