#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dsi/error.hpp"
#include "dsi/rng.hpp"

namespace dsi {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Quantity names and reporting times shared by every data vector of an
/// ensemble. Data vectors are flattened quantity-major: entry (q, t) lives at
/// q * n_t + t.
class DataSchema {
 public:
  DataSchema(std::vector<std::string> quantity_names, std::vector<double> times)
      : names_(std::move(quantity_names)), times_(std::move(times)) {
    if (names_.empty()) throw SchemaError("schema needs at least one quantity");
    if (times_.size() < 2) throw SchemaError("schema needs at least two time steps");
    for (std::size_t t = 1; t < times_.size(); ++t) {
      if (!(times_[t] > times_[t - 1]))
        throw SchemaError("schema times must be strictly increasing");
    }
    std::set<std::string> seen;
    for (const auto& n : names_) {
      if (n.empty()) throw SchemaError("empty quantity name");
      if (!seen.insert(n).second) throw SchemaError("duplicate quantity name '" + n + "'");
    }
  }

  Index n_qoi() const noexcept { return static_cast<Index>(names_.size()); }
  Index n_t() const noexcept { return static_cast<Index>(times_.size()); }
  Index n_f() const noexcept { return n_qoi() * n_t(); }

  const std::vector<std::string>& quantity_names() const noexcept { return names_; }
  const std::vector<double>& times() const noexcept { return times_; }

  Index flat_index(Index q, Index t) const {
    if (q < 0 || q >= n_qoi() || t < 0 || t >= n_t())
      throw SchemaError("index (" + std::to_string(q) + ", " + std::to_string(t) +
                        ") outside schema");
    return q * n_t() + t;
  }

  Index quantity_index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw SchemaError("unknown quantity '" + name + "'");
    return static_cast<Index>(it - names_.begin());
  }

  /// Reporting step whose time equals `time` exactly (observation times must
  /// coincide with reporting steps).
  Index time_index(double time) const {
    auto it = std::find(times_.begin(), times_.end(), time);
    if (it == times_.end())
      throw SchemaError("time " + std::to_string(time) + " is not a reporting step");
    return static_cast<Index>(it - times_.begin());
  }

  bool operator==(const DataSchema&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<double> times_;
};

using SchemaPtr = std::shared_ptr<const DataSchema>;

inline SchemaPtr make_schema(std::vector<std::string> names, std::vector<double> times) {
  return std::make_shared<const DataSchema>(std::move(names), std::move(times));
}

/// Schema with times t_start, t_start + t_step, ... (n_t values).
inline SchemaPtr regular_schema(std::vector<std::string> names, double t_start,
                                double t_step, Index n_t) {
  std::vector<double> times(static_cast<std::size_t>(std::max<Index>(n_t, 0)));
  for (std::size_t i = 0; i < times.size(); ++i)
    times[i] = t_start + t_step * static_cast<double>(i);
  return make_schema(std::move(names), std::move(times));
}

inline bool same_schema(const SchemaPtr& a, const SchemaPtr& b) {
  return a == b || (a && b && *a == *b);
}

/// One realization: all quantities over all reporting times.
class DataVector {
 public:
  DataVector(SchemaPtr schema, Vector flat) : schema_(std::move(schema)), values_(std::move(flat)) {
    if (!schema_) throw SchemaError("data vector without schema");
    if (values_.size() != schema_->n_f())
      throw SchemaError("data vector length " + std::to_string(values_.size()) +
                        " does not match schema size " + std::to_string(schema_->n_f()));
  }

  static DataVector zeros(SchemaPtr schema) {
    const Index n = schema->n_f();
    return {std::move(schema), Vector::Zero(n)};
  }

  const SchemaPtr& schema() const noexcept { return schema_; }
  const Vector& flat() const noexcept { return values_; }
  Vector& flat() noexcept { return values_; }
  Index size() const noexcept { return values_.size(); }

  double operator()(Index q, Index t) const { return values_[schema_->flat_index(q, t)]; }
  double& operator()(Index q, Index t) { return values_[schema_->flat_index(q, t)]; }

  /// (n_qoi x n_t) view of the flattened values.
  Eigen::Map<const RowMatrix> as_matrix() const {
    return {values_.data(), schema_->n_qoi(), schema_->n_t()};
  }

  bool all_finite() const { return values_.allFinite(); }

 private:
  SchemaPtr schema_;
  Vector values_;
};

/// Ordered collection of data vectors stored column-wise (n_f x n_r). Each
/// member carries a stable id; per-member random streams are keyed by id so
/// that reordering or sub-setting an ensemble does not change any member's
/// draws.
class Ensemble {
 public:
  Ensemble() = default;
  Ensemble(SchemaPtr schema, Matrix members, std::vector<std::uint64_t> ids = {})
      : schema_(std::move(schema)), members_(std::move(members)), ids_(std::move(ids)) {
    if (!schema_) throw SchemaError("ensemble without schema");
    if (members_.rows() != schema_->n_f())
      throw SchemaError("ensemble rows " + std::to_string(members_.rows()) +
                        " do not match schema size " + std::to_string(schema_->n_f()));
    if (ids_.empty()) {
      ids_.resize(static_cast<std::size_t>(members_.cols()));
      std::iota(ids_.begin(), ids_.end(), std::uint64_t{0});
    }
    if (static_cast<Index>(ids_.size()) != members_.cols())
      throw SchemaError("ensemble id count does not match member count");
  }

  static Ensemble from_members(const std::vector<DataVector>& members) {
    if (members.empty()) throw SchemaError("cannot build an ensemble from zero members");
    const SchemaPtr& schema = members.front().schema();
    Matrix m(schema->n_f(), static_cast<Index>(members.size()));
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (!same_schema(members[i].schema(), schema))
        throw SchemaError("ensemble members have different schemas");
      m.col(static_cast<Index>(i)) = members[i].flat();
    }
    return {schema, std::move(m)};
  }

  const SchemaPtr& schema() const noexcept { return schema_; }
  Index size() const noexcept { return members_.cols(); }
  const Matrix& matrix() const noexcept { return members_; }
  Matrix& matrix() noexcept { return members_; }
  const std::vector<std::uint64_t>& ids() const noexcept { return ids_; }
  std::uint64_t id(Index i) const { return ids_.at(static_cast<std::size_t>(i)); }

  DataVector member(Index i) const { return {schema_, members_.col(i)}; }

  Ensemble subset(const std::vector<Index>& indices) const {
    Matrix m(members_.rows(), static_cast<Index>(indices.size()));
    std::vector<std::uint64_t> ids;
    ids.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
      m.col(static_cast<Index>(k)) = members_.col(indices[k]);
      ids.push_back(id(indices[k]));
    }
    return {schema_, std::move(m), std::move(ids)};
  }

 private:
  SchemaPtr schema_;
  Matrix members_;
  std::vector<std::uint64_t> ids_;
};

struct ObservationEntry {
  Index quantity = 0;
  Index time = 0;
  bool operator==(const ObservationEntry&) const = default;
  auto operator<=>(const ObservationEntry&) const = default;
};

/// Observed values at selected (quantity, time) pairs with independent
/// Gaussian errors; C_D = diag(error_std^2).
class ObservationSet {
 public:
  ObservationSet() = default;
  ObservationSet(std::vector<ObservationEntry> entries, Vector values, Vector error_std)
      : entries_(std::move(entries)), values_(std::move(values)), error_std_(std::move(error_std)) {
    const auto n = static_cast<Index>(entries_.size());
    if (values_.size() != n || error_std_.size() != n)
      throw SchemaError("observation entries, values and error_std differ in length");
    if (!values_.allFinite() || !error_std_.allFinite())
      throw SchemaError("observation values must be finite");
    if ((error_std_.array() < 0.0).any()) throw SchemaError("observation error_std must be >= 0");
    std::set<ObservationEntry> seen(entries_.begin(), entries_.end());
    if (seen.size() != entries_.size()) throw SchemaError("duplicate observation entry");
  }

  Index size() const noexcept { return static_cast<Index>(entries_.size()); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<ObservationEntry>& entries() const noexcept { return entries_; }
  const Vector& values() const noexcept { return values_; }
  const Vector& error_std() const noexcept { return error_std_; }
  Vector variance() const { return error_std_.array().square(); }

  /// Flattened positions of the entries; throws SchemaError if out of range.
  std::vector<Index> flat_indices(const DataSchema& schema) const {
    std::vector<Index> idx;
    idx.reserve(entries_.size());
    for (const auto& e : entries_) idx.push_back(schema.flat_index(e.quantity, e.time));
    return idx;
  }

  void require_positive_errors() const {
    if ((error_std_.array() <= 0.0).any())
      throw ConfigError("observation error_std must be strictly positive for this operation");
  }

 private:
  std::vector<ObservationEntry> entries_;
  Vector values_;
  Vector error_std_;
};

/// H d: the values of `d` at the observation entries, in entry order.
inline Vector select_hm(const DataVector& d, const ObservationSet& obs) {
  const auto idx = obs.flat_indices(*d.schema());
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Index>(k)] = d.flat()[idx[k]];
  return out;
}

/// H applied to every member; result is n_hm x n_r.
inline Matrix select_hm(const Ensemble& e, const ObservationSet& obs) {
  const auto idx = obs.flat_indices(*e.schema());
  return e.matrix()(idx, Eigen::all);
}

/// One draw from N(d_obs, C_D).
inline Vector perturb_observations(const ObservationSet& obs, Rng& rng) {
  Vector out = obs.values();
  for (Index k = 0; k < out.size(); ++k) out[k] += obs.error_std()[k] * rng.normal();
  return out;
}

inline DataVector ensemble_mean(const Ensemble& e) {
  if (e.size() < 1) throw SchemaError("mean of an empty ensemble");
  return {e.schema(), e.matrix().rowwise().mean()};
}

/// D = [d_1 - mean, ..., d_n - mean] / sqrt(n - 1).
inline Matrix centered_data_matrix(const Ensemble& e) {
  if (e.size() < 2) throw SchemaError("centered data matrix needs at least two members");
  const Vector mean = e.matrix().rowwise().mean();
  return (e.matrix().colwise() - mean) / std::sqrt(static_cast<double>(e.size() - 1));
}

}  // namespace dsi
