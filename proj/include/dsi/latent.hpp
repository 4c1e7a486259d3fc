#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "dsi/assim.hpp"
#include "dsi/pcaht.hpp"
#include "dsi/rae/network.hpp"

namespace dsi {

/// Decoder view of a PCA basis with optional histogram transformation.
inline assim::LatentDecoder make_decoder(std::shared_ptr<const pcaht::PcaHtModel> model) {
  assim::LatentDecoder dec;
  dec.schema = model->basis.schema;
  dec.n_latent = model->basis.n_latent();
  dec.full = [model](const Matrix& xi) {
    Matrix out(model->basis.schema->n_f(), xi.cols());
    for (Index i = 0; i < xi.cols(); ++i) out.col(i) = model->decode(xi.col(i)).flat();
    return out;
  };
  dec.rows = [model](const Matrix& xi, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), xi.cols());
    for (Index i = 0; i < xi.cols(); ++i) out.col(i) = model->decode_rows(xi.col(i), rows);
    return out;
  };
  return dec;
}

/// Decoder view of trained RAE weights.
inline assim::LatentDecoder make_decoder(std::shared_ptr<const rae::RaeWeights> w, SchemaPtr schema) {
  rae::check_schema(*w, *schema);
  assim::LatentDecoder dec;
  dec.schema = schema;
  dec.n_latent = w->arch.n_latent;
  dec.full = [w](const Matrix& xi) { return rae::rae_decode_batch(*w, xi); };
  dec.rows = [w](const Matrix& xi, const std::vector<Index>& rows) { return rae::rae_decode_rows(*w, xi, rows); };
  return dec;
}

/// Prior latent ensemble of a PCA basis: the whitened projections.
inline assim::LatentEnsemble encode_prior(const pcaht::PcaHtModel& model, const Ensemble& e) {
  assim::LatentEnsemble le{model.table ? "pca_ht" : "pca", Matrix(model.basis.n_latent(), e.size()), e.ids()};
  for (Index i = 0; i < e.size(); ++i) le.xi.col(i) = pcaht::pca_encode(model.basis, e.member(i));
  return le;
}

inline assim::LatentEnsemble encode_prior(const rae::RaeWeights& w, const Ensemble& e) {
  return {"rae", rae::rae_encode(w, e), e.ids()};
}

// Latent ensemble CSV: first line "tag,<tag>", then "component,member_<id>,..."
// and one row per latent component.

inline void write_latent_csv(const std::filesystem::path& path, const assim::LatentEnsemble& le) {
  le.validate();
  auto out = io::open_for_write(path);
  out << "tag," << le.tag << "\ncomponent";
  for (auto id : le.ids) out << ",member_" << id;
  out << '\n';
  for (Index k = 0; k < le.xi.rows(); ++k) {
    out << k;
    for (Index i = 0; i < le.xi.cols(); ++i) out << ',' << io::format_double(le.xi(k, i));
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline assim::LatentEnsemble read_latent_csv(const std::filesystem::path& path) {
  auto in = io::open_for_read(path);
  std::string line;
  assim::LatentEnsemble le;
  if (!std::getline(in, line) || !line.starts_with("tag,")) throw IoError("missing tag line in " + path.string());
  le.tag = line.substr(4);
  if (!le.tag.empty() && le.tag.back() == '\r') le.tag.pop_back();
  if (!std::getline(in, line)) throw IoError("missing header in " + path.string());
  const auto header = io::split_csv(line);
  if (header.size() < 2 || header[0] != "component") throw IoError("bad latent header in " + path.string());
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (!header[c].starts_with("member_")) throw IoError("bad latent member column in " + path.string());
    le.ids.push_back(static_cast<std::uint64_t>(io::parse_double(header[c].substr(7))));
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = io::split_csv(line);
    if (cells.size() != header.size()) throw IoError("ragged latent row in " + path.string());
    std::vector<double> row;
    for (std::size_t c = 1; c < cells.size(); ++c) row.push_back(io::parse_double(cells[c]));
    rows.push_back(std::move(row));
  }
  le.xi.resize(static_cast<Index>(rows.size()), static_cast<Index>(le.ids.size()));
  for (std::size_t k = 0; k < rows.size(); ++k)
    for (std::size_t i = 0; i < le.ids.size(); ++i) le.xi(static_cast<Index>(k), static_cast<Index>(i)) = rows[k][i];
  le.validate();
  return le;
}

}  // namespace dsi
