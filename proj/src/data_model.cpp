#include "sae/data_model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "sae/csv.hpp"
#include "sae/error.hpp"

namespace sae {

std::string to_string(SurveyKind kind) {
  switch (kind) {
    case SurveyKind::small_survey: return "small_survey";
    case SurveyKind::large_survey: return "large_survey";
    case SurveyKind::census: return "census";
  }
  return "unknown";
}

SurveyKind parse_survey_kind(const std::string& s) {
  if (s == "small_survey") return SurveyKind::small_survey;
  if (s == "large_survey") return SurveyKind::large_survey;
  if (s == "census") return SurveyKind::census;
  throw InputError("unknown survey kind '" + s + "'");
}

// -------------------------------------------------------------------------
// SurveyDataset
// -------------------------------------------------------------------------

SurveyDataset::SurveyDataset(SurveyKind kind, std::vector<AreaSample> areas,
                             SecondOrderRule second_order)
    : kind_(kind), second_order_(second_order), areas_(std::move(areas)) {
  std::set<std::string> seen;
  p_ = areas_.empty() ? 0 : areas_.front().x.cols();
  for (auto& a : areas_) {
    const Index n = a.size();
    const std::string where = "area '" + a.id + "'";
    if (!seen.insert(a.id).second) throw InputError("duplicated " + where);
    if (n < 1) throw InputError(where + " has no records");
    if (a.x.cols() != p_) throw InputError("inconsistent covariate length in " + where);
    if (a.w.size() != n) throw InputError("weight column size mismatch in " + where);
    if (a.has_y() && a.y.size() != n) throw InputError("response size mismatch in " + where);
    if (a.pi1.size() != 0 && a.pi1.size() != n) throw InputError("pi1 size mismatch in " + where);
    if (a.z_line.size() != 0 && a.z_line.size() != n)
      throw InputError("z_line size mismatch in " + where);
    if (!a.x.allFinite()) throw InputError("non-finite covariate in " + where);
    for (Index i = 0; i < n; ++i) {
      if (!(a.w(i) > 0.0) || !std::isfinite(a.w(i))) throw InputError("nonpositive weight in " + where);
      if (a.pi1.size() && !(a.pi1(i) > 0.0 && a.pi1(i) <= 1.0))
        throw InputError("inclusion probability outside (0,1] in " + where);
      if (a.z_line.size() && !(a.z_line(i) > 0.0)) throw InputError("nonpositive z_line in " + where);
    }
    if (kind_ == SurveyKind::small_survey && !a.has_y())
      throw InputError("response missing in small survey, " + where);
    if (kind_ == SurveyKind::census && (a.w.array() != 1.0).any())
      throw InputError("census weights must all be 1 in " + where);
    if (a.unit_ids.empty()) {
      a.unit_ids.reserve(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) a.unit_ids.push_back(a.id + ":" + std::to_string(i + 1));
    } else if (static_cast<Index>(a.unit_ids.size()) != n) {
      throw InputError("unit id size mismatch in " + where);
    } else {
      std::set<std::string> ids(a.unit_ids.begin(), a.unit_ids.end());
      if (static_cast<Index>(ids.size()) != n) throw InputError("duplicated unit id in " + where);
    }
    if (kind_ == SurveyKind::census && a.population_size == 0.0) a.population_size = static_cast<double>(n);
    if (a.population_size == 0.0 && a.pi1.size()) {
      // Equal-probability designs imply N_d = n_d / pi.
      if ((a.pi1.array() == a.pi1(0)).all()) a.population_size = std::round(static_cast<double>(n) / a.pi1(0));
    }
  }
}

SurveyDataset SurveyDataset::from_records(SurveyKind kind, std::span<const UnitRecord> records,
                                          SecondOrderRule second_order) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<const UnitRecord*>> groups;
  for (const auto& r : records) {
    auto [it, inserted] = groups.try_emplace(r.area_id);
    if (inserted) order.push_back(r.area_id);
    it->second.push_back(&r);
  }
  std::vector<AreaSample> areas;
  areas.reserve(order.size());
  for (const auto& id : order) {
    const auto& rows = groups[id];
    const Index n = static_cast<Index>(rows.size());
    const Index p = rows.front()->x.size();
    AreaSample a;
    a.id = id;
    a.x.resize(n, p);
    a.w.resize(n);
    const bool any_y = std::any_of(rows.begin(), rows.end(), [](auto* r) { return r->y.has_value(); });
    const bool all_y = std::all_of(rows.begin(), rows.end(), [](auto* r) { return r->y.has_value(); });
    const bool all_pi = std::all_of(rows.begin(), rows.end(), [](auto* r) { return r->pi1.has_value(); });
    const bool all_z = std::all_of(rows.begin(), rows.end(), [](auto* r) { return r->z_line.has_value(); });
    if (any_y && !all_y) throw InputError("response missing for some units of area '" + id + "'");
    if (all_y) a.y.resize(n);
    if (all_pi) a.pi1.resize(n);
    if (all_z) a.z_line.resize(n);
    bool have_ids = true;
    for (Index i = 0; i < n; ++i) {
      const auto& r = *rows[static_cast<std::size_t>(i)];
      if (r.x.size() != p) throw InputError("inconsistent covariate length in area '" + id + "'");
      a.x.row(i) = r.x.transpose();
      a.w(i) = r.w;
      if (all_y) a.y(i) = *r.y;
      if (all_pi) a.pi1(i) = *r.pi1;
      if (all_z) a.z_line(i) = *r.z_line;
      have_ids = have_ids && !r.unit_id.empty();
    }
    if (have_ids)
      for (auto* r : rows) a.unit_ids.push_back(r->unit_id);
    areas.push_back(std::move(a));
  }
  return SurveyDataset(kind, std::move(areas), second_order);
}

Index SurveyDataset::total_size() const {
  Index n = 0;
  for (const auto& a : areas_) n += a.size();
  return n;
}

bool SurveyDataset::has_responses() const {
  return !areas_.empty() && std::all_of(areas_.begin(), areas_.end(), [](const auto& a) { return a.has_y(); });
}

const AreaSample* SurveyDataset::find(const std::string& area_id) const {
  for (const auto& a : areas_)
    if (a.id == area_id) return &a;
  return nullptr;
}

std::vector<std::string> SurveyDataset::area_ids() const {
  std::vector<std::string> ids;
  ids.reserve(areas_.size());
  for (const auto& a : areas_) ids.push_back(a.id);
  return ids;
}

UnitRecord SurveyDataset::record(std::size_t area, Index i) const {
  const auto& a = areas_.at(area);
  UnitRecord r;
  r.area_id = a.id;
  r.unit_id = a.unit_ids.at(static_cast<std::size_t>(i));
  r.x = a.x.row(i).transpose();
  if (a.has_y()) r.y = a.y(i);
  r.w = a.w(i);
  if (a.pi1.size()) r.pi1 = a.pi1(i);
  if (a.z_line.size()) r.z_line = a.z_line(i);
  return r;
}

std::vector<UnitRecord> SurveyDataset::records() const {
  std::vector<UnitRecord> out;
  out.reserve(static_cast<std::size_t>(total_size()));
  for (std::size_t d = 0; d < areas_.size(); ++d)
    for (Index i = 0; i < areas_[d].size(); ++i) out.push_back(record(d, i));
  return out;
}

SurveyDataset SurveyDataset::with_responses(std::vector<Eigen::VectorXd> y) const {
  if (y.size() != areas_.size()) throw InputError("with_responses: area count mismatch");
  auto areas = areas_;
  for (std::size_t d = 0; d < areas.size(); ++d) {
    if (y[d].size() != areas[d].size()) throw InputError("with_responses: size mismatch in area '" + areas[d].id + "'");
    areas[d].y = std::move(y[d]);
  }
  return SurveyDataset(kind_, std::move(areas), second_order_);
}

SurveyDataset SurveyDataset::with_weights(std::vector<Eigen::VectorXd> w) const {
  if (w.size() != areas_.size()) throw InputError("with_weights: area count mismatch");
  auto areas = areas_;
  for (std::size_t d = 0; d < areas.size(); ++d) {
    if (w[d].size() != areas[d].size()) throw InputError("with_weights: size mismatch in area '" + areas[d].id + "'");
    areas[d].w = std::move(w[d]);
  }
  return SurveyDataset(kind_, std::move(areas), second_order_);
}

// -------------------------------------------------------------------------
// CSV ingestion
// -------------------------------------------------------------------------

namespace {

std::optional<std::size_t> column_index(const std::vector<std::string>& header, const std::string& name) {
  if (name.empty()) return std::nullopt;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

bool is_x_column(const std::string& name) {
  if (name.size() < 2 || name[0] != 'x') return false;
  return std::all_of(name.begin() + 1, name.end(), [](char c) { return c >= '0' && c <= '9'; });
}

}  // namespace

SurveyDataset read_survey_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  long line_no = 0;
  if (!csv::next_record(in, line, line_no)) throw InputError("empty CSV: header row required");
  const auto header = csv::split_line(line);

  const auto area_col = column_index(header, schema.area);
  if (!area_col) throw InputError("missing column '" + schema.area + "'");

  std::vector<std::size_t> x_cols;
  if (schema.x.empty()) {
    std::vector<std::pair<long, std::size_t>> found;
    for (std::size_t i = 0; i < header.size(); ++i)
      if (is_x_column(header[i])) found.emplace_back(std::stol(header[i].substr(1)), i);
    std::sort(found.begin(), found.end());
    for (auto& f : found) x_cols.push_back(f.second);
  } else {
    for (const auto& name : schema.x) {
      auto c = column_index(header, name);
      if (!c) throw InputError("missing column '" + name + "'");
      x_cols.push_back(*c);
    }
  }
  std::optional<std::size_t> intercept_col;
  if (schema.intercept) {
    intercept_col = column_index(header, *schema.intercept);
    if (!intercept_col) throw InputError("missing column '" + *schema.intercept + "'");
  }
  const auto y_col = column_index(header, schema.y);
  if (schema.kind == SurveyKind::small_survey && !y_col)
    throw InputError("missing column '" + schema.y + "' (required for a small survey)");
  const auto w_col = column_index(header, schema.w);
  const auto pi_col = column_index(header, schema.pi1);
  const auto z_col = column_index(header, schema.z_line);
  const auto id_col = column_index(header, schema.unit_id);

  const Index p = static_cast<Index>(x_cols.size()) + 1;
  std::vector<UnitRecord> records;
  long row = 0;
  while (csv::next_record(in, line, line_no)) {
    ++row;
    const auto f = csv::split_line(line);
    const std::string at = " at row " + std::to_string(row);
    if (f.size() != header.size())
      throw InputError("expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(f.size()) + at);
    auto number = [&](std::size_t col, const std::string& what) {
      double v;
      if (!csv::parse_double(f[col], v)) throw InputError("non-numeric " + what + " '" + f[col] + "'" + at);
      return v;
    };
    UnitRecord r;
    r.area_id = f[*area_col];
    if (r.area_id.empty()) throw InputError("empty area id" + at);
    if (id_col) r.unit_id = f[*id_col];
    r.x.resize(p);
    r.x(0) = intercept_col ? number(*intercept_col, "intercept") : 1.0;
    for (std::size_t j = 0; j < x_cols.size(); ++j) r.x(static_cast<Index>(j) + 1) = number(x_cols[j], header[x_cols[j]]);
    if (y_col && !f[*y_col].empty()) r.y = number(*y_col, "response");
    if (schema.kind == SurveyKind::small_survey && !r.y) throw InputError("response missing in small survey" + at);
    if (w_col) {
      r.w = number(*w_col, "weight");
      if (!(r.w > 0.0)) throw InputError("nonpositive weight" + at);
    }
    if (schema.kind == SurveyKind::census && r.w != 1.0) throw InputError("census weight must be 1" + at);
    if (pi_col && !f[*pi_col].empty()) {
      r.pi1 = number(*pi_col, "pi1");
      if (!(*r.pi1 > 0.0 && *r.pi1 <= 1.0)) throw InputError("inclusion probability outside (0,1]" + at);
    }
    if (z_col && !f[*z_col].empty()) {
      r.z_line = number(*z_col, "z_line");
      if (!(*r.z_line > 0.0)) throw InputError("nonpositive z_line" + at);
    }
    records.push_back(std::move(r));
  }
  return SurveyDataset::from_records(schema.kind, records, schema.second_order);
}

SurveyDataset load_survey_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_survey_csv(in, schema);
}

void write_survey_csv(std::ostream& out, const SurveyDataset& data) {
  const Index p = data.covariate_dim();
  const auto& areas = data.areas();
  const bool y = data.has_responses();
  const bool pi = !areas.empty() && std::all_of(areas.begin(), areas.end(), [](auto& a) { return a.pi1.size() > 0; });
  const bool z = !areas.empty() && std::all_of(areas.begin(), areas.end(), [](auto& a) { return a.z_line.size() > 0; });
  out << "area,id";
  for (Index j = 1; j < p; ++j) out << ",x" << j;
  if (y) out << ",y";
  out << ",w";
  if (pi) out << ",pi1";
  if (z) out << ",z_line";
  out << '\n';
  for (const auto& a : areas) {
    for (Index i = 0; i < a.size(); ++i) {
      out << csv::quote_if_needed(a.id) << ',' << csv::quote_if_needed(a.unit_ids[static_cast<std::size_t>(i)]);
      for (Index j = 1; j < p; ++j) out << ',' << csv::format_double(a.x(i, j));
      if (y) out << ',' << csv::format_double(a.y(i));
      out << ',' << csv::format_double(a.w(i));
      if (pi) out << ',' << csv::format_double(a.pi1(i));
      if (z) out << ',' << csv::format_double(a.z_line(i));
      out << '\n';
    }
  }
}

// -------------------------------------------------------------------------
// Pairing
// -------------------------------------------------------------------------

const PairingEntry* PairingReport::find(const std::string& area_id) const {
  for (const auto& e : entries)
    if (e.area_id == area_id) return &e;
  return nullptr;
}

PairingReport validate_pairing(const SurveyDataset& s, const SurveyDataset& s_prime) {
  if (s.covariate_dim() != s_prime.covariate_dim())
    throw InputError("covariate dimension mismatch: s has p=" + std::to_string(s.covariate_dim()) +
                     ", s' has p=" + std::to_string(s_prime.covariate_dim()));
  PairingReport report;
  for (const auto& a : s.areas()) {
    PairingEntry e;
    e.area_id = a.id;
    e.n = a.size();
    const auto* b = s_prime.find(a.id);
    e.n_prime = b ? b->size() : 0;
    e.missing_in_prime = b == nullptr;
    e.substitute = e.n_prime < e.n;
    report.entries.push_back(e);
  }
  for (const auto& b : s_prime.areas()) {
    if (s.find(b.id)) continue;
    PairingEntry e;
    e.area_id = b.id;
    e.n_prime = b.size();
    e.prediction_only = true;
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace sae
