#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sae {

using Index = Eigen::Index;

enum class SurveyKind { small_survey, large_survey, census };

/// How second-order inclusion probabilities are obtained for a dataset.
enum class SecondOrderRule { none, srs };

std::string to_string(SurveyKind kind);
SurveyKind parse_survey_kind(const std::string& s);

/// One survey or census row, as read from a file.
struct UnitRecord {
  std::string area_id;
  std::string unit_id;
  Eigen::VectorXd x;  // length p, x(0) == 1 when the intercept was prepended
  std::optional<double> y;
  double w = 1.0;
  std::optional<double> pi1;
  std::optional<double> z_line;
};

/// Column block of all units of one area. Optional per-unit columns are
/// stored as empty vectors when absent.
struct AreaSample {
  std::string id;
  std::vector<std::string> unit_ids;
  Eigen::MatrixXd x;       // n_d x p
  Eigen::VectorXd y;       // n_d or empty
  Eigen::VectorXd w;       // n_d
  Eigen::VectorXd pi1;     // n_d or empty
  Eigen::VectorXd z_line;  // n_d or empty
  double population_size = 0.0;  // N_d if known, 0 otherwise

  [[nodiscard]] Index size() const { return x.rows(); }
  [[nodiscard]] bool has_y() const { return y.size() > 0; }
  [[nodiscard]] double weight_total() const { return w.sum(); }
};

/// Immutable collection of area blocks. Areas keep their order of first
/// appearance; ids are opaque strings.
class SurveyDataset {
 public:
  SurveyDataset() = default;
  /// Validates every invariant; throws InputError on violation.
  SurveyDataset(SurveyKind kind, std::vector<AreaSample> areas,
                SecondOrderRule second_order = SecondOrderRule::none);

  static SurveyDataset from_records(SurveyKind kind, std::span<const UnitRecord> records,
                                    SecondOrderRule second_order = SecondOrderRule::none);

  [[nodiscard]] SurveyKind kind() const { return kind_; }
  [[nodiscard]] SecondOrderRule second_order() const { return second_order_; }
  [[nodiscard]] const std::vector<AreaSample>& areas() const { return areas_; }
  [[nodiscard]] const AreaSample& area(std::size_t i) const { return areas_.at(i); }
  [[nodiscard]] std::size_t area_count() const { return areas_.size(); }
  [[nodiscard]] Index covariate_dim() const { return p_; }
  [[nodiscard]] Index total_size() const;
  [[nodiscard]] bool has_responses() const;

  /// nullptr when the area is absent.
  [[nodiscard]] const AreaSample* find(const std::string& area_id) const;
  [[nodiscard]] std::vector<std::string> area_ids() const;
  [[nodiscard]] UnitRecord record(std::size_t area, Index i) const;
  [[nodiscard]] std::vector<UnitRecord> records() const;

  /// Same design, new responses (one vector per area, matching sizes).
  [[nodiscard]] SurveyDataset with_responses(std::vector<Eigen::VectorXd> y) const;
  [[nodiscard]] SurveyDataset with_weights(std::vector<Eigen::VectorXd> w) const;

 private:
  SurveyKind kind_ = SurveyKind::small_survey;
  SecondOrderRule second_order_ = SecondOrderRule::none;
  std::vector<AreaSample> areas_;
  Index p_ = 0;
};

/// Column mapping for CSV ingestion. Empty `x` selects every column named
/// x1, x2, ... in header order.
struct CsvSchema {
  std::string area = "area";
  std::vector<std::string> x;
  std::string y = "y";
  std::string w = "w";
  std::string pi1 = "pi1";
  std::string z_line = "z_line";
  std::string unit_id = "id";
  /// When set, this column is the intercept and no constant is prepended.
  std::optional<std::string> intercept;
  SurveyKind kind = SurveyKind::small_survey;
  SecondOrderRule second_order = SecondOrderRule::none;
};

SurveyDataset load_survey_csv(const std::string& path, const CsvSchema& schema);
SurveyDataset read_survey_csv(std::istream& in, const CsvSchema& schema);

/// Writes area, id, x1..x(p-1) (intercept dropped), y, w, pi1, z_line with
/// 17 significant digits. Reading it back with the default schema
/// reproduces the dataset.
void write_survey_csv(std::ostream& out, const SurveyDataset& data);

struct PairingEntry {
  std::string area_id;
  Index n = 0;        // n_d in s
  Index n_prime = 0;  // n'_d in s'
  bool substitute = false;       // n'_d < n_d: s'_d := s_d
  bool prediction_only = false;  // present in s' only
  bool missing_in_prime = false; // present in s only
};

struct PairingReport {
  std::vector<PairingEntry> entries;  // s areas in order, then s'-only areas
  [[nodiscard]] const PairingEntry* find(const std::string& area_id) const;
};

/// Checks covariate compatibility (InputError on mismatch) and reports the
/// per-area sizes and substitution flags. s and s' are treated as disjoint.
PairingReport validate_pairing(const SurveyDataset& s, const SurveyDataset& s_prime);

}  // namespace sae
