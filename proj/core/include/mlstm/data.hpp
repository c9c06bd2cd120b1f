#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mlstm {

enum class Label { CN = 0, MCI = 1, AD = 2 };
inline constexpr std::size_t kLabelCount = 3;

std::string_view to_string(Label label);

// Maps raw diagnosis strings onto the three merged groups:
//   CN, NL, SMC -> CN;  MCI, EMCI, LMCI -> MCI;  AD, Dementia -> AD.
// Conversion labels ("MCI to Dementia", "NL to MCI") resolve to their
// target status. Matching is case-insensitive. Empty input yields nullopt.
// Throws DataError on anything else.
std::optional<Label> parse_label(std::string_view text);

struct Record {
  std::string subject_id;
  int visit_month = 0;
  std::vector<std::optional<double>> biomarkers;
  std::optional<Label> label;
  std::optional<double> icv;

  friend bool operator==(const Record&, const Record&) = default;
};

// Long-format longitudinal cohort. Records are kept sorted by
// (subject_id, visit_month) and that pair is unique.
struct CohortTable {
  std::vector<std::string> biomarker_names;
  bool has_icv = false;
  std::vector<Record> records;

  std::size_t biomarker_count() const { return biomarker_names.size(); }
  std::vector<std::string> subject_ids() const;
  std::size_t subject_count() const;
  // Sorts records into canonical order. Throws DataError on duplicate
  // (subject, visit) pairs or inconsistent biomarker widths.
  void canonicalize();

  friend bool operator==(const CohortTable&, const CohortTable&) = default;
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct LoadResult {
  CohortTable table;
  std::vector<RowError> errors;  // rows skipped because a field did not parse
};

// Header: subject_id,visit_month,<biomarkers...>,label[,icv]. Empty field is
// missing; "NA" and "NaN" are rejected. Missing required columns and
// duplicate (subject, visit) rows throw DataError.
LoadResult load_csv(const std::filesystem::path& path);
LoadResult parse_csv(std::istream& in, const std::string& source = "<stream>");

void write_csv(const CohortTable& table, std::ostream& out);
void save_csv(const CohortTable& table, const std::filesystem::path& path);

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);
// Strict finite-double parser; nullopt on anything else.
std::optional<double> parse_double(std::string_view text);

CohortTable normalize_icv(const CohortTable& table);

struct OutlierCell {
  std::string subject_id;
  int visit_month = 0;
  std::size_t biomarker = 0;
  double value = 0.0;
  double z = 0.0;
};

struct OutlierReport {
  std::vector<OutlierCell> removed;
  std::vector<std::string> warnings;
};

struct OutlierResult {
  CohortTable table;
  OutlierReport report;
};

// Within-class outlier removal. Each (label, biomarker) group is scanned with
// a leave-one-out z-score: the value with the largest |z| above the threshold
// becomes missing and the group is rescanned until no value exceeds it.
// Unlabeled visits borrow the subject's nearest labeled visit (earlier wins on
// ties); subjects without any label are left untouched.
OutlierResult filter_outliers(const CohortTable& table, double z_threshold = 3.0);

// |v_i - mean(others)| / sd(others), sample SD over the other values.
// Zero spread gives 0 when v_i equals the others and +inf otherwise.
double leave_one_out_z(std::span<const double> values, std::size_t index);

struct ScalingSpec {
  std::vector<std::string> names;
  std::vector<double> min;
  std::vector<double> max;

  std::size_t size() const { return names.size(); }
  double range(std::size_t b) const { return max[b] - min[b]; }
  double scale(std::size_t b, double value) const;
  double invert(std::size_t b, double scaled) const;
};

ScalingSpec fit_scaling(const CohortTable& train);
// Maps every value to [-1, 1]; out-of-range values are clipped and counted.
CohortTable apply_scaling(const CohortTable& table, const ScalingSpec& spec,
                          std::size_t* clipped = nullptr);
std::vector<double> invert_scaling(std::span<const double> scaled, std::size_t biomarker,
                                   const ScalingSpec& spec);

void save_scaling(const ScalingSpec& spec, const std::filesystem::path& path);
ScalingSpec load_scaling(const std::filesystem::path& path);

// Keeps a subject only if every biomarker has at least k observed visits.
CohortTable filter_min_visits(const CohortTable& table, std::size_t k = 3);

struct GridReport {
  std::vector<std::string> collisions;
  std::vector<std::string> dropped;
};

struct GridResult {
  CohortTable table;
  GridReport report;
};

// Snaps visits to the nearest multiple of interval_months (halfway points go
// to the earlier slot) and emits one row per slot 0..horizon/interval for
// every subject; empty slots become all-missing rows. When two visits share a
// slot the nearer one is kept (earlier month on ties).
GridResult resample_grid(const CohortTable& table, int interval_months, int horizon_months);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
};

struct SplitResult {
  CohortTable train;
  CohortTable val;
  CohortTable test;
  std::vector<std::string> warnings;
};

// Label at the earliest labeled visit of a subject's (sorted) records.
std::optional<Label> baseline_label(std::span<const Record> subject_records);

// Stratified by baseline label. Per stratum, val and test receive
// floor(n * fraction) subjects and the remainder goes to train.
SplitResult split(const CohortTable& table, const SplitSpec& spec);

// J subjects x T steps. x holds grid slots 0..T-1 and s holds slots 1..T of
// the same biomarkers (M == N). Masked-off cells are exactly 0.0.
struct MaskedBatch {
  std::size_t J = 0;
  std::size_t T = 0;
  std::size_t N = 0;
  std::size_t M = 0;
  std::vector<double> x;
  std::vector<std::uint8_t> x_mask;
  std::vector<double> s;
  std::vector<std::uint8_t> s_mask;
  std::vector<std::string> subject_ids;
  std::vector<std::string> biomarker_names;
  std::vector<std::optional<Label>> labels;  // J x (T + 1), per grid slot
  int interval_months = 12;

  std::size_t xi(std::size_t j, std::size_t t, std::size_t n) const { return (j * T + t) * N + n; }
  std::size_t si(std::size_t j, std::size_t t, std::size_t m) const { return (j * T + t) * M + m; }
  std::span<const double> x_step(std::size_t j, std::size_t t) const {
    return {x.data() + (j * T + t) * N, N};
  }
  std::size_t slots() const { return T + 1; }

  // Grid-slot view over x and s together (slot 0..T, biomarker n).
  std::optional<double> slot_value(std::size_t j, std::size_t slot, std::size_t n) const;
  void set_slot(std::size_t j, std::size_t slot, std::size_t n, std::optional<double> value);
  std::optional<Label> label(std::size_t j, std::size_t slot) const { return labels[j * slots() + slot]; }

  std::size_t observed_inputs(std::size_t j, std::size_t n) const;
  std::size_t observed_targets(std::size_t j, std::size_t m) const;

  // Throws StructuralError on shape or zeroing violations.
  void check_invariants() const;
};

// Subjects in sorted order. Visit months must be multiples of interval_months;
// slots beyond T are ignored.
MaskedBatch tensorize(const CohortTable& grid, std::size_t T, int interval_months);
// Inverse of tensorize for debugging: one row per subject and slot 0..T.
CohortTable untensorize(const MaskedBatch& batch);

// Applies one row subset of the batch (subjects in the given order).
MaskedBatch select_subjects(const MaskedBatch& batch, std::span<const std::size_t> rows);

}  // namespace mlstm
