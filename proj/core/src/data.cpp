#include "mlstm/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "mlstm/error.hpp"
#include "mlstm/math.hpp"

namespace mlstm {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == ',' && !quoted) {
      fields.emplace_back(trim(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  fields.emplace_back(trim(current));
  return fields;
}

std::optional<int> parse_int(std::string_view text) {
  int value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return value;
}

}  // namespace

std::string_view to_string(Label label) {
  switch (label) {
    case Label::CN: return "CN";
    case Label::MCI: return "MCI";
    case Label::AD: return "AD";
  }
  return "?";
}

std::optional<Label> parse_label(std::string_view text) {
  std::string key = lower(trim(text));
  if (key.empty()) return std::nullopt;
  // "X to Y" conversions belong to the target status.
  if (auto pos = key.rfind(" to "); pos != std::string::npos) key = key.substr(pos + 4);
  static const std::map<std::string, Label, std::less<>> aliases = {
      {"cn", Label::CN},       {"nl", Label::CN},      {"smc", Label::CN},
      {"normal", Label::CN},   {"mci", Label::MCI},    {"emci", Label::MCI},
      {"lmci", Label::MCI},    {"ad", Label::AD},      {"dementia", Label::AD},
  };
  if (auto it = aliases.find(key); it != aliases.end()) return it->second;
  throw DataError("unknown diagnosis label '" + std::string(text) + "'");
}

std::vector<std::string> CohortTable::subject_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (ids.empty() || ids.back() != r.subject_id) ids.push_back(r.subject_id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::size_t CohortTable::subject_count() const { return subject_ids().size(); }

void CohortTable::canonicalize() {
  for (const auto& r : records) {
    if (r.biomarkers.size() != biomarker_names.size()) {
      throw DataError("record " + r.subject_id + "/" + std::to_string(r.visit_month) + " has " +
                      std::to_string(r.biomarkers.size()) + " biomarkers, expected " +
                      std::to_string(biomarker_names.size()));
    }
  }
  std::stable_sort(records.begin(), records.end(), [](const Record& a, const Record& b) {
    return std::tie(a.subject_id, a.visit_month) < std::tie(b.subject_id, b.visit_month);
  });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].subject_id == records[i - 1].subject_id &&
        records[i].visit_month == records[i - 1].visit_month) {
      throw DataError("duplicate visit (" + records[i].subject_id + ", " +
                      std::to_string(records[i].visit_month) + ")");
    }
  }
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw StructuralError("format_double: conversion failed");
  return std::string(buf.data(), ptr);
}

std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

LoadResult parse_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_fields(line);
      break;
    }
  }
  if (header.empty()) throw DataError(source + ": missing header row");
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  std::optional<std::size_t> subject_col, month_col, label_col, icv_col;
  std::vector<std::size_t> biomarker_cols;
  LoadResult result;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name = lower(header[c]);
    if (name == "subject_id") subject_col = c;
    else if (name == "visit_month") month_col = c;
    else if (name == "label") label_col = c;
    else if (name == "icv") icv_col = c;
    else {
      biomarker_cols.push_back(c);
      result.table.biomarker_names.push_back(header[c]);
    }
  }
  for (auto [col, name] : {std::pair{subject_col, "subject_id"}, std::pair{month_col, "visit_month"},
                           std::pair{label_col, "label"}}) {
    if (!col) throw DataError(source + ": missing required column '" + name + "'");
  }
  if (biomarker_cols.empty()) throw DataError(source + ": no biomarker columns");
  result.table.has_icv = icv_col.has_value();

  std::map<std::pair<std::string, int>, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      result.errors.push_back({line_no, "expected " + std::to_string(header.size()) +
                                            " fields, found " + std::to_string(fields.size())});
      continue;
    }
    Record rec;
    rec.subject_id = fields[*subject_col];
    if (rec.subject_id.empty()) {
      result.errors.push_back({line_no, "empty subject_id"});
      continue;
    }
    auto month = parse_int(fields[*month_col]);
    if (!month || *month < 0) {
      result.errors.push_back({line_no, "bad visit_month '" + fields[*month_col] + "'"});
      continue;
    }
    rec.visit_month = *month;
    bool ok = true;
    for (std::size_t b = 0; b < biomarker_cols.size() && ok; ++b) {
      const std::string& f = fields[biomarker_cols[b]];
      if (f.empty()) {
        rec.biomarkers.emplace_back();
        continue;
      }
      auto v = parse_double(f);
      if (!v) {
        result.errors.push_back({line_no, "bad value '" + f + "' in column " + header[biomarker_cols[b]]});
        ok = false;
      } else {
        rec.biomarkers.emplace_back(*v);
      }
    }
    if (!ok) continue;
    try {
      rec.label = parse_label(fields[*label_col]);
    } catch (const DataError& e) {
      result.errors.push_back({line_no, e.what()});
      continue;
    }
    if (icv_col && !fields[*icv_col].empty()) {
      auto v = parse_double(fields[*icv_col]);
      if (!v) {
        result.errors.push_back({line_no, "bad icv '" + fields[*icv_col] + "'"});
        continue;
      }
      rec.icv = *v;
    }
    auto key = std::pair{rec.subject_id, rec.visit_month};
    if (auto it = seen.find(key); it != seen.end()) {
      throw DataError(source + ": duplicate visit (" + rec.subject_id + ", " +
                      std::to_string(rec.visit_month) + ") on lines " + std::to_string(it->second) +
                      " and " + std::to_string(line_no));
    }
    seen.emplace(std::move(key), line_no);
    result.table.records.push_back(std::move(rec));
  }
  result.table.canonicalize();
  return result;
}

LoadResult load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

void write_csv(const CohortTable& table, std::ostream& out) {
  out << "subject_id,visit_month";
  for (const auto& name : table.biomarker_names) out << ',' << name;
  out << ",label";
  if (table.has_icv) out << ",icv";
  out << '\n';
  for (const auto& r : table.records) {
    out << r.subject_id << ',' << r.visit_month;
    for (const auto& v : r.biomarkers) {
      out << ',';
      if (v) out << format_double(*v);
    }
    out << ',';
    if (r.label) out << to_string(*r.label);
    if (table.has_icv) {
      out << ',';
      if (r.icv) out << format_double(*r.icv);
    }
    out << '\n';
  }
}

void save_csv(const CohortTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(table, out);
}

CohortTable normalize_icv(const CohortTable& table) {
  CohortTable out = table;
  std::set<std::string> bad;
  for (auto& r : out.records) {
    const bool has_data = std::any_of(r.biomarkers.begin(), r.biomarkers.end(),
                                      [](const auto& v) { return v.has_value(); });
    if (!has_data) continue;
    if (!r.icv || !(*r.icv > 0.0)) {
      bad.insert(r.subject_id);
      continue;
    }
    for (auto& v : r.biomarkers) {
      if (v) *v /= *r.icv;
    }
  }
  if (!bad.empty()) {
    std::string list;
    for (const auto& s : bad) list += (list.empty() ? "" : ", ") + s;
    throw DataError("normalize_icv: missing or non-positive ICV for subjects: " + list);
  }
  return out;
}

double leave_one_out_z(std::span<const double> values, std::size_t index) {
  const std::size_t n = values.size();
  if (n < 3) throw StructuralError("leave_one_out_z: need at least 3 values");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i != index) mean += values[i];
  }
  mean /= static_cast<double>(n - 1);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i != index) ss += (values[i] - mean) * (values[i] - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 2));
  const double dev = std::abs(values[index] - mean);
  if (sd == 0.0) return dev == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return dev / sd;
}

namespace {

// Per-record label used for outlier grouping.
std::vector<std::optional<Label>> grouping_labels(const CohortTable& table) {
  std::vector<std::optional<Label>> labels(table.records.size());
  std::size_t begin = 0;
  while (begin < table.records.size()) {
    std::size_t end = begin;
    while (end < table.records.size() && table.records[end].subject_id == table.records[begin].subject_id) ++end;
    for (std::size_t i = begin; i < end; ++i) {
      if (table.records[i].label) {
        labels[i] = table.records[i].label;
        continue;
      }
      int best = std::numeric_limits<int>::max();
      for (std::size_t k = begin; k < end; ++k) {
        if (!table.records[k].label) continue;
        const int d = std::abs(table.records[k].visit_month - table.records[i].visit_month);
        // Records are sorted by month, so strict < keeps the earlier one on ties.
        if (d < best) {
          best = d;
          labels[i] = table.records[k].label;
        }
      }
    }
    begin = end;
  }
  return labels;
}

}  // namespace

OutlierResult filter_outliers(const CohortTable& table, double z_threshold) {
  if (!(z_threshold > 0.0)) throw StructuralError("filter_outliers: z_threshold must be > 0");
  OutlierResult result{table, {}};
  auto& records = result.table.records;
  const auto labels = grouping_labels(table);

  for (std::size_t cls = 0; cls < kLabelCount; ++cls) {
    for (std::size_t b = 0; b < table.biomarker_count(); ++b) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < records.size(); ++i) {
        if (labels[i] && static_cast<std::size_t>(*labels[i]) == cls && records[i].biomarkers[b]) {
          members.push_back(i);
        }
      }
      const std::string group = std::string(to_string(static_cast<Label>(cls))) + "/" +
                                table.biomarker_names[b];
      if (members.size() < 3) {
        if (!members.empty()) {
          result.report.warnings.push_back("group " + group + " has " +
                                           std::to_string(members.size()) +
                                           " observed values; skipped");
        }
        continue;
      }
      while (members.size() >= 3) {
        // Center on the group mean to limit cancellation in the running sums.
        double center = 0.0;
        for (auto i : members) center += *records[i].biomarkers[b];
        center /= static_cast<double>(members.size());
        double sum = 0.0, sumsq = 0.0;
        for (auto i : members) {
          const double d = *records[i].biomarkers[b] - center;
          sum += d;
          sumsq += d * d;
        }
        const double n1 = static_cast<double>(members.size() - 1);
        const double spread_floor = 1e-24 * (sumsq / static_cast<double>(members.size()) + 1e-300);
        double worst_z = -1.0;
        std::size_t worst = 0;
        for (std::size_t k = 0; k < members.size(); ++k) {
          const double d = *records[members[k]].biomarkers[b] - center;
          const double s = sum - d;
          const double q = sumsq - d * d;
          const double mean_others = s / n1;
          const double var = std::max(0.0, (q - s * s / n1) / (n1 - 1.0));
          const double dev = std::abs(d - mean_others);
          double z;
          if (var <= spread_floor) {
            z = dev <= 1e-12 * std::sqrt(sumsq / static_cast<double>(members.size()))
                    ? 0.0
                    : std::numeric_limits<double>::infinity();
          } else {
            z = dev / std::sqrt(var);
          }
          if (z > worst_z) {
            worst_z = z;
            worst = k;
          }
        }
        if (!(worst_z > z_threshold)) break;
        auto& rec = records[members[worst]];
        result.report.removed.push_back({rec.subject_id, rec.visit_month, b, *rec.biomarkers[b], worst_z});
        rec.biomarkers[b].reset();
        members.erase(members.begin() + static_cast<std::ptrdiff_t>(worst));
      }
    }
  }
  std::sort(result.report.removed.begin(), result.report.removed.end(),
            [](const OutlierCell& a, const OutlierCell& b) {
              return std::tie(a.subject_id, a.visit_month, a.biomarker) <
                     std::tie(b.subject_id, b.visit_month, b.biomarker);
            });
  return result;
}

double ScalingSpec::scale(std::size_t b, double value) const {
  return 2.0 * (value - min[b]) / (max[b] - min[b]) - 1.0;
}

double ScalingSpec::invert(std::size_t b, double scaled) const {
  return (scaled + 1.0) * 0.5 * (max[b] - min[b]) + min[b];
}

ScalingSpec fit_scaling(const CohortTable& train) {
  ScalingSpec spec;
  spec.names = train.biomarker_names;
  const std::size_t n = train.biomarker_count();
  spec.min.assign(n, std::numeric_limits<double>::infinity());
  spec.max.assign(n, -std::numeric_limits<double>::infinity());
  for (const auto& r : train.records) {
    for (std::size_t b = 0; b < n; ++b) {
      if (!r.biomarkers[b]) continue;
      spec.min[b] = std::min(spec.min[b], *r.biomarkers[b]);
      spec.max[b] = std::max(spec.max[b], *r.biomarkers[b]);
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (!(spec.min[b] < spec.max[b])) {
      throw DataError("fit_scaling: biomarker '" + spec.names[b] +
                      "' is constant or unobserved in the training split");
    }
  }
  return spec;
}

CohortTable apply_scaling(const CohortTable& table, const ScalingSpec& spec, std::size_t* clipped) {
  if (spec.size() != table.biomarker_count()) {
    throw StructuralError("apply_scaling: spec has " + std::to_string(spec.size()) +
                          " biomarkers, table has " + std::to_string(table.biomarker_count()));
  }
  CohortTable out = table;
  std::size_t count = 0;
  for (auto& r : out.records) {
    for (std::size_t b = 0; b < spec.size(); ++b) {
      if (!r.biomarkers[b]) continue;
      double v = spec.scale(b, *r.biomarkers[b]);
      if (v < -1.0 || v > 1.0) {
        v = std::clamp(v, -1.0, 1.0);
        ++count;
      }
      r.biomarkers[b] = v;
    }
  }
  if (clipped) *clipped = count;
  return out;
}

std::vector<double> invert_scaling(std::span<const double> scaled, std::size_t biomarker,
                                   const ScalingSpec& spec) {
  std::vector<double> out(scaled.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) out[i] = spec.invert(biomarker, scaled[i]);
  return out;
}

void save_scaling(const ScalingSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "name,min,max\n";
  for (std::size_t b = 0; b < spec.size(); ++b) {
    out << spec.names[b] << ',' << format_double(spec.min[b]) << ',' << format_double(spec.max[b]) << '\n';
  }
}

ScalingSpec load_scaling(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scaling file " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "name,min,max") {
    throw FormatError(path.string() + ": expected header 'name,min,max'");
  }
  ScalingSpec spec;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split_fields(line);
    auto lo = f.size() == 3 ? parse_double(f[1]) : std::nullopt;
    auto hi = f.size() == 3 ? parse_double(f[2]) : std::nullopt;
    if (!lo || !hi || !(*lo < *hi)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad scaling row");
    }
    spec.names.push_back(f[0]);
    spec.min.push_back(*lo);
    spec.max.push_back(*hi);
  }
  return spec;
}

CohortTable filter_min_visits(const CohortTable& table, std::size_t k) {
  if (k < 1) throw StructuralError("filter_min_visits: k must be >= 1");
  CohortTable out;
  out.biomarker_names = table.biomarker_names;
  out.has_icv = table.has_icv;
  std::size_t begin = 0;
  const auto& recs = table.records;
  while (begin < recs.size()) {
    std::size_t end = begin;
    while (end < recs.size() && recs[end].subject_id == recs[begin].subject_id) ++end;
    bool keep = true;
    for (std::size_t b = 0; b < table.biomarker_count() && keep; ++b) {
      std::size_t observed = 0;
      for (std::size_t i = begin; i < end; ++i) observed += recs[i].biomarkers[b].has_value();
      keep = observed >= k;
    }
    if (keep) out.records.insert(out.records.end(), recs.begin() + static_cast<std::ptrdiff_t>(begin),
                                 recs.begin() + static_cast<std::ptrdiff_t>(end));
    begin = end;
  }
  return out;
}

GridResult resample_grid(const CohortTable& table, int interval_months, int horizon_months) {
  if (interval_months <= 0 || horizon_months < 0 || horizon_months % interval_months != 0) {
    throw StructuralError("resample_grid: interval must be positive and divide the horizon");
  }
  const int slots = horizon_months / interval_months + 1;
  GridResult result;
  result.table.biomarker_names = table.biomarker_names;
  result.table.has_icv = table.has_icv;
  const auto& recs = table.records;
  std::size_t begin = 0;
  while (begin < recs.size()) {
    std::size_t end = begin;
    while (end < recs.size() && recs[end].subject_id == recs[begin].subject_id) ++end;
    std::vector<const Record*> chosen(static_cast<std::size_t>(slots), nullptr);
    for (std::size_t i = begin; i < end; ++i) {
      const Record& r = recs[i];
      const int slot = (r.visit_month + (interval_months - 1) / 2) / interval_months;
      if (slot >= slots) {
        result.report.dropped.push_back(r.subject_id + " month " + std::to_string(r.visit_month) +
                                        " beyond horizon");
        continue;
      }
      const Record*& cur = chosen[static_cast<std::size_t>(slot)];
      if (!cur) {
        cur = &r;
        continue;
      }
      const int grid_month = slot * interval_months;
      const int d_cur = std::abs(cur->visit_month - grid_month);
      const int d_new = std::abs(r.visit_month - grid_month);
      const Record* keep = d_new < d_cur ? &r : cur;
      const Record* lose = keep == cur ? &r : cur;
      result.report.collisions.push_back(r.subject_id + " months " + std::to_string(cur->visit_month) +
                                         " and " + std::to_string(r.visit_month) + " share slot month " +
                                         std::to_string(grid_month) + "; kept " +
                                         std::to_string(keep->visit_month) + ", dropped " +
                                         std::to_string(lose->visit_month));
      cur = keep;
    }
    for (int slot = 0; slot < slots; ++slot) {
      Record row;
      if (const Record* src = chosen[static_cast<std::size_t>(slot)]) {
        row = *src;
      } else {
        row.subject_id = recs[begin].subject_id;
        row.biomarkers.assign(table.biomarker_count(), std::nullopt);
      }
      row.visit_month = slot * interval_months;
      result.table.records.push_back(std::move(row));
    }
    begin = end;
  }
  return result;
}

std::optional<Label> baseline_label(std::span<const Record> subject_records) {
  for (const auto& r : subject_records) {
    if (r.label) return r.label;
  }
  return std::nullopt;
}

SplitResult split(const CohortTable& table, const SplitSpec& spec) {
  if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw StructuralError("split: fractions must be non-negative and sum to 1");
  }
  // Strata: CN, MCI, AD, then subjects with no label at all.
  std::array<std::vector<std::string>, kLabelCount + 1> strata;
  const auto& recs = table.records;
  std::size_t begin = 0;
  while (begin < recs.size()) {
    std::size_t end = begin;
    while (end < recs.size() && recs[end].subject_id == recs[begin].subject_id) ++end;
    auto label = baseline_label(std::span(recs).subspan(begin, end - begin));
    strata[label ? static_cast<std::size_t>(*label) : kLabelCount].push_back(recs[begin].subject_id);
    begin = end;
  }

  SplitResult result;
  for (auto* t : {&result.train, &result.val, &result.test}) {
    t->biomarker_names = table.biomarker_names;
    t->has_icv = table.has_icv;
  }
  std::map<std::string, int> assignment;  // 0 train, 1 val, 2 test
  Rng rng(spec.seed);
  for (std::size_t c = 0; c < strata.size(); ++c) {
    auto& ids = strata[c];
    if (ids.empty()) continue;
    std::sort(ids.begin(), ids.end());
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[rng.below(i)]);
    }
    const auto n = ids.size();
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.test + 1e-9));
    const std::string name = c < kLabelCount ? std::string(to_string(static_cast<Label>(c))) : "unlabeled";
    if (c == kLabelCount) {
      result.warnings.push_back(std::to_string(n) + " subjects have no label; stratified separately");
    }
    if ((spec.val > 0 && n_val == 0) || (spec.test > 0 && n_test == 0)) {
      result.warnings.push_back("stratum " + name + " has only " + std::to_string(n) +
                                " subjects; some splits receive none of them");
    }
    for (std::size_t i = 0; i < n; ++i) {
      assignment[ids[i]] = i < n_val ? 1 : (i < n_val + n_test ? 2 : 0);
    }
  }
  for (const auto& r : recs) {
    switch (assignment.at(r.subject_id)) {
      case 0: result.train.records.push_back(r); break;
      case 1: result.val.records.push_back(r); break;
      default: result.test.records.push_back(r); break;
    }
  }
  return result;
}

std::optional<double> MaskedBatch::slot_value(std::size_t j, std::size_t slot, std::size_t n) const {
  if (slot < T) {
    const auto i = xi(j, slot, n);
    return x_mask[i] ? std::optional<double>(x[i]) : std::nullopt;
  }
  const auto i = si(j, slot - 1, n);
  return s_mask[i] ? std::optional<double>(s[i]) : std::nullopt;
}

void MaskedBatch::set_slot(std::size_t j, std::size_t slot, std::size_t n, std::optional<double> value) {
  if (slot < T) {
    const auto i = xi(j, slot, n);
    x[i] = value.value_or(0.0);
    x_mask[i] = value.has_value();
  }
  if (slot >= 1) {
    const auto i = si(j, slot - 1, n);
    s[i] = value.value_or(0.0);
    s_mask[i] = value.has_value();
  }
}

std::size_t MaskedBatch::observed_inputs(std::size_t j, std::size_t n) const {
  std::size_t count = 0;
  for (std::size_t t = 0; t < T; ++t) count += x_mask[xi(j, t, n)];
  return count;
}

std::size_t MaskedBatch::observed_targets(std::size_t j, std::size_t m) const {
  std::size_t count = 0;
  for (std::size_t t = 0; t < T; ++t) count += s_mask[si(j, t, m)];
  return count;
}

void MaskedBatch::check_invariants() const {
  if (x.size() != J * T * N || x_mask.size() != x.size() || s.size() != J * T * M ||
      s_mask.size() != s.size() || subject_ids.size() != J || labels.size() != J * (T + 1)) {
    throw StructuralError("MaskedBatch: inconsistent array sizes");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!x_mask[i] && x[i] != 0.0) throw StructuralError("MaskedBatch: masked-off input is not zero");
    if (!std::isfinite(x[i])) throw StructuralError("MaskedBatch: non-finite input");
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s_mask[i] && s[i] != 0.0) throw StructuralError("MaskedBatch: masked-off target is not zero");
    if (!std::isfinite(s[i])) throw StructuralError("MaskedBatch: non-finite target");
  }
}

MaskedBatch tensorize(const CohortTable& grid, std::size_t T, int interval_months) {
  if (T == 0) throw StructuralError("tensorize: T must be positive");
  if (interval_months <= 0) throw StructuralError("tensorize: interval must be positive");
  MaskedBatch batch;
  batch.subject_ids = grid.subject_ids();
  batch.J = batch.subject_ids.size();
  batch.T = T;
  batch.N = batch.M = grid.biomarker_count();
  batch.biomarker_names = grid.biomarker_names;
  batch.interval_months = interval_months;
  batch.x.assign(batch.J * T * batch.N, 0.0);
  batch.x_mask.assign(batch.x.size(), 0);
  batch.s.assign(batch.J * T * batch.M, 0.0);
  batch.s_mask.assign(batch.s.size(), 0);
  batch.labels.assign(batch.J * (T + 1), std::nullopt);

  std::size_t j = 0;
  for (std::size_t i = 0; i < grid.records.size(); ++i) {
    const Record& r = grid.records[i];
    while (batch.subject_ids[j] != r.subject_id) ++j;
    if (r.visit_month % interval_months != 0) {
      throw DataError("tensorize: visit month " + std::to_string(r.visit_month) + " of " + r.subject_id +
                      " is not on the " + std::to_string(interval_months) + "-month grid");
    }
    const auto slot = static_cast<std::size_t>(r.visit_month / interval_months);
    if (slot > T) continue;
    batch.labels[j * (T + 1) + slot] = r.label;
    for (std::size_t n = 0; n < batch.N; ++n) {
      if (r.biomarkers[n]) batch.set_slot(j, slot, n, *r.biomarkers[n]);
    }
  }
  return batch;
}

CohortTable untensorize(const MaskedBatch& batch) {
  CohortTable table;
  table.biomarker_names = batch.biomarker_names;
  for (std::size_t j = 0; j < batch.J; ++j) {
    for (std::size_t slot = 0; slot <= batch.T; ++slot) {
      Record r;
      r.subject_id = batch.subject_ids[j];
      r.visit_month = static_cast<int>(slot) * batch.interval_months;
      for (std::size_t n = 0; n < batch.N; ++n) r.biomarkers.push_back(batch.slot_value(j, slot, n));
      r.label = batch.label(j, slot);
      table.records.push_back(std::move(r));
    }
  }
  return table;
}

MaskedBatch select_subjects(const MaskedBatch& batch, std::span<const std::size_t> rows) {
  MaskedBatch out;
  out.J = rows.size();
  out.T = batch.T;
  out.N = batch.N;
  out.M = batch.M;
  out.biomarker_names = batch.biomarker_names;
  out.interval_months = batch.interval_months;
  const std::size_t xs = batch.T * batch.N, ss = batch.T * batch.M, ls = batch.T + 1;
  for (auto j : rows) {
    if (j >= batch.J) throw StructuralError("select_subjects: row out of range");
    out.subject_ids.push_back(batch.subject_ids[j]);
    out.x.insert(out.x.end(), batch.x.begin() + static_cast<std::ptrdiff_t>(j * xs),
                 batch.x.begin() + static_cast<std::ptrdiff_t>((j + 1) * xs));
    out.x_mask.insert(out.x_mask.end(), batch.x_mask.begin() + static_cast<std::ptrdiff_t>(j * xs),
                      batch.x_mask.begin() + static_cast<std::ptrdiff_t>((j + 1) * xs));
    out.s.insert(out.s.end(), batch.s.begin() + static_cast<std::ptrdiff_t>(j * ss),
                 batch.s.begin() + static_cast<std::ptrdiff_t>((j + 1) * ss));
    out.s_mask.insert(out.s_mask.end(), batch.s_mask.begin() + static_cast<std::ptrdiff_t>(j * ss),
                      batch.s_mask.begin() + static_cast<std::ptrdiff_t>((j + 1) * ss));
    out.labels.insert(out.labels.end(), batch.labels.begin() + static_cast<std::ptrdiff_t>(j * ls),
                      batch.labels.begin() + static_cast<std::ptrdiff_t>((j + 1) * ls));
  }
  return out;
}

}  // namespace mlstm
