#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mlstm/data.hpp"
#include "mlstm/error.hpp"
#include "mlstm/math.hpp"
#include "test_util.hpp"

namespace mlstm {
namespace {

using testutil::data_path;

LoadResult parse(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in, "test.csv");
}

Record rec(std::string id, int month, std::vector<std::optional<double>> values,
           std::optional<Label> label = Label::CN) {
  Record r;
  r.subject_id = std::move(id);
  r.visit_month = month;
  r.biomarkers = std::move(values);
  r.label = label;
  return r;
}

CohortTable table_of(std::vector<std::string> names, std::vector<Record> records) {
  CohortTable t;
  t.biomarker_names = std::move(names);
  t.records = std::move(records);
  t.canonicalize();
  return t;
}

TEST(ParseLabel, AliasesAndConversions) {
  EXPECT_EQ(parse_label("CN"), Label::CN);
  EXPECT_EQ(parse_label("nl"), Label::CN);
  EXPECT_EQ(parse_label("SMC"), Label::CN);
  EXPECT_EQ(parse_label("EMCI"), Label::MCI);
  EXPECT_EQ(parse_label("LMCI"), Label::MCI);
  EXPECT_EQ(parse_label("Dementia"), Label::AD);
  EXPECT_EQ(parse_label("MCI to Dementia"), Label::AD);
  EXPECT_EQ(parse_label("NL to MCI"), Label::MCI);
  EXPECT_EQ(parse_label(""), std::nullopt);
  EXPECT_THROW(parse_label("healthy-ish"), DataError);
}

TEST(LoadCsv, EmptyCellIsMissing) {
  const auto r = parse("subject_id,visit_month,Ventricles,Hippocampus,label\nS1,0,,0.004,CN\n");
  ASSERT_EQ(r.table.records.size(), 1u);
  EXPECT_FALSE(r.table.records[0].biomarkers[0].has_value());
  EXPECT_EQ(r.table.records[0].biomarkers[1], 0.004);
}

TEST(LoadCsv, DuplicateVisitNamesBothLines) {
  try {
    parse("subject_id,visit_month,A,label\nS1,12,1,CN\nS1,0,2,CN\nS1,12,3,CN\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("S1, 12"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lines 2 and 4"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, MissingRequiredColumnIsNamed) {
  try {
    parse("subject_id,A,label\nS1,1,CN\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("visit_month"), std::string::npos);
  }
}

TEST(LoadCsv, UnparseableRowsAreReported) {
  const auto r = parse("subject_id,visit_month,A,label\nS1,0,NA,CN\nS1,12,NaN,CN\nS1,24,x,CN\nS1,36,1,CN\n");
  EXPECT_EQ(r.table.records.size(), 1u);
  ASSERT_EQ(r.errors.size(), 3u);
  EXPECT_EQ(r.errors[0].line, 2u);
  EXPECT_EQ(r.errors[2].line, 4u);
}

TEST(LoadCsv, ThreeSubjectFixture) {
  const auto r = load_csv(data_path("cohort3.csv"));
  EXPECT_TRUE(r.errors.empty());
  const CohortTable& t = r.table;
  EXPECT_EQ(t.subject_count(), 3u);
  EXPECT_EQ(t.records.size(), 8u);
  EXPECT_TRUE(t.has_icv);
  EXPECT_EQ(t.biomarker_names, (std::vector<std::string>{"Ventricles", "Hippocampus"}));
  EXPECT_EQ(t.records[4].subject_id, "S2");
  EXPECT_EQ(t.records[4].visit_month, 13);
  EXPECT_EQ(t.records[4].label, Label::AD);
  EXPECT_FALSE(t.records[7].label.has_value());
}

TEST(LoadCsv, WriteReadRoundTrip) {
  const CohortTable t = load_csv(data_path("cohort3.csv")).table;
  std::ostringstream out;
  write_csv(t, out);
  std::istringstream in(out.str());
  EXPECT_EQ(parse_csv(in).table, t);
}

TEST(FormatDouble, RoundTripsExactly) {
  Rng rng(9);
  for (int i = 0; i < 2000; ++i) {
    const double v = rng.normal(0, std::pow(10.0, rng.uniform(-8, 8)));
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_FALSE(parse_double("inf").has_value());
  EXPECT_FALSE(parse_double("1.5x").has_value());
  EXPECT_FALSE(parse_double("").has_value());
}

TEST(NormalizeIcv, DividesByVolume) {
  const CohortTable t = normalize_icv(load_csv(data_path("cohort3.csv")).table);
  EXPECT_EQ(*t.records[0].biomarkers[0], 8000 / 1.6e6);
  EXPECT_EQ(*t.records[0].biomarkers[0], 0.005);
  EXPECT_EQ(*t.records[3].biomarkers[1], 6000 / 1.5e6);
  EXPECT_EQ(*t.records[5].biomarkers[0], 30000 / 2e6);
  EXPECT_FALSE(t.records[7].biomarkers[0].has_value());
}

TEST(NormalizeIcv, AllMissingRecordNeedsNoVolume) {
  CohortTable t = table_of({"A"}, {rec("S1", 0, {std::nullopt})});
  t.has_icv = true;
  EXPECT_NO_THROW(normalize_icv(t));
}

TEST(NormalizeIcv, MissingVolumeListsSubjects) {
  CohortTable t = table_of({"A"}, {rec("S1", 0, {1.0}), rec("S2", 0, {2.0})});
  t.has_icv = true;
  t.records[0].icv = 1.0;
  t.records[1].icv = -1.0;
  try {
    normalize_icv(t);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("S2"), std::string::npos);
  }
}

TEST(Outliers, ExtremeValueRemovedUnderLeaveOneOutRule) {
  std::vector<Record> rs;
  const double values[] = {1, 1, 1, 1, 100};
  for (int i = 0; i < 5; ++i) rs.push_back(rec("S" + std::to_string(i), 0, {values[i]}));
  const auto r = filter_outliers(table_of({"A"}, rs), 3.0);
  ASSERT_EQ(r.report.removed.size(), 1u);
  EXPECT_EQ(r.report.removed[0].value, 100.0);
  EXPECT_EQ(r.report.removed[0].subject_id, "S4");
  EXPECT_FALSE(r.table.records[4].biomarkers[0].has_value());
}

TEST(Outliers, HomogeneousGroupUnchanged) {
  std::vector<Record> rs;
  for (int i = 0; i < 4; ++i) rs.push_back(rec("S" + std::to_string(i), 0, {5.0}));
  const auto r = filter_outliers(table_of({"A"}, rs));
  EXPECT_TRUE(r.report.removed.empty());
}

TEST(Outliers, SmallGroupSkippedWithWarning) {
  const auto r = filter_outliers(table_of({"A"}, {rec("S1", 0, {1.0}), rec("S2", 0, {50.0})}));
  EXPECT_TRUE(r.report.removed.empty());
  EXPECT_FALSE(r.report.warnings.empty());
}

TEST(Outliers, UnlabeledVisitBorrowsNearestLabel) {
  std::vector<Record> rs;
  for (int i = 0; i < 6; ++i) rs.push_back(rec("C" + std::to_string(i), 0, {1.0 + 0.01 * i}, Label::CN));
  for (int i = 0; i < 6; ++i) rs.push_back(rec("A" + std::to_string(i), 0, {100.0 + 0.01 * i}, Label::AD));
  // Nearest labeled visit is month 0 (AD); as a CN value 100 would be extreme.
  rs.push_back(rec("A0", 6, {100.02}, std::nullopt));
  rs.push_back(rec("A0", 24, {100.03}, Label::CN));
  // Subject with no label at all is left alone.
  rs.push_back(rec("U", 0, {1e6}, std::nullopt));
  const auto r = filter_outliers(table_of({"A"}, rs));
  ASSERT_EQ(r.report.removed.size(), 1u);
  EXPECT_EQ(r.report.removed[0].subject_id, "A0");
  EXPECT_EQ(r.report.removed[0].visit_month, 24);
}

TEST(Outliers, NoSurvivorViolatesRule) {
  Rng rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<Record> rs;
    for (int i = 0; i < 40; ++i) {
      double v = rng.normal(0, 1);
      if (rng.uniform() < 0.1) v += rng.uniform(-30, 30);
      rs.push_back(rec("S" + std::to_string(i), 0, {v}));
    }
    const auto r = filter_outliers(table_of({"A"}, rs), 3.0);
    std::vector<double> kept;
    for (const auto& x : r.table.records)
      if (x.biomarkers[0]) kept.push_back(*x.biomarkers[0]);
    for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_LE(leave_one_out_z(kept, i), 3.0);
  }
}

TEST(LeaveOneOutZ, HandValue) {
  const std::vector<double> v{1, 2, 3, 10};
  // others {1,2,3}: mean 2, sample sd 1
  EXPECT_DOUBLE_EQ(leave_one_out_z(v, 3), 8.0);
}

TEST(Scaling, HandValuesAndRoundTrip) {
  const CohortTable t = table_of({"A"}, {rec("S1", 0, {0.002}), rec("S2", 0, {0.010})});
  const ScalingSpec s = fit_scaling(t);
  EXPECT_EQ(s.min[0], 0.002);
  EXPECT_EQ(s.max[0], 0.010);
  EXPECT_NEAR(s.scale(0, 0.004), -0.5, 1e-15);
  EXPECT_NEAR(s.scale(0, 0.006), 0.0, 1e-15);
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(0.002, 0.010);
    EXPECT_NEAR(s.invert(0, s.scale(0, x)), x, 1e-12);
    const double y = rng.uniform(-1, 1);
    EXPECT_NEAR(s.scale(0, s.invert(0, y)), y, 1e-12);
  }
  const auto back = invert_scaling(std::vector<double>{-1.0, 1.0}, 0, s);
  EXPECT_EQ(back, (std::vector<double>{0.002, 0.010}));
}

TEST(Scaling, OutOfRangeIsClippedAndCounted) {
  const ScalingSpec s = fit_scaling(table_of({"A"}, {rec("S1", 0, {0.0}), rec("S2", 0, {1.0})}));
  std::size_t clipped = 0;
  const CohortTable out =
      apply_scaling(table_of({"A"}, {rec("S3", 0, {2.0}), rec("S4", 0, {-1.0}), rec("S5", 0, {0.5})}), s, &clipped);
  EXPECT_EQ(clipped, 2u);
  EXPECT_EQ(*out.records[0].biomarkers[0], 1.0);
  EXPECT_EQ(*out.records[1].biomarkers[0], -1.0);
  EXPECT_EQ(*out.records[2].biomarkers[0], 0.0);
}

TEST(Scaling, ConstantBiomarkerIsFatal) {
  EXPECT_THROW(fit_scaling(table_of({"A"}, {rec("S1", 0, {3.0}), rec("S2", 0, {3.0})})), DataError);
}

TEST(Scaling, FileRoundTrip) {
  const ScalingSpec s = fit_scaling(table_of({"A", "B"}, {rec("S1", 0, {0.1, 7.0}), rec("S2", 0, {0.3, 9.5})}));
  const auto path = testutil::temp_dir("scaling") / "scaling.csv";
  save_scaling(s, path);
  const ScalingSpec back = load_scaling(path);
  EXPECT_EQ(back.names, s.names);
  EXPECT_EQ(back.min, s.min);
  EXPECT_EQ(back.max, s.max);
}

TEST(MinVisits, PerBiomarkerRule) {
  std::vector<Record> rs;
  for (int v = 0; v < 5; ++v) {
    std::vector<std::optional<double>> vals(6, 1.0);
    if (v >= 2) vals[5] = std::nullopt;
    rs.push_back(rec("S1", v * 12, vals));
  }
  const CohortTable t = table_of({"a", "b", "c", "d", "e", "f"}, rs);
  EXPECT_EQ(filter_min_visits(t, 3).subject_count(), 0u);
  EXPECT_EQ(filter_min_visits(t, 2).subject_count(), 1u);
}

TEST(MinVisits, KOneDropsOnlySubjectsWithAnEmptyBiomarker) {
  const CohortTable t = table_of({"a", "b"}, {rec("S1", 0, {1.0, std::nullopt}), rec("S2", 0, {1.0, 2.0}),
                                              rec("S3", 0, {std::nullopt, std::nullopt})});
  const CohortTable kept = filter_min_visits(t, 1);
  EXPECT_EQ(kept.subject_ids(), std::vector<std::string>{"S2"});
}

TEST(MinVisits, TenSubjectAudit) {
  // Subject i has i observed visits of "a" and 9 - i of "b" (over 9 visits).
  std::vector<Record> rs;
  for (int i = 0; i < 10; ++i) {
    for (int v = 0; v < 9; ++v) {
      std::optional<double> a = v < i ? std::optional<double>(1.0) : std::nullopt;
      std::optional<double> b = v < 9 - i ? std::optional<double>(2.0) : std::nullopt;
      rs.push_back(rec("S" + std::to_string(i), v * 12, {a, b}));
    }
  }
  const auto kept = filter_min_visits(table_of({"a", "b"}, rs), 3).subject_ids();
  EXPECT_EQ(kept, (std::vector<std::string>{"S3", "S4", "S5", "S6"}));
}

TEST(Grid, SlotCountsAndSnapping) {
  const CohortTable t = table_of({"A"}, {rec("S1", 0, {1.0}), rec("S1", 13, {2.0}), rec("S1", 18, {3.0})});
  const GridResult g12 = resample_grid(t, 12, 120);
  EXPECT_EQ(g12.table.records.size(), 11u);
  EXPECT_EQ(g12.table.records[1].visit_month, 12);
  // 13 is nearer to 12 than 18 is.
  EXPECT_EQ(*g12.table.records[1].biomarkers[0], 2.0);
  EXPECT_EQ(g12.report.collisions.size(), 1u);
  EXPECT_FALSE(g12.table.records[2].biomarkers[0].has_value());

  const GridResult g6 = resample_grid(t, 6, 120);
  EXPECT_EQ(g6.table.records.size(), 21u);
  EXPECT_EQ(g6.table.records[3].visit_month, 18);
  EXPECT_EQ(*g6.table.records[3].biomarkers[0], 3.0);
  EXPECT_EQ(*g6.table.records[2].biomarkers[0], 2.0);
}

TEST(Grid, HalfwayGoesToEarlierSlotAndTiesKeepEarlierVisit) {
  const CohortTable t = table_of({"A"}, {rec("S1", 6, {1.0}), rec("S1", 18, {2.0}), rec("S1", 130, {3.0})});
  const GridResult g = resample_grid(t, 12, 120);
  EXPECT_EQ(*g.table.records[0].biomarkers[0], 1.0);
  EXPECT_EQ(*g.table.records[1].biomarkers[0], 2.0);
  EXPECT_EQ(g.report.dropped.size(), 1u);

  const CohortTable same = table_of({"A"}, {rec("S1", 10, {1.0}), rec("S1", 14, {2.0})});
  const GridResult gs = resample_grid(same, 12, 24);
  EXPECT_EQ(*gs.table.records[1].biomarkers[0], 1.0);
}

TEST(Grid, RejectsIntervalNotDividingHorizon) { EXPECT_THROW(resample_grid(CohortTable{}, 7, 120), StructuralError); }

CohortTable stratified_cohort(std::size_t cn, std::size_t mci, std::size_t ad) {
  std::vector<Record> rs;
  std::size_t id = 0;
  auto add = [&](std::size_t n, Label l) {
    for (std::size_t i = 0; i < n; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "P%04zu", id++);
      rs.push_back(rec(buf, 0, {1.0}, l));
      rs.push_back(rec(buf, 12, {1.0}, std::nullopt));
    }
  };
  add(cn, Label::CN);
  add(mci, Label::MCI);
  add(ad, Label::AD);
  return table_of({"A"}, rs);
}

TEST(Split, PartitionDeterministicAndFloorPerClass) {
  const CohortTable t = stratified_cohort(229, 372, 141);
  const SplitResult a = split(t, {0.8, 0.1, 0.1, 5});
  const SplitResult b = split(t, {0.8, 0.1, 0.1, 5});
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);

  const auto tr = a.train.subject_ids(), va = a.val.subject_ids(), te = a.test.subject_ids();
  std::set<std::string> all(tr.begin(), tr.end());
  all.insert(va.begin(), va.end());
  all.insert(te.begin(), te.end());
  EXPECT_EQ(all.size(), 742u);
  EXPECT_EQ(tr.size() + va.size() + te.size(), 742u);
  // floor(22.9) + floor(37.2) + floor(14.1)
  EXPECT_EQ(va.size(), 22u + 37u + 14u);
  EXPECT_EQ(te.size(), 22u + 37u + 14u);
  EXPECT_EQ(tr.size(), 742u - 2 * 73u);

  auto count = [](const CohortTable& c, Label l) {
    std::size_t n = 0;
    for (const auto& r : c.records)
      if (r.visit_month == 0 && r.label == l) ++n;
    return n;
  };
  EXPECT_EQ(count(a.val, Label::CN), 22u);
  EXPECT_EQ(count(a.test, Label::MCI), 37u);
  EXPECT_EQ(count(a.val, Label::AD), 14u);
}

TEST(Split, PartitionForManySeeds) {
  const CohortTable t = stratified_cohort(17, 9, 5);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const SplitResult r = split(t, {0.7, 0.15, 0.15, seed});
    std::multiset<std::string> ids;
    for (const auto* part : {&r.train, &r.val, &r.test})
      for (const auto& s : part->subject_ids()) ids.insert(s);
    EXPECT_EQ(ids.size(), 31u);
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 31u);
  }
  EXPECT_NE(split(t, {0.7, 0.15, 0.15, 1}).val, split(t, {0.7, 0.15, 0.15, 2}).val);
}

TEST(Split, TinyClassWarns) {
  const SplitResult r = split(stratified_cohort(20, 20, 2), {0.8, 0.1, 0.1, 1});
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Split, BaselineLabelIsEarliestLabeled) {
  const std::vector<Record> rs{rec("S", 0, {1.0}, std::nullopt), rec("S", 12, {1.0}, Label::MCI),
                               rec("S", 24, {1.0}, Label::AD)};
  EXPECT_EQ(baseline_label(rs), Label::MCI);
}

TEST(Tensorize, ShiftSemantics) {
  std::vector<Record> rs;
  for (int slot = 0; slot < 3; ++slot) rs.push_back(rec("S1", slot * 12, {0.1 * (slot + 1)}));
  const CohortTable grid = resample_grid(table_of({"A"}, rs), 12, 120).table;
  const MaskedBatch b = tensorize(grid, 10, 12);
  EXPECT_EQ(b.J, 1u);
  EXPECT_EQ(b.T, 10u);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_EQ(b.x_mask[b.xi(0, t, 0)] != 0, t <= 2) << t;
    EXPECT_EQ(b.s_mask[b.si(0, t, 0)] != 0, t <= 1) << t;
  }
  EXPECT_EQ(b.x[b.xi(0, 2, 0)], 0.1 * 3);
  EXPECT_EQ(b.s[b.si(0, 0, 0)], 0.1 * 2);
  EXPECT_EQ(b.x[b.xi(0, 5, 0)], 0.0);
  EXPECT_NO_THROW(b.check_invariants());
  EXPECT_EQ(b.observed_inputs(0, 0), 3u);
  EXPECT_EQ(b.observed_targets(0, 0), 2u);
}

TEST(Tensorize, UntensorizeReproducesGrid) {
  const CohortTable raw = load_csv(data_path("cohort3.csv")).table;
  CohortTable no_icv = raw;
  no_icv.has_icv = false;
  for (auto& r : no_icv.records) r.icv.reset();
  const CohortTable grid = resample_grid(no_icv, 12, 36).table;
  EXPECT_EQ(untensorize(tensorize(grid, 3, 12)), grid);
}

TEST(Tensorize, OffGridMonthIsDataError) {
  EXPECT_THROW(tensorize(table_of({"A"}, {rec("S1", 5, {1.0})}), 3, 12), DataError);
}

TEST(MaskedBatch, InvariantCheckCatchesNonZeroMaskedCell) {
  MaskedBatch b = tensorize(resample_grid(table_of({"A"}, {rec("S1", 0, {0.5})}), 12, 24).table, 2, 12);
  b.x[b.xi(0, 1, 0)] = 0.3;
  EXPECT_THROW(b.check_invariants(), StructuralError);
}

TEST(MaskedBatch, SelectSubjects) {
  const CohortTable grid = resample_grid(load_csv(data_path("cohort3.csv")).table, 12, 36).table;
  const MaskedBatch b = tensorize(grid, 3, 12);
  const std::vector<std::size_t> rows{2, 0};
  const MaskedBatch s = select_subjects(b, rows);
  EXPECT_EQ(s.subject_ids, (std::vector<std::string>{"S3", "S1"}));
  EXPECT_EQ(s.x_step(0, 0)[0], b.x_step(2, 0)[0]);
}

}  // namespace
}  // namespace mlstm
