#include "mlstm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mlstm/error.hpp"
#include "mlstm/math.hpp"

namespace mlstm {

std::string_view to_string(Missingness m) {
  switch (m) {
    case Missingness::MCAR: return "mcar";
    case Missingness::MonotoneDropout: return "dropout";
    case Missingness::VisitPattern: return "visit";
  }
  return "?";
}

std::optional<Missingness> parse_missingness(std::string_view text) {
  for (auto m : {Missingness::MCAR, Missingness::MonotoneDropout, Missingness::VisitPattern}) {
    if (text == to_string(m)) return m;
  }
  return std::nullopt;
}

std::vector<SigmoidTrajectory> SynthConfig::default_biomarkers() {
  return {
      {"Ventricles", 0.012, 0.045, 0.45, 2.0},
      {"Hippocampus", 0.0036, 0.0058, -0.55, 0.0},
      {"WholeBrain", 0.62, 0.74, -0.35, 4.0},
      {"Entorhinal", 0.0015, 0.0026, -0.60, -2.0},
      {"Fusiform", 0.0095, 0.0125, -0.40, 1.0},
      {"MidTemp", 0.0110, 0.0145, -0.40, 3.0},
  };
}

void SynthConfig::validate() const {
  if (subjects == 0) throw StructuralError("SynthConfig: subjects must be positive");
  if (slots < 2) throw StructuralError("SynthConfig: need at least two slots");
  if (interval_months <= 0) throw StructuralError("SynthConfig: interval must be positive");
  if (biomarkers.empty()) throw StructuralError("SynthConfig: no biomarkers");
  for (const auto& b : biomarkers) {
    if (!(b.lower < b.upper)) throw StructuralError("SynthConfig: biomarker " + b.name + " needs lower < upper");
  }
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw StructuralError("SynthConfig: rate must be in [0, 1)");
  if (!(noise_sd >= 0.0)) throw StructuralError("SynthConfig: noise SD must be >= 0");
  if (!(mci_threshold < ad_threshold)) throw StructuralError("SynthConfig: thresholds must be ordered");
  if (!(offset_lo <= offset_hi)) throw StructuralError("SynthConfig: offset range is inverted");
  if (min_observed > slots) throw StructuralError("SynthConfig: min_observed exceeds slots");
}

std::string synth_subject_id(std::size_t subject) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%05zu", subject + 1);
  return buf;
}

namespace {

double trajectory_value(const SigmoidTrajectory& b, double p) {
  return b.lower + (b.upper - b.lower) * sigmoid(b.slope * (p - b.inflection));
}

double slot_years(const SynthConfig& cfg, std::size_t slot) {
  return static_cast<double>(slot) * static_cast<double>(cfg.interval_months) / 12.0;
}

// Expected fraction of missing visits for a per-visit dropout hazard h once
// the first `floor` visits are guaranteed.
double dropout_missing_fraction(double h, std::size_t slots, std::size_t floor) {
  double observed = static_cast<double>(floor);
  double survive = 1.0;
  for (std::size_t k = floor; k < slots; ++k) {
    survive *= (1.0 - h);
    observed += survive;
  }
  return 1.0 - observed / static_cast<double>(slots);
}

}  // namespace

std::vector<double> ground_truth(const SynthConfig& cfg, std::size_t subject, std::size_t slot) {
  Rng rng(derive_seed(cfg.seed, subject));
  const double offset = rng.uniform(cfg.offset_lo, cfg.offset_hi);
  const double p = slot_years(cfg, slot) + offset;
  std::vector<double> out;
  for (const auto& b : cfg.biomarkers) out.push_back(trajectory_value(b, p));
  return out;
}

CohortTable generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t S = cfg.slots, B = cfg.biomarkers.size();
  const double max_rate = 1.0 - static_cast<double>(cfg.min_observed) / static_cast<double>(S);
  if (cfg.missing_rate > max_rate) {
    throw DataError("generate: missing rate " + std::to_string(cfg.missing_rate) + " cannot keep " +
                    std::to_string(cfg.min_observed) + " of " + std::to_string(S) + " visits observed");
  }
  double hazard = 0.0;
  if (cfg.mechanism == Missingness::MonotoneDropout && cfg.missing_rate > 0.0) {
    double lo = 0.0, hi = 1.0;
    for (int iter = 0; iter < 200; ++iter) {
      const double mid = 0.5 * (lo + hi);
      (dropout_missing_fraction(mid, S, cfg.min_observed) < cfg.missing_rate ? lo : hi) = mid;
    }
    hazard = 0.5 * (lo + hi);
  }

  CohortTable table;
  for (const auto& b : cfg.biomarkers) table.biomarker_names.push_back(b.name);
  constexpr int kMaxAttempts = 1000;
  for (std::size_t j = 0; j < cfg.subjects; ++j) {
    Rng rng(derive_seed(cfg.seed, j));
    const double offset = rng.uniform(cfg.offset_lo, cfg.offset_hi);

    std::vector<std::vector<double>> values(S, std::vector<double>(B));
    for (std::size_t slot = 0; slot < S; ++slot) {
      const double p = slot_years(cfg, slot) + offset;
      for (std::size_t b = 0; b < B; ++b) {
        const auto& traj = cfg.biomarkers[b];
        const double noise = cfg.noise_sd > 0.0 ? rng.normal(0.0, cfg.noise_sd * (traj.upper - traj.lower)) : 0.0;
        values[slot][b] = trajectory_value(traj, p) + noise;
      }
    }

    std::vector<std::vector<bool>> observed;
    for (int attempt = 0;; ++attempt) {
      if (attempt == kMaxAttempts) {
        throw DataError("generate: could not draw a mask with " + std::to_string(cfg.min_observed) +
                        " observed visits for subject " + synth_subject_id(j));
      }
      observed.assign(S, std::vector<bool>(B, true));
      switch (cfg.mechanism) {
        case Missingness::MCAR:
          for (auto& row : observed) {
            for (std::size_t b = 0; b < B; ++b) row[b] = rng.uniform() >= cfg.missing_rate;
          }
          break;
        case Missingness::VisitPattern:
          for (auto& row : observed) {
            const bool present = rng.uniform() >= cfg.missing_rate;
            std::fill(row.begin(), row.end(), present);
          }
          break;
        case Missingness::MonotoneDropout: {
          std::size_t last = cfg.min_observed;
          while (last < S && rng.uniform() >= hazard) ++last;
          for (std::size_t slot = last; slot < S; ++slot) std::fill(observed[slot].begin(), observed[slot].end(), false);
          break;
        }
      }
      bool ok = true;
      for (std::size_t b = 0; b < B && ok; ++b) {
        std::size_t count = 0;
        for (std::size_t slot = 0; slot < S; ++slot) count += observed[slot][b];
        ok = count >= cfg.min_observed;
      }
      if (ok) break;
    }

    for (std::size_t slot = 0; slot < S; ++slot) {
      if (std::none_of(observed[slot].begin(), observed[slot].end(), [](bool v) { return v; })) continue;
      Record r;
      r.subject_id = synth_subject_id(j);
      r.visit_month = static_cast<int>(slot) * cfg.interval_months;
      for (std::size_t b = 0; b < B; ++b) {
        r.biomarkers.push_back(observed[slot][b] ? std::optional<double>(values[slot][b]) : std::nullopt);
      }
      const double p = slot_years(cfg, slot) + offset;
      r.label = p < cfg.mci_threshold ? Label::CN : (p < cfg.ad_threshold ? Label::MCI : Label::AD);
      table.records.push_back(std::move(r));
    }
  }
  table.canonicalize();
  return table;
}

}  // namespace mlstm
