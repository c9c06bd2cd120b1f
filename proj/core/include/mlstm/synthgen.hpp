#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlstm/data.hpp"

namespace mlstm {

enum class Missingness { MCAR, MonotoneDropout, VisitPattern };

std::string_view to_string(Missingness m);
// Accepts "mcar", "dropout", "visit".
std::optional<Missingness> parse_missingness(std::string_view text);

// value(p) = lower + (upper - lower) / (1 + exp(-slope (p - inflection))),
// lower < upper; the sign of slope sets the direction.
struct SigmoidTrajectory {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  double slope = 1.0;  // per year
  double inflection = 0.0;  // years of latent progression
};

struct SynthConfig {
  std::size_t subjects = 200;
  std::size_t slots = 11;  // grid visits per subject, baseline included
  int interval_months = 12;
  std::vector<SigmoidTrajectory> biomarkers = default_biomarkers();
  // Latent progression p_j(t) = t_years + offset_j, offset_j ~ U[offset_lo, offset_hi].
  double offset_lo = -12.0;
  double offset_hi = 8.0;
  // Gaussian noise SD as a fraction of each biomarker's amplitude (upper - lower).
  double noise_sd = 0.02;
  Missingness mechanism = Missingness::MCAR;
  double missing_rate = 0.0;
  // p < mci_threshold -> CN, p < ad_threshold -> MCI, else AD.
  double mci_threshold = -2.0;
  double ad_threshold = 3.0;
  std::size_t min_observed = 3;
  std::uint64_t seed = 2019;

  // Six ICV-normalized MRI volumes with staggered inflection points.
  static std::vector<SigmoidTrajectory> default_biomarkers();
  // Throws StructuralError on invalid settings.
  void validate() const;
};

// Deterministic per seed. Each subject draws from its own substream, so
// ground_truth() can recompute any trajectory independently. Rows are written
// only for visits with at least one observed biomarker. Throws DataError when
// the missing rate cannot leave min_observed visits per biomarker.
CohortTable generate(const SynthConfig& cfg);

// Noise-free values of subject index j at grid slot.
std::vector<double> ground_truth(const SynthConfig& cfg, std::size_t subject, std::size_t slot);

std::string synth_subject_id(std::size_t subject);

}  // namespace mlstm
