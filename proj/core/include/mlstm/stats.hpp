#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mlstm {

enum class PValueMethod { Auto, Exact, Normal };

struct WilcoxonResult {
  double statistic = 0.0;  // W+, sum of ranks of positive differences
  std::size_t n_effective = 0;
  double p_value = 1.0;
  bool exact = false;
  std::vector<std::string> warnings;
};

// Paired two-sided signed-rank test on a - b. Zero differences are dropped and
// tied |d| share mid-ranks. Auto uses the exact null distribution up to 25
// non-zero pairs and the continuity-corrected normal approximation above.
// The two-sided p doubles the smaller tail, capped at 1.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                    PValueMethod method = PValueMethod::Auto);

struct McNemarResult {
  std::size_t b01 = 0;  // a wrong, b right
  std::size_t b10 = 0;  // a right, b wrong
  double p_value = 1.0;
  bool exact = false;
  std::vector<std::string> warnings;
};

// Exact binomial test on discordant pairs when b01 + b10 <= 100, otherwise
// chi-square with continuity correction.
McNemarResult mcnemar(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b);
McNemarResult mcnemar_counts(std::size_t b01, std::size_t b10);

}  // namespace mlstm
