#include "mlstm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mlstm/error.hpp"

namespace mlstm {

namespace {

constexpr std::size_t kExactWilcoxonLimit = 25;
constexpr std::size_t kExactMcNemarLimit = 100;

double normal_two_sided(double z) { return std::min(1.0, std::erfc(z / std::numbers::sqrt2)); }

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, PValueMethod method) {
  if (a.size() != b.size()) throw StructuralError("wilcoxon_signed_rank: samples differ in length");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  WilcoxonResult r;
  r.n_effective = d.size();
  if (d.empty()) {
    r.warnings.push_back("all differences are zero; p = 1");
    r.exact = true;
    return r;
  }
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });

  // Doubled mid-ranks are integers, which keeps the exact distribution on an integer lattice.
  std::vector<std::size_t> rank2(n);
  double tie_term = 0.0;
  std::size_t pos = 0;
  while (pos < n) {
    std::size_t end = pos;
    while (end < n && std::abs(d[order[end]]) == std::abs(d[order[pos]])) ++end;
    for (std::size_t q = pos; q < end; ++q) rank2[order[q]] = pos + 1 + end;
    const auto t = static_cast<double>(end - pos);
    tie_term += t * t * t - t;
    pos = end;
  }
  std::size_t w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) w2 += rank2[i];
  }
  r.statistic = 0.5 * static_cast<double>(w2);

  const bool exact = method == PValueMethod::Exact || (method == PValueMethod::Auto && n <= kExactWilcoxonLimit);
  r.exact = exact;
  if (exact) {
    std::size_t max_sum = 0;
    for (auto v : rank2) max_sum += v;
    std::vector<double> count(max_sum + 1, 0.0);
    count[0] = 1.0;
    std::size_t reach = 0;
    for (auto v : rank2) {
      for (std::size_t s = reach + 1; s-- > 0;) {
        if (count[s] != 0.0) count[s + v] += count[s];
      }
      reach += v;
    }
    double upper = 0.0, lower = 0.0;
    for (std::size_t s = 0; s <= max_sum; ++s) {
      if (s >= w2) upper += count[s];
      if (s <= w2) lower += count[s];
    }
    const double total = std::ldexp(1.0, static_cast<int>(n));
    r.p_value = std::min(1.0, 2.0 * std::min(upper, lower) / total);
  } else {
    const auto nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0)) {
      r.p_value = 1.0;
      r.warnings.push_back("zero variance under the null; p = 1");
      return r;
    }
    const double z = std::max(0.0, std::abs(r.statistic - mean) - 0.5) / std::sqrt(var);
    r.p_value = normal_two_sided(z);
  }
  return r;
}

McNemarResult mcnemar_counts(std::size_t b01, std::size_t b10) {
  McNemarResult r;
  r.b01 = b01;
  r.b10 = b10;
  const std::size_t n = b01 + b10;
  if (n == 0) {
    r.exact = true;
    r.warnings.push_back("no discordant pairs; p = 1");
    return r;
  }
  if (n <= kExactMcNemarLimit) {
    r.exact = true;
    std::vector<double> row{1.0};
    for (std::size_t k = 1; k <= n; ++k) {
      std::vector<double> next(k + 1, 1.0);
      for (std::size_t i = 1; i < k; ++i) next[i] = row[i - 1] + row[i];
      row = std::move(next);
    }
    double tail = 0.0;
    for (std::size_t i = 0; i <= std::min(b01, b10); ++i) tail += row[i];
    r.p_value = std::min(1.0, 2.0 * std::ldexp(tail, -static_cast<int>(n)));
  } else {
    const double diff = std::abs(static_cast<double>(b01) - static_cast<double>(b10)) - 1.0;
    const double chi2 = std::max(0.0, diff) * std::max(0.0, diff) / static_cast<double>(n);
    r.p_value = normal_two_sided(std::sqrt(chi2));
  }
  return r;
}

McNemarResult mcnemar(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b) {
  if (correct_a.size() != correct_b.size()) throw StructuralError("mcnemar: vectors differ in length");
  std::size_t b01 = 0, b10 = 0;
  for (std::size_t i = 0; i < correct_a.size(); ++i) {
    if (!correct_a[i] && correct_b[i]) ++b01;
    if (correct_a[i] && !correct_b[i]) ++b10;
  }
  return mcnemar_counts(b01, b10);
}

}  // namespace mlstm
