#pragma once
// Slow reference metrics: long double accumulation, textbook formulas.

#include <cmath>
#include <vector>

namespace popmap::test {

struct OracleMetrics {
  double rmse, nrmse, mae, corr;
};

inline OracleMetrics oracle_metrics(const std::vector<double>& p, const std::vector<double>& t) {
  const long double n = static_cast<long double>(p.size());
  long double se = 0, ae = 0, sp = 0, st = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const long double d = static_cast<long double>(p[i]) - t[i];
    se += d * d;
    ae += std::fabs(d);
    sp += p[i];
    st += t[i];
  }
  const long double mp = sp / n, mt = st / n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sxy += (p[i] - mp) * (t[i] - mt);
    sxx += (p[i] - mp) * (p[i] - mp);
    syy += (t[i] - mt) * (t[i] - mt);
  }
  const long double rmse = std::sqrt(se / n);
  return {static_cast<double>(rmse), static_cast<double>(rmse / mt), static_cast<double>(ae / n),
          static_cast<double>(sxy / std::sqrt(sxx * syy))};
}

}  // namespace popmap::test
