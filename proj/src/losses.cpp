#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "survgrad/survival_models.hpp"

namespace survgrad::loss {

double cox_partial_likelihood(std::span<const double> log_risk, std::span<const double> time,
                              std::span<const int> event, std::span<double> grad) {
  const std::size_t n = log_risk.size();
  if (time.size() != n || event.size() != n || (!grad.empty() && grad.size() != n)) {
    throw ShapeError("cox_partial_likelihood: input lengths differ");
  }
  std::fill(grad.begin(), grad.end(), 0.0);
  const auto events = static_cast<std::size_t>(std::count(event.begin(), event.end(), 1));
  if (events == 0) return 0.0;

  const double shift = *std::max_element(log_risk.begin(), log_risk.end());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] > time[b]; });

  // Groups of tied times, visited from the latest time backwards so the risk
  // set only grows.
  struct Group {
    std::size_t begin, end;
    double ratio;  // d / risk_sum
  };
  std::vector<Group> groups;
  double risk_sum = 0.0;
  double total = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const std::size_t begin = i;
    const double t = time[order[i]];
    std::size_t d = 0;
    while (i < n && time[order[i]] == t) {
      const std::size_t k = order[i];
      risk_sum += std::exp(log_risk[k] - shift);
      if (event[k] == 1) {
        ++d;
        total -= log_risk[k];
      }
      ++i;
    }
    const double log_sum = std::log(risk_sum) + shift;
    total += static_cast<double>(d) * log_sum;
    groups.push_back({begin, i, static_cast<double>(d) / risk_sum});
  }
  const double scale = 1.0 / static_cast<double>(events);
  if (!grad.empty()) {
    double cumulative = 0.0;
    for (auto g = groups.rbegin(); g != groups.rend(); ++g) {
      cumulative += g->ratio;
      for (std::size_t r = g->begin; r < g->end; ++r) {
        const std::size_t k = order[r];
        grad[k] = (std::exp(log_risk[k] - shift) * cumulative - (event[k] == 1 ? 1.0 : 0.0)) * scale;
      }
    }
  }
  return total * scale;
}

double deephit(const Matrix& logits, std::span<const std::size_t> bin,
               std::span<const double> time, std::span<const int> event, double alpha,
               double sigma, Matrix* grad) {
  const std::size_t n = logits.rows();
  const std::size_t bins = logits.cols();
  if (bin.size() != n || time.size() != n || event.size() != n) {
    throw ShapeError("deephit loss: input lengths differ");
  }
  if (n == 0) return 0.0;
  // Softmax and cumulative incidence per row.
  Matrix pmf(n, bins), cdf(n, bins);
  std::vector<double> lse(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    lse[i] = m + std::log(s);
    double c = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      pmf(i, k) = std::exp(z[k] - lse[i]);
      c += pmf(i, k);
      cdf(i, k) = c;
    }
    if (bin[i] >= bins) throw ShapeError("deephit loss: bin index out of range");
  }

  Matrix dcdf(n, bins);   // dL/dcdf from the rank term
  Matrix dz_nll(n, bins); // dL/dlogits from the likelihood term
  const double inv_n = 1.0 / static_cast<double>(n);

  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto z = logits.row(i);
    const std::size_t k = bin[i];
    if (event[i] == 1) {
      nll -= z[k] - lse[i];
      for (std::size_t m = 0; m < bins; ++m) dz_nll(i, m) = pmf(i, m) - (m == k ? 1.0 : 0.0);
    } else {
      // log P(T > start of bin k) = logsumexp(z[k..]) - logsumexp(z)
      const double mt = *std::max_element(z.begin() + static_cast<std::ptrdiff_t>(k), z.end());
      double s = 0.0;
      for (std::size_t m = k; m < bins; ++m) s += std::exp(z[m] - mt);
      const double tail_lse = mt + std::log(s);
      nll -= tail_lse - lse[i];
      for (std::size_t m = 0; m < bins; ++m) {
        const double tail = m >= k ? std::exp(z[m] - tail_lse) : 0.0;
        dz_nll(i, m) = pmf(i, m) - tail;
      }
    }
  }
  nll *= inv_n;

  // Pairwise ranking: i had an event before j's observed time.
  double rank = 0.0;
  const double pair_scale = inv_n * inv_n;
  for (std::size_t i = 0; i < n; ++i) {
    if (event[i] != 1) continue;
    const std::size_t k = bin[i];
    const double fi = cdf(i, k);
    double own = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool comparable = time[i] < time[j] || (time[i] == time[j] && event[j] == 0);
      if (!comparable) continue;
      const double e = std::exp(-(fi - cdf(j, k)) / sigma);
      rank += e;
      if (grad) {
        const double w = pair_scale * e / sigma;
        own -= w;
        dcdf(j, k) += w;
      }
    }
    if (grad) dcdf(i, k) += own;
  }
  rank *= pair_scale;

  if (grad) {
    *grad = Matrix(n, bins);
    // cdf(i,k) = sum_{m<=k} pmf(i,m), so dL/dpmf(i,m) = sum_{k>=m} dL/dcdf(i,k).
    Matrix dpmf(n, bins);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t m = bins; m-- > 0;) {
        acc += dcdf(i, m);
        dpmf(i, m) = acc;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t m = 0; m < bins; ++m) dot += pmf(i, m) * dpmf(i, m);
      for (std::size_t m = 0; m < bins; ++m) {
        const double dz_rank = pmf(i, m) * (dpmf(i, m) - dot);
        (*grad)(i, m) = alpha * dz_rank + (1.0 - alpha) * inv_n * dz_nll(i, m);
      }
    }
  }
  return alpha * rank + (1.0 - alpha) * nll;
}

}  // namespace survgrad::loss
