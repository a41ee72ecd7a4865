#include "mmpred/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmpred/error.hpp"

namespace mmpred::eval {

namespace {

// Demsar-style critical values for the Nemenyi test: Studentized range
// quantiles q_{alpha}(k, inf) already divided by sqrt(2). Verified in the
// unit tests against direct quadrature of the range distribution.
constexpr double kNemenyiQ05[] = {
    // k = 2 .. 20
    1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948319, 3.030879, 3.101730,
    3.163684, 3.218654, 3.268004, 3.312739, 3.353618, 3.391230, 3.426041, 3.458425,
    3.488685, 3.517073, 3.543799};
constexpr double kNemenyiQ10[] = {
    1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606,
    2.919889, 2.977768, 3.029694, 3.076733, 3.119693, 3.159199, 3.195743, 3.229723,
    3.261461, 3.291224, 3.319233};

}  // namespace

RankMatrix RankMatrix::from_scores(const std::vector<std::vector<double>>& scores) {
  if (scores.empty()) throw dim_error("rank matrix: no blocks");
  const size_t k = scores[0].size();
  RankMatrix rm;
  rm.scores = scores;
  rm.ranks.reserve(scores.size());
  for (const auto& row : scores) {
    if (row.size() != k) throw dim_error("rank matrix: ragged rows");
    // Rank descending (highest score -> rank 1), average ranks on ties.
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return row[a] > row[b]; });
    std::vector<double> ranks(k, 0.0);
    size_t i = 0;
    while (i < k) {
      size_t j = i;
      while (j < k && row[order[j]] == row[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + 1 + j);
      for (size_t t = i; t < j; ++t) ranks[order[t]] = avg;
      i = j;
    }
    rm.ranks.push_back(std::move(ranks));
  }
  return rm;
}

std::vector<double> RankMatrix::mean_ranks() const {
  const int n = blocks(), k = classifiers();
  std::vector<double> mean(k, 0.0);
  for (const auto& row : ranks)
    for (int j = 0; j < k; ++j) mean[j] += row[j];
  for (auto& m : mean) m /= n;
  return mean;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

// Regularized lower incomplete gamma via series expansion (x < a+1).
double gamma_p_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  for (int n = 1; n < 500; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma via continued fraction (x >= a+1).
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double regularized_gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw dim_error("regularized_gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

double chi2_survival(double x, int df) {
  if (df < 1) throw dim_error("chi2_survival: df must be >= 1");
  if (x <= 0.0) return 1.0;
  return regularized_gamma_q(0.5 * df, 0.5 * x);
}

FriedmanResult friedman_test(const RankMatrix& rm) {
  const int n = rm.blocks(), k = rm.classifiers();
  if (n < 2) throw config_error("friedman_test: needs at least 2 blocks, got " + std::to_string(n));
  if (k < 3) {
    throw config_error("friedman_test: needs at least 3 classifiers, got " + std::to_string(k));
  }
  const std::vector<double> mean = rm.mean_ranks();
  const double center = 0.5 * (k + 1);
  double sum_sq = 0.0;
  for (double m : mean) sum_sq += (m - center) * (m - center);
  FriedmanResult res;
  res.df = k - 1;
  res.chi2 = 12.0 * n / (static_cast<double>(k) * (k + 1)) * sum_sq;
  res.p_value = chi2_survival(res.chi2, res.df);
  return res;
}

double studentized_range_survival(double q, int k) {
  if (k < 2) throw dim_error("studentized_range_survival: k must be >= 2");
  if (q <= 0.0) return 1.0;
  // P(range of k iid std normals <= q) = k * Int phi(u) [Phi(u) - Phi(u-q)]^{k-1} du
  // (u = the maximum). Simpson quadrature; integrand decays like phi(u).
  const double lo = -9.0, hi = 9.0 + q;
  const int steps = 6000;  // even
  const double h = (hi - lo) / steps;
  auto integrand = [&](double u) {
    const double phi = std::exp(-0.5 * u * u) / std::sqrt(2.0 * M_PI);
    const double inner = normal_cdf(u) - normal_cdf(u - q);
    return phi * std::pow(std::max(inner, 0.0), k - 1);
  };
  double sum = integrand(lo) + integrand(hi);
  for (int i = 1; i < steps; ++i) {
    sum += integrand(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  const double cdf = k * sum * h / 3.0;
  return std::clamp(1.0 - cdf, 0.0, 1.0);
}

std::vector<std::vector<double>> nemenyi_posthoc(const RankMatrix& rm) {
  const int n = rm.blocks(), k = rm.classifiers();
  if (n < 2 || k < 3) throw config_error("nemenyi_posthoc: needs Friedman-sized input");
  const std::vector<double> mean = rm.mean_ranks();
  const double se = std::sqrt(static_cast<double>(k) * (k + 1) / (12.0 * n));
  std::vector<std::vector<double>> p(k, std::vector<double>(k, 1.0));
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      const double stat = std::fabs(mean[i] - mean[j]) / se;
      const double pv = studentized_range_survival(stat * std::sqrt(2.0), k);
      p[i][j] = pv;
      p[j][i] = pv;
    }
  }
  return p;
}

double nemenyi_q(int k, double alpha) {
  if (k < 2 || k > 20) {
    throw config_error("nemenyi_q: k must be in [2,20], got " + std::to_string(k));
  }
  if (alpha == 0.05) return kNemenyiQ05[k - 2];
  if (alpha == 0.10) return kNemenyiQ10[k - 2];
  throw config_error("nemenyi_q: alpha must be 0.05 or 0.10");
}

double critical_difference(int k, int n_blocks, double alpha) {
  if (n_blocks < 1) throw config_error("critical_difference: N must be >= 1");
  return nemenyi_q(k, alpha) * std::sqrt(static_cast<double>(k) * (k + 1) / (12.0 * n_blocks));
}

CdDiagramData cd_diagram_data(const std::vector<double>& mean_ranks, double cd) {
  const int k = static_cast<int>(mean_ranks.size());
  CdDiagramData out;
  out.cd = cd;
  out.order.resize(k);
  std::iota(out.order.begin(), out.order.end(), 0);
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](int a, int b) { return mean_ranks[a] < mean_ranks[b]; });
  out.sorted_ranks.resize(k);
  for (int i = 0; i < k; ++i) out.sorted_ranks[i] = mean_ranks[out.order[i]];
  // Maximal runs where the end-to-end gap stays below CD; a gap equal to CD
  // counts as significant (p <= alpha convention).
  for (int i = 0; i < k; ++i) {
    int j = i;
    while (j + 1 < k && out.sorted_ranks[j + 1] - out.sorted_ranks[i] < cd) ++j;
    const bool contained = !out.cliques.empty() && out.cliques.back().first <= i &&
                           j <= out.cliques.back().second;
    if (!contained) out.cliques.emplace_back(i, j);
  }
  return out;
}

}  // namespace mmpred::eval
