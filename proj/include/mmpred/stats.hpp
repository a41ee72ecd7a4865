#pragma once

#include <vector>

namespace mmpred::eval {

// scores[block][classifier]; higher score = better. Ranks are 1 = best with
// average-rank tie handling, so each row sums to k(k+1)/2.
struct RankMatrix {
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<double>> ranks;

  static RankMatrix from_scores(const std::vector<std::vector<double>>& scores);
  std::vector<double> mean_ranks() const;
  int blocks() const { return static_cast<int>(scores.size()); }
  int classifiers() const { return scores.empty() ? 0 : static_cast<int>(scores[0].size()); }
};

struct FriedmanResult {
  double chi2 = 0.0;
  double p_value = 1.0;
  int df = 0;
};

// Standard rank form with average-rank ties; p from chi-square with k-1 df.
FriedmanResult friedman_test(const RankMatrix& ranks);

// Pairwise Nemenyi p-values (Studentized range, q/sqrt(2) convention,
// infinite df). Symmetric matrix with unit diagonal.
std::vector<std::vector<double>> nemenyi_posthoc(const RankMatrix& ranks);

// CD = q_alpha(k, inf) * sqrt(k(k+1)/(12N)); q from the embedded vetted table
// (alpha in {0.05, 0.10}, k <= 20).
double critical_difference(int k, int n_blocks, double alpha);
double nemenyi_q(int k, double alpha);

// Maximal groups of classifiers whose pairwise mean-rank gaps stay below CD
// (gap >= CD means significant difference).
struct CdDiagramData {
  std::vector<int> order;              // classifier ids sorted by mean rank (best first)
  std::vector<double> sorted_ranks;    // mean ranks in that order
  std::vector<std::pair<int, int>> cliques;  // [first, last] positions in `order`, inclusive
  double cd = 0.0;
};
CdDiagramData cd_diagram_data(const std::vector<double>& mean_ranks, double cd);

// Numerical support, exposed for tests.
double chi2_survival(double x, int df);          // P(Chi2_df >= x)
double regularized_gamma_q(double a, double x);  // upper regularized incomplete gamma
double normal_cdf(double x);
// Survival function of the Studentized range with infinite df (quadrature).
double studentized_range_survival(double q, int k);

}  // namespace mmpred::eval
