#pragma once

#include <string>
#include <vector>

#include "feratt/checkpoint.hpp"
#include "feratt/renderer.hpp"

namespace feratt {

struct MetricsReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  Matrix confusion;  // c x c counts, rows = truth, cols = prediction
  std::vector<double> per_class_precision, per_class_recall, per_class_f1;
  long sample_count = 0;

  std::string to_json() const;
  std::string to_csv() const;
};

MetricsReport metrics_from_predictions(const std::vector<int>& truth,
                                       const std::vector<int>& predictions, int num_classes);

// Runs inference and aggregates argmax predictions; optional additive input
// noise (seeded) for the robustness protocol.
MetricsReport evaluate(const Checkpoint& checkpoint, const std::vector<CompositeSample>& data,
                       double noise_sigma = 0.0, uint64_t noise_seed = 0);

struct StatTestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::vector<double> mean_ranks;
  // Nemenyi: symmetric pairwise significance + p-value-free critical gap.
  Matrix pairwise_significant;  // k x k of 0/1
  double critical_difference = 0.0;
  // Bonferroni-Dunn: per-method corrected one-tailed p-values vs control.
  std::vector<double> control_p_values;
  int control_index = -1;
  double alpha = 0.05;

  std::string to_json() const;
};

// Friedman rank test over an n-folds x k-methods score matrix; ties get
// average ranks; p-value from chi-square with k-1 degrees of freedom.
StatTestResult friedman_test(const Matrix& scores);

// Mean-rank gaps against the studentized-range critical difference.
// Supports k in [2, 10], alpha 0.05 or 0.10.
StatTestResult nemenyi_posthoc(const std::vector<double>& mean_ranks, int n_folds,
                               double alpha = 0.05);
double nemenyi_critical_difference(int k, int n_folds, double alpha);

// One-tailed z-tests against a control with Bonferroni correction (k-1).
StatTestResult bonferroni_dunn_posthoc(const std::vector<double>& mean_ranks, int n_folds,
                                       int control_index, double alpha = 0.05);

// Regularized upper incomplete gamma Q(a, x); chi-square survival function
// is Q(dof/2, x/2). Absolute error below 1e-10 over the tested range.
double gamma_q(double a, double x);
double chi_square_sf(double x, int dof);
double normal_cdf(double z);

struct NoisePoint {
  double sigma = 0.0;
  MetricsReport report;
};

// Evaluates the checkpoint on the dataset corrupted at each sigma with a
// seeded noise stream; sigma = 0 is bit-identical to plain evaluate.
std::vector<NoisePoint> noise_robustness_curve(const Checkpoint& checkpoint,
                                               const std::vector<CompositeSample>& data,
                                               const std::vector<double>& sigmas,
                                               uint64_t noise_seed);
std::string noise_curve_csv(const std::vector<NoisePoint>& curve);

// One CSV row per sample: id, label, then the embedding coordinates.
std::string export_embeddings_csv(const Checkpoint& checkpoint,
                                  const std::vector<CompositeSample>& data);

// Fig-7-style sigma grid for the attention dumps.
std::vector<double> default_attention_sigmas();

// For each sigma, writes a horizontal grid [noisy inputs | reconstructions]
// as PNG under dir. Returns written file paths.
std::vector<std::string> attention_map_dump(const Checkpoint& checkpoint,
                                            const std::vector<CompositeSample>& images,
                                            const std::vector<double>& sigmas,
                                            uint64_t noise_seed, const std::string& dir);

}  // namespace feratt
