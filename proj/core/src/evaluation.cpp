#include "feratt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "feratt/errors.hpp"
#include "feratt/image.hpp"
#include "feratt/training.hpp"

namespace feratt {

// -------------------------------------------------------------------- metrics

MetricsReport metrics_from_predictions(const std::vector<int>& truth,
                                       const std::vector<int>& predictions, int num_classes) {
  require(truth.size() == predictions.size(), "metrics: size mismatch");
  if (truth.empty()) throw ConfigurationError("metrics: empty dataset");
  MetricsReport r;
  r.sample_count = static_cast<long>(truth.size());
  r.confusion = Matrix::Zero(num_classes, num_classes);
  for (size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < num_classes, "metrics: label out of range");
    require(predictions[i] >= 0 && predictions[i] < num_classes,
            "metrics: prediction out of range");
    r.confusion(truth[i], predictions[i]) += 1.0;
  }
  r.accuracy = r.confusion.trace() / r.sample_count;
  for (int j = 0; j < num_classes; ++j) {
    double tp = r.confusion(j, j);
    double pred_total = r.confusion.col(j).sum();
    double true_total = r.confusion.row(j).sum();
    double prec = pred_total > 0.0 ? tp / pred_total : 0.0;
    double rec = true_total > 0.0 ? tp / true_total : 0.0;
    double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
    r.per_class_precision.push_back(prec);
    r.per_class_recall.push_back(rec);
    r.per_class_f1.push_back(f1);
    r.macro_precision += prec / num_classes;
    r.macro_recall += rec / num_classes;
    r.macro_f1 += f1 / num_classes;
  }
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["macro_precision"] = macro_precision;
  j["macro_recall"] = macro_recall;
  j["macro_f1"] = macro_f1;
  j["sample_count"] = sample_count;
  j["per_class_precision"] = per_class_precision;
  j["per_class_recall"] = per_class_recall;
  j["per_class_f1"] = per_class_f1;
  std::vector<std::vector<double>> cm;
  for (int i = 0; i < confusion.rows(); ++i)
    cm.emplace_back(confusion.row(i).begin(), confusion.row(i).end());
  j["confusion_matrix"] = cm;
  return j.dump(2);
}

std::string MetricsReport::to_csv() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "accuracy,macro_precision,macro_recall,macro_f1,sample_count\n";
  ss << accuracy << ',' << macro_precision << ',' << macro_recall << ',' << macro_f1 << ','
     << sample_count << '\n';
  return ss.str();
}

MetricsReport evaluate(const Checkpoint& checkpoint, const std::vector<CompositeSample>& data,
                       double noise_sigma, uint64_t noise_seed) {
  if (data.empty()) throw ConfigurationError("evaluate: empty dataset");
  const int c = checkpoint.net_config.num_classes;
  for (const auto& s : data)
    require(s.label >= 0 && s.label < c, "evaluate: dataset labels exceed checkpoint classes");
  auto net = checkpoint.instantiate();
  std::vector<int> truth, predictions;
  constexpr int kBatch = 32;
  for (size_t start = 0; start < data.size(); start += kBatch) {
    std::vector<int> idx;
    for (size_t i = start; i < std::min(data.size(), start + kBatch); ++i)
      idx.push_back(static_cast<int>(i));
    Tensor images, masks;
    std::vector<int> labels;
    batch_from_samples(data, idx, &images, &masks, &labels);
    if (noise_sigma > 0.0) {
      // Per-sample noise streams keyed by dataset index.
      for (size_t b = 0; b < idx.size(); ++b) {
        Rng rng = Rng::substream(noise_seed, static_cast<uint64_t>(idx[b]));
        size_t per = static_cast<size_t>(images.h()) * images.w() * images.c();
        double* p = images.data() + b * per;
        for (size_t i = 0; i < per; ++i)
          p[i] = std::clamp(p[i] + rng.normal(0.0, noise_sigma), 0.0, 1.0);
      }
    }
    NetworkOutputs out = net->forward(images, false);
    for (int k = 0; k < out.class_scores.rows(); ++k) {
      int pred;
      out.class_scores.row(k).maxCoeff(&pred);
      truth.push_back(labels[k]);
      predictions.push_back(pred);
    }
  }
  return metrics_from_predictions(truth, predictions, c);
}

// ----------------------------------------------------------------- statistics

namespace {

// Regularized incomplete gamma by series (x < a + 1) or continued fraction.
double gamma_p_series(double a, double x) {
  double ap = a, sum = 1.0 / a, del = sum;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_q(double a, double x) {
  require(a > 0.0 && x >= 0.0, "gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_contfrac(a, x);
}

double chi_square_sf(double x, int dof) {
  require(dof >= 1, "chi_square_sf: bad dof");
  if (x <= 0.0) return 1.0;
  return gamma_q(dof / 2.0, x / 2.0);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::string StatTestResult::to_json() const {
  nlohmann::json j;
  j["statistic"] = statistic;
  j["p_value"] = p_value;
  j["mean_ranks"] = mean_ranks;
  j["alpha"] = alpha;
  if (pairwise_significant.size() > 0) {
    std::vector<std::vector<int>> sig;
    for (int i = 0; i < pairwise_significant.rows(); ++i) {
      std::vector<int> row;
      for (int k = 0; k < pairwise_significant.cols(); ++k)
        row.push_back(pairwise_significant(i, k) != 0.0 ? 1 : 0);
      sig.push_back(row);
    }
    j["pairwise_significant"] = sig;
    j["critical_difference"] = critical_difference;
  }
  if (control_index >= 0) {
    j["control_index"] = control_index;
    j["control_p_values"] = control_p_values;
  }
  return j.dump(2);
}

StatTestResult friedman_test(const Matrix& scores) {
  const int n = static_cast<int>(scores.rows());
  const int k = static_cast<int>(scores.cols());
  require(n >= 2 && k >= 2, "friedman_test: need n >= 2 folds and k >= 2 methods");
  std::vector<double> rank_sums(k, 0.0);
  for (int row = 0; row < n; ++row) {
    // Rank descending (rank 1 = best score), ties as average ranks.
    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores(row, a) > scores(row, b); });
    int i = 0;
    while (i < k) {
      int j = i;
      while (j + 1 < k && scores(row, order[j + 1]) == scores(row, order[i])) ++j;
      double avg_rank = (i + j) / 2.0 + 1.0;
      for (int t = i; t <= j; ++t) rank_sums[order[t]] += avg_rank;
      i = j + 1;
    }
  }
  StatTestResult res;
  res.mean_ranks.resize(k);
  double sum_r2 = 0.0;
  for (int j = 0; j < k; ++j) {
    res.mean_ranks[j] = rank_sums[j] / n;
    sum_r2 += res.mean_ranks[j] * res.mean_ranks[j];
  }
  res.statistic = 12.0 * n / (k * (k + 1.0)) * (sum_r2 - k * (k + 1.0) * (k + 1.0) / 4.0);
  if (res.statistic < 0.0) res.statistic = 0.0;  // guard tiny negative round-off
  res.p_value = chi_square_sf(res.statistic, k - 1);
  return res;
}

double nemenyi_critical_difference(int k, int n_folds, double alpha) {
  // Studentized-range critical values divided by sqrt(2), as tabulated in
  // the standard Demsar comparison methodology.
  static const double q05[] = {1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164};
  static const double q10[] = {1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920};
  if (k < 2 || k > 10)
    throw ConfigurationError("nemenyi: critical values tabulated for k in [2, 10]");
  const double* table;
  if (std::abs(alpha - 0.05) < 1e-12)
    table = q05;
  else if (std::abs(alpha - 0.10) < 1e-12)
    table = q10;
  else
    throw ConfigurationError("nemenyi: alpha must be 0.05 or 0.10");
  return table[k - 2] * std::sqrt(k * (k + 1.0) / (6.0 * n_folds));
}

StatTestResult nemenyi_posthoc(const std::vector<double>& mean_ranks, int n_folds, double alpha) {
  const int k = static_cast<int>(mean_ranks.size());
  StatTestResult res;
  res.mean_ranks = mean_ranks;
  res.alpha = alpha;
  res.critical_difference = nemenyi_critical_difference(k, n_folds, alpha);
  res.pairwise_significant = Matrix::Zero(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (i != j && std::abs(mean_ranks[i] - mean_ranks[j]) > res.critical_difference)
        res.pairwise_significant(i, j) = 1.0;
  return res;
}

StatTestResult bonferroni_dunn_posthoc(const std::vector<double>& mean_ranks, int n_folds,
                                       int control_index, double alpha) {
  const int k = static_cast<int>(mean_ranks.size());
  if (control_index < 0 || control_index >= k)
    throw ConfigurationError("bonferroni_dunn: control index out of range");
  StatTestResult res;
  res.mean_ranks = mean_ranks;
  res.alpha = alpha;
  res.control_index = control_index;
  const double se = std::sqrt(k * (k + 1.0) / (6.0 * n_folds));
  for (int i = 0; i < k; ++i) {
    if (i == control_index) {
      res.control_p_values.push_back(1.0);
      continue;
    }
    double z = (mean_ranks[i] - mean_ranks[control_index]) / se;
    double p = 1.0 - normal_cdf(z);  // one-tailed: method ranked worse than control
    res.control_p_values.push_back(std::min(1.0, p * (k - 1)));
  }
  return res;
}

// -------------------------------------------------------------- noise + dumps

std::vector<NoisePoint> noise_robustness_curve(const Checkpoint& checkpoint,
                                               const std::vector<CompositeSample>& data,
                                               const std::vector<double>& sigmas,
                                               uint64_t noise_seed) {
  std::vector<NoisePoint> curve;
  for (double s : sigmas) {
    require(s >= 0.0, "noise_robustness_curve: negative sigma");
    curve.push_back({s, evaluate(checkpoint, data, s, noise_seed)});
  }
  return curve;
}

std::string noise_curve_csv(const std::vector<NoisePoint>& curve) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "sigma,accuracy,macro_precision,macro_recall,macro_f1\n";
  for (const auto& p : curve)
    ss << p.sigma << ',' << p.report.accuracy << ',' << p.report.macro_precision << ','
       << p.report.macro_recall << ',' << p.report.macro_f1 << '\n';
  return ss.str();
}

std::string export_embeddings_csv(const Checkpoint& checkpoint,
                                  const std::vector<CompositeSample>& data) {
  if (data.empty()) throw ConfigurationError("export_embeddings: empty dataset");
  auto net = checkpoint.instantiate();
  std::ostringstream ss;
  ss.precision(17);
  ss << "id,label";
  for (int d = 0; d < checkpoint.net_config.embedding_dim; ++d) ss << ",z" << d;
  ss << '\n';
  constexpr int kBatch = 32;
  for (size_t start = 0; start < data.size(); start += kBatch) {
    std::vector<int> idx;
    for (size_t i = start; i < std::min(data.size(), start + kBatch); ++i)
      idx.push_back(static_cast<int>(i));
    Tensor images, masks;
    std::vector<int> labels;
    batch_from_samples(data, idx, &images, &masks, &labels);
    NetworkOutputs out = net->forward(images, false);
    for (size_t b = 0; b < idx.size(); ++b) {
      ss << data[idx[b]].provenance.index << ',' << labels[b];
      for (int d = 0; d < out.embedding.cols(); ++d) ss << ',' << out.embedding(b, d);
      ss << '\n';
    }
  }
  return ss.str();
}

std::vector<double> default_attention_sigmas() {
  return {0.01, 0.05, 0.07, 0.09, 0.1, 0.2, 0.3};
}

std::vector<std::string> attention_map_dump(const Checkpoint& checkpoint,
                                            const std::vector<CompositeSample>& images,
                                            const std::vector<double>& sigmas,
                                            uint64_t noise_seed, const std::string& dir) {
  if (mode_for_arm(checkpoint.arm) != NetworkMode::feratt)
    throw ConfigurationError("attention_map_dump: checkpoint has no attention branch");
  if (images.empty()) throw ConfigurationError("attention_map_dump: no images");
  auto net = checkpoint.instantiate();
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  std::vector<int> idx(images.size());
  std::iota(idx.begin(), idx.end(), 0);
  Tensor clean, masks;
  std::vector<int> labels;
  batch_from_samples(images, idx, &clean, &masks, &labels);
  for (double sigma : sigmas) {
    Tensor noisy = add_input_noise(clean, sigma, noise_seed);
    NetworkOutputs out = net->forward(noisy, false);
    const int h = clean.h(), w = clean.w(), b = clean.n();
    // Two rows: noisy inputs on top, reconstructions below.
    Tensor grid(1, 2 * h, b * w, 3);
    for (int s = 0; s < b; ++s)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) {
            grid.at(0, y, s * w + x, c) = noisy.at(s, y, x, c);
            grid.at(0, h + y, s * w + x, c) =
                std::clamp(out.attention_image.at(s, y, x, c), 0.0, 1.0);
          }
    char name[64];
    std::snprintf(name, sizeof(name), "attention_sigma_%.3f.png", sigma);
    std::string path = (std::filesystem::path(dir) / name).string();
    save_image_png(grid, path);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace feratt
