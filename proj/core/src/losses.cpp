#include "feratt/losses.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace feratt {

namespace {
constexpr double kBceEps = 1e-7;
constexpr double kMinAnchorSeparation = 1e-3;
}  // namespace

void GaussianManifoldConfig::validate() const {
  require(sigma > 0.0, "GaussianManifoldConfig: sigma must be positive");
  require(anchors.rows() >= 2, "GaussianManifoldConfig: need at least 2 classes");
  require(anchors.cols() == dim, "GaussianManifoldConfig: anchor dim mismatch");
  require(priors.size() == anchors.rows(), "GaussianManifoldConfig: priors size mismatch");
  require((priors.array() >= 0.0).all(), "GaussianManifoldConfig: negative prior");
  require(std::abs(priors.sum() - 1.0) <= 1e-9, "GaussianManifoldConfig: priors must sum to 1");
  require(min_anchor_separation() >= kMinAnchorSeparation,
          "GaussianManifoldConfig: anchors too close");
}

double GaussianManifoldConfig::min_anchor_separation() const {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < anchors.rows(); ++i)
    for (int j = i + 1; j < anchors.rows(); ++j)
      best = std::min(best, (anchors.row(i) - anchors.row(j)).norm());
  return best;
}

std::string GaussianManifoldConfig::to_json() const {
  nlohmann::json j;
  j["dim"] = dim;
  j["sigma"] = sigma;
  j["priors"] = std::vector<double>(priors.data(), priors.data() + priors.size());
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < anchors.rows(); ++i) {
    rows.push_back(std::vector<double>(anchors.row(i).begin(), anchors.row(i).end()));
  }
  j["anchors"] = rows;
  return j.dump();
}

GaussianManifoldConfig GaussianManifoldConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  GaussianManifoldConfig cfg;
  cfg.dim = j.at("dim").get<int>();
  cfg.sigma = j.at("sigma").get<double>();
  auto priors = j.at("priors").get<std::vector<double>>();
  cfg.priors = Eigen::Map<const Vector>(priors.data(), priors.size());
  auto rows = j.at("anchors");
  cfg.anchors.resize(rows.size(), cfg.dim);
  for (size_t i = 0; i < rows.size(); ++i) {
    auto row = rows[i].get<std::vector<double>>();
    require(static_cast<int>(row.size()) == cfg.dim, "anchor row dim mismatch");
    cfg.anchors.row(i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), row.size());
  }
  cfg.validate();
  return cfg;
}

GaussianManifoldConfig make_manifold_config(int num_classes, int dim, double sigma,
                                            double radius_in_sigmas) {
  require(num_classes >= 2, "make_manifold_config: need at least 2 classes");
  require(dim >= num_classes, "make_manifold_config: dim must be >= num_classes");
  GaussianManifoldConfig cfg;
  cfg.dim = dim;
  cfg.sigma = sigma;
  cfg.anchors = Matrix::Zero(num_classes, dim);
  double radius = radius_in_sigmas * sigma;
  for (int j = 0; j < num_classes; ++j) cfg.anchors(j, j) = radius;
  cfg.priors = Vector::Constant(num_classes, 1.0 / num_classes);
  cfg.validate();
  return cfg;
}

Vector empirical_priors(const std::vector<int>& labels, int num_classes) {
  Vector counts = Vector::Zero(num_classes);
  for (int l : labels) {
    require(l >= 0 && l < num_classes, "empirical_priors: label out of range");
    counts[l] += 1.0;
  }
  if (labels.empty()) return Vector::Constant(num_classes, 1.0 / num_classes);
  return counts / counts.sum();
}

Matrix log_likelihood(const Matrix& embeddings, const GaussianManifoldConfig& cfg) {
  cfg.validate();
  require(embeddings.cols() == cfg.dim, "log_likelihood: embedding dim mismatch");
  require(embeddings.allFinite(), "log_likelihood: non-finite embedding");
  const int b = static_cast<int>(embeddings.rows());
  const int c = cfg.num_classes();
  const double n = static_cast<double>(cfg.dim);
  const double log_norm = -0.5 * n * std::log(2.0 * M_PI) - n * std::log(cfg.sigma);
  const double inv_two_sigma2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  Matrix out(b, c);
  for (int k = 0; k < b; ++k)
    for (int j = 0; j < c; ++j)
      out(k, j) = log_norm - (embeddings.row(k) - cfg.anchors.row(j)).squaredNorm() * inv_two_sigma2;
  return out;
}

Matrix posterior(const Matrix& embeddings, const GaussianManifoldConfig& cfg) {
  Matrix log_lik = log_likelihood(embeddings, cfg);
  const int b = static_cast<int>(log_lik.rows());
  const int c = static_cast<int>(log_lik.cols());
  // Zero-prior classes contribute log(0); keep them at -inf so exp gives 0.
  Eigen::RowVectorXd log_priors(c);
  for (int j = 0; j < c; ++j)
    log_priors[j] = cfg.priors[j] > 0.0 ? std::log(cfg.priors[j])
                                        : -std::numeric_limits<double>::infinity();
  Matrix post(b, c);
  for (int k = 0; k < b; ++k) {
    Eigen::RowVectorXd logits = log_lik.row(k) + log_priors;
    double mx = logits.maxCoeff();
    require(std::isfinite(mx), "posterior: degenerate row, all likelihoods zero");
    Eigen::RowVectorXd p = (logits.array() - mx).exp();
    post.row(k) = p / p.sum();
  }
  return post;
}

namespace {
void check_one_hot(const Matrix& targets) {
  for (int k = 0; k < targets.rows(); ++k) {
    require(std::abs(targets.row(k).sum() - 1.0) <= 1e-9,
            "targets: rows must sum to 1");
    require((targets.row(k).array() >= 0.0).all(), "targets: negative entry");
  }
}
}  // namespace

double structured_loss(const Matrix& embeddings, const Matrix& one_hot_targets,
                       const GaussianManifoldConfig& cfg) {
  return structured_loss_grad(embeddings, one_hot_targets, cfg, nullptr);
}

double structured_loss_grad(const Matrix& embeddings, const Matrix& one_hot_targets,
                            const GaussianManifoldConfig& cfg, Matrix* grad_embeddings) {
  require(embeddings.rows() == one_hot_targets.rows(), "structured_loss: batch mismatch");
  check_one_hot(one_hot_targets);
  Matrix post = posterior(embeddings, cfg);
  require(post.cols() == one_hot_targets.cols(), "structured_loss: class count mismatch");
  const int b = static_cast<int>(embeddings.rows());
  Matrix diff = post - one_hot_targets;
  double loss = diff.squaredNorm() / b;
  if (grad_embeddings) {
    // Posterior is a softmax over logits l_j = log p(w_j) + log p(z|w_j);
    // dl_j/dz = (mu_j - z) / sigma^2.
    const double inv_sigma2 = 1.0 / (cfg.sigma * cfg.sigma);
    grad_embeddings->resize(embeddings.rows(), embeddings.cols());
    for (int k = 0; k < b; ++k) {
      Eigen::RowVectorXd p = post.row(k);
      Eigen::RowVectorXd d = (2.0 / b) * diff.row(k);
      // dL/dl_j through the softmax.
      double dot = d.cwiseProduct(p).sum();
      Eigen::RowVectorXd dlogit = (p.array() * (d.array() - dot)).matrix();
      Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(embeddings.cols());
      for (int j = 0; j < post.cols(); ++j)
        g += dlogit[j] * (cfg.anchors.row(j) - embeddings.row(k)) * inv_sigma2;
      grad_embeddings->row(k) = g;
    }
  }
  return loss;
}

double attention_loss(const Tensor& reconstruction, const Tensor& input, const Tensor& mask) {
  return attention_loss_grad(reconstruction, input, mask, nullptr);
}

double attention_loss_grad(const Tensor& reconstruction, const Tensor& input,
                           const Tensor& mask, Tensor* grad_reconstruction) {
  require(reconstruction.same_shape(input), "attention_loss: shape mismatch");
  require(mask.n() == input.n() && mask.h() == input.h() && mask.w() == input.w() && mask.c() == 1,
          "attention_loss: mask shape mismatch");
  const size_t total = reconstruction.size();
  require(total > 0, "attention_loss: empty tensors");
  if (grad_reconstruction) *grad_reconstruction = Tensor(input.n(), input.h(), input.w(), input.c());
  double acc = 0.0;
  for (int n = 0; n < input.n(); ++n)
    for (int y = 0; y < input.h(); ++y)
      for (int x = 0; x < input.w(); ++x) {
        double m = mask.at(n, y, x, 0);
        for (int ch = 0; ch < input.c(); ++ch) {
          double d = reconstruction.at(n, y, x, ch) - input.at(n, y, x, ch) * m;
          acc += d * d;
          if (grad_reconstruction)
            grad_reconstruction->at(n, y, x, ch) = 2.0 * d / static_cast<double>(total);
        }
      }
  return acc / static_cast<double>(total);
}

double classification_loss(const Matrix& probs, const Matrix& one_hot_targets) {
  return classification_loss_grad(probs, one_hot_targets, nullptr);
}

double classification_loss_grad(const Matrix& probs, const Matrix& one_hot_targets,
                                Matrix* grad_probs) {
  require(probs.rows() == one_hot_targets.rows() && probs.cols() == one_hot_targets.cols(),
          "classification_loss: shape mismatch");
  check_one_hot(one_hot_targets);
  const double total = static_cast<double>(probs.size());
  if (grad_probs) grad_probs->setZero(probs.rows(), probs.cols());
  double acc = 0.0;
  for (int k = 0; k < probs.rows(); ++k)
    for (int j = 0; j < probs.cols(); ++j) {
      double p = std::clamp(probs(k, j), kBceEps, 1.0 - kBceEps);
      double t = one_hot_targets(k, j);
      acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
      if (grad_probs && probs(k, j) > kBceEps && probs(k, j) < 1.0 - kBceEps)
        (*grad_probs)(k, j) = (p - t) / (p * (1.0 - p)) / total;
    }
  return acc / total;
}

LossBreakdown joint_loss(const Tensor& reconstruction, const Tensor& input,
                         const Tensor& mask, const Matrix& embeddings,
                         const Matrix& probs, const Matrix& one_hot_targets,
                         const GaussianManifoldConfig& cfg, const LossWeights& weights) {
  LossBreakdown out;
  if (weights.attention != 0.0)
    out.attention = weights.attention * attention_loss(reconstruction, input, mask);
  if (weights.representation != 0.0)
    out.representation = weights.representation * structured_loss(embeddings, one_hot_targets, cfg);
  out.classification = weights.classification * classification_loss(probs, one_hot_targets);
  out.total = out.attention + out.representation + out.classification;
  return out;
}

Matrix one_hot(const std::vector<int>& labels, int num_classes) {
  Matrix out = Matrix::Zero(static_cast<int>(labels.size()), num_classes);
  for (size_t k = 0; k < labels.size(); ++k) {
    require(labels[k] >= 0 && labels[k] < num_classes, "one_hot: label out of range");
    out(static_cast<int>(k), labels[k]) = 1.0;
  }
  return out;
}

}  // namespace feratt
