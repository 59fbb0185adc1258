#pragma once

#include <string>

#include "feratt/tensor.hpp"

namespace feratt {

// Parameters of the per-class isotropic Gaussians in embedding space:
// one anchor (mean) per class, a shared scale sigma, and class priors.
struct GaussianManifoldConfig {
  Matrix anchors;  // c x d
  double sigma = 1.0;
  Vector priors;   // c, non-negative, sums to 1
  int dim = 64;

  int num_classes() const { return static_cast<int>(anchors.rows()); }

  void validate() const;
  double min_anchor_separation() const;

  std::string to_json() const;
  static GaussianManifoldConfig from_json(const std::string& json_text);
};

// Anchors on a scaled standard-basis frame: class j sits at radius * e_j.
// All pairwise distances equal radius * sqrt(2).
GaussianManifoldConfig make_manifold_config(int num_classes, int dim,
                                            double sigma = 1.0,
                                            double radius_in_sigmas = 4.0);

// Class priors from label counts; uniform fallback when counts are empty.
Vector empirical_priors(const std::vector<int>& labels, int num_classes);

// Log of the isotropic Gaussian density, entry (k, j) for embedding k and
// class j: -d/2 log(2 pi) - d log sigma - ||z_k - mu_j||^2 / (2 sigma^2).
Matrix log_likelihood(const Matrix& embeddings, const GaussianManifoldConfig& cfg);

// Bayes posterior P(w_j | z_k), computed in log space with max-subtraction.
// Rows sum to 1.
Matrix posterior(const Matrix& embeddings, const GaussianManifoldConfig& cfg);

// Mean squared error between the embedding-space posterior and the
// supervised one-hot posterior, averaged over the batch.
double structured_loss(const Matrix& embeddings, const Matrix& one_hot_targets,
                       const GaussianManifoldConfig& cfg);

// Same value plus the analytic gradient w.r.t. the embeddings.
double structured_loss_grad(const Matrix& embeddings, const Matrix& one_hot_targets,
                            const GaussianManifoldConfig& cfg, Matrix* grad_embeddings);

// Pixel-wise MSE between the reconstruction and the mask-gated input.
double attention_loss(const Tensor& reconstruction, const Tensor& input,
                      const Tensor& mask);
double attention_loss_grad(const Tensor& reconstruction, const Tensor& input,
                           const Tensor& mask, Tensor* grad_reconstruction);

// Mean binary cross-entropy over all B*c entries, probabilities clamped
// to [1e-7, 1 - 1e-7].
double classification_loss(const Matrix& probs, const Matrix& one_hot_targets);
double classification_loss_grad(const Matrix& probs, const Matrix& one_hot_targets,
                                Matrix* grad_probs);

struct LossBreakdown {
  double attention = 0.0;
  double representation = 0.0;
  double classification = 0.0;
  double total = 0.0;
};

// Term multipliers; the three model arms are presets over these.
struct LossWeights {
  double attention = 1.0;
  double representation = 1.0;
  double classification = 1.0;

  static LossWeights baseline() { return {0.0, 0.0, 1.0}; }
  static LossWeights attention_cls() { return {1.0, 0.0, 1.0}; }
  static LossWeights attention_rep_cls() { return {1.0, 1.0, 1.0}; }
};

LossBreakdown joint_loss(const Tensor& reconstruction, const Tensor& input,
                         const Tensor& mask, const Matrix& embeddings,
                         const Matrix& probs, const Matrix& one_hot_targets,
                         const GaussianManifoldConfig& cfg,
                         const LossWeights& weights);

Matrix one_hot(const std::vector<int>& labels, int num_classes);

}  // namespace feratt
