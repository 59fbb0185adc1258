#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "feratt/checkpoint.hpp"
#include "feratt/losses.hpp"
#include "feratt/network.hpp"
#include "feratt/renderer.hpp"

namespace feratt {

struct TrainConfig {
  int epochs = 60;
  int batch_size = 200;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::string arm = "att-rep-cls";
  uint64_t seed = 0;
  double width_multiplier = 1.0;
  double noise_sigma = 0.0;  // train-time additive input noise
  double manifold_sigma = 1.0;
  double anchor_radius_in_sigmas = 4.0;
  bool uniform_priors = false;
  int num_classes = 0;  // 0: derive from the data
  // Loss multipliers on top of the arm gating.
  double attention_weight = 1.0;
  double representation_weight = 1.0;
  double classification_weight = 1.0;
  // Early stop once both targets are met; negative disables.
  double target_train_accuracy = -1.0;
  double target_attention_loss = -1.0;

  // Paper-scale protocol: 60 epochs, 200 per mini-batch, Adam.
  static TrainConfig paper_scale() { return TrainConfig{}; }
  static TrainConfig desk_scale();

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& json_text);
};

struct EpochStats {
  int epoch = 0;
  LossBreakdown loss;
  double train_accuracy = 0.0;
  double eval_accuracy = -1.0;  // -1 when no eval set given
};

struct TrainRecord {
  std::vector<EpochStats> epochs;
  double wall_seconds = 0.0;
  bool early_stopped = false;

  std::string to_csv() const;
  std::string summary_json() const;
};

struct TrainResult {
  std::unique_ptr<FERAttNetwork> network;
  GaussianManifoldConfig manifold;
  TrainRecord record;
  Checkpoint checkpoint;
};

// Deterministic given (config, data): fixed init, fixed shuffles, fixed
// noise streams. Throws TrainingDiverged on a non-finite loss.
struct TrainingDiverged : std::runtime_error {
  TrainingDiverged(int epoch, int batch, const std::string& term)
      : std::runtime_error("non-finite " + term + " loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch)),
        epoch(epoch), batch(batch), term(term) {}
  int epoch, batch;
  std::string term;
};

TrainResult train(const std::vector<CompositeSample>& data, const TrainConfig& cfg,
                  const std::vector<CompositeSample>* eval_data = nullptr);

// Resume from a checkpoint (fine-tuning); hyperparameters from cfg, weights
// and manifold from the base.
TrainResult finetune(const Checkpoint& base, const std::vector<CompositeSample>& data,
                     const TrainConfig& cfg);

struct FoldSplit {
  std::vector<std::string> train_subjects;
  std::vector<std::string> test_subjects;
};

// Leave-k-subject-out: partitions subjects into ceil(N/k) folds; every
// subject appears in exactly one test set.
std::vector<FoldSplit> make_folds(const std::vector<std::string>& subject_ids, int k,
                                  uint64_t seed);

// Fine-tunes once per sigma, each starting from the base checkpoint, with
// additive input noise of that sigma and otherwise unchanged parameters.
std::vector<TrainResult> noise_finetune_sweep(const Checkpoint& base,
                                              const std::vector<double>& sigmas,
                                              const TrainConfig& cfg,
                                              const std::vector<CompositeSample>& data);

// Seeded additive zero-mean Gaussian noise in [0,1] image space, clamped.
Tensor add_input_noise(const Tensor& images, double sigma, uint64_t seed);

// Batch assembly: images as one tensor, masks, labels.
void batch_from_samples(const std::vector<CompositeSample>& data,
                        const std::vector<int>& indices, Tensor* images, Tensor* masks,
                        std::vector<int>* labels);

}  // namespace feratt
