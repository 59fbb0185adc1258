#pragma once

#include <memory>
#include <string>
#include <vector>

#include "feratt/nn.hpp"
#include "feratt/tensor.hpp"

namespace feratt {

struct NetworkConfig {
  int input_size = 128;
  int reduced_size = 32;
  int embedding_dim = 64;
  int num_classes = 8;
  double width_multiplier = 1.0;

  int scaled(int base) const {
    int v = static_cast<int>(std::lround(base * width_multiplier));
    return v < 1 ? 1 : v;
  }
  // G_ft output channels.
  int feature_channels() const { return scaled(32); }

  void validate() const;
  std::string to_json() const;
  static NetworkConfig from_json(const std::string& json_text);
};

struct NetworkOutputs {
  Tensor attention_image;  // B x 128 x 128 x 3, pre-pooling reconstruction
  Tensor reduced;          // B x 32 x 32 x 3
  Matrix embedding;        // B x 64
  Matrix class_scores;     // B x c, softmax probabilities
};

// Encoder-decoder producing a single-channel spatial gate in [0, 1].
// Four coder layers, additive skip connections, dilated bottleneck.
class AttentionBranch {
 public:
  explicit AttentionBranch(const NetworkConfig& cfg);
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_gate);
  void collect_params(const std::string& prefix, std::vector<nn::ParamView>* out);
  void init(Rng& rng);

 private:
  struct Stage {
    std::unique_ptr<nn::Conv2d> conv;
    std::unique_ptr<nn::BatchNorm2d> bn;
    nn::ReLU relu;
  };
  Tensor stage_forward(Stage& s, const Tensor& x, bool training);
  Tensor stage_backward(Stage& s, const Tensor& g);

  Stage enc0_, enc1_, enc2_, enc3_;  // four coder layers
  nn::UpsampleNearest2x up2_, up1_;
  Stage dec2_, dec1_;
  std::unique_ptr<nn::Conv2d> gate_conv_;
  nn::Sigmoid gate_act_;
};

// Four residual blocks at full resolution, no pooling or strides.
class FeatureBranch {
 public:
  explicit FeatureBranch(const NetworkConfig& cfg);
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_out);
  void collect_params(const std::string& prefix, std::vector<nn::ParamView>* out);
  void init(Rng& rng);

 private:
  struct ResBlock {
    std::unique_ptr<nn::Conv2d> conv1, conv2;
    std::unique_ptr<nn::BatchNorm2d> bn1, bn2;
    nn::ReLU relu;
  };
  std::unique_ptr<nn::Conv2d> conv_in_;
  nn::ReLU relu_in_;
  std::vector<ResBlock> blocks_;
};

// Two convolutions + ReLU to a 3-channel image, then 4x4 average pooling.
class ReconstructionModule {
 public:
  explicit ReconstructionModule(const NetworkConfig& cfg);
  void forward(const Tensor& gated, bool training, Tensor* attention_image, Tensor* reduced);
  Tensor backward(const Tensor& grad_attention_image, const Tensor& grad_reduced);
  void collect_params(const std::string& prefix, std::vector<nn::ParamView>* out);
  void init(Rng& rng);

 private:
  std::unique_ptr<nn::Conv2d> conv1_, conv2_;
  std::unique_ptr<nn::BatchNorm2d> bn1_;
  nn::ReLU relu_;
  nn::AvgPool2d pool_;
};

// Pre-activation residual classifier (18-layer configuration) over the
// 32x32 reduced input, with a linear embedding head and softmax classifier.
class RepresentationHead {
 public:
  explicit RepresentationHead(const NetworkConfig& cfg);
  void forward(const Tensor& reduced, bool training, Matrix* embedding, Matrix* class_scores);
  Tensor backward(const Matrix& grad_embedding, const Matrix& grad_class_scores);
  void collect_params(const std::string& prefix, std::vector<nn::ParamView>* out);
  void init(Rng& rng);

 private:
  struct PreActBlock {
    std::unique_ptr<nn::BatchNorm2d> bn1, bn2;
    std::unique_ptr<nn::Conv2d> conv1, conv2;
    std::unique_ptr<nn::Conv2d> shortcut;  // null for identity
    nn::ReLU relu1, relu2;
    Tensor preact_cache;
  };
  Tensor block_forward(PreActBlock& b, const Tensor& x, bool training);
  Tensor block_backward(PreActBlock& b, const Tensor& g);

  std::unique_ptr<nn::Conv2d> conv_in_;
  std::vector<PreActBlock> blocks_;
  std::unique_ptr<nn::BatchNorm2d> bn_final_;
  nn::ReLU relu_final_;
  nn::GlobalAvgPool gap_;
  std::unique_ptr<nn::Linear> fc_embed_;
  std::unique_ptr<nn::Linear> fc_class_;
  Matrix probs_cache_;
  int batch_ = 0, feat_dim_ = 0;
};

enum class NetworkMode { feratt, baseline };

// FERAtt: attention and feature branches are pixel-wise multiplied, the
// reconstruction provides the attention image and the 32x32 reduced input,
// and the representation head yields embedding and class scores. In
// baseline mode the classifier alone runs on the average-pooled input.
class FERAttNetwork {
 public:
  FERAttNetwork(const NetworkConfig& cfg, NetworkMode mode);

  const NetworkConfig& config() const { return cfg_; }
  NetworkMode mode() const { return mode_; }

  NetworkOutputs forward(const Tensor& images, bool training);
  // Gradients w.r.t. the three supervised outputs; empty tensors/matrices
  // are treated as zero.
  void backward(const Tensor& grad_attention_image, const Matrix& grad_embedding,
                const Matrix& grad_class_scores);

  std::vector<nn::ParamView> params();
  void init(Rng& rng);
  void zero_grad();
  size_t param_count();

  // Pixel-wise gating with the single-channel gate broadcast over channels.
  static Tensor compose_attention(const Tensor& gate, const Tensor& features);

  std::string architecture_summary_json();

 private:
  NetworkConfig cfg_;
  NetworkMode mode_;
  std::unique_ptr<AttentionBranch> att_;
  std::unique_ptr<FeatureBranch> ft_;
  std::unique_ptr<ReconstructionModule> rec_;
  std::unique_ptr<RepresentationHead> rep_;
  nn::AvgPool2d input_pool_;

  // Forward caches for the backward pass.
  Tensor gate_cache_, features_cache_;
};

}  // namespace feratt
