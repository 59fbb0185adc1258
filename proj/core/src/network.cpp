#include "feratt/network.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace feratt {

void NetworkConfig::validate() const {
  require(input_size > 0 && reduced_size > 0, "NetworkConfig: sizes must be positive");
  require(input_size % reduced_size == 0, "NetworkConfig: input size not divisible by reduced size");
  require(embedding_dim >= num_classes, "NetworkConfig: embedding dim must be >= num classes");
  require(num_classes >= 2, "NetworkConfig: need at least 2 classes");
  require(width_multiplier > 0.0, "NetworkConfig: width multiplier must be positive");
}

std::string NetworkConfig::to_json() const {
  nlohmann::json j;
  j["input_size"] = input_size;
  j["reduced_size"] = reduced_size;
  j["embedding_dim"] = embedding_dim;
  j["num_classes"] = num_classes;
  j["width_multiplier"] = width_multiplier;
  return j.dump();
}

NetworkConfig NetworkConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  NetworkConfig cfg;
  cfg.input_size = j.at("input_size").get<int>();
  cfg.reduced_size = j.at("reduced_size").get<int>();
  cfg.embedding_dim = j.at("embedding_dim").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.width_multiplier = j.at("width_multiplier").get<double>();
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- attention

AttentionBranch::AttentionBranch(const NetworkConfig& cfg) {
  const int c = cfg.scaled(16);
  auto make = [](Stage& s, int cin, int cout, int stride, int dilation) {
    s.conv = std::make_unique<nn::Conv2d>(cin, cout, 3, stride, -1, dilation);
    s.bn = std::make_unique<nn::BatchNorm2d>(cout);
  };
  make(enc0_, 3, c, 1, 1);
  make(enc1_, c, 2 * c, 2, 1);
  make(enc2_, 2 * c, 4 * c, 2, 1);
  make(enc3_, 4 * c, 4 * c, 1, 2);  // dilated bottleneck
  make(dec2_, 4 * c, 2 * c, 1, 1);
  make(dec1_, 2 * c, c, 1, 1);
  gate_conv_ = std::make_unique<nn::Conv2d>(c, 1, 1);
}

Tensor AttentionBranch::stage_forward(Stage& s, const Tensor& x, bool training) {
  return s.relu.forward(s.bn->forward(s.conv->forward(x, training), training), training);
}

Tensor AttentionBranch::stage_backward(Stage& s, const Tensor& g) {
  return s.conv->backward(s.bn->backward(s.relu.backward(g)));
}

Tensor AttentionBranch::forward(const Tensor& x, bool training) {
  require(x.c() == 3, "AttentionBranch: expected 3-channel input");
  Tensor e0 = stage_forward(enc0_, x, training);        // c   @ 128
  Tensor e1 = stage_forward(enc1_, e0, training);       // 2c  @ 64
  Tensor e2 = stage_forward(enc2_, e1, training);       // 4c  @ 32
  Tensor e3 = stage_forward(enc3_, e2, training);       // 4c  @ 32, dilation 2
  Tensor d2 = stage_forward(dec2_, up2_.forward(e3, training), training);
  d2.flat() += e1.flat();                               // skip
  Tensor d1 = stage_forward(dec1_, up1_.forward(d2, training), training);
  d1.flat() += e0.flat();                               // skip
  return gate_act_.forward(gate_conv_->forward(d1, training), training);
}

Tensor AttentionBranch::backward(const Tensor& grad_gate) {
  Tensor gd1 = gate_conv_->backward(gate_act_.backward(grad_gate));
  // d1 = stage(dec1) + e0: the incoming grad feeds both paths.
  Tensor gd2 = up1_.backward(stage_backward(dec1_, gd1));
  // d2 = stage(dec2) + e1.
  Tensor ge1_skip = gd2;
  Tensor ge3 = up2_.backward(stage_backward(dec2_, gd2));
  Tensor ge2 = stage_backward(enc3_, ge3);
  Tensor ge1 = stage_backward(enc2_, ge2);
  ge1.flat() += ge1_skip.flat();
  Tensor ge0 = stage_backward(enc1_, ge1);
  ge0.flat() += gd1.flat();
  return stage_backward(enc0_, ge0);
}

void AttentionBranch::collect_params(const std::string& prefix, std::vector<nn::ParamView>* out) {
  auto add = [&](const char* name, Stage& s) {
    s.conv->collect_params(prefix + "." + name + ".conv", out);
    s.bn->collect_params(prefix + "." + name + ".bn", out);
  };
  add("enc0", enc0_);
  add("enc1", enc1_);
  add("enc2", enc2_);
  add("enc3", enc3_);
  add("dec2", dec2_);
  add("dec1", dec1_);
  gate_conv_->collect_params(prefix + ".gate", out);
}

void AttentionBranch::init(Rng& rng) {
  for (Stage* s : {&enc0_, &enc1_, &enc2_, &enc3_, &dec2_, &dec1_}) {
    s->conv->init(rng);
    s->bn->init(rng);
  }
  gate_conv_->init(rng);
  // Keep the initial gate near 0.5: a saturated sigmoid at the start starves
  // both branches of gradient through the pixel-wise product.
  gate_conv_->weight *= 0.1;
}

// ----------------------------------------------------------------- features

FeatureBranch::FeatureBranch(const NetworkConfig& cfg) {
  const int f = cfg.feature_channels();
  conv_in_ = std::make_unique<nn::Conv2d>(3, f, 3);
  blocks_.resize(4);
  for (auto& b : blocks_) {
    b.conv1 = std::make_unique<nn::Conv2d>(f, f, 3);
    b.bn1 = std::make_unique<nn::BatchNorm2d>(f);
    b.conv2 = std::make_unique<nn::Conv2d>(f, f, 3);
    b.bn2 = std::make_unique<nn::BatchNorm2d>(f);
  }
}

Tensor FeatureBranch::forward(const Tensor& x, bool training) {
  require(x.c() == 3, "FeatureBranch: expected 3-channel input");
  Tensor h = relu_in_.forward(conv_in_->forward(x, training), training);
  for (auto& b : blocks_) {
    Tensor r = b.bn1->forward(b.conv1->forward(h, training), training);
    r = b.bn2->forward(b.conv2->forward(b.relu.forward(r, training), training), training);
    r.flat() += h.flat();
    h = std::move(r);
  }
  return h;
}

Tensor FeatureBranch::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    Tensor gr = it->conv2->backward(it->bn2->backward(g));
    gr = it->conv1->backward(it->bn1->backward(it->relu.backward(gr)));
    g.flat() += gr.flat();
  }
  return conv_in_->backward(relu_in_.backward(g));
}

void FeatureBranch::collect_params(const std::string& prefix, std::vector<nn::ParamView>* out) {
  conv_in_->collect_params(prefix + ".conv_in", out);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = prefix + ".res" + std::to_string(i);
    blocks_[i].conv1->collect_params(p + ".conv1", out);
    blocks_[i].bn1->collect_params(p + ".bn1", out);
    blocks_[i].conv2->collect_params(p + ".conv2", out);
    blocks_[i].bn2->collect_params(p + ".bn2", out);
  }
}

void FeatureBranch::init(Rng& rng) {
  conv_in_->init(rng);
  for (auto& b : blocks_) {
    b.conv1->init(rng);
    b.bn1->init(rng);
    b.conv2->init(rng);
    b.bn2->init(rng);
  }
}

// ------------------------------------------------------------ reconstruction

ReconstructionModule::ReconstructionModule(const NetworkConfig& cfg)
    : pool_(cfg.input_size / cfg.reduced_size) {
  const int mid = cfg.scaled(16);
  conv1_ = std::make_unique<nn::Conv2d>(cfg.feature_channels(), mid, 3);
  bn1_ = std::make_unique<nn::BatchNorm2d>(mid);
  conv2_ = std::make_unique<nn::Conv2d>(mid, 3, 3);
}

void ReconstructionModule::forward(const Tensor& gated, bool training,
                                   Tensor* attention_image, Tensor* reduced) {
  Tensor h = bn1_->forward(conv1_->forward(gated, training), training);
  *attention_image = conv2_->forward(relu_.forward(h, training), training);
  *reduced = pool_.forward(*attention_image, training);
}

Tensor ReconstructionModule::backward(const Tensor& grad_attention_image,
                                      const Tensor& grad_reduced) {
  Tensor g = pool_.backward(grad_reduced);
  if (!grad_attention_image.empty()) g.flat() += grad_attention_image.flat();
  return conv1_->backward(bn1_->backward(relu_.backward(conv2_->backward(g))));
}

void ReconstructionModule::collect_params(const std::string& prefix,
                                          std::vector<nn::ParamView>* out) {
  conv1_->collect_params(prefix + ".conv1", out);
  bn1_->collect_params(prefix + ".bn1", out);
  conv2_->collect_params(prefix + ".conv2", out);
}

void ReconstructionModule::init(Rng& rng) {
  conv1_->init(rng);
  bn1_->init(rng);
  conv2_->init(rng);
}

// ------------------------------------------------------------ representation

RepresentationHead::RepresentationHead(const NetworkConfig& cfg) {
  const int w = cfg.scaled(64);
  conv_in_ = std::make_unique<nn::Conv2d>(3, w, 3);
  // 18-layer pre-activation configuration: 4 stages x 2 blocks.
  struct StageSpec { int cin, cout, stride; };
  std::vector<StageSpec> specs = {
      {w, w, 1},         {w, w, 1},
      {w, 2 * w, 2},     {2 * w, 2 * w, 1},
      {2 * w, 4 * w, 2}, {4 * w, 4 * w, 1},
      {4 * w, 8 * w, 2}, {8 * w, 8 * w, 1},
  };
  for (const auto& s : specs) {
    PreActBlock b;
    b.bn1 = std::make_unique<nn::BatchNorm2d>(s.cin);
    b.conv1 = std::make_unique<nn::Conv2d>(s.cin, s.cout, 3, s.stride);
    b.bn2 = std::make_unique<nn::BatchNorm2d>(s.cout);
    b.conv2 = std::make_unique<nn::Conv2d>(s.cout, s.cout, 3);
    if (s.stride != 1 || s.cin != s.cout)
      b.shortcut = std::make_unique<nn::Conv2d>(s.cin, s.cout, 1, s.stride, 0);
    blocks_.push_back(std::move(b));
  }
  feat_dim_ = 8 * w;
  bn_final_ = std::make_unique<nn::BatchNorm2d>(feat_dim_);
  fc_embed_ = std::make_unique<nn::Linear>(feat_dim_, cfg.embedding_dim);
  fc_class_ = std::make_unique<nn::Linear>(cfg.embedding_dim, cfg.num_classes);
}

Tensor RepresentationHead::block_forward(PreActBlock& b, const Tensor& x, bool training) {
  Tensor pre = b.relu1.forward(b.bn1->forward(x, training), training);
  b.preact_cache = pre;
  Tensor h = b.conv1->forward(pre, training);
  h = b.conv2->forward(b.relu2.forward(b.bn2->forward(h, training), training), training);
  Tensor sc = b.shortcut ? b.shortcut->forward(pre, training) : x;
  h.flat() += sc.flat();
  return h;
}

Tensor RepresentationHead::block_backward(PreActBlock& b, const Tensor& g) {
  Tensor gh = b.conv1->backward(b.bn2->backward(b.relu2.backward(b.conv2->backward(g))));
  if (b.shortcut) {
    gh.flat() += b.shortcut->backward(g).flat();
    return b.bn1->backward(b.relu1.backward(gh));
  }
  Tensor gx = b.bn1->backward(b.relu1.backward(gh));
  gx.flat() += g.flat();
  return gx;
}

void RepresentationHead::forward(const Tensor& reduced, bool training, Matrix* embedding,
                                 Matrix* class_scores) {
  require(reduced.c() == 3, "RepresentationHead: expected 3-channel input");
  batch_ = reduced.n();
  Tensor h = conv_in_->forward(reduced, training);
  for (auto& b : blocks_) h = block_forward(b, h, training);
  h = gap_.forward(relu_final_.forward(bn_final_->forward(h, training), training), training);
  Matrix feat = Eigen::Map<const Matrix>(h.data(), batch_, feat_dim_);
  *embedding = fc_embed_->forward(feat);
  Matrix logits = fc_class_->forward(*embedding);
  probs_cache_ = nn::softmax_rows(logits);
  *class_scores = probs_cache_;
}

Tensor RepresentationHead::backward(const Matrix& grad_embedding,
                                    const Matrix& grad_class_scores) {
  Matrix dz = Matrix::Zero(batch_, fc_embed_->weight.cols());
  if (grad_embedding.size() > 0) dz += grad_embedding;
  if (grad_class_scores.size() > 0) {
    Matrix dlogits = nn::softmax_backward(probs_cache_, grad_class_scores);
    dz += fc_class_->backward(dlogits);
  }
  Matrix dfeat = fc_embed_->backward(dz);
  Tensor g(batch_, 1, 1, feat_dim_);
  Eigen::Map<Matrix>(g.data(), batch_, feat_dim_) = dfeat;
  Tensor h = bn_final_->backward(relu_final_.backward(gap_.backward(g)));
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) h = block_backward(*it, h);
  return conv_in_->backward(h);
}

void RepresentationHead::collect_params(const std::string& prefix,
                                        std::vector<nn::ParamView>* out) {
  conv_in_->collect_params(prefix + ".conv_in", out);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    std::string p = prefix + ".block" + std::to_string(i);
    blocks_[i].bn1->collect_params(p + ".bn1", out);
    blocks_[i].conv1->collect_params(p + ".conv1", out);
    blocks_[i].bn2->collect_params(p + ".bn2", out);
    blocks_[i].conv2->collect_params(p + ".conv2", out);
    if (blocks_[i].shortcut) blocks_[i].shortcut->collect_params(p + ".shortcut", out);
  }
  bn_final_->collect_params(prefix + ".bn_final", out);
  fc_embed_->collect_params(prefix + ".fc_embed", out);
  fc_class_->collect_params(prefix + ".fc_class", out);
}

void RepresentationHead::init(Rng& rng) {
  conv_in_->init(rng);
  for (auto& b : blocks_) {
    b.bn1->init(rng);
    b.conv1->init(rng);
    b.bn2->init(rng);
    b.conv2->init(rng);
    if (b.shortcut) b.shortcut->init(rng);
  }
  bn_final_->init(rng);
  fc_embed_->init(rng);
  fc_class_->init(rng);
}

// -------------------------------------------------------------------- FERAtt

FERAttNetwork::FERAttNetwork(const NetworkConfig& cfg, NetworkMode mode)
    : cfg_(cfg), mode_(mode), input_pool_(cfg.input_size / cfg.reduced_size) {
  cfg_.validate();
  if (mode_ == NetworkMode::feratt) {
    att_ = std::make_unique<AttentionBranch>(cfg_);
    ft_ = std::make_unique<FeatureBranch>(cfg_);
    rec_ = std::make_unique<ReconstructionModule>(cfg_);
  }
  rep_ = std::make_unique<RepresentationHead>(cfg_);
}

Tensor FERAttNetwork::compose_attention(const Tensor& gate, const Tensor& features) {
  require(gate.n() == features.n() && gate.h() == features.h() && gate.w() == features.w(),
          "compose_attention: spatial mismatch");
  require(gate.c() == 1, "compose_attention: gate must be single-channel");
  Tensor out(features.n(), features.h(), features.w(), features.c());
  const int c = features.c();
  for (size_t i = 0, p = 0; i < out.size(); i += c, ++p)
    for (int ch = 0; ch < c; ++ch) out[i + ch] = gate[p] * features[i + ch];
  return out;
}

NetworkOutputs FERAttNetwork::forward(const Tensor& images, bool training) {
  require(images.h() == cfg_.input_size && images.w() == cfg_.input_size && images.c() == 3,
          "FERAttNetwork: bad input shape");
  require(images.n() >= 1, "FERAttNetwork: empty batch");
  NetworkOutputs out;
  if (mode_ == NetworkMode::feratt) {
    gate_cache_ = att_->forward(images, training);
    features_cache_ = ft_->forward(images, training);
    Tensor gated = compose_attention(gate_cache_, features_cache_);
    rec_->forward(gated, training, &out.attention_image, &out.reduced);
  } else {
    out.reduced = input_pool_.forward(images, training);
  }
  rep_->forward(out.reduced, training, &out.embedding, &out.class_scores);
  return out;
}

void FERAttNetwork::backward(const Tensor& grad_attention_image, const Matrix& grad_embedding,
                             const Matrix& grad_class_scores) {
  Tensor dreduced = rep_->backward(grad_embedding, grad_class_scores);
  if (mode_ == NetworkMode::baseline) return;  // input gradient not needed
  Tensor dgated = rec_->backward(grad_attention_image, dreduced);
  // Product rule through the gating.
  const Tensor& ft = features_cache_;
  const Tensor& gate = gate_cache_;
  Tensor dft(ft.n(), ft.h(), ft.w(), ft.c());
  Tensor dgate(gate.n(), gate.h(), gate.w(), 1);
  const int c = ft.c();
  for (size_t i = 0, p = 0; i < ft.size(); i += c, ++p) {
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) {
      dft[i + ch] = gate[p] * dgated[i + ch];
      acc += ft[i + ch] * dgated[i + ch];
    }
    dgate[p] = acc;
  }
  ft_->backward(dft);
  att_->backward(dgate);
}

std::vector<nn::ParamView> FERAttNetwork::params() {
  std::vector<nn::ParamView> out;
  if (mode_ == NetworkMode::feratt) {
    att_->collect_params("att", &out);
    ft_->collect_params("ft", &out);
    rec_->collect_params("rec", &out);
  }
  rep_->collect_params("rep", &out);
  return out;
}

void FERAttNetwork::init(Rng& rng) {
  if (mode_ == NetworkMode::feratt) {
    att_->init(rng);
    ft_->init(rng);
    rec_->init(rng);
  }
  rep_->init(rng);
}

void FERAttNetwork::zero_grad() {
  for (auto& p : params())
    if (p.grad) std::fill(p.grad, p.grad + p.size, 0.0);
}

size_t FERAttNetwork::param_count() {
  size_t total = 0;
  for (auto& p : params())
    if (p.grad) total += p.size;  // trainable only
  return total;
}

std::string FERAttNetwork::architecture_summary_json() {
  nlohmann::json j;
  j["config"] = nlohmann::json::parse(cfg_.to_json());
  j["mode"] = mode_ == NetworkMode::feratt ? "feratt" : "baseline";
  nlohmann::json layers = nlohmann::json::array();
  size_t trainable = 0;
  for (auto& p : params()) {
    layers.push_back({{"name", p.name}, {"size", p.size}, {"trainable", p.grad != nullptr}});
    if (p.grad) trainable += p.size;
  }
  j["parameters"] = layers;
  j["trainable_count"] = trainable;
  return j.dump(2);
}

}  // namespace feratt
