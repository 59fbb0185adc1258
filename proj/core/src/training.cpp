#include "feratt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "feratt/errors.hpp"

namespace feratt {

TrainConfig TrainConfig::desk_scale() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-3;
  cfg.width_multiplier = 0.25;
  return cfg;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigurationError("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw ConfigurationError("TrainConfig: batch size must be >= 1");
  if (learning_rate <= 0.0) throw ConfigurationError("TrainConfig: learning rate must be > 0");
  if (noise_sigma < 0.0) throw ConfigurationError("TrainConfig: negative noise sigma");
  if (manifold_sigma <= 0.0) throw ConfigurationError("TrainConfig: manifold sigma must be > 0");
  if (width_multiplier <= 0.0) throw ConfigurationError("TrainConfig: width multiplier must be > 0");
  weights_for_arm(arm);  // throws on unknown arm
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["learning_rate"] = learning_rate;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["arm"] = arm;
  j["seed"] = seed;
  j["width_multiplier"] = width_multiplier;
  j["noise_sigma"] = noise_sigma;
  j["manifold_sigma"] = manifold_sigma;
  j["anchor_radius_in_sigmas"] = anchor_radius_in_sigmas;
  j["uniform_priors"] = uniform_priors;
  j["num_classes"] = num_classes;
  j["attention_weight"] = attention_weight;
  j["representation_weight"] = representation_weight;
  j["classification_weight"] = classification_weight;
  j["target_train_accuracy"] = target_train_accuracy;
  j["target_attention_loss"] = target_attention_loss;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  TrainConfig cfg;
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  cfg.arm = j.value("arm", cfg.arm);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.width_multiplier = j.value("width_multiplier", cfg.width_multiplier);
  cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
  cfg.manifold_sigma = j.value("manifold_sigma", cfg.manifold_sigma);
  cfg.anchor_radius_in_sigmas = j.value("anchor_radius_in_sigmas", cfg.anchor_radius_in_sigmas);
  cfg.uniform_priors = j.value("uniform_priors", cfg.uniform_priors);
  cfg.num_classes = j.value("num_classes", cfg.num_classes);
  cfg.attention_weight = j.value("attention_weight", cfg.attention_weight);
  cfg.representation_weight = j.value("representation_weight", cfg.representation_weight);
  cfg.classification_weight = j.value("classification_weight", cfg.classification_weight);
  cfg.target_train_accuracy = j.value("target_train_accuracy", cfg.target_train_accuracy);
  cfg.target_attention_loss = j.value("target_attention_loss", cfg.target_attention_loss);
  cfg.validate();
  return cfg;
}

std::string TrainRecord::to_csv() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "epoch,attention_loss,representation_loss,classification_loss,total_loss,"
        "train_accuracy,eval_accuracy\n";
  for (const auto& e : epochs)
    ss << e.epoch << ',' << e.loss.attention << ',' << e.loss.representation << ','
       << e.loss.classification << ',' << e.loss.total << ',' << e.train_accuracy << ','
       << e.eval_accuracy << '\n';
  return ss.str();
}

std::string TrainRecord::summary_json() const {
  nlohmann::json j;
  // Deliberately timing-free so reruns serialize byte-identically;
  // wall_seconds stays an in-memory field.
  j["epochs_run"] = epochs.size();
  j["early_stopped"] = early_stopped;
  if (!epochs.empty()) {
    const auto& last = epochs.back();
    j["final_total_loss"] = last.loss.total;
    j["final_attention_loss"] = last.loss.attention;
    j["final_train_accuracy"] = last.train_accuracy;
    j["final_eval_accuracy"] = last.eval_accuracy;
  }
  return j.dump(2);
}

namespace {

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<nn::ParamView> params, const TrainConfig& cfg)
      : params_(std::move(params)), lr_(cfg.learning_rate), beta1_(cfg.beta1),
        beta2_(cfg.beta2), eps_(cfg.adam_eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.grad ? p.size : 0, 0.0);
      v_.emplace_back(p.grad ? p.size : 0, 0.0);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.grad) continue;
      for (size_t j = 0; j < p.size; ++j) {
        double g = p.grad[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        p.value[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
      }
    }
  }

 private:
  std::vector<nn::ParamView> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

int derive_num_classes(const std::vector<CompositeSample>& data, const TrainConfig& cfg) {
  if (cfg.num_classes > 0) return cfg.num_classes;
  int c = 0;
  for (const auto& s : data) c = std::max(c, s.label + 1);
  return std::max(c, 2);
}

double evaluate_accuracy(FERAttNetwork& net, const std::vector<CompositeSample>& data,
                         int batch_size) {
  int correct = 0;
  for (size_t start = 0; start < data.size(); start += batch_size) {
    std::vector<int> idx;
    for (size_t i = start; i < std::min(data.size(), start + batch_size); ++i)
      idx.push_back(static_cast<int>(i));
    Tensor images, masks;
    std::vector<int> labels;
    batch_from_samples(data, idx, &images, &masks, &labels);
    NetworkOutputs out = net.forward(images, false);
    for (int k = 0; k < out.class_scores.rows(); ++k) {
      int pred;
      out.class_scores.row(k).maxCoeff(&pred);
      if (pred == labels[k]) ++correct;
    }
  }
  return data.empty() ? 0.0 : static_cast<double>(correct) / data.size();
}

TrainResult run_training(const std::vector<CompositeSample>& data, const TrainConfig& cfg,
                         const std::vector<CompositeSample>* eval_data,
                         const Checkpoint* base) {
  cfg.validate();
  if (data.empty()) throw ConfigurationError("train: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();

  const int c = base ? base->net_config.num_classes : derive_num_classes(data, cfg);
  for (const auto& s : data)
    if (s.label < 0 || s.label >= c)
      throw ConfigurationError("train: label " + std::to_string(s.label) +
                               " outside the configured " + std::to_string(c) + " classes");
  NetworkConfig net_cfg;
  GaussianManifoldConfig manifold;
  if (base) {
    net_cfg = base->net_config;
    manifold = base->manifold;
  } else {
    net_cfg.num_classes = c;
    net_cfg.width_multiplier = cfg.width_multiplier;
    std::vector<int> labels;
    for (const auto& s : data) labels.push_back(s.label);
    manifold = make_manifold_config(c, net_cfg.embedding_dim, cfg.manifold_sigma,
                                    cfg.anchor_radius_in_sigmas);
    if (!cfg.uniform_priors) manifold.priors = empirical_priors(labels, c);
    manifold.validate();
  }

  auto net = std::make_unique<FERAttNetwork>(net_cfg, mode_for_arm(cfg.arm));
  Rng init_rng = Rng::substream(cfg.seed, 0x1717);
  net->init(init_rng);
  if (base) base->restore_into(*net);

  LossWeights weights = weights_for_arm(cfg.arm);
  weights.attention *= cfg.attention_weight;
  weights.representation *= cfg.representation_weight;
  weights.classification *= cfg.classification_weight;

  AdamOptimizer opt(net->params(), cfg);
  TrainRecord record;

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng = Rng::substream(cfg.seed, 0xe000 + static_cast<uint64_t>(epoch));
    shuffle_indices(order, epoch_rng);

    LossBreakdown epoch_loss;
    int correct = 0;
    int batch_index = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      std::vector<int> idx(order.begin() + start,
                           order.begin() + std::min(order.size(),
                                                    start + static_cast<size_t>(cfg.batch_size)));
      Tensor images, masks;
      std::vector<int> labels;
      batch_from_samples(data, idx, &images, &masks, &labels);
      Tensor clean = images;
      if (cfg.noise_sigma > 0.0)
        images = add_input_noise(images, cfg.noise_sigma, epoch_rng.next_u64());

      net->zero_grad();
      NetworkOutputs out = net->forward(images, true);
      Matrix targets = one_hot(labels, c);

      LossBreakdown loss;
      Tensor grad_att;
      Matrix grad_z, grad_probs;
      if (weights.attention != 0.0) {
        // The attention target is the clean image gated by the mask. The
        // recorded loss stays unweighted; the weight scales only the
        // gradient and the total used for optimisation.
        loss.attention = attention_loss_grad(out.attention_image, clean, masks, &grad_att);
        grad_att.flat() *= weights.attention;
      }
      if (weights.representation != 0.0) {
        loss.representation = weights.representation *
            structured_loss_grad(out.embedding, targets, manifold, &grad_z);
        grad_z *= weights.representation;
      }
      loss.classification = weights.classification *
          classification_loss_grad(out.class_scores, targets, &grad_probs);
      grad_probs *= weights.classification;
      loss.total = weights.attention * loss.attention + loss.representation +
                   loss.classification;

      if (!std::isfinite(loss.attention)) throw TrainingDiverged(epoch, batch_index, "attention");
      if (!std::isfinite(loss.representation))
        throw TrainingDiverged(epoch, batch_index, "representation");
      if (!std::isfinite(loss.classification))
        throw TrainingDiverged(epoch, batch_index, "classification");

      net->backward(grad_att, grad_z, grad_probs);
      opt.step();

      const double w = static_cast<double>(idx.size()) / data.size();
      epoch_loss.attention += loss.attention * w;
      epoch_loss.representation += loss.representation * w;
      epoch_loss.classification += loss.classification * w;
      epoch_loss.total += loss.total * w;
      for (int k = 0; k < out.class_scores.rows(); ++k) {
        int pred;
        out.class_scores.row(k).maxCoeff(&pred);
        if (pred == labels[k]) ++correct;
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = epoch_loss;
    stats.train_accuracy = static_cast<double>(correct) / data.size();
    if (eval_data) stats.eval_accuracy = evaluate_accuracy(*net, *eval_data, cfg.batch_size);
    record.epochs.push_back(stats);

    if (cfg.target_train_accuracy >= 0.0 &&
        stats.train_accuracy >= cfg.target_train_accuracy &&
        (cfg.target_attention_loss < 0.0 || weights.attention == 0.0 ||
         epoch_loss.attention <= cfg.target_attention_loss)) {
      record.early_stopped = true;
      break;
    }
  }

  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  TrainResult result;
  const int prior_epochs = base ? base->epochs_completed : 0;
  result.checkpoint = Checkpoint::capture(*net, manifold, cfg.arm, cfg.seed,
                                          prior_epochs + static_cast<int>(record.epochs.size()));
  if (base) result.checkpoint.base_digest = digest_hex(base->content_digest());
  result.network = std::move(net);
  result.manifold = manifold;
  result.record = std::move(record);
  return result;
}

}  // namespace

TrainResult train(const std::vector<CompositeSample>& data, const TrainConfig& cfg,
                  const std::vector<CompositeSample>* eval_data) {
  return run_training(data, cfg, eval_data, nullptr);
}

TrainResult finetune(const Checkpoint& base, const std::vector<CompositeSample>& data,
                     const TrainConfig& cfg) {
  return run_training(data, cfg, nullptr, &base);
}

std::vector<FoldSplit> make_folds(const std::vector<std::string>& subject_ids, int k,
                                  uint64_t seed) {
  if (k <= 0) throw ConfigurationError("make_folds: k must be positive");
  const int n = static_cast<int>(subject_ids.size());
  if (k > n) throw ConfigurationError("make_folds: k exceeds the number of subjects");
  if (k == n) throw ConfigurationError("make_folds: k == N leaves an empty training set");
  std::vector<std::string> shuffled = subject_ids;
  std::sort(shuffled.begin(), shuffled.end());
  Rng rng = Rng::substream(seed, 0xf01d);
  for (size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.uniform_index(i)]);

  std::vector<FoldSplit> folds;
  for (int start = 0; start < n; start += k) {
    FoldSplit f;
    for (int i = 0; i < n; ++i) {
      if (i >= start && i < std::min(n, start + k))
        f.test_subjects.push_back(shuffled[i]);
      else
        f.train_subjects.push_back(shuffled[i]);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<TrainResult> noise_finetune_sweep(const Checkpoint& base,
                                              const std::vector<double>& sigmas,
                                              const TrainConfig& cfg,
                                              const std::vector<CompositeSample>& data) {
  for (double s : sigmas)
    if (s < 0.0) throw ConfigurationError("noise_finetune_sweep: negative sigma");
  std::vector<TrainResult> results;
  for (double s : sigmas) {
    TrainConfig ft = cfg;
    ft.noise_sigma = s;
    results.push_back(finetune(base, data, ft));
  }
  return results;
}

Tensor add_input_noise(const Tensor& images, double sigma, uint64_t seed) {
  if (sigma == 0.0) return images;
  require(sigma > 0.0, "add_input_noise: negative sigma");
  Tensor out = images;
  Rng rng(seed);
  for (size_t i = 0; i < out.size(); ++i) out[i] += rng.normal(0.0, sigma);
  out.clamp(0.0, 1.0);
  return out;
}

void batch_from_samples(const std::vector<CompositeSample>& data,
                        const std::vector<int>& indices, Tensor* images, Tensor* masks,
                        std::vector<int>* labels) {
  require(!indices.empty(), "batch_from_samples: empty batch");
  const Tensor& first = data[indices[0]].image;
  *images = Tensor(static_cast<int>(indices.size()), first.h(), first.w(), 3);
  *masks = Tensor(static_cast<int>(indices.size()), first.h(), first.w(), 1);
  labels->clear();
  for (size_t b = 0; b < indices.size(); ++b) {
    const CompositeSample& s = data[indices[b]];
    require(s.image.h() == first.h() && s.image.w() == first.w(),
            "batch_from_samples: inconsistent sample sizes");
    std::copy(s.image.data(), s.image.data() + s.image.size(),
              images->data() + b * s.image.size());
    std::copy(s.mask.data(), s.mask.data() + s.mask.size(),
              masks->data() + b * s.mask.size());
    labels->push_back(s.label);
  }
}

}  // namespace feratt
