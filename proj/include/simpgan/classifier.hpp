#pragma once

#include <string>
#include <vector>

#include "simpgan/nnblocks.hpp"
#include "simpgan/pairs.hpp"

namespace simpgan {

/// Probabilities are kept this far from {0,1} before any log; the
/// cross-entropy losses are unbounded at the endpoints.
inline constexpr double kProbClamp = 1e-7;

struct SiameseConfig {
  int image_h = 64;
  int image_w = 32;
  int image_c = 3;
  std::vector<int> stage_channels = {16, 32, 64, 64};
  int num_identities = 0;  // K

  int embedding_dim() const { return stage_channels.back(); }
};

/// Stride-2 conv stages with leaky_relu; global average pooling afterwards
/// flattens the final feature map into the embedding.
inline std::vector<LayerSpec> backbone_spec(const SiameseConfig& cfg) {
  std::vector<LayerSpec> specs;
  int in_ch = cfg.image_c;
  for (std::size_t i = 0; i < cfg.stage_channels.size(); ++i) {
    const std::string name = "stage" + std::to_string(i + 1);
    specs.push_back(conv_layer(name, in_ch, cfg.stage_channels[i], 3, 2, 1));
    specs.push_back(activation_layer(name + ".act", Activation::leaky_relu));
    in_ch = cfg.stage_channels[i];
  }
  return specs;
}

/// Two weight-shared embedding branches, a similarity head over the
/// squared-difference vector, and an identity head shared by both branches.
template <typename T>
struct SiameseModel {
  SiameseConfig cfg;
  ParamSet<T> backbone;
  ParamSet<T> similarity_head;
  ParamSet<T> identity_head;

  SiameseModel frozen() const {
    SiameseModel out;
    out.cfg = cfg;
    out.backbone = backbone.frozen();
    out.similarity_head = similarity_head.frozen();
    out.identity_head = identity_head.frozen();
    return out;
  }

  bool all_finite() const {
    return backbone.all_finite() && similarity_head.all_finite() && identity_head.all_finite();
  }
};

template <typename T>
SiameseModel<T> make_siamese(const SiameseConfig& cfg, std::uint64_t seed) {
  if (cfg.num_identities < 1) {
    throw ShapeError("siamese: num_identities must be positive");
  }
  const Rng root(seed);
  SiameseModel<T> model;
  model.cfg = cfg;
  model.backbone = init_params<T>(backbone_spec(cfg), root.split("backbone").next_u64());
  model.similarity_head = init_params<T>({dense_layer("sim", cfg.embedding_dim(), 1)},
                                         root.split("sim_head").next_u64());
  model.identity_head =
      init_params<T>({dense_layer("id", cfg.embedding_dim(), cfg.num_identities)},
                     root.split("id_head").next_u64());
  return model;
}

/// Image [1,C,H,W] -> embedding vector of length embedding_dim().
template <typename T>
Tensor<T> embed(Graph<T>& g, const SiameseModel<T>& model, const Tensor<T>& image) {
  const Shape expected{1, model.cfg.image_c, model.cfg.image_h, model.cfg.image_w};
  if (image.shape() != expected) {
    throw ShapeError("embed: image " + shape_str(image.shape()) + " does not match configured " +
                     shape_str(expected));
  }
  auto features = net_forward(g, backbone_spec(model.cfg), model.backbone, image);
  auto pooled = g.mean(features, {2, 3});  // [1, C]
  return g.reshape(pooled, {model.cfg.embedding_dim()});
}

/// q_hat = sigmoid(theta_s . (v1 - v2)^2); symmetric in its arguments.
template <typename T>
Tensor<T> similarity_score(Graph<T>& g, const SiameseModel<T>& model, const Tensor<T>& v1,
                           const Tensor<T>& v2) {
  if (v1.shape() != v2.shape()) {
    throw ShapeError("similarity_score: embeddings " + shape_str(v1.shape()) + " vs " +
                     shape_str(v2.shape()));
  }
  auto vs = g.square(g.sub(v1, v2));
  auto logit = layer_forward(g, dense_layer("sim", model.cfg.embedding_dim(), 1),
                             model.similarity_head, vs);
  return g.sigmoid(logit);
}

/// Binary cross entropy between the predicted match score and q.
template <typename T>
Tensor<T> variation_loss(Graph<T>& g, const Tensor<T>& q_hat, int q) {
  if (q != 0 && q != 1) throw ShapeError("variation_loss: q must be 0 or 1");
  auto clamped = g.clamp(q_hat, kProbClamp, 1.0 - kProbClamp);
  if (q == 1) return g.scale(g.log(clamped), -1.0);
  auto one_minus = g.sub(Tensor<T>::scalar(T(1)), clamped);
  return g.scale(g.log(one_minus), -1.0);
}

/// Softmax identity probabilities over the K known pedestrians.
template <typename T>
Tensor<T> identity_logits(Graph<T>& g, const SiameseModel<T>& model, const Tensor<T>& v) {
  auto raw = layer_forward(
      g, dense_layer("id", model.cfg.embedding_dim(), model.cfg.num_identities),
      model.identity_head, v);
  return g.softmax(raw, 0);
}

namespace detail {

template <typename T>
Tensor<T> pick_log_prob(Graph<T>& g, const Tensor<T>& probs, int label) {
  const int k = probs.shape()[0];
  if (label < 0 || label >= k) {
    throw ShapeError("identification_loss: label " + std::to_string(label) +
                     " out of range [0," + std::to_string(k) + ")");
  }
  std::vector<T> one_hot(static_cast<std::size_t>(k), T(0));
  one_hot[label] = T(1);
  auto picked = g.sum(g.mul(probs, Tensor<T>::from({k}, std::move(one_hot))));
  return g.log(g.clamp(picked, kProbClamp, 1.0));
}

}  // namespace detail

/// Cross entropy against one-hot identities, summed over both branches.
template <typename T>
Tensor<T> identification_loss(Graph<T>& g, const Tensor<T>& probs1, int label1,
                              const Tensor<T>& probs2, int label2) {
  if (probs1.shape().size() != 1 || probs1.shape() != probs2.shape()) {
    throw ShapeError("identification_loss: probability vectors " + shape_str(probs1.shape()) +
                     " vs " + shape_str(probs2.shape()));
  }
  auto sum_logs = g.add(detail::pick_log_prob(g, probs1, label1),
                        detail::pick_log_prob(g, probs2, label2));
  return g.scale(sum_logs, -1.0);
}

template <typename T>
struct ClassifierLossParts {
  Tensor<T> all;             // L_all = L_v + L_id
  Tensor<T> variation;       // L_v
  Tensor<T> identification;  // L_id
  Tensor<T> q_hat;
};

template <typename T>
ClassifierLossParts<T> classifier_loss(Graph<T>& g, const SiameseModel<T>& model,
                                       const Tensor<T>& image1, const Tensor<T>& image2,
                                       const PairLabel& label) {
  if (label.q != (label.id1 == label.id2 ? 1 : 0)) {
    throw ShapeError("classifier_loss: pair label q contradicts its identities");
  }
  auto v1 = embed(g, model, image1);
  auto v2 = embed(g, model, image2);
  ClassifierLossParts<T> parts;
  parts.q_hat = similarity_score(g, model, v1, v2);
  parts.variation = variation_loss(g, parts.q_hat, label.q);
  auto p1 = identity_logits(g, model, v1);
  auto p2 = identity_logits(g, model, v2);
  parts.identification = identification_loss(g, p1, label.id1, p2, label.id2);
  parts.all = g.add(parts.variation, parts.identification);
  return parts;
}

}  // namespace simpgan
