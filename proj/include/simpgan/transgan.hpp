#pragma once

#include "simpgan/classifier.hpp"

namespace simpgan {

struct GanConfig {
  int image_h = 64;
  int image_w = 32;
  int image_c = 3;
  int gen_stem = 8;
  int gen_down1 = 16;
  int gen_down2 = 32;
  int disc_c1 = 8;
  int disc_c2 = 16;
  int disc_c3 = 32;
};

/// Which domain supplies the real images in the two discriminator losses.
/// The discriminator role descriptions pair D_S with real source images and
/// D_T with real target images; the written equations use the opposite
/// arguments. Both readings are supported; the role-consistent one is the
/// default.
enum class DiscRealSource { prose_roles, literal_equations };

/// Conv stem, two stride-2 downsampling convs, two residual blocks, two
/// nearest-neighbor-upsample+conv stages, tanh output; instance_norm
/// throughout.
inline std::vector<LayerSpec> generator_spec(const GanConfig& cfg) {
  std::vector<LayerSpec> s;
  s.push_back(conv_layer("stem", cfg.image_c, cfg.gen_stem, 3, 1, 1).no_bias());
  s.push_back(instance_norm_layer("stem.norm", cfg.gen_stem));
  s.push_back(activation_layer("stem.act", Activation::relu));
  s.push_back(downsample_layer("down1", cfg.gen_stem, cfg.gen_down1).no_bias());
  s.push_back(instance_norm_layer("down1.norm", cfg.gen_down1));
  s.push_back(activation_layer("down1.act", Activation::relu));
  s.push_back(downsample_layer("down2", cfg.gen_down1, cfg.gen_down2).no_bias());
  s.push_back(instance_norm_layer("down2.norm", cfg.gen_down2));
  s.push_back(activation_layer("down2.act", Activation::relu));
  s.push_back(residual_block_layer("res1", cfg.gen_down2));
  s.push_back(residual_block_layer("res2", cfg.gen_down2));
  s.push_back(upsample_layer("up1", cfg.gen_down2, cfg.gen_down1).no_bias());
  s.push_back(instance_norm_layer("up1.norm", cfg.gen_down1));
  s.push_back(activation_layer("up1.act", Activation::relu));
  s.push_back(upsample_layer("up2", cfg.gen_down1, cfg.gen_stem).no_bias());
  s.push_back(instance_norm_layer("up2.norm", cfg.gen_stem));
  s.push_back(activation_layer("up2.act", Activation::relu));
  s.push_back(conv_layer("out", cfg.gen_stem, cfg.image_c, 3, 1, 1));
  s.push_back(activation_layer("out.act", Activation::tanh));
  return s;
}

/// Three stride-2 convs then a 1-channel score map; the scalar score is the
/// mean of the map.
inline std::vector<LayerSpec> discriminator_spec(const GanConfig& cfg) {
  std::vector<LayerSpec> s;
  s.push_back(conv_layer("c1", cfg.image_c, cfg.disc_c1, 3, 2, 1));
  s.push_back(activation_layer("c1.act", Activation::leaky_relu));
  s.push_back(conv_layer("c2", cfg.disc_c1, cfg.disc_c2, 3, 2, 1).no_bias());
  s.push_back(instance_norm_layer("c2.norm", cfg.disc_c2));
  s.push_back(activation_layer("c2.act", Activation::leaky_relu));
  s.push_back(conv_layer("c3", cfg.disc_c2, cfg.disc_c3, 3, 2, 1).no_bias());
  s.push_back(instance_norm_layer("c3.norm", cfg.disc_c3));
  s.push_back(activation_layer("c3.act", Activation::leaky_relu));
  s.push_back(conv_layer("score", cfg.disc_c3, 1, 3, 1, 1));
  return s;
}

/// G maps source-style images to target style, F maps target style back to
/// source style; D_S and D_T score source/target realism.
template <typename T>
struct GanBundle {
  GanConfig cfg;
  ParamSet<T> gen_g;
  ParamSet<T> gen_f;
  ParamSet<T> disc_s;
  ParamSet<T> disc_t;

  bool all_finite() const {
    return gen_g.all_finite() && gen_f.all_finite() && disc_s.all_finite() &&
           disc_t.all_finite();
  }
};

template <typename T>
GanBundle<T> make_gan(const GanConfig& cfg, std::uint64_t seed) {
  const Rng root(seed);
  GanBundle<T> gan;
  gan.cfg = cfg;
  gan.gen_g = init_params<T>(generator_spec(cfg), root.split("gen_g").next_u64());
  gan.gen_f = init_params<T>(generator_spec(cfg), root.split("gen_f").next_u64());
  gan.disc_s = init_params<T>(discriminator_spec(cfg), root.split("disc_s").next_u64());
  gan.disc_t = init_params<T>(discriminator_spec(cfg), root.split("disc_t").next_u64());
  return gan;
}

template <typename T>
Tensor<T> translate(Graph<T>& g, const GanConfig& cfg, const ParamSet<T>& generator,
                    const Tensor<T>& image) {
  const Shape expected{1, cfg.image_c, cfg.image_h, cfg.image_w};
  if (image.shape() != expected) {
    throw ShapeError("translate: image " + shape_str(image.shape()) +
                     " does not match configured " + shape_str(expected));
  }
  return net_forward(g, generator_spec(cfg), generator, image);
}

/// Scalar realism score: mean of the 1-channel patch map.
template <typename T>
Tensor<T> disc_score(Graph<T>& g, const GanConfig& cfg, const ParamSet<T>& disc,
                     const Tensor<T>& image) {
  const Shape expected{1, cfg.image_c, cfg.image_h, cfg.image_w};
  if (image.shape() != expected) {
    throw ShapeError("disc_score: image " + shape_str(image.shape()) +
                     " does not match configured " + shape_str(expected));
  }
  return g.mean(net_forward(g, discriminator_spec(cfg), disc, image));
}

namespace detail {

template <typename T>
Tensor<T> square_error_to(Graph<T>& g, const Tensor<T>& score, double target) {
  return g.square(g.sub(score, Tensor<T>::scalar(static_cast<T>(target))));
}

}  // namespace detail

/// Least-squares adversarial loss for a generator: sum over the two fakes of
/// (D(fake) - 1)^2.
template <typename T>
Tensor<T> adversarial_generator_loss(Graph<T>& g, const GanConfig& cfg, const ParamSet<T>& disc,
                                     const Tensor<T>& fake1, const Tensor<T>& fake2) {
  auto l1 = detail::square_error_to(g, disc_score(g, cfg, disc, fake1), 1.0);
  auto l2 = detail::square_error_to(g, disc_score(g, cfg, disc, fake2), 1.0);
  return g.add(l1, l2);
}

/// Least-squares discriminator loss: sum over x of D(fake_x)^2 +
/// (D(real_x) - 1)^2. Fakes must be detached by the caller so the step only
/// updates the discriminator.
template <typename T>
Tensor<T> adversarial_discriminator_loss(Graph<T>& g, const GanConfig& cfg,
                                         const ParamSet<T>& disc, const Tensor<T>& fake1,
                                         const Tensor<T>& fake2, const Tensor<T>& real1,
                                         const Tensor<T>& real2) {
  auto loss = detail::square_error_to(g, disc_score(g, cfg, disc, fake1), 0.0);
  loss = g.add(loss, detail::square_error_to(g, disc_score(g, cfg, disc, fake2), 0.0));
  loss = g.add(loss, detail::square_error_to(g, disc_score(g, cfg, disc, real1), 1.0));
  loss = g.add(loss, detail::square_error_to(g, disc_score(g, cfg, disc, real2), 1.0));
  return loss;
}

/// Mean absolute error between a reconstruction and its original.
template <typename T>
Tensor<T> reconstruction_l1(Graph<T>& g, const Tensor<T>& reconstructed,
                            const Tensor<T>& original) {
  return g.mean(g.abs(g.sub(reconstructed, original)));
}

/// Round-trip consistency: ||G(F(t)) - t||_1 + ||F(G(s)) - s||_1 over both
/// pair members, each norm taken as the mean over pixels.
template <typename T>
Tensor<T> cycle_loss(Graph<T>& g, const GanBundle<T>& gan, const Tensor<T>& source1,
                     const Tensor<T>& source2, const Tensor<T>& target1,
                     const Tensor<T>& target2) {
  auto loss = reconstruction_l1(
      g, translate(g, gan.cfg, gan.gen_g, translate(g, gan.cfg, gan.gen_f, target1)), target1);
  loss = g.add(loss, reconstruction_l1(
                         g,
                         translate(g, gan.cfg, gan.gen_g, translate(g, gan.cfg, gan.gen_f, target2)),
                         target2));
  loss = g.add(loss, reconstruction_l1(
                         g,
                         translate(g, gan.cfg, gan.gen_f, translate(g, gan.cfg, gan.gen_g, source1)),
                         source1));
  loss = g.add(loss, reconstruction_l1(
                         g,
                         translate(g, gan.cfg, gan.gen_f, translate(g, gan.cfg, gan.gen_g, source2)),
                         source2));
  return loss;
}

/// Variation loss of the round-trip-translated labeled source pair, with the
/// classifier frozen: gradients reach only the generators.
template <typename T>
Tensor<T> similarity_consistency_loss(Graph<T>& g, const SiameseModel<T>& classifier,
                                      const GanBundle<T>& gan, const Tensor<T>& source1,
                                      const Tensor<T>& source2, const PairLabel& label) {
  auto frozen = classifier.frozen();
  auto rt1 = translate(g, gan.cfg, gan.gen_f, translate(g, gan.cfg, gan.gen_g, source1));
  auto rt2 = translate(g, gan.cfg, gan.gen_f, translate(g, gan.cfg, gan.gen_g, source2));
  auto v1 = embed(g, frozen, rt1);
  auto v2 = embed(g, frozen, rt2);
  return variation_loss(g, similarity_score(g, frozen, v1, v2), label.q);
}

/// L_gen = L_G + L_F + lambda1 * L_cycle + lambda2 * L_sim.
template <typename T>
Tensor<T> generator_total_loss(Graph<T>& g, const Tensor<T>& adv_g, const Tensor<T>& adv_f,
                               const Tensor<T>& cycle, const Tensor<T>& sim, double lambda1,
                               double lambda2) {
  if (lambda1 < 0 || lambda2 < 0) {
    throw ShapeError("generator_total_loss: lambda weights must be non-negative");
  }
  auto total = g.add(adv_g, adv_f);
  total = g.add(total, g.scale(cycle, lambda1));
  return g.add(total, g.scale(sim, lambda2));
}

/// L_dis = L_DS + L_DT.
template <typename T>
Tensor<T> discriminator_total_loss(Graph<T>& g, const Tensor<T>& loss_ds,
                                   const Tensor<T>& loss_dt) {
  return g.add(loss_ds, loss_dt);
}

// ---- training-step orchestration -----------------------------------------

template <typename T>
struct GeneratorStep {
  Tensor<T> adv_g, adv_f, cycle, sim, total;
  Tensor<T> fake_t1, fake_t2;  // G(source)
  Tensor<T> fake_s1, fake_s2;  // F(target)
};

/// Builds every generator-side loss of one iteration in a single graph,
/// sharing the translated images between the adversarial, cycle and
/// similarity terms.
template <typename T>
GeneratorStep<T> generator_step_losses(Graph<T>& g, const GanBundle<T>& gan,
                                       const SiameseModel<T>& classifier, const Tensor<T>& s1,
                                       const Tensor<T>& s2, const PairLabel& label,
                                       const Tensor<T>& t1, const Tensor<T>& t2, double lambda1,
                                       double lambda2) {
  GeneratorStep<T> step;
  step.fake_t1 = translate(g, gan.cfg, gan.gen_g, s1);
  step.fake_t2 = translate(g, gan.cfg, gan.gen_g, s2);
  step.fake_s1 = translate(g, gan.cfg, gan.gen_f, t1);
  step.fake_s2 = translate(g, gan.cfg, gan.gen_f, t2);

  step.adv_g = g.add(detail::square_error_to(g, disc_score(g, gan.cfg, gan.disc_t, step.fake_t1), 1.0),
                     detail::square_error_to(g, disc_score(g, gan.cfg, gan.disc_t, step.fake_t2), 1.0));
  step.adv_f = g.add(detail::square_error_to(g, disc_score(g, gan.cfg, gan.disc_s, step.fake_s1), 1.0),
                     detail::square_error_to(g, disc_score(g, gan.cfg, gan.disc_s, step.fake_s2), 1.0));

  auto rec_t1 = translate(g, gan.cfg, gan.gen_g, step.fake_s1);
  auto rec_t2 = translate(g, gan.cfg, gan.gen_g, step.fake_s2);
  auto rec_s1 = translate(g, gan.cfg, gan.gen_f, step.fake_t1);
  auto rec_s2 = translate(g, gan.cfg, gan.gen_f, step.fake_t2);
  step.cycle = g.add(g.add(reconstruction_l1(g, rec_t1, t1), reconstruction_l1(g, rec_t2, t2)),
                     g.add(reconstruction_l1(g, rec_s1, s1), reconstruction_l1(g, rec_s2, s2)));

  auto frozen = classifier.frozen();
  auto v1 = embed(g, frozen, rec_s1);
  auto v2 = embed(g, frozen, rec_s2);
  step.sim = variation_loss(g, similarity_score(g, frozen, v1, v2), label.q);

  step.total = generator_total_loss(g, step.adv_g, step.adv_f, step.cycle, step.sim, lambda1,
                                    lambda2);
  return step;
}

template <typename T>
struct DiscriminatorStep {
  Tensor<T> loss_ds, loss_dt, total;
};

/// Discriminator-side losses on detached fakes. With prose_roles, D_T's real
/// term sees target images and D_S's sees source images; literal_equations
/// swaps them.
template <typename T>
DiscriminatorStep<T> discriminator_step_losses(Graph<T>& g, const GanBundle<T>& gan,
                                               const Tensor<T>& fake_t1, const Tensor<T>& fake_t2,
                                               const Tensor<T>& fake_s1, const Tensor<T>& fake_s2,
                                               const Tensor<T>& s1, const Tensor<T>& s2,
                                               const Tensor<T>& t1, const Tensor<T>& t2,
                                               DiscRealSource mode) {
  const bool prose = mode == DiscRealSource::prose_roles;
  const Tensor<T>& real_s1 = prose ? s1 : t1;
  const Tensor<T>& real_s2 = prose ? s2 : t2;
  const Tensor<T>& real_t1 = prose ? t1 : s1;
  const Tensor<T>& real_t2 = prose ? t2 : s2;
  DiscriminatorStep<T> step;
  step.loss_ds = adversarial_discriminator_loss(g, gan.cfg, gan.disc_s, fake_s1, fake_s2, real_s1,
                                                real_s2);
  step.loss_dt = adversarial_discriminator_loss(g, gan.cfg, gan.disc_t, fake_t1, fake_t2, real_t1,
                                                real_t2);
  step.total = discriminator_total_loss(g, step.loss_ds, step.loss_dt);
  return step;
}

}  // namespace simpgan
