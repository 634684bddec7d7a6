#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mmattack/core.hpp"
#include "mmattack/embed.hpp"
#include "mmattack/errors.hpp"
#include "mmattack/rng.hpp"
#include "mmattack/victim.hpp"

namespace mmattack {

enum class Termination { budget_exhausted, constraint_break, target_reached };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::budget_exhausted: return "budget_exhausted";
    case Termination::constraint_break: return "constraint_break";
    case Termination::target_reached: return "target_reached";
  }
  return "?";
}

struct PgdStepRecord {
  int step = 0;
  double loss = 0.0;
  double linf_norm = 0.0;
  std::optional<double> checkpoint_sim;
};

struct PgdTrace {
  std::vector<PgdStepRecord> steps;
  Termination reason = Termination::budget_exhausted;
};

namespace detail {

// Feasible sigma interval for one pixel so that pixel + sigma stays in [0,1].
// The upper bound 1 - pixel can round up past the exact value; nudge it down
// until the sum really stays inside the box.
struct BoxBounds {
  double lo;
  double hi;
};

inline BoxBounds box_bounds(double pixel) {
  double lo = -pixel;
  double hi = 1.0 - pixel;
  while (pixel + hi > 1.0) hi = std::nextafter(hi, 0.0);
  while (pixel + lo < 0.0) lo = std::nextafter(lo, 0.0);
  return {lo, hi};
}

inline double clamp_sigma(double sigma, double pixel, double epsilon) {
  if (sigma > epsilon) sigma = epsilon;
  if (sigma < -epsilon) sigma = -epsilon;
  BoxBounds b = box_bounds(pixel);
  if (sigma > b.hi) sigma = b.hi;
  if (sigma < b.lo) sigma = b.lo;
  return sigma;
}

}  // namespace detail

inline Image apply_sigma(const Image& image, const std::vector<double>& sigma) {
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] += sigma[i];
  return out;
}

// Uniform noise in [-epsilon, +epsilon], box-corrected so image+sigma stays
// in [0,1].
inline std::vector<double> init_noise(const Image& image, double epsilon, SplitRng rng) {
  if (epsilon < 0.0) throw ValidationError("init_noise: epsilon must be non-negative");
  std::vector<double> sigma(image.pixels.size(), 0.0);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    double draw = rng.uniform(-epsilon, epsilon);
    sigma[i] = detail::clamp_sigma(draw, image.pixels[i], epsilon);
  }
  return sigma;
}

// One sign step: sigma' = clip_[-eps,eps](sigma - alpha * sign(grad)), then
// box-corrected. sign(0) = 0, so zero-gradient entries stay put.
inline std::vector<double> pgd_step(const Image& image, const std::vector<double>& sigma,
                                    const std::vector<double>& grad, double alpha,
                                    double epsilon) {
  if (sigma.size() != image.pixels.size() || grad.size() != image.pixels.size())
    throw ValidationError("pgd_step: shape mismatch");
  if (!(alpha > 0.0) || !(epsilon >= 0.0)) throw ValidationError("pgd_step: bad alpha/epsilon");
  std::vector<double> out(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    double sign = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    out[i] = detail::clamp_sigma(sigma[i] - alpha * sign, image.pixels[i], epsilon);
  }
  return out;
}

// Per-epsilon noise stream, keyed by the scheduled integer value so every
// epsilon's draw is independent of iteration order.
inline SplitRng noise_rng(const SplitRng& instance_rng, int epsilon_255) {
  return instance_rng.derive("noise").derive(std::to_string(epsilon_255));
}

struct EpsilonChoice {
  int epsilon_255 = 0;
  double epsilon = 0.0;
  std::vector<double> sigma;
  double init_sim = 1.0;
  bool warning = false;  // no scheduled epsilon satisfied the constraint
};

// Walks the descending schedule and accepts the first (largest) epsilon whose
// freshly initialized noise keeps sim(v, v+sigma) strictly above beta_v. If
// none qualifies, falls through to the smallest with a warning.
template <class EmbedFn>
EpsilonChoice select_adaptive_epsilon(const Image& image, const std::vector<int>& schedule,
                                      double beta_v, const SplitRng& instance_rng,
                                      EmbedFn&& embed) {
  if (schedule.empty()) throw ConfigError("epsilon schedule must be non-empty");
  Embedding clean = embed(image);
  EpsilonChoice choice;
  for (int eps255 : schedule) {
    choice.epsilon_255 = eps255;
    choice.epsilon = eps255 / 255.0;
    choice.sigma = init_noise(image, choice.epsilon, noise_rng(instance_rng, eps255));
    choice.init_sim = cosine(clean, embed(apply_sigma(image, choice.sigma)));
    if (choice.init_sim > beta_v) {
      choice.warning = false;
      return choice;
    }
  }
  choice.warning = true;  // smallest scheduled epsilon, constraint still unmet
  return choice;
}

inline EpsilonChoice select_adaptive_epsilon(const Image& image, const std::vector<int>& schedule,
                                             double beta_v, const SplitRng& instance_rng) {
  return select_adaptive_epsilon(image, schedule, beta_v, instance_rng,
                                 [](const Image& im) { return embed_image(im); });
}

// Fixed-epsilon initialization used when the adaptive search is off.
inline EpsilonChoice fixed_epsilon_choice(const Image& image, int epsilon_255, double beta_v,
                                          const SplitRng& instance_rng) {
  EpsilonChoice choice;
  choice.epsilon_255 = epsilon_255;
  choice.epsilon = epsilon_255 / 255.0;
  choice.sigma = init_noise(image, choice.epsilon, noise_rng(instance_rng, epsilon_255));
  choice.init_sim = cosine(embed_image(image), embed_image(apply_sigma(image, choice.sigma)));
  choice.warning = !(choice.init_sim > beta_v);
  return choice;
}

struct ImageAttackOutcome {
  Image adv_image;
  Perturbation perturbation;  // the emitted sigma with its radius and step count
  double epsilon = 0.0;
  int epsilon_255 = 0;
  int steps_used = 0;
  bool constraint_warning = false;
  std::string warning_note;
  PgdTrace trace;
};

// The PGD loop of the attack: up to tau sign steps minimizing the victim's
// loss toward options[target_index], with a similarity checkpoint every
// tau_v steps (and at the final step). A checkpoint that fails the strict
// constraint breaks the loop and rolls sigma back to the last satisfying
// checkpoint, so an emitted image never silently violates the constraint.
// Early exit when the victim already answers with the target option.
template <VictimModel V>
ImageAttackOutcome run_image_attack(const McInstance& instance, const V& victim,
                                    const AttackConfig& config, const Query& adv_query,
                                    const SplitRng& instance_rng) {
  if (!instance.target_index) throw ValidationError(instance.id + ": target_index missing");
  const int target = *instance.target_index;
  const Image& image = instance.image;

  EpsilonChoice choice =
      config.adaptive_eps
          ? select_adaptive_epsilon(image, config.epsilon_schedule, config.beta_v, instance_rng)
          : fixed_epsilon_choice(image, config.fixed_epsilon, config.beta_v, instance_rng);

  ImageAttackOutcome out;
  out.epsilon = choice.epsilon;
  out.epsilon_255 = choice.epsilon_255;
  out.constraint_warning = choice.warning;
  if (choice.warning)
    out.warning_note = config.adaptive_eps
                           ? "no scheduled epsilon satisfied beta_v at initialization"
                           : "fixed epsilon violates beta_v at initialization";

  Embedding clean = embed_image(image);
  std::vector<double> sigma = choice.sigma;
  std::optional<std::vector<double>> last_good;
  if (choice.init_sim > config.beta_v) last_good = sigma;

  out.trace.reason = Termination::budget_exhausted;
  for (int step = 1; step <= config.tau; ++step) {
    Image v_adv = apply_sigma(image, sigma);
    PgdStepRecord rec;
    rec.step = step;
    rec.loss = victim.loss(v_adv, adv_query, instance.options, target);
    std::vector<double> grad = victim.grad_image(v_adv, adv_query, instance.options, target);
    sigma = pgd_step(image, sigma, grad, config.alpha, choice.epsilon);
    out.steps_used = step;
    double linf = 0.0;
    for (double v : sigma) linf = std::max(linf, std::fabs(v));
    rec.linf_norm = linf;

    if (step % config.tau_v == 0 || step == config.tau) {
      double sim = cosine(clean, embed_image(apply_sigma(image, sigma)));
      rec.checkpoint_sim = sim;
      if (!(sim > config.beta_v)) {
        out.trace.reason = Termination::constraint_break;
        out.trace.steps.push_back(rec);
        if (last_good) {
          sigma = *last_good;
        } else {
          sigma = choice.sigma;  // initialization already violated; warning is set
        }
        break;
      }
      last_good = sigma;
      out.trace.steps.push_back(rec);
      if (victim.respond_mc(apply_sigma(image, sigma), adv_query, instance.options) ==
          instance.options[target]) {
        out.trace.reason = Termination::target_reached;
        break;
      }
      continue;
    }
    out.trace.steps.push_back(rec);
  }

  out.perturbation = Perturbation{std::move(sigma), choice.epsilon, out.steps_used};
  out.perturbation.validate(image);  // ball and box hold for every emitted sigma
  out.adv_image = apply_sigma(image, out.perturbation.sigma);
  return out;
}

}  // namespace mmattack
