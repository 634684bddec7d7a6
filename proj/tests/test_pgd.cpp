#include "mmattack/pgd.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "mmattack/deskset.hpp"
#include "mmattack/pipeline.hpp"

using namespace mmattack;

namespace {

// Victim whose gradient pushes every bright pixel up and every dark pixel
// down: rotates the pooled direction as fast as sign steps allow. Used to
// force constraint checkpoints to fire.
struct RotatingVictim {
  std::array<double, 3> option_scores(const Image&, const Query&, const Options&) const {
    return {0.0, 0.0, 0.0};
  }
  double loss(const Image&, const Query&, const Options&, int) const { return 1.0; }
  std::vector<double> grad_image(const Image& img, const Query&, const Options&, int) const {
    std::vector<double> g(img.pixels.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = img.pixels[i] > 0.2 ? 1.0 : -1.0;
    return g;
  }
  std::string respond_mc(const Image&, const Query&, const Options& opts) const {
    return opts[0];
  }
  std::string respond_free(const Image&, const Query&) const { return "n/a"; }
};

TEST(InitNoise, ZeroEpsilonGivesZeroSigma) {
  Image img = Image::filled(6, 6, 3, 0.5);
  auto sigma = init_noise(img, 0.0, derive_rng(1, "z"));
  for (double s : sigma) EXPECT_DOUBLE_EQ(s, 0.0);
}

TEST(InitNoise, DrawsStayInsideBallAndBox) {
  SplitRng rng = derive_rng(2, "ball");
  Image img = Image::filled(10, 10, 3, 0.0);
  for (double& v : img.pixels) v = rng.next_double();
  double eps = 16.0 / 255.0;
  for (int rep = 0; rep < 4; ++rep) {
    auto sigma = init_noise(img, eps, rng.derive(std::to_string(rep)));
    ASSERT_EQ(sigma.size(), img.pixels.size());
    for (std::size_t i = 0; i < sigma.size(); ++i) {
      EXPECT_LE(std::fabs(sigma[i]), eps);
      double v = img.pixels[i] + sigma[i];
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(InitNoise, SaturatedPixelIsBoxCorrected) {
  Image img = Image::filled(4, 4, 3, 1.0);
  auto sigma = init_noise(img, 32.0 / 255.0, derive_rng(3, "sat"));
  bool any_negative = false;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    EXPECT_LE(img.pixels[i] + sigma[i], 1.0);  // positive draws clamp to 0
    any_negative = any_negative || sigma[i] < 0.0;
  }
  EXPECT_TRUE(any_negative);  // negative draws survive
}

TEST(PgdStep, ZeroGradientLeavesSigmaUntouched) {
  Image img = Image::filled(4, 4, 3, 0.5);
  std::vector<double> sigma(img.pixels.size(), 0.01);
  std::vector<double> grad(img.pixels.size(), 0.0);
  EXPECT_EQ(pgd_step(img, sigma, grad, 1.0 / 255.0, 8.0 / 255.0), sigma);
}

TEST(PgdStep, SinglePixelUpdateMatchesHandComputation) {
  // image .5, sigma 0, grad +3.7, alpha 1/255, eps 8/255 -> sigma' = -1/255
  Image img = Image::filled(1, 1, 1, 0.5);
  auto out = pgd_step(img, {0.0}, {3.7}, 1.0 / 255.0, 8.0 / 255.0);
  EXPECT_DOUBLE_EQ(out[0], -1.0 / 255.0);
}

TEST(PgdStep, ClipsAtTheBallBoundary) {
  Image img = Image::filled(1, 1, 1, 0.5);
  double eps = 8.0 / 255.0;
  auto out = pgd_step(img, {eps}, {-1.0}, 1.0 / 255.0, eps);  // wants eps + alpha
  EXPECT_DOUBLE_EQ(out[0], eps);
}

TEST(PgdStep, ShapeMismatchThrows) {
  Image img = Image::filled(2, 2, 1, 0.5);
  EXPECT_THROW(pgd_step(img, {0.0}, {0.0, 0.0, 0.0, 0.0}, 0.01, 0.1), ValidationError);
}

// Acceptance criterion 2 lives here too: >= 1000 random cases, zero
// violations of the L-inf ball or the pixel box after a step.
TEST(PgdStep, ProjectionSoundnessProperty) {
  SplitRng rng = derive_rng(4, "projection");
  int cases = 0;
  while (cases < 1200) {
    int w = 1 + static_cast<int>(rng.uniform_index(6));
    int h = 1 + static_cast<int>(rng.uniform_index(6));
    Image img = Image::filled(w, h, 3, 0.0);
    for (double& v : img.pixels) v = rng.next_double();
    double eps = rng.uniform(0.0, 48.0) / 255.0;
    double alpha = rng.uniform(0.1, 2.0) / 255.0;
    auto sigma = init_noise(img, eps, rng.derive("init" + std::to_string(cases)));
    std::vector<double> grad(img.pixels.size());
    for (double& g : grad) g = rng.uniform(-3.0, 3.0);
    if (rng.next_bool()) grad[rng.uniform_index(grad.size())] = 0.0;
    auto next = pgd_step(img, sigma, grad, alpha, eps);
    for (std::size_t i = 0; i < next.size(); ++i) {
      ASSERT_LE(std::fabs(next[i]), eps) << "ball violated";
      double v = img.pixels[i] + next[i];
      ASSERT_GE(v, 0.0) << "box violated low";
      ASSERT_LE(v, 1.0) << "box violated high";
    }
    ++cases;
  }
}

TEST(AdaptiveEpsilon, LowContrastImageAcceptsLargestImmediately) {
  Image img = Image::filled(32, 32, 3, 0.5);
  AttackConfig cfg;
  auto choice = select_adaptive_epsilon(img, cfg.epsilon_schedule, 0.9, derive_rng(5, "flat"));
  EXPECT_EQ(choice.epsilon_255, 32);
  EXPECT_FALSE(choice.warning);
  EXPECT_GT(choice.init_sim, 0.9);
}

TEST(AdaptiveEpsilon, DegenerateEmbedderAlwaysAcceptsLargest) {
  Image img = Image::filled(8, 8, 3, 0.02);
  Embedding constant;
  constant.values.assign(4, 0.5);
  auto choice = select_adaptive_epsilon(img, {32, 16, 8, 4, 2, 1}, 0.9, derive_rng(6, "deg"),
                                        [&](const Image&) { return constant; });
  EXPECT_EQ(choice.epsilon_255, 32);
  EXPECT_FALSE(choice.warning);
  EXPECT_DOUBLE_EQ(choice.init_sim, 1.0);
}

// Acceptance criterion 3: exhaustive per-epsilon feasibility oracle with the
// same per-epsilon noise draws; the operation must return the largest
// feasible epsilon, or the smallest scheduled one with a warning.
TEST(AdaptiveEpsilon, MatchesExhaustiveOracleOn100SeededCases) {
  std::vector<int> schedule{32, 16, 8, 4, 2, 1};
  SplitRng gen = derive_rng(7, "oracle-cases");
  int warnings_seen = 0;
  int non_largest_choices = 0;
  for (int trial = 0; trial < 100; ++trial) {
    SplitRng crng = gen.derive(std::to_string(trial));
    int size = 8 + static_cast<int>(crng.uniform_index(9));
    double base = crng.uniform(0.008, 0.3);
    double hot = base + crng.uniform(0.1, 0.5);
    Image img = Image::filled(size, size, 3, 0.0);
    int rw = 2 + static_cast<int>(crng.uniform_index(2));
    int x0 = static_cast<int>(crng.uniform_index(size - rw));
    int y0 = static_cast<int>(crng.uniform_index(size - rw));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        for (int c = 0; c < 3; ++c) {
          bool in = x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rw;
          img.at(y, x, c) =
              std::min(0.99, std::max(0.005, (in ? hot : base) + crng.uniform(-0.01, 0.01)));
        }
    // A slice of near-one thresholds drives the none-feasible warning path.
    double beta_v =
        trial % 7 == 6 ? crng.uniform(0.9995, 0.99999) : crng.uniform(0.9, 0.995);
    SplitRng instance_rng = derive_rng(42, "case-" + std::to_string(trial));

    // Oracle: evaluate every scheduled epsilon independently.
    Embedding clean = embed_image(img);
    int largest_feasible = -1;
    for (int eps : schedule) {
      auto sigma = init_noise(img, eps / 255.0, noise_rng(instance_rng, eps));
      double sim = cosine(clean, embed_image(apply_sigma(img, sigma)));
      if (sim > beta_v && eps > largest_feasible) largest_feasible = eps;
    }

    auto choice = select_adaptive_epsilon(img, schedule, beta_v, instance_rng);
    if (largest_feasible > 0) {
      EXPECT_EQ(choice.epsilon_255, largest_feasible) << "trial " << trial;
      EXPECT_FALSE(choice.warning) << "trial " << trial;
      if (largest_feasible != schedule.front()) ++non_largest_choices;
    } else {
      EXPECT_EQ(choice.epsilon_255, schedule.back()) << "trial " << trial;
      EXPECT_TRUE(choice.warning) << "trial " << trial;
      ++warnings_seen;
    }
  }
  // The case generator must actually exercise the interesting paths.
  EXPECT_GT(non_largest_choices, 5);
  EXPECT_GT(warnings_seen, 0);
}

TEST(RunImageAttack, ZeroBudgetKeepsInitializationNoise) {
  auto ds = make_desk_dataset(DeskSetSpec{2, 0, 42, 16});
  McInstance inst = ds.mc[0];
  inst.pseudo_label = 0;
  inst.target_index = 1;
  AttackConfig cfg = AttackConfig::desk_defaults();
  cfg.tau = 0;
  ToyVictim victim(ToyVictimParams::init(cfg.victim_seed));
  SplitRng rng = derive_rng(cfg.seed, inst.id);
  auto out = run_image_attack(inst, victim, cfg, inst.query, rng);
  EXPECT_TRUE(out.trace.steps.empty());
  EXPECT_EQ(out.steps_used, 0);
  EXPECT_EQ(out.trace.reason, Termination::budget_exhausted);

  // v_adv differs from v only by the accepted initialization noise.
  auto choice = select_adaptive_epsilon(inst.image, cfg.epsilon_schedule, cfg.beta_v, rng);
  ASSERT_EQ(out.adv_image.pixels.size(), inst.image.pixels.size());
  for (std::size_t i = 0; i < choice.sigma.size(); ++i)
    EXPECT_DOUBLE_EQ(out.adv_image.pixels[i], inst.image.pixels[i] + choice.sigma[i]);
}

TEST(RunImageAttack, SeveredGradientLeavesSigmaAtInitialization) {
  auto ds = make_desk_dataset(DeskSetSpec{2, 0, 42, 16});
  McInstance inst = ds.mc[1];
  inst.pseudo_label = 0;
  inst.target_index = 2;
  AttackConfig cfg = AttackConfig::desk_defaults();
  cfg.tau = 30;
  cfg.tau_v = 10;
  ToyVictimParams p = ToyVictimParams::init(cfg.victim_seed);
  std::fill(p.w_img.begin(), p.w_img.end(), 0.0);  // sign(0) steps everywhere
  ToyVictim victim(p);
  SplitRng rng = derive_rng(cfg.seed, inst.id);
  auto out = run_image_attack(inst, victim, cfg, inst.query, rng);
  auto choice = select_adaptive_epsilon(inst.image, cfg.epsilon_schedule, cfg.beta_v, rng);
  for (std::size_t i = 0; i < choice.sigma.size(); ++i)
    EXPECT_DOUBLE_EQ(out.adv_image.pixels[i], inst.image.pixels[i] + choice.sigma[i]);
  // Loss is constant, so the trace must be flat.
  for (const auto& rec : out.trace.steps) EXPECT_DOUBLE_EQ(rec.loss, out.trace.steps[0].loss);
}

TEST(RunImageAttack, TraceLinfNeverExceedsEpsilon) {
  AttackConfig cfg = AttackConfig::desk_defaults();
  cfg.tau = 60;
  auto ds = make_desk_dataset(DeskSetSpec{4, 0, 42, 24});
  ToyVictim victim(ToyVictimParams::init(cfg.victim_seed));
  for (auto raw : ds.mc) {
    McInstance inst = resolve_labels(raw, victim, cfg);
    auto out = run_image_attack(inst, victim, cfg, inst.query, derive_rng(cfg.seed, inst.id));
    for (const auto& rec : out.trace.steps) EXPECT_LE(rec.linf_norm, out.epsilon + 1e-15);
  }
}

TEST(RunImageAttack, MissingTargetIndexThrows) {
  auto ds = make_desk_dataset(DeskSetSpec{1, 0, 42, 16});
  AttackConfig cfg = AttackConfig::desk_defaults();
  ToyVictim victim(ToyVictimParams::init(cfg.victim_seed));
  EXPECT_THROW(
      run_image_attack(ds.mc[0], victim, cfg, ds.mc[0].query, derive_rng(cfg.seed, "x")),
      ValidationError);
}

TEST(RunImageAttack, FixedEpsilonViolationAtInitSetsWarning) {
  // Low-light thumbnails cannot host 32/255 noise inside the constraint.
  auto ds = make_desk_dataset();
  const McInstance* thumb = nullptr;
  for (const auto& inst : ds.mc)
    if (inst.image.width < 16) {
      thumb = &inst;
      break;
    }
  ASSERT_NE(thumb, nullptr);
  McInstance inst = *thumb;
  inst.pseudo_label = 0;
  inst.target_index = 1;
  AttackConfig cfg = AttackConfig::desk_defaults();
  cfg.adaptive_eps = false;
  cfg.fixed_epsilon = 32;
  cfg.tau = 10;
  cfg.tau_v = 5;
  ToyVictim victim(ToyVictimParams::init(cfg.victim_seed));
  auto out = run_image_attack(inst, victim, cfg, inst.query, derive_rng(cfg.seed, inst.id));
  EXPECT_TRUE(out.constraint_warning);
  EXPECT_FALSE(out.warning_note.empty());
}

TEST(RunImageAttack, RollbackRestoresLastSatisfyingCheckpoint) {
  // mc-006 is a low-light thumbnail where the rotating victim passes the
  // first checkpoint and breaks at the second.
  auto ds = make_desk_dataset();
  const McInstance* pick = nullptr;
  for (const auto& inst : ds.mc)
    if (inst.id == "mc-006") pick = &inst;
  ASSERT_NE(pick, nullptr);
  McInstance inst = *pick;
  inst.pseudo_label = 0;
  inst.target_index = 1;
  AttackConfig cfg = AttackConfig::desk_defaults();
  cfg.adaptive_eps = false;
  cfg.fixed_epsilon = 16;
  cfg.tau = 100;
  cfg.tau_v = 10;
  RotatingVictim victim;
  SplitRng rng = derive_rng(cfg.seed, inst.id);
  auto out = run_image_attack(inst, victim, cfg, inst.query, rng);
  ASSERT_EQ(out.trace.reason, Termination::constraint_break);
  ASSERT_EQ(out.steps_used, 20);

  // Independent replay: the emitted sigma must equal the sigma recorded at
  // the last satisfying checkpoint (step 10).
  auto choice = fixed_epsilon_choice(inst.image, cfg.fixed_epsilon, cfg.beta_v, rng);
  ASSERT_FALSE(choice.warning);
  std::vector<double> sigma = choice.sigma;
  for (int step = 1; step <= 10; ++step) {
    Image v = apply_sigma(inst.image, sigma);
    sigma = pgd_step(inst.image, sigma,
                     victim.grad_image(v, inst.query, inst.options, 1), cfg.alpha,
                     choice.epsilon);
  }
  double sim10 =
      cosine(embed_image(inst.image), embed_image(apply_sigma(inst.image, sigma)));
  ASSERT_GT(sim10, cfg.beta_v);  // checkpoint 10 satisfied, so it was recorded
  for (std::size_t i = 0; i < sigma.size(); ++i)
    EXPECT_DOUBLE_EQ(out.adv_image.pixels[i], inst.image.pixels[i] + sigma[i]);
}

TEST(RunImageAttack, EmittedImageNeverViolatesConstraintWithoutWarning) {
  AttackConfig cfg = AttackConfig::desk_defaults();
  cfg.tau = 47;  // deliberately not a multiple of tau_v: the final step checks
  cfg.tau_v = 20;
  auto ds = make_desk_dataset(DeskSetSpec{8, 0, 42, 24});
  ToyVictim victim(ToyVictimParams::init(cfg.victim_seed));
  for (auto raw : ds.mc) {
    McInstance inst = resolve_labels(raw, victim, cfg);
    auto out = run_image_attack(inst, victim, cfg, inst.query, derive_rng(cfg.seed, inst.id));
    if (out.constraint_warning) continue;
    double sim = cosine(embed_image(inst.image), embed_image(out.adv_image));
    EXPECT_GT(sim, cfg.beta_v) << inst.id;
  }
}

TEST(RunImageAttack, SignDescentIsMonotoneWithSingleActiveDirection) {
  // Only the target option's trigram bin has nonzero text columns, and the
  // query shares no trigram with it, so the loss is a decreasing function of
  // one steerable score.
  ToyVictimParams p = ToyVictimParams::init(5);
  std::fill(p.w_txt.begin(), p.w_txt.end(), 0.0);
  int bin = trigram_bin("qqq");
  SplitRng grng = derive_rng(5, "gvec");
  for (int r = 0; r < p.d; ++r) p.w_txt[r * 256 + bin] = grng.uniform(-0.5, 0.5);
  ToyVictim victim(p);
  Options opts{"qqqq", "zzzz", "jjjj"};
  Query query = Query::from_text("xxxx wwww");
  ASSERT_EQ(cosine(embed_text(query.text), embed_text(opts[0])), 0.0);

  Image img = Image::filled(24, 24, 3, 0.5);
  std::vector<double> sigma(img.pixels.size(), 0.0);
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 1; step <= 60; ++step) {
    Image v = apply_sigma(img, sigma);
    double loss = victim.loss(v, query, opts, 0);
    EXPECT_LE(loss, prev + 1e-12) << "step " << step;
    prev = loss;
    sigma = pgd_step(img, sigma, victim.grad_image(v, query, opts, 0), 1.0 / 255.0, 8.0 / 255.0);
  }
}

TEST(RunImageAttack, DeskInstanceLossDescendsOverCheckpointWindows) {
  AttackConfig cfg = AttackConfig::desk_defaults();
  auto ds = make_desk_dataset();
  ToyVictim victim(ToyVictimParams::init(cfg.victim_seed));
  McInstance inst;
  for (const auto& raw : ds.mc)
    if (raw.id == "mc-001") inst = raw;
  inst = resolve_labels(inst, victim, cfg);
  ASSERT_NE(victim.respond_mc(inst.image, inst.query, inst.options),
            inst.options[*inst.target_index]);
  auto out = run_image_attack(inst, victim, cfg, inst.query, derive_rng(cfg.seed, inst.id));
  const auto& steps = out.trace.steps;
  ASSERT_GE(steps.size(), 40u);
  EXPECT_LT(steps.back().loss, steps.front().loss);
  double prev_mean = std::numeric_limits<double>::infinity();
  for (std::size_t w0 = 0; w0 + cfg.tau_v <= steps.size(); w0 += cfg.tau_v) {
    double mean = 0.0;
    for (std::size_t i = w0; i < w0 + cfg.tau_v; ++i) mean += steps[i].loss;
    mean /= cfg.tau_v;
    EXPECT_LE(mean, prev_mean + 1e-9);
    prev_mean = mean;
  }
}

}  // namespace
