#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "../support/grad_check.hpp"
#include "cmmd/errors.hpp"
#include "cmmd/trainer.hpp"

namespace cmmd {
namespace {

StreamData small_stream(int events, std::size_t per_event, std::uint64_t seed, double separation = 0.0,
                        double velocity = 0.0, bool future = false) {
  GenConfig g;
  g.num_events = events;
  g.samples_per_event = per_event;
  g.d_t = 4;
  g.d_v = 4;
  g.separation = separation;
  g.velocity = {velocity};
  g.include_future = future;
  g.seed = seed;
  return generate(g);
}

TrainConfig small_config(const StreamData& s) {
  TrainConfig c;
  c.dims.d_z = 6;
  c.dims.d_e = 5;
  c.dims.d_env = 3;
  c.dims.d_g = 3;
  c.dims.d_h = 6;
  c.dims.r = 2;
  c.batch_size = 16;
  c.max_epochs = 4;
  c.patience = 2;
  return resolve_config(c, s.manifest);
}

Batch first_batch(const StreamData& s, std::size_t n) {
  std::vector<const Sample*> rows;
  for (const Sample& x : s.samples)
    if (x.event == 1 && rows.size() < n) rows.push_back(&x);
  return make_batch(rows, 1.0);
}

// A model past its first event, with a valid initial state and two experts.
Model trained_model(const TrainConfig& c, const StreamData& s) {
  Model m = init_model(c);
  const auto events = partition(s);
  finalize_initial_state(m, events[0], c);
  m.dpm.experts.push_back(m.dpm.experts[0]);
  m.dpm.experts[0].set_frozen(true);
  m.dpm.counts.push_back(1.0);
  std::mt19937_64 g(3);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Parameter* p : {&m.router.w_r, &m.dynamics.mu_field.w2, &m.dynamics.sigma_field.b2})
    for (double& v : p->value.storage()) v = n(g);
  return m;
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.gamma = 0.25;
  c.dims.d_h = 12;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  try {
    TrainConfig::from_json(Json{{"gama", 1.0}});
    FAIL() << "unknown key accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gama"), std::string::npos);
  }
  EXPECT_THROW(TrainConfig::from_json(Json{{"dims", {{"d_q", 3}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(Json{{"batch_size", 1}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(Json{{"alpha", -0.1}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json(Json{{"dims", {{"r", 8}}}}), ConfigError);
}

TEST(Config, SetValueHandlesNestedAndRejectsUnknown) {
  TrainConfig c;
  c.set_value("gamma", 10.0);
  c.set_value("dims.d_h", 20.0);
  c.set_value("use_env_feature", 0.0);
  EXPECT_EQ(c.gamma, 10.0);
  EXPECT_EQ(c.dims.d_h, 20u);
  EXPECT_FALSE(c.use_env_feature);
  EXPECT_THROW(c.set_value("gamma_prime", 1.0), ConfigError);
  EXPECT_THROW(c.set_value("dims.d_h", 2.5), ConfigError);
}

TEST(ComposeLoss, ZeroWeightsLeaveVeracityLoss) {
  const StreamData s = small_stream(2, 40, 1);
  TrainConfig c = small_config(s);
  c.alpha = c.beta = c.gamma = 0.0;
  Model m = trained_model(c, s);
  const Batch b = first_batch(s, 8);
  Rng rng(1);
  const Tensor env = env_feature(m, c, b.tau, b.size(), rng);
  Tape tape;
  const LossBreakdown l = compose_loss(m, b, c, tape, env).values();
  EXPECT_TRUE(l.dm_active);
  EXPECT_EQ(l.total, l.vp);
}

TEST(ComposeLoss, TotalRecomposesFromComponents) {
  const StreamData s = small_stream(2, 40, 2);
  TrainConfig c = small_config(s);
  Model m = trained_model(c, s);
  const Batch b = first_batch(s, 8);
  Rng rng(2);
  const Tensor env = env_feature(m, c, b.tau, b.size(), rng);
  Tape tape;
  const LossBreakdown l = compose_loss(m, b, c, tape, env).values();
  EXPECT_NEAR(l.total, l.vp + 0.1 * l.cl + 0.1 * l.vg + 1.0 * l.dm, 1e-12);

  // Components rebuilt piece by piece on a separate tape.
  Tape t2(GradMode::kDisabled);
  const Projected p = project(t2, t2.constant(b.xt), t2.constant(b.xv), m.encoder);
  EXPECT_NEAR(contrastive_loss(p.zt, p.zv, c.xi).value().item(), l.cl, 1e-12);
  const Tensor z = fused_features(m, b.xt, b.xv);
  EXPECT_NEAR(gen_score(z, m.dpm.latest()) + gen_score(z, m.shared.expert), l.vg, 1e-10);
  const Tensor e = routed_features(m, b.xt, b.xv, c, false);
  std::vector<std::size_t> fake;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (b.y[i] == 1) fake.push_back(i);
  Tensor e_fake({fake.size(), e.cols()});
  for (std::size_t i = 0; i < fake.size(); ++i)
    for (std::size_t j = 0; j < e.cols(); ++j) e_fake(i, j) = e(fake[i], j);
  const EnvGaussian target = batch_env_stats(e_fake, m.dynamics.w_f.value);
  const EnvGaussian pred = predict_distribution(b.tau, 1.0, m.init, m.dynamics, c.solver);
  EXPECT_NEAR(dynamics_loss(pred, target), l.dm, 1e-9);
}

TEST(ComposeLoss, AllSwitchesOffDegeneratesToPlainClassifier) {
  const StreamData s = small_stream(2, 40, 3);
  TrainConfig c = small_config(s);
  c.use_dpm = c.use_shared_expert = c.use_env_feature = false;
  Model m = init_model(c);
  const Batch b = first_batch(s, 8);
  Rng rng(3);
  const Tensor env = env_feature(m, c, b.tau, b.size(), rng);
  EXPECT_EQ(env, Tensor({b.size(), c.dims.d_env}));
  Tape tape;
  const LossBreakdown l = compose_loss(m, b, c, tape, env).values();
  EXPECT_EQ(l.vg, 0.0);
  EXPECT_EQ(l.dm, 0.0);
  EXPECT_EQ(l.total, l.vp + c.alpha * l.cl);
}

TEST(ComposeLoss, GradientMatchesFiniteDifferencesOnSmallModel) {
  const StreamData s = small_stream(2, 40, 4);
  TrainConfig c = small_config(s);
  Model m = trained_model(c, s);
  const Batch b = first_batch(s, 4);
  Rng rng(4);
  const Tensor env = env_feature(m, c, b.tau, b.size(), rng);
  std::vector<Parameter*> params;
  for (Parameter* p : m.parameters())
    if (p->trainable) params.push_back(p);
  const auto r = testing::check_gradients(params, [&](Tape& tape) { return compose_loss(m, b, c, tape, env).total; });
  EXPECT_EQ(r.failures, 0u) << r.worst;
  EXPECT_GT(r.checked, 100u);
}

TEST(TrainStep, FrozenExpertAndInitialStateStayBitwise) {
  const StreamData s = small_stream(2, 60, 5);
  const TrainConfig c = small_config(s);
  Model m = trained_model(c, s);
  const Expert frozen = m.dpm.experts[0];
  const InitialState init = m.init;
  const Batch b = first_batch(s, 16);
  Rng noise(5);
  for (int i = 0; i < 20; ++i) train_step(m, b, c, noise, 2, 1, i);
  EXPECT_EQ(m.dpm.experts[0].disc_a.value, frozen.disc_a.value);
  EXPECT_EQ(m.dpm.experts[0].disc_b.value, frozen.disc_b.value);
  EXPECT_EQ(m.dpm.experts[0].gen_enc.value, frozen.gen_enc.value);
  EXPECT_EQ(m.dpm.experts[0].gen_dec.value, frozen.gen_dec.value);
  EXPECT_EQ(m.init.sum, init.sum);
  EXPECT_EQ(m.init.outer, init.outer);
  EXPECT_EQ(m.steps, 20);
}

TEST(TrainStep, EpsilonOneKeepsShadowThroughTraining) {
  const StreamData s = small_stream(2, 60, 6);
  TrainConfig c = small_config(s);
  c.epsilon = 1.0;
  Model m = init_model(c);
  const Tensor a0 = m.shared.shadow_a, b0 = m.shared.shadow_b;
  const Batch b = first_batch(s, 16);
  Rng noise(6);
  for (int i = 0; i < 10; ++i) train_step(m, b, c, noise, 1, 1, i);
  EXPECT_NE(m.shared.expert.disc_a.value, a0);
  EXPECT_EQ(m.shared.shadow_a, a0);
  EXPECT_EQ(m.shared.shadow_b, b0);
}

TEST(TrainEvent, ConstantModelStopsAfterPatiencePlusOne) {
  const StreamData s = small_stream(2, 200, 7);
  TrainConfig c = small_config(s);
  c.use_dpm = false;
  c.use_env_feature = false;
  c.patience = 3;
  c.max_epochs = 20;
  Model m = init_model(c);
  for (Parameter* p : m.parameters()) p->trainable = false;
  const auto events = partition(s);
  const EventHistory h = train_event(m, events[0], c);
  EXPECT_EQ(h.epochs.size(), 4u);
  EXPECT_TRUE(h.early_stopped);
  EXPECT_EQ(h.best_epoch, 1);
}

TEST(TrainEvent, PatienceBeyondMaxEpochsRunsEveryEpoch) {
  const StreamData s = small_stream(2, 100, 8);
  TrainConfig c = small_config(s);
  c.max_epochs = 3;
  c.patience = 10;
  Model m = init_model(c);
  const EventHistory h = train_event(m, partition(s)[0], c);
  EXPECT_EQ(h.epochs.size(), 3u);
  EXPECT_FALSE(h.early_stopped);
}

TEST(TrainEvent, SeparableEventIsLearned) {
  GenConfig g;
  g.num_events = 2;
  g.samples_per_event = 200;
  g.d_t = 4;
  g.d_v = 4;
  g.real_mean = {-2.0};
  g.fake_base = {2.0};
  g.seed = 9;
  const StreamData s = generate(g);
  TrainConfig c = small_config(s);
  c.max_epochs = 30;
  c.patience = 30;
  c.learning_rate = 1e-2;
  Model m = init_model(c);
  const auto events = partition(s);
  train_event(m, events[0], c);
  EXPECT_GE(evaluate(m, events[0].train, c, 1.0, 1).accuracy, 0.95);
}

TEST(TrainEvent, TooFewSamplesAndEmptyValidation) {
  const StreamData s = small_stream(2, 10, 10);
  TrainConfig c = small_config(s);
  Model m = init_model(c);
  EXPECT_THROW(train_event(m, partition(s)[0], c), InputError);
  const StreamData t = small_stream(2, 20, 10);
  c.validation_fraction = 0.01;
  EXPECT_THROW(train_event(m, partition(t)[0], c), ConfigError);
}

TEST(TrainContinual, SameSeedGivesBitIdenticalLog) {
  const StreamData s = small_stream(3, 80, 11, 3.0, 0.2, true);
  const TrainConfig c = small_config(s);
  const RunResult a = train_continual(s, c), b = train_continual(s, c);
  EXPECT_EQ(a.log.dump(), b.log.dump());
  EXPECT_EQ(dump_json(checkpoint_to_json(a.model, a.config)), dump_json(checkpoint_to_json(b.model, b.config)));
}

TEST(TrainContinual, FixedRosterHasMinOfKAndFourExperts) {
  for (int k : {2, 5}) {
    const StreamData s = small_stream(k, 40, 12);
    TrainConfig c = small_config(s);
    c.use_dpm = false;
    c.max_epochs = 1;
    const RunResult r = train_continual(s, c);
    EXPECT_EQ(r.model.dpm.experts.size(), static_cast<std::size_t>(std::min(k, 4)));
    for (std::size_t i = 0; i + 1 < r.model.dpm.experts.size(); ++i) EXPECT_TRUE(r.model.dpm.experts[i].frozen);
  }
}

TEST(TrainContinual, ExpertRosterIsBoundedByEventCount) {
  const StreamData s = small_stream(3, 80, 13, 5.0);
  TrainConfig c = small_config(s);
  c.neg_log_lambda = -50.0;  // the candidate wins every comparison
  const RunResult r = train_continual(s, c);
  EXPECT_EQ(r.model.dpm.experts.size(), 3u);
  EXPECT_EQ(r.log.at("expansions").size(), 2u);
}

TEST(TrainContinual, CheckpointRoundTripPreservesEvaluation) {
  const StreamData s = small_stream(2, 80, 14, 0.0, 0.3, true);
  const TrainConfig c = small_config(s);
  const RunResult r = train_continual(s, c);
  const std::string text = dump_json(checkpoint_to_json(r.model, r.config));
  const auto [model, config] = checkpoint_from_json(Json::parse(text));
  EXPECT_EQ(dump_json(checkpoint_to_json(model, config)), text);
  EXPECT_EQ(evaluate_model(model, config, s).dump(), r.log.at("final").dump());
  EXPECT_THROW(checkpoint_from_json(Json{{"format", "other"}}), ValidationError);
}

TEST(TrainContinual, IdenticalEventsForgetLittle) {
  // Forgetting is the drop of event-1 accuracy after training on event 2.
  std::vector<double> drops;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GenConfig g;
    g.num_events = 2;
    g.samples_per_event = 300;
    g.seed = 100 + seed;
    const StreamData s = generate(g);
    TrainConfig c;
    c.seed = seed;
    const RunResult r = train_continual(s, c);
    const ForgettingMatrix fm = ForgettingMatrix::from_json(r.log.at("forgetting_matrix"));
    drops.push_back(*fm.get(1, 1) - *fm.get(2, 1));
  }
  std::sort(drops.begin(), drops.end());
  EXPECT_LE(drops[2], 0.02 + 1e-12);
}

TEST(Ablations, FourVariantsPerSeedAndZeroEnvironment) {
  const StreamData s = small_stream(2, 40, 15, 0.0, 0.2, true);
  TrainConfig c = small_config(s);
  c.max_epochs = 1;
  const std::uint64_t seeds[] = {1, 2};
  const auto runs = run_ablations(s, c, seeds);
  ASSERT_EQ(runs.size(), 8u);
  for (const AblationRun& run : runs) {
    const TrainConfig& rc = run.result.config;
    EXPECT_EQ(rc.use_dpm, run.variant != Variant::kNoDpm);
    EXPECT_EQ(rc.use_shared_expert, run.variant != Variant::kNoShared);
    EXPECT_EQ(rc.use_env_feature, run.variant != Variant::kNoEnv);
    if (run.variant == Variant::kNoEnv) {
      Rng rng(1);
      EXPECT_EQ(env_feature(run.result.model, rc, 3.0, 5, rng), Tensor({5, rc.dims.d_env}));
      EXPECT_EQ(run.result.model.w_c.value.rows(), rc.dims.d_e + rc.dims.d_env);
    }
  }
  EXPECT_THROW(run_ablations(s, c, {}), InputError);
}

}  // namespace
}  // namespace cmmd
