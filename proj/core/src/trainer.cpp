#include "cmmd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "cmmd/adam.hpp"
#include "cmmd/errors.hpp"

namespace cmmd {
namespace {

constexpr double kInitialTime = 1.0;

Json loss_to_json(const LossBreakdown& l) {
  return {{"vp", l.vp}, {"cl", l.cl}, {"vg", l.vg}, {"dm", l.dm}, {"total", l.total}};
}

Tensor zeros_like_rows(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

std::vector<std::size_t> fake_rows(const std::vector<int>& y) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] == 1) rows.push_back(i);
  return rows;
}

// Label-free score used to pick an expert at evaluation time.
std::size_t most_responsible_expert(const Model& model, const Tensor& z) {
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t m = 0; m < model.dpm.experts.size(); ++m) {
    const double s = -std::log(model.dpm.counts[m]) + gen_score(z, model.dpm.experts[m]);
    if (m == 0 || s < best_score) {
      best = m;
      best_score = s;
    }
  }
  return best;
}

double future_time(const TrainConfig& config, const StreamManifest& manifest) {
  return config.future_tau > 0.0 ? config.future_tau : static_cast<double>(manifest.num_events + 1);
}

Json metrics_row(const Model& model, const TrainConfig& config, const std::vector<EventSplit>& events,
                 const StreamManifest& manifest, int after_event, ForgettingMatrix* matrix) {
  Json row;
  row["after_event"] = after_event;
  Json per_event = Json::array();
  for (int j = 1; j <= manifest.num_events; ++j) {
    const auto& test = events[static_cast<std::size_t>(j - 1)].test;
    const ClassificationMetrics m =
        evaluate(model, test, config, static_cast<double>(j),
                 derive_seed(config.seed, SeedPurpose::kEval, static_cast<std::uint64_t>(after_event),
                             static_cast<std::uint64_t>(j)));
    if (matrix) matrix->set(static_cast<std::size_t>(after_event), static_cast<std::size_t>(j), m.accuracy);
    Json mj = m.to_json();
    mj["event"] = j;
    per_event.push_back(std::move(mj));
  }
  row["events"] = std::move(per_event);
  if (manifest.has_future) {
    const int j = manifest.num_events + 1;
    const ClassificationMetrics m =
        evaluate(model, events.back().test, config, future_time(config, manifest),
                 derive_seed(config.seed, SeedPurpose::kEval, static_cast<std::uint64_t>(after_event),
                             static_cast<std::uint64_t>(j)));
    if (matrix) matrix->set(static_cast<std::size_t>(after_event), static_cast<std::size_t>(j), m.accuracy);
    row["future"] = m.to_json();
  } else {
    row["future"] = nullptr;
  }
  return row;
}

// Mean of the environment-mapped training-mode features of fresh fake
// samples drawn from the recorded ground truth at time tau.
Tensor true_env_mean(const Model& model, const TrainConfig& config, const StreamManifest& manifest, int tau) {
  const DriftRecord& truth = *manifest.ground_truth;
  constexpr std::size_t kProbeSamples = 2000;
  Rng rng(derive_seed(config.seed, SeedPurpose::kProbe, static_cast<std::uint64_t>(tau)));
  std::normal_distribution<double> normal(0.0, truth.class_std);
  const std::vector<double> mu = truth.fake_mean(tau);
  Tensor xt({kProbeSamples, manifest.d_t}), xv({kProbeSamples, manifest.d_v});
  for (std::size_t i = 0; i < kProbeSamples; ++i) {
    for (std::size_t j = 0; j < manifest.d_t; ++j) xt(i, j) = mu[j] + normal(rng);
    for (std::size_t j = 0; j < manifest.d_v; ++j) xv(i, j) = mu[manifest.d_t + j] + normal(rng);
  }
  const Tensor e = routed_features(model, xt, xv, config, false);
  return batch_env_stats(e, model.dynamics.w_f.value).mean;
}

Json dynamics_forecast(const Model& model, const TrainConfig& config, const StreamManifest& manifest) {
  Json out = Json::array();
  if (!manifest.ground_truth || !config.use_env_feature || !model.init.valid()) return out;
  for (int tau = 1; tau <= manifest.num_events + 1; ++tau) {
    const EnvGaussian pred = predict_distribution(static_cast<double>(tau), kInitialTime, model.init,
                                                  model.dynamics, config.solver);
    const Tensor truth = true_env_mean(model, config, manifest, tau);
    const double rel = std::sqrt(squared_norm(pred.mean - truth) / std::max(squared_norm(truth), 1e-300));
    out.push_back({{"tau", tau},
                   {"held_out", tau > manifest.num_events},
                   {"predicted_mean", pred.mean.storage()},
                   {"true_mean", truth.storage()},
                   {"relative_error", rel}});
  }
  return out;
}

}  // namespace

Batch make_batch(std::span<const Sample* const> samples, double tau) {
  std::vector<std::size_t> rows(samples.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return make_batch(samples, rows, tau);
}

Batch make_batch(std::span<const Sample* const> samples, std::span<const std::size_t> rows, double tau) {
  if (rows.empty()) throw InputError("make_batch: no rows");
  const std::size_t d_t = samples[rows[0]]->xt.size(), d_v = samples[rows[0]]->xv.size();
  Batch b;
  b.xt = Tensor({rows.size(), d_t});
  b.xv = Tensor({rows.size(), d_v});
  b.tau = tau;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Sample& s = *samples[rows[i]];
    std::copy(s.xt.begin(), s.xt.end(), b.xt.row_span(i).begin());
    std::copy(s.xv.begin(), s.xv.end(), b.xv.row_span(i).begin());
    b.y.push_back(s.y);
  }
  return b;
}

LossBreakdown LossVars::values() const {
  return {vp.value().item(), cl.value().item(), vg.value().item(), dm.value().item(), total.value().item(),
          dm_active};
}

LossVars compose_loss(Model& model, const Batch& batch, const TrainConfig& config, Tape& tape, const Tensor& env) {
  if (batch.size() < 2) throw InputError("training batches need at least two samples");
  LossVars l;
  const Var xt = tape.constant(batch.xt), xv = tape.constant(batch.xv);
  const Projected p = project(tape, xt, xv, model.encoder);
  l.cl = contrastive_loss(p.zt, p.zv, model.encoder.xi);
  const Var z = fuse(p.zt, p.zv, tape.param(model.encoder.w_a));

  Expert& latest = model.dpm.latest();
  const Var e = config.use_shared_expert ? route(tape, z, model.router, latest, model.shared)
                                         : disc_feature(tape, latest, z);

  if (config.use_dpm) {
    // Reconstruction trains the generators only; the encoder is not pulled
    // towards easily reconstructed features.
    const Var z_fixed = tape.detach(z);
    l.vg = add(gen_score(tape, latest, z_fixed), gen_score(tape, model.shared.expert, z_fixed));
  } else {
    l.vg = tape.constant(Tensor::scalar(0.0));
  }

  l.dm = tape.constant(Tensor::scalar(0.0));
  const std::vector<std::size_t> fake = fake_rows(batch.y);
  if (config.use_env_feature && model.init.valid() && fake.size() >= 2) {
    const Var w_f = tape.param(model.dynamics.w_f);
    const EnvGaussianVar stats = batch_env_stats(gather_rows(e, fake), w_f);
    const EnvGaussianVar target{tape.detach(stats.mean), tape.detach(stats.var)};
    const EnvGaussianVar start = initial_distribution(model.init, w_f);
    const EnvGaussianVar pred =
        predict_distribution(batch.tau, kInitialTime, start, tape, model.dynamics, config.solver);
    l.dm = dynamics_loss(pred, target);
    l.dm_active = true;
  }

  if (env.rows() != batch.size() || env.cols() != model.dims.d_env) {
    throw ShapeError("environment feature rows do not match the batch");
  }
  const Var logits = matmul(concat_cols(e, tape.constant(env)), tape.param(model.w_c));
  l.vp = cross_entropy(logits, batch.y);
  l.total = add(add(add(l.vp, scale(l.cl, config.alpha)), scale(l.vg, config.beta)), scale(l.dm, config.gamma));
  return l;
}

Tensor fused_features(const Model& model, const Tensor& xt, const Tensor& xv) {
  return matmul(concat_cols(matmul(xt, model.encoder.theta_t.value), matmul(xv, model.encoder.theta_v.value)),
                model.encoder.w_a.value);
}

Tensor routed_features(const Model& model, const Tensor& xt, const Tensor& xv, const TrainConfig& config,
                       bool eval_mode, const Expert* expert) {
  const Tensor z = fused_features(model, xt, xv);
  const Expert& ex = expert ? *expert : model.dpm.latest();
  if (!config.use_shared_expert) return disc_feature(z, ex.disc_a.value, ex.disc_b.value);
  if (eval_mode) return route_eval(z, model.router, ex, model.shared);
  Tape tape(GradMode::kDisabled);
  return route(tape.constant(z), tape.constant(model.router.w_r.value), tape.constant(ex.disc_a.value),
               tape.constant(ex.disc_b.value), tape.constant(model.shared.expert.disc_a.value),
               tape.constant(model.shared.expert.disc_b.value))
      .value();
}

Tensor env_feature(const Model& model, const TrainConfig& config, double tau, std::size_t rows, Rng& rng) {
  if (!config.use_env_feature || !model.init.valid()) return zeros_like_rows(rows, model.dims.d_env);
  const EnvGaussian pred = predict_distribution(tau, kInitialTime, model.init, model.dynamics, config.solver);
  return sample_env_feature(pred, rows, rng);
}

StepReport train_step(Model& model, const Batch& batch, const TrainConfig& config, Rng& noise_rng, int event,
                      int epoch, int batch_index) {
  if (batch.size() < 2) throw InputError("training batches need at least two samples");
  StepReport report;
  if (config.use_env_feature && !model.init.frozen) {
    const std::vector<std::size_t> fake = fake_rows(batch.y);
    if (!fake.empty()) {
      const Tensor e = routed_features(model, batch.xt, batch.xv, config, false);
      model.init.accumulate(gather_rows(e, fake));
    }
  }
  const Tensor env = env_feature(model, config, batch.tau, batch.size(), noise_rng);

  if (config.use_dpm) {
    const Tensor z = fused_features(model, batch.xt, batch.xv);
    const std::vector<double> scores =
        responsibility_scores(z, batch.y, env, model.dpm, model.shared, model.w_c.value);
    const ExpansionDecision d = maybe_expand(scores, model.dpm, model.shared, event);
    if (d.created) report.expansion = ExpansionRecord{event, epoch, batch_index, scores, true};
  }

  Tape tape;
  const LossVars l = compose_loss(model, batch, config, tape, env);
  const std::vector<Parameter*> params = model.parameters();
  for (Parameter* p : params) p->zero_grad();
  tape.backward(l.total);
  clip_grad_norm(params, config.grad_clip);
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  adam_step(params, adam);
  ema_update(model.shared);
  model.steps += 1;
  report.loss = l.values();
  return report;
}

std::vector<double> predict_proba(const Model& model, std::span<const Sample* const> samples,
                                  const TrainConfig& config, double tau, Rng& rng) {
  if (samples.empty()) return {};
  const Batch b = make_batch(samples, tau);
  const Expert* expert = nullptr;
  if (config.expert_selection == ExpertSelection::kMaxResponsibility && config.use_dpm) {
    expert = &model.dpm.experts[most_responsible_expert(model, fused_features(model, b.xt, b.xv))];
  }
  const Tensor e = routed_features(model, b.xt, b.xv, config, true, expert);
  const Tensor env = env_feature(model, config, tau, b.size(), rng);
  const Tensor logits = matmul(concat_cols(e, env), model.w_c.value);
  std::vector<double> p(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) p[i] = softmax(logits.row_span(i))[1];
  return p;
}

ClassificationMetrics evaluate(const Model& model, std::span<const Sample* const> samples,
                               const TrainConfig& config, double tau, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<double> p = predict_proba(model, samples, config, tau, rng);
  std::vector<int> y;
  y.reserve(samples.size());
  for (const Sample* s : samples) y.push_back(s->y);
  return classification_metrics(p, y);
}

EventHistory train_event(Model& model, const EventSplit& data, const TrainConfig& config) {
  const int k = data.event;
  const std::size_t n = data.train.size();
  if (n < 10) throw InputError("event " + std::to_string(k) + " has fewer than 10 training samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(config.seed, SeedPurpose::kValidation, static_cast<std::uint64_t>(k)));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(n)));
  if (n_val == 0) throw ConfigError("validation split of event " + std::to_string(k) + " is empty");
  if (n - n_val < 2) throw ConfigError("validation split leaves fewer than two training samples");
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::vector<const Sample*> val, train;
  for (std::size_t i : val_idx) val.push_back(data.train[i]);
  for (std::size_t i : train_idx) train.push_back(data.train[i]);

  EventHistory h;
  h.event = k;
  // An expert created at this event's start (the initial one) uses up the cap.
  model.dpm.expansions_this_event = 0;
  for (const Expert& e : model.dpm.experts)
    if (e.created_at_event == k) ++model.dpm.expansions_this_event;
  const double tau = static_cast<double>(k);
  double best = -1.0;
  Model best_model = model;
  int stale = 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto batches = batch_iter(train.size(), config.batch_size,
                                    epoch_seed(config.seed, k, epoch));
    Rng noise(derive_seed(config.seed, SeedPurpose::kNoise, static_cast<std::uint64_t>(k),
                          static_cast<std::uint64_t>(epoch)));
    EpochRecord rec;
    rec.epoch = epoch;
    bool expanded = false;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch b = make_batch(train, batches[bi], tau);
      const StepReport r = train_step(model, b, config, noise, k, epoch, static_cast<int>(bi));
      rec.mean_loss.vp += r.loss.vp;
      rec.mean_loss.cl += r.loss.cl;
      rec.mean_loss.vg += r.loss.vg;
      rec.mean_loss.dm += r.loss.dm;
      rec.mean_loss.total += r.loss.total;
      if (r.expansion) {
        h.expansions.push_back(*r.expansion);
        expanded = true;
      }
    }
    const double nb = static_cast<double>(batches.size());
    rec.mean_loss.vp /= nb;
    rec.mean_loss.cl /= nb;
    rec.mean_loss.vg /= nb;
    rec.mean_loss.dm /= nb;
    rec.mean_loss.total /= nb;
    const ClassificationMetrics vm =
        evaluate(model, val, config, tau,
                 derive_seed(config.seed, SeedPurpose::kValidation, static_cast<std::uint64_t>(k),
                             static_cast<std::uint64_t>(epoch)));
    rec.val_macro_f1 = vm.macro_f1;
    rec.val_accuracy = vm.accuracy;
    h.epochs.push_back(rec);
    // Snapshots taken before an expansion hold a different roster, so an
    // expansion restarts the comparison from the current epoch.
    if (expanded || vm.macro_f1 > best) {
      best = vm.macro_f1;
      h.best_epoch = epoch;
      best_model = model;
      stale = 0;
    } else if (++stale >= config.patience) {
      h.early_stopped = true;
      break;
    }
  }
  model = std::move(best_model);
  return h;
}

void finalize_initial_state(Model& model, const EventSplit& first_event, const TrainConfig& config) {
  if (model.init.frozen) return;
  model.init.reset(model.dims.d_e);
  std::vector<const Sample*> fake;
  for (const Sample* s : first_event.train)
    if (s->y == 1) fake.push_back(s);
  if (config.use_env_feature && !fake.empty()) {
    const Batch b = make_batch(fake, static_cast<double>(first_event.event));
    model.init.accumulate(routed_features(model, b.xt, b.xv, config, false));
  }
  model.init.frozen = true;
}

TrainConfig resolve_config(TrainConfig config, const StreamManifest& manifest) {
  if (config.dims.d_t == 0) config.dims.d_t = manifest.d_t;
  if (config.dims.d_v == 0) config.dims.d_v = manifest.d_v;
  if (config.dims.d_t != manifest.d_t) throw ConfigError("dims.d_t disagrees with the stream");
  if (config.dims.d_v != manifest.d_v) throw ConfigError("dims.d_v disagrees with the stream");
  config.validate();
  return config;
}

RunResult train_continual(const StreamData& stream, const TrainConfig& base_config) {
  const StreamManifest& manifest = stream.manifest;
  if (manifest.num_events < 2) throw InputError("continual training needs at least two events");
  RunResult out;
  out.config = resolve_config(base_config, manifest);
  const TrainConfig& config = out.config;
  Model model = init_model(config);
  const std::vector<EventSplit> events = partition(stream);
  ForgettingMatrix matrix(static_cast<std::size_t>(manifest.num_events), manifest.has_future);

  Json rows = Json::array(), histories = Json::array(), expansions = Json::array(), timing = Json::array();
  for (int k = 1; k <= manifest.num_events; ++k) {
    const auto started = std::chrono::steady_clock::now();
    if (!config.use_dpm && static_cast<int>(model.dpm.experts.size()) < std::min(k, config.fixed_experts)) {
      append_random_expert(model, k, config.seed);
    }
    const EventHistory h = train_event(model, events[static_cast<std::size_t>(k - 1)], config);
    if (k == 1) finalize_initial_state(model, events[0], config);
    if (config.use_dpm && config.freeze_experts_at_event_end) model.dpm.latest().set_frozen(true);
    const auto trained = std::chrono::steady_clock::now();
    rows.push_back(metrics_row(model, config, events, manifest, k, &matrix));

    Json epochs = Json::array();
    for (const EpochRecord& r : h.epochs) {
      epochs.push_back({{"epoch", r.epoch},
                        {"loss", loss_to_json(r.mean_loss)},
                        {"val_macro_f1", r.val_macro_f1},
                        {"val_accuracy", r.val_accuracy}});
    }
    histories.push_back({{"event", k},
                         {"best_epoch", h.best_epoch},
                         {"early_stopped", h.early_stopped},
                         {"epochs", std::move(epochs)}});
    for (const ExpansionRecord& x : h.expansions) {
      expansions.push_back({{"event", x.event}, {"epoch", x.epoch}, {"batch", x.batch}, {"scores", x.scores}});
    }
    const auto done = std::chrono::steady_clock::now();
    timing.push_back({{"event", k},
                      {"train_seconds", std::chrono::duration<double>(trained - started).count()},
                      {"eval_seconds", std::chrono::duration<double>(done - trained).count()}});
  }

  Json drops = Json::array();
  for (int j = 1; j <= manifest.num_events; ++j) drops.push_back(forgetting_drop(matrix, static_cast<std::size_t>(j)));
  Json created = Json::array();
  for (const Expert& e : model.dpm.experts) created.push_back(e.created_at_event);

  Json log;
  log["format"] = "cmmd-eval-log";
  log["version"] = 1;
  log["config"] = config.to_json();
  log["stream"] = {{"num_events", manifest.num_events},
                   {"has_future", manifest.has_future},
                   {"seed", manifest.seed},
                   {"future_tau", future_time(config, manifest)}};
  log["forgetting_matrix"] = matrix.to_json();
  log["forgetting_drop"] = std::move(drops);
  log["rows"] = std::move(rows);
  log["final"] = log["rows"].back();
  log["events"] = std::move(histories);
  log["expansions"] = std::move(expansions);
  log["experts"] = {{"count", model.dpm.experts.size()},
                    {"created_at_event", std::move(created)},
                    {"counts", model.dpm.counts}};
  log["dynamics_forecast"] = dynamics_forecast(model, config, manifest);
  log["steps"] = model.steps;
  out.log = std::move(log);
  out.timing = {{"events", std::move(timing)}};
  out.model = std::move(model);
  return out;
}

Json checkpoint_to_json(const Model& model, const TrainConfig& config) {
  Json j;
  j["format"] = "cmmd-checkpoint";
  j["version"] = 1;
  j["config"] = config.to_json();
  j["model"] = model_to_json(model);
  return j;
}

std::pair<Model, TrainConfig> checkpoint_from_json(const Json& j) {
  if (j.value("format", std::string()) != "cmmd-checkpoint") throw ValidationError("not a checkpoint file");
  if (j.at("version").get<int>() != 1) throw ValidationError("unsupported checkpoint version");
  try {
    return {model_from_json(j.at("model")), TrainConfig::from_json(j.at("config"))};
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

Json evaluate_model(const Model& model, const TrainConfig& config, const StreamData& stream) {
  const std::vector<EventSplit> events = partition(stream);
  return metrics_row(model, config, events, stream.manifest, stream.manifest.num_events, nullptr);
}

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kNoDpm:
      return "no_dpm";
    case Variant::kNoShared:
      return "no_shared_expert";
    case Variant::kNoEnv:
      return "no_env_feature";
  }
  return "unknown";
}

TrainConfig apply_variant(TrainConfig config, Variant v) {
  switch (v) {
    case Variant::kFull:
      break;
    case Variant::kNoDpm:
      config.use_dpm = false;
      break;
    case Variant::kNoShared:
      config.use_shared_expert = false;
      break;
    case Variant::kNoEnv:
      config.use_env_feature = false;
      break;
  }
  return config;
}

std::vector<AblationRun> run_ablations(const StreamData& stream, const TrainConfig& config,
                                       std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw InputError("run_ablations needs at least one seed");
  std::vector<AblationRun> runs;
  for (Variant v : kAllVariants) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = apply_variant(config, v);
      c.seed = seed;
      runs.push_back({v, seed, train_continual(stream, c)});
    }
  }
  return runs;
}

}  // namespace cmmd
