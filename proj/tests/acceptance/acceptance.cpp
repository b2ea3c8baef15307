// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is nonzero when any selected
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <string>

#include <fmt/format.h>

#include "../support/grad_check.hpp"
#include "../support/oracles.hpp"
#include "cmmd/dopri5.hpp"
#include "cmmd/trainer.hpp"

namespace cmmd {
namespace {

using Clock = std::chrono::steady_clock;

const std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [fail]");
  }
};

std::string fmt_double(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Streams used by the controlled experiments.
StreamData drift_stream() {
  GenConfig g;
  g.num_events = 4;
  g.samples_per_event = 500;
  g.velocity = {0.5};
  g.include_future = true;
  g.seed = 7;
  return generate(g);
}

StreamData separated_stream(double separation) {
  GenConfig g;
  g.num_events = 4;
  g.samples_per_event = 500;
  g.separation = separation * g.class_std;
  g.include_future = true;
  g.seed = 7;
  return generate(g);
}

// Training runs shared between criteria, keyed by a description.
class RunCache {
 public:
  const RunResult& get(const std::string& key, const StreamData& s, const TrainConfig& c) {
    auto it = runs_.find(key);
    if (it == runs_.end()) it = runs_.emplace(key, train_continual(s, c)).first;
    return it->second;
  }

 private:
  std::map<std::string, RunResult> runs_;
};

const StreamData& drift() {
  static const StreamData s = drift_stream();
  return s;
}
const StreamData& separated() {
  static const StreamData s = separated_stream(5.0);
  return s;
}
const StreamData& stationary() {
  static const StreamData s = separated_stream(0.0);
  return s;
}

TrainConfig seeded(TrainConfig c, std::uint64_t seed) {
  c.seed = seed;
  return c;
}

int new_experts(const RunResult& r) { return r.log.at("experts").at("count").get<int>() - 1; }

// Mean of each metric over the final row's event splits and future split.
std::map<std::string, double> final_average(const Json& log) {
  std::map<std::string, double> out;
  const Json& row = log.at("final");
  std::vector<Json> cells(row.at("events").begin(), row.at("events").end());
  if (!row.at("future").is_null()) cells.push_back(row.at("future"));
  for (const char* name : {"accuracy", "auc", "macro_f1", "f1_real", "f1_fake"}) {
    double s = 0.0;
    for (const Json& c : cells) s += c.at(name).get<double>();
    out[name] = s / static_cast<double>(cells.size());
  }
  return out;
}

Outcome criterion1() {
  const auto start = Clock::now();
  Outcome o;
  GenConfig g;
  g.num_events = 2;
  g.samples_per_event = 40;
  g.d_t = 4;
  g.d_v = 4;
  g.velocity = {0.3};
  g.seed = 11;
  const StreamData s = generate(g);
  TrainConfig c;
  c.dims.d_z = 6;
  c.dims.d_e = 5;
  c.dims.d_env = 4;
  c.dims.d_g = 3;
  c.dims.d_h = 8;
  c.dims.r = 2;
  c = resolve_config(c, s.manifest);
  Model m = init_model(c);
  const auto events = partition(s);
  finalize_initial_state(m, events[0], c);
  // Second expert, first one frozen; every zero-initialised block perturbed so
  // that all paths carry gradient.
  m.dpm.experts.push_back(m.dpm.experts[0]);
  m.dpm.experts[0].set_frozen(true);
  m.dpm.counts.push_back(1.0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.3);
  for (Parameter* p : {&m.router.w_r, &m.dynamics.mu_field.w2, &m.dynamics.mu_field.b2,
                       &m.dynamics.sigma_field.w2, &m.dynamics.sigma_field.b2})
    for (double& v : p->value.storage()) v += n(rng);

  std::vector<const Sample*> rows;
  for (const Sample& x : s.samples)
    if (x.event == 2 && x.split == Split::kTrain && rows.size() < 4) rows.push_back(&x);
  const Batch b = make_batch(rows, 2.0);
  Rng noise(3);
  const Tensor env = env_feature(m, c, b.tau, b.size(), noise);
  std::vector<Parameter*> params;
  for (Parameter* p : m.parameters())
    if (p->trainable) params.push_back(p);

  using Pick = Var LossVars::*;
  const std::pair<const char*, Pick> losses[] = {{"veracity", &LossVars::vp},   {"contrastive", &LossVars::cl},
                                                 {"reconstruction", &LossVars::vg}, {"dynamics", &LossVars::dm},
                                                 {"composed", &LossVars::total}};
  for (const auto& [name, pick] : losses) {
    const auto r = testing::check_gradients(params, [&, pick = pick](Tape& tape) {
      return compose_loss(m, b, c, tape, env).*pick;
    });
    o.check(r.failures == 0, fmt::format("{} {}/{} within 1e-4 (max rel {})", name, r.checked - r.failures,
                                         r.checked, fmt_double(r.max_rel_error, 2)));
  }
  const double t = seconds_since(start);
  o.check(t < 30.0, "runtime " + fmt_double(t, 3) + " s");
  return o;
}

double exp_error(double tol) {
  SolverConfig cfg;
  cfg.rtol = cfg.atol = tol;
  const OdeProblem p{[](const Tensor& y, double) { return y * -1.0; }, Tensor::scalar(1.0), 0.0, 1.0};
  return std::abs(dopri5_integrate(p, cfg).state[0] - 0.3678794412);
}

Outcome criterion2() {
  const auto start = Clock::now();
  Outcome o;
  const double e = exp_error(1e-7);
  o.check(e < 1e-6, "exp(-1) error " + fmt_double(e, 3));
  SolverConfig cfg;
  cfg.rtol = cfg.atol = 1e-8;
  const OdeProblem osc{[](const Tensor& y, double) { return Tensor::row({y[1], -y[0]}); }, Tensor::row({1.0, 0.0}),
                       0.0, 2.0 * std::numbers::pi};
  const Tensor y = dopri5_integrate(osc, cfg).state;
  const double dev = std::max(std::abs(y[0] - 1.0), std::abs(y[1]));
  o.check(dev < 1e-5, "oscillator period deviation " + fmt_double(dev, 3));
  // Error against the exact value; the 10-digit literal would floor the
  // comparison at 1e-11.
  auto exact_error = [](double tol) {
    SolverConfig c;
    c.rtol = c.atol = tol;
    const OdeProblem p{[](const Tensor& v, double) { return v * -1.0; }, Tensor::scalar(1.0), 0.0, 1.0};
    return std::abs(dopri5_integrate(p, c).state[0] - std::exp(-1.0));
  };
  const double ratio = exact_error(1e-7) / exact_error(5e-8);
  o.check(ratio >= 4.0, "halving tolerance error ratio " + fmt_double(ratio, 3) + " (need >= 4)");
  const double t = seconds_since(start);
  o.check(t < 5.0, "runtime " + fmt_double(t, 3) + " s");
  return o;
}

Outcome criterion3() {
  Outcome o;
  std::mt19937_64 rng(33);
  std::normal_distribution<double> n(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 2 + rng() % 60, d_e = 1 + rng() % 8, d_env = 1 + rng() % 8;
    Tensor e({rows, d_e}), w({d_e, d_env});
    for (double& v : e.storage()) v = n(rng) + 3.0;
    for (double& v : w.storage()) v = n(rng) / 2.0;
    const EnvGaussian g = batch_env_stats(e, w);
    const Tensor mapped = testing::naive_matmul(e, w);
    std::vector<std::vector<double>> table(rows, std::vector<double>(d_env));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d_env; ++j) table[i][j] = mapped(i, j);
    const auto want = testing::two_pass_stats(table, kVarianceFloor);
    for (std::size_t j = 0; j < d_env; ++j) {
      worst = std::max({worst, std::abs(g.mean[j] - want.mean[j]), std::abs(g.var[j] - want.var[j])});
    }
  }
  o.check(worst <= 1e-12, "batch stats max deviation " + fmt_double(worst, 3) + " over 50 batches");

  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t count = 1 + rng() % 50;
    std::vector<double> p(count);
    std::vector<int> y(count);
    for (std::size_t i = 0; i < count; ++i) {
      p[i] = static_cast<double>(rng() % 21) / 20.0;
      y[i] = static_cast<int>(rng() % 2);
    }
    const ClassificationMetrics m = classification_metrics(p, y);
    const testing::BruteMetrics b = testing::brute_metrics(p, y);
    const bool same = m.counts.tp == b.tp && m.counts.fp == b.fp && m.counts.tn == b.tn && m.counts.fn == b.fn &&
                      m.accuracy == b.accuracy && m.f1_real == b.f1_real && m.f1_fake == b.f1_fake &&
                      m.macro_f1 == b.macro_f1 && m.auc == b.auc;
    exact += same;
  }
  o.check(exact == 100, fmt::format("metrics exact on {}/100 cases", exact));
  return o;
}

Outcome criterion4(RunCache& cache) {
  const auto start = Clock::now();
  Outcome o;
  std::vector<double> errors;
  std::string per_seed;
  for (std::uint64_t seed : kSeeds) {
    const RunResult& r = cache.get(fmt::format("drift/full/{}", seed), drift(), seeded(TrainConfig{}, seed));
    double err = std::nan("");
    for (const Json& f : r.log.at("dynamics_forecast"))
      if (f.at("tau").get<int>() == 5) err = f.at("relative_error").get<double>();
    errors.push_back(err);
    per_seed += (per_seed.empty() ? "" : " ") + fmt_double(err, 3);
  }
  const double med = median(errors);
  o.check(med < 0.15, "median relative error at tau=5 " + fmt_double(med, 3) + " (seeds: " + per_seed + ")");
  const double t = seconds_since(start);
  o.check(t < 300.0, "runtime " + fmt_double(t, 3) + " s");
  return o;
}

Outcome criterion5(RunCache& cache) {
  Outcome o;
  int separated_ok = 0, stationary_ok = 0;
  std::string sep_counts, stat_counts;
  for (std::uint64_t seed : kSeeds) {
    const int a = new_experts(cache.get(fmt::format("sep/full/{}", seed), separated(), seeded(TrainConfig{}, seed)));
    const int b = new_experts(cache.get(fmt::format("stat/full/{}", seed), stationary(), seeded(TrainConfig{}, seed)));
    separated_ok += a >= 3;
    stationary_ok += b == 0;
    sep_counts += std::to_string(a);
    stat_counts += std::to_string(b);
  }
  o.check(separated_ok >= 4, fmt::format("s=5: >= 3 new experts in {}/5 seeds (counts {})", separated_ok, sep_counts));
  o.check(stationary_ok >= 4, fmt::format("s=0: 0 new experts in {}/5 seeds (counts {})", stationary_ok, stat_counts));

  const double costs[] = {0.5, 1.0, 2.0, 4.0};
  for (const auto& [label, stream] : {std::pair{"s=5", &separated()}, std::pair{"s=0", &stationary()}}) {
    int monotone = 0;
    std::string seq;
    for (std::uint64_t seed : kSeeds) {
      std::vector<int> counts;
      for (double cost : costs) {
        TrainConfig c = seeded(TrainConfig{}, seed);
        c.neg_log_lambda = cost;
        const std::string key = fmt::format("{}/full/{}{}", label == std::string("s=5") ? "sep" : "stat", seed,
                                            cost == 1.0 ? "" : "/nll" + fmt_double(cost));
        counts.push_back(new_experts(cache.get(key, *stream, c)));
      }
      monotone += std::is_sorted(counts.rbegin(), counts.rend());
      seq += fmt::format(" {}:{}{}{}{}", seed, counts[0], counts[1], counts[2], counts[3]);
    }
    o.check(monotone == 5, fmt::format("{} nonincreasing over -log lambda {{0.5,1,2,4}} in {}/5 seeds (seed:counts{})",
                                       label, monotone, seq));
  }
  return o;
}

Outcome criterion6(RunCache& cache) {
  Outcome o;
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    TrainConfig plain = seeded(TrainConfig{}, seed);
    plain.use_dpm = false;
    plain.use_shared_expert = false;
    const double full =
        cache.get(fmt::format("sep/full/{}", seed), separated(), seeded(TrainConfig{}, seed)).log.at("forgetting_drop")[0];
    const double base = cache.get(fmt::format("sep/plain/{}", seed), separated(), plain).log.at("forgetting_drop")[0];
    wins += full < base;
    detail += fmt::format(" {}:{}/{}", seed, fmt_double(full, 3), fmt_double(base, 3));
  }
  o.check(wins >= 4, fmt::format("full drop < plain drop in {}/5 seeds (seed:full/plain{})", wins, detail));
  return o;
}

Outcome criterion7(RunCache& cache) {
  Outcome o;
  std::map<Variant, std::vector<std::map<std::string, double>>> averages;
  std::map<Variant, std::vector<double>> future;
  for (Variant v : kAllVariants) {
    for (std::uint64_t seed : kSeeds) {
      const TrainConfig c = seeded(apply_variant(TrainConfig{}, v), seed);
      const RunResult& r = cache.get(fmt::format("drift/{}/{}", to_string(v), seed), drift(), c);
      averages[v].push_back(final_average(r.log));
      future[v].push_back(r.log.at("final").at("future").at("accuracy").get<double>());
    }
  }
  int wins = 0;
  std::string detail;
  for (std::size_t i = 0; i < std::size(kSeeds); ++i) {
    wins += future[Variant::kNoEnv][i] < future[Variant::kFull][i];
    detail += fmt::format(" {}/{}", fmt_double(future[Variant::kFull][i], 3), fmt_double(future[Variant::kNoEnv][i], 3));
  }
  o.check(wins >= 4, fmt::format("no_env future accuracy below full in {}/5 seeds (full/no_env{})", wins, detail));

  auto mean_of = [&](Variant v, const std::string& metric) {
    double s = 0.0;
    for (const auto& a : averages[v]) s += a.at(metric);
    return s / static_cast<double>(averages[v].size());
  };
  for (Variant v : {Variant::kNoDpm, Variant::kNoShared, Variant::kNoEnv}) {
    double delta = 0.0;
    for (const char* metric : {"accuracy", "auc", "macro_f1", "f1_real", "f1_fake"})
      delta += (mean_of(v, metric) - mean_of(Variant::kFull, metric)) / 5.0;
    o.check(delta < 0.0, fmt::format("{} avg delta {}", to_string(v), fmt_double(delta, 3)));
  }
  return o;
}

Outcome criterion8() {
  Outcome o;
  Rng rng(8);
  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto fill = [&](Tensor& t) {
    for (double& v : t.storage()) v = u(g);
  };

  SharedExpert keep = make_shared_expert(random_expert(8, 4, 8, 4, rng), 1.0);
  const Tensor a0 = keep.shadow_a, b0 = keep.shadow_b;
  for (int step = 0; step < 1000; ++step) {
    fill(keep.expert.disc_a.value);
    fill(keep.expert.disc_b.value);
    ema_update(keep);
  }
  o.check(keep.shadow_a == a0 && keep.shadow_b == b0, "epsilon=1 shadow bitwise unchanged over 1000 steps");

  SharedExpert s = make_shared_expert(random_expert(8, 4, 8, 4, rng), 0.99);
  fill(s.shadow_a);
  fill(s.shadow_b);
  fill(s.expert.disc_a.value);
  fill(s.expert.disc_b.value);
  const Tensor before_a = s.shadow_a, before_b = s.shadow_b;
  ema_update(s);
  double worst = 0.0;
  for (std::size_t i = 0; i < before_a.size(); ++i) {
    const long double want = 0.99L * before_a[i] + 0.01L * s.expert.disc_a.value[i];
    worst = std::max(worst, static_cast<double>(std::abs(want - s.shadow_a[i])));
  }
  for (std::size_t i = 0; i < before_b.size(); ++i) {
    const long double want = 0.99L * before_b[i] + 0.01L * s.expert.disc_b.value[i];
    worst = std::max(worst, static_cast<double>(std::abs(want - s.shadow_b[i])));
  }
  o.check(worst <= 1e-15, "epsilon=0.99 single step max deviation " + fmt_double(worst, 3));

  // Frozen experts across a full later event, replaying the continual loop.
  const TrainConfig c = resolve_config(TrainConfig{}, separated().manifest);
  Model m = init_model(c);
  const auto events = partition(separated());
  bool unchanged = true;
  std::size_t checked = 0;
  for (int k = 1; k <= 3; ++k) {
    std::vector<Expert> frozen;
    for (const Expert& e : m.dpm.experts) {
      if (!e.frozen) break;
      frozen.push_back(e);
    }
    train_event(m, events[static_cast<std::size_t>(k - 1)], c);
    if (k == 1) finalize_initial_state(m, events[0], c);
    m.dpm.latest().set_frozen(true);
    // Experts are only ever appended, so earlier entries keep their index.
    for (std::size_t i = 0; i < frozen.size(); ++i) {
      const Expert& e = m.dpm.experts[i];
      unchanged = unchanged && e.disc_a.value == frozen[i].disc_a.value && e.disc_b.value == frozen[i].disc_b.value &&
                  e.gen_enc.value == frozen[i].gen_enc.value && e.gen_dec.value == frozen[i].gen_dec.value;
      ++checked;
    }
  }
  o.check(unchanged && checked > 0, fmt::format("frozen experts bitwise unchanged across later events ({} checks)",
                                                checked));
  return o;
}

Outcome criterion9() {
  Outcome o;
  GenConfig g;
  g.num_events = 3;
  g.samples_per_event = 120;
  g.velocity = {0.4};
  g.include_future = true;
  g.seed = 9;
  const StreamData s = generate(g);
  TrainConfig c;
  c.seed = 4;
  const RunResult a = train_continual(s, c), b = train_continual(s, c);
  o.check(a.log.dump() == b.log.dump(), "evaluation logs bit-identical across runs");

  const std::string text = serialize(s);
  o.check(serialize(parse_stream(text)) == text, "stream round trip byte-identical");
  const std::string ckpt = dump_json(checkpoint_to_json(a.model, a.config));
  const auto [model, config] = checkpoint_from_json(Json::parse(ckpt));
  o.check(dump_json(checkpoint_to_json(model, config)) == ckpt, "checkpoint round trip byte-identical");
  o.check(evaluate_model(model, config, s).dump() == a.log.at("final").dump(),
          "reloaded checkpoint reproduces final metrics");
  return o;
}

}  // namespace
}  // namespace cmmd

int main(int argc, char** argv) {
  using namespace cmmd;
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  RunCache cache;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion1},
      {2, criterion2},
      {3, criterion3},
      {4, [&] { return criterion4(cache); }},
      {5, [&] { return criterion5(cache); }},
      {6, [&] { return criterion6(cache); }},
      {7, [&] { return criterion7(cache); }},
      {8, criterion8},
      {9, criterion9},
  };
  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::printf("CRITERION %d: %s (%.1f s) %s\n", id, o.pass ? "PASS" : "FAIL", seconds_since(start), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
