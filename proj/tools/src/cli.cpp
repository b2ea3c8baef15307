#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cmmd/errors.hpp"
#include "cmmd/json_io.hpp"
#include "cmmd/metrics.hpp"
#include "cmmd/stream.hpp"
#include "cmmd/trainer.hpp"

namespace cmmd::cli {
namespace {

namespace fs = std::filesystem;

const char* const kMetricNames[] = {"accuracy", "auc", "macro_f1", "f1_real", "f1_fake"};

// Every write goes through a temp file and a rename.
void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
}

TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return TrainConfig{};
  return TrainConfig::from_json(read_json_file(path));
}

// Mean of each metric over every test split in a log's final row.
std::map<std::string, double> final_average(const Json& log) {
  std::map<std::string, double> out;
  const Json& row = log.at("final");
  std::vector<const Json*> cells;
  for (const Json& e : row.at("events")) cells.push_back(&e);
  if (!row.at("future").is_null()) cells.push_back(&row.at("future"));
  for (const char* name : kMetricNames) {
    double s = 0.0;
    for (const Json* c : cells) s += c->at(name).get<double>();
    out[name] = s / static_cast<double>(cells.size());
  }
  return out;
}

std::string summary_csv(const Json& log) {
  std::string out = "split,accuracy,macro_f1,f1_real,f1_fake,auc\n";
  auto line = [&out](const std::string& name, const Json& m) {
    out += fmt::format("{},{},{},{},{},{}\n", name, format_double(m.at("accuracy").get<double>()),
                       format_double(m.at("macro_f1").get<double>()), format_double(m.at("f1_real").get<double>()),
                       format_double(m.at("f1_fake").get<double>()), format_double(m.at("auc").get<double>()));
  };
  for (const Json& e : log.at("final").at("events")) line(fmt::format("event_{}", e.at("event").get<int>()), e);
  if (!log.at("final").at("future").is_null()) line("future", log.at("final").at("future"));
  return out;
}

void print_summary(const Json& log, std::ostream& out) {
  out << fmt::format("{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "split", "acc", "macro_f1", "f1_real", "f1_fake",
                     "auc");
  auto line = [&out](const std::string& name, const Json& m) {
    out << fmt::format("{:<10}{:>10.4f}{:>10.4f}{:>10.4f}{:>10.4f}{:>10.4f}\n", name, m.at("accuracy").get<double>(),
                       m.at("macro_f1").get<double>(), m.at("f1_real").get<double>(), m.at("f1_fake").get<double>(),
                       m.at("auc").get<double>());
  };
  for (const Json& e : log.at("events").is_array() ? log.at("final").at("events") : Json::array())
    line(fmt::format("event_{}", e.at("event").get<int>()), e);
  if (!log.at("final").at("future").is_null()) line("future", log.at("final").at("future"));
}

void write_run(const RunResult& r, const fs::path& dir) {
  ensure_dir(dir);
  write_text(dir / "checkpoint.json", dump_json_pretty(checkpoint_to_json(r.model, r.config)));
  write_text(dir / "eval_log.json", dump_json_pretty(r.log));
  write_text(dir / "summary.csv", summary_csv(r.log));
  write_text(dir / "timing.json", dump_json_pretty(r.timing));
}

std::vector<std::uint64_t> default_seeds() { return {1, 2, 3, 4, 5}; }

int cmd_gen(const std::string& config_path, const std::string& out_path, std::ostream& out) {
  const GenConfig config = GenConfig::from_json(read_json_file(config_path));
  const StreamData stream = generate(config);
  save_stream(stream, output_path(out_path));
  for (std::size_t k = 0; k < stream.manifest.counts.size(); ++k) {
    const bool future = static_cast<int>(k) >= stream.manifest.num_events;
    out << fmt::format("event {}{}: {} samples\n", k + 1, future ? " (future)" : "", stream.manifest.counts[k]);
  }
  return 0;
}

int cmd_train(const std::string& stream_path, const std::string& config_path, const std::string& out_dir,
              const std::vector<std::uint64_t>& seed, std::ostream& out) {
  const StreamData stream = load_stream(stream_path);
  TrainConfig config = load_train_config(config_path);
  if (!seed.empty()) config.seed = seed.front();
  const RunResult r = train_continual(stream, config);
  write_run(r, output_path(out_dir));
  print_summary(r.log, out);
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& stream_path, const std::string& out_path,
             std::ostream& out) {
  const auto [model, config] = checkpoint_from_json(read_json_file(checkpoint_path));
  const StreamData stream = load_stream(stream_path);
  Json log;
  log["final"] = evaluate_model(model, config, stream);
  log["events"] = Json::array();
  if (!out_path.empty()) write_text(output_path(out_path), dump_json_pretty(log));
  print_summary(log, out);
  return 0;
}

int cmd_ablate(const std::string& stream_path, const std::string& config_path, std::vector<std::uint64_t> seeds,
               const std::string& out_dir, std::ostream& out) {
  if (seeds.empty()) seeds = default_seeds();
  const StreamData stream = load_stream(stream_path);
  const TrainConfig config = load_train_config(config_path);
  const fs::path root = output_path(out_dir);
  ensure_dir(root);
  std::string runs_csv = "variant,seed,accuracy,auc,macro_f1,f1_real,f1_fake,future_accuracy,forgetting_drop_1\n";
  std::map<std::string, std::vector<std::map<std::string, double>>> by_variant;
  for (Variant v : kAllVariants) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = apply_variant(config, v);
      c.seed = seed;
      const RunResult r = train_continual(stream, c);
      write_run(r, root / to_string(v) / fmt::format("seed_{}", seed));
      auto avg = final_average(r.log);
      const Json& fut = r.log.at("final").at("future");
      avg["future_accuracy"] = fut.is_null() ? std::nan("") : fut.at("accuracy").get<double>();
      avg["forgetting_drop_1"] = r.log.at("forgetting_drop").at(0).get<double>();
      runs_csv += fmt::format("{},{}", to_string(v), seed);
      for (const char* name : {"accuracy", "auc", "macro_f1", "f1_real", "f1_fake", "future_accuracy",
                               "forgetting_drop_1"}) {
        runs_csv += "," + (std::isnan(avg[name]) ? std::string("") : format_double(avg[name]));
      }
      runs_csv += "\n";
      by_variant[to_string(v)].push_back(avg);
      out << fmt::format("{} seed {}: accuracy {:.4f}\n", to_string(v), seed, avg["accuracy"]);
    }
  }
  // Per-variant mean and population std over seeds; avg_delta is the mean
  // over the five metrics of (variant mean - full mean).
  auto stats = [](const std::vector<std::map<std::string, double>>& runs, const std::string& name) {
    double m = 0.0, s = 0.0;
    for (const auto& r : runs) m += r.at(name);
    m /= static_cast<double>(runs.size());
    for (const auto& r : runs) s += (r.at(name) - m) * (r.at(name) - m);
    return std::pair{m, std::sqrt(s / static_cast<double>(runs.size()))};
  };
  std::string table = "variant";
  for (const char* name : kMetricNames) table += fmt::format(",{0}_mean,{0}_std", name);
  table += ",avg_delta\n";
  std::map<std::string, double> full_means;
  for (const char* name : kMetricNames) full_means[name] = stats(by_variant.at("full"), name).first;
  for (Variant v : kAllVariants) {
    const auto& runs = by_variant.at(to_string(v));
    table += to_string(v);
    double delta = 0.0;
    for (const char* name : kMetricNames) {
      const auto [m, s] = stats(runs, name);
      table += "," + format_double(m) + "," + format_double(s);
      delta += m - full_means[name];
    }
    table += "," + format_double(delta / 5.0) + "\n";
  }
  write_text(root / "ablation_runs.csv", runs_csv);
  write_text(root / "ablation.csv", table);
  out << table;
  return 0;
}

int cmd_sweep(const std::string& stream_path, const std::string& config_path, const std::string& param,
              const std::vector<double>& values, std::vector<std::uint64_t> seeds, const std::string& out_dir,
              std::ostream& out) {
  if (seeds.empty()) seeds = default_seeds();
  const StreamData stream = load_stream(stream_path);
  const TrainConfig base = load_train_config(config_path);
  // Reject an unknown key before any training starts.
  TrainConfig probe = base;
  probe.set_value(param, values.front());
  const fs::path root = output_path(out_dir);
  ensure_dir(root);
  std::string csv = fmt::format("param,value,seed,accuracy,macro_f1,auc,future_accuracy\n");
  for (double value : values) {
    for (std::uint64_t seed : seeds) {
      TrainConfig c = base;
      c.set_value(param, value);
      c.seed = seed;
      const RunResult r = train_continual(stream, c);
      write_run(r, root / fmt::format("{}_{}", param, format_double(value)) / fmt::format("seed_{}", seed));
      const auto avg = final_average(r.log);
      const Json& fut = r.log.at("final").at("future");
      csv += fmt::format("{},{},{},{},{},{},{}\n", param, format_double(value), seed, format_double(avg.at("accuracy")),
                         format_double(avg.at("macro_f1")), format_double(avg.at("auc")),
                         fut.is_null() ? std::string("") : format_double(fut.at("accuracy").get<double>()));
      out << fmt::format("{}={} seed {}: accuracy {:.4f}\n", param, format_double(value), seed, avg.at("accuracy"));
    }
  }
  write_text(root / "sweep.csv", csv);
  return 0;
}

int cmd_report(const std::string& logs_dir, const std::string& out_dir, std::ostream& out) {
  const fs::path logs = logs_dir;
  if (!fs::is_directory(logs)) throw InputError("log directory " + logs.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(logs)) {
    if (entry.is_regular_file() && entry.path().filename() == "eval_log.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no eval_log.json files under " + logs.string());

  std::optional<std::size_t> k_all;
  std::optional<std::size_t> cols_all;
  std::string matrix_csv, curve_csv = "log,after_event,accuracy\n", drop_csv = "log,event,forgetting_drop\n";
  for (const fs::path& f : files) {
    const Json log = read_json_file(f);
    ForgettingMatrix m;
    try {
      m = ForgettingMatrix::from_json(log.at("forgetting_matrix"));
    } catch (const Json::exception& e) {
      throw ValidationError(f.string() + ": " + e.what());
    }
    if ((k_all && *k_all != m.rows()) || (cols_all && *cols_all != m.cols())) {
      throw ValidationError(f.string() + ": forgetting matrix shape differs from the other logs");
    }
    k_all = m.rows();
    cols_all = m.cols();
    const std::string name = fs::relative(f.parent_path(), logs).generic_string();
    const std::string label = name.empty() || name == "." ? "." : name;
    if (matrix_csv.empty()) {
      matrix_csv = "log,after_event";
      for (std::size_t j = 1; j <= m.rows(); ++j) matrix_csv += fmt::format(",event_{}", j);
      if (m.cols() > m.rows()) matrix_csv += ",future";
      matrix_csv += "\n";
    }
    for (std::size_t k = 1; k <= m.rows(); ++k) {
      matrix_csv += fmt::format("{},{}", label, k);
      for (std::size_t j = 1; j <= m.cols(); ++j) {
        const auto v = m.get(k, j);
        matrix_csv += "," + (v ? format_double(*v) : std::string(""));
      }
      matrix_csv += "\n";
      if (const auto v = m.get(k, 1)) curve_csv += fmt::format("{},{},{}\n", label, k, format_double(*v));
    }
    for (std::size_t j = 1; j <= m.rows(); ++j) {
      drop_csv += fmt::format("{},{},{}\n", label, j, format_double(forgetting_drop(m, j)));
    }
    out << fmt::format("{}: {} x {} forgetting matrix, drop on event 1 = {:.4f}\n", label, m.rows(), m.cols(),
                       forgetting_drop(m, 1));
  }
  const fs::path root = output_path(out_dir);
  ensure_dir(root);
  write_text(root / "forgetting_matrix.csv", matrix_csv);
  write_text(root / "first_event_curve.csv", curve_csv);
  write_text(root / "forgetting_drop.csv", drop_csv);
  return 0;
}

}  // namespace

fs::path output_path(const std::string& path) {
  const fs::path p(path);
  const char* root = std::getenv("CMMD_OUTPUT_ROOT");
  if (p.is_absolute() || root == nullptr || *root == '\0') return p;
  return fs::path(root) / p;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continual multimodal misinformation detection laboratory"};
  app.require_subcommand(1);

  std::string config, stream, out_path, checkpoint, param, logs;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic event stream");
  gen->add_option("--config", config, "Generator config (JSON)")->required();
  gen->add_option("--out", out_path, "Output stream file")->required();

  auto* train = app.add_subcommand("train", "Train continually over a stream");
  train->add_option("--stream", stream, "Stream file")->required();
  train->add_option("--config", config, "Training config (JSON); defaults when omitted");
  train->add_option("--out", out_path, "Output directory")->required();
  train->add_option("--seed", seeds, "Override the config seed")->expected(1);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a stream");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--stream", stream, "Stream file")->required();
  eval->add_option("--out", out_path, "Optional metrics file (JSON)");

  auto* ablate = app.add_subcommand("ablate", "Run the full model and three single-switch ablations");
  ablate->add_option("--stream", stream, "Stream file")->required();
  ablate->add_option("--config", config, "Training config (JSON)");
  ablate->add_option("--seeds", seeds, "Seeds (default 1 2 3 4 5)");
  ablate->add_option("--out", out_path, "Output directory")->required();

  auto* sweep = app.add_subcommand("sweep", "Sensitivity sweep over one config key");
  sweep->add_option("--stream", stream, "Stream file")->required();
  sweep->add_option("--config", config, "Training config (JSON)");
  sweep->add_option("--param", param, "Config key, e.g. gamma or dims.d_h")->required();
  sweep->add_option("--values", values, "Values to try")->required();
  sweep->add_option("--seeds", seeds, "Seeds (default 1 2 3 4 5)");
  sweep->add_option("--out", out_path, "Output directory")->required();

  auto* report = app.add_subcommand("report", "Forgetting tables from evaluation logs");
  report->add_option("--logs", logs, "Directory searched recursively for eval_log.json")->required();
  report->add_option("--out", out_path, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen) return cmd_gen(config, out_path, out);
    if (*train) return cmd_train(stream, config, out_path, seeds, out);
    if (*eval) return cmd_eval(checkpoint, stream, out_path, out);
    if (*ablate) return cmd_ablate(stream, config, seeds, out_path, out);
    if (*sweep) return cmd_sweep(stream, config, param, values, seeds, out_path, out);
    if (*report) return cmd_report(logs, out_path, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace cmmd::cli
