#include "cmmd/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cmmd/errors.hpp"
#include "cmmd/rng.hpp"

namespace cmmd {
namespace {

constexpr const char* kFormat = "cmmd-stream";

std::vector<double> broadcast(const std::vector<double>& v, std::size_t n, const char* name) {
  if (v.size() == 1) return std::vector<double>(n, v[0]);
  if (v.size() != n) {
    throw ConfigError(std::string(name) + ": expected 1 or " + std::to_string(n) + " values, got " +
                      std::to_string(v.size()));
  }
  return v;
}

std::vector<double> number_or_array(const Json& j, const char* key, std::vector<double> fallback) {
  if (!j.contains(key)) return fallback;
  const Json& v = j.at(key);
  if (v.is_number()) return {v.get<double>()};
  return v.get<std::vector<double>>();
}

void append_array(std::string& out, const std::vector<double>& xs) {
  out += '[';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += format_double(xs[i]);
  }
  out += ']';
}

Json drift_to_json(const DriftRecord& d) {
  Json j;
  j["kind"] = d.kind == DriftKind::kLinear ? "linear" : "sinusoidal";
  j["class_std"] = d.class_std;
  j["real_mean"] = d.real_mean;
  j["fake_base"] = d.fake_base;
  j["velocity"] = d.velocity;
  j["frequency"] = d.frequency;
  j["offsets"] = d.offsets;
  return j;
}

DriftRecord drift_from_json(const Json& j) {
  DriftRecord d;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") {
    d.kind = DriftKind::kLinear;
  } else if (kind == "sinusoidal") {
    d.kind = DriftKind::kSinusoidal;
  } else {
    throw ValidationError("unknown drift kind '" + kind + "'");
  }
  d.class_std = j.at("class_std").get<double>();
  d.real_mean = j.at("real_mean").get<std::vector<double>>();
  d.fake_base = j.at("fake_base").get<std::vector<double>>();
  d.velocity = j.at("velocity").get<std::vector<double>>();
  d.frequency = j.at("frequency").get<double>();
  d.offsets = j.at("offsets").get<std::vector<std::vector<double>>>();
  return d;
}

Sample parse_sample(const std::string& line, std::size_t line_no) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), line_no);
  }
  try {
    Sample s;
    s.event = j.at("e").get<int>();
    s.t = j.at("t").get<int>();
    s.y = j.at("y").get<int>();
    s.xt = j.at("xt").get<std::vector<double>>();
    s.xv = j.at("xv").get<std::vector<double>>();
    const std::string split = j.at("split").get<std::string>();
    if (split == "train") {
      s.split = Split::kTrain;
    } else if (split == "test") {
      s.split = Split::kTest;
    } else {
      throw ParseError("unknown split '" + split + "'", line_no);
    }
    return s;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("bad record field: ") + e.what(), line_no);
  }
}

}  // namespace

const char* to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::vector<double> DriftRecord::fake_mean(int event) const {
  std::vector<double> mu = fake_base;
  const double k = static_cast<double>(event);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    mu[i] += kind == DriftKind::kLinear ? velocity[i] * k : velocity[i] * std::sin(frequency * k);
  }
  if (event >= 1 && static_cast<std::size_t>(event) <= offsets.size()) {
    const auto& off = offsets[static_cast<std::size_t>(event - 1)];
    for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += off[i];
  }
  return mu;
}

void GenConfig::validate() const {
  if (num_events < 1) throw ConfigError("num_events must be at least 1");
  if (samples_per_event < 4) throw ConfigError("samples_per_event must be at least 4");
  if (!(fake_fraction > 0.0 && fake_fraction < 1.0)) throw ConfigError("fake_fraction must lie in (0, 1)");
  if (d_t < 1 || d_v < 1) throw ConfigError("feature dimensions must be positive");
  if (!(class_std > 0.0)) throw ConfigError("class_std must be positive");
  if (!(separation >= 0.0)) throw ConfigError("separation must be non-negative");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  const std::size_t d = d_t + d_v;
  broadcast(real_mean, d, "real_mean");
  broadcast(fake_base, d, "fake_base");
  broadcast(velocity, d, "velocity");
  const std::size_t n_fake = static_cast<std::size_t>(std::llround(fake_fraction * samples_per_event));
  if (n_fake < 2 || samples_per_event - n_fake < 2) throw ConfigError("each class needs at least 2 samples per event");
}

GenConfig GenConfig::from_json(const Json& j) {
  static const std::vector<std::string> known = {
      "num_events", "samples_per_event", "fake_fraction", "d_t",        "d_v",           "class_std",
      "real_mean",  "fake_base",         "velocity",      "drift_kind", "frequency",     "separation",
      "test_fraction", "include_future", "seed"};
  if (!j.is_object()) throw ConfigError("generator config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw ConfigError("unknown generator config key '" + it.key() + "'");
    }
  }
  GenConfig c;
  try {
    c.num_events = j.value("num_events", c.num_events);
    c.samples_per_event = j.value("samples_per_event", c.samples_per_event);
    c.fake_fraction = j.value("fake_fraction", c.fake_fraction);
    c.d_t = j.value("d_t", c.d_t);
    c.d_v = j.value("d_v", c.d_v);
    c.class_std = j.value("class_std", c.class_std);
    c.real_mean = number_or_array(j, "real_mean", c.real_mean);
    c.fake_base = number_or_array(j, "fake_base", c.fake_base);
    c.velocity = number_or_array(j, "velocity", c.velocity);
    const std::string kind = j.value("drift_kind", std::string("linear"));
    if (kind == "linear") {
      c.drift_kind = DriftKind::kLinear;
    } else if (kind == "sinusoidal") {
      c.drift_kind = DriftKind::kSinusoidal;
    } else {
      throw ConfigError("drift_kind must be 'linear' or 'sinusoidal'");
    }
    c.frequency = j.value("frequency", c.frequency);
    c.separation = j.value("separation", c.separation);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.include_future = j.value("include_future", c.include_future);
    c.seed = j.value("seed", c.seed);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

Json GenConfig::to_json() const {
  Json j;
  j["num_events"] = num_events;
  j["samples_per_event"] = samples_per_event;
  j["fake_fraction"] = fake_fraction;
  j["d_t"] = d_t;
  j["d_v"] = d_v;
  j["class_std"] = class_std;
  j["real_mean"] = real_mean;
  j["fake_base"] = fake_base;
  j["velocity"] = velocity;
  j["drift_kind"] = drift_kind == DriftKind::kLinear ? "linear" : "sinusoidal";
  j["frequency"] = frequency;
  j["separation"] = separation;
  j["test_fraction"] = test_fraction;
  j["include_future"] = include_future;
  j["seed"] = seed;
  return j;
}

StreamData generate(const GenConfig& config) {
  config.validate();
  const std::size_t d = config.d_t + config.d_v;
  const int total_events = config.num_events + (config.include_future ? 1 : 0);

  DriftRecord truth;
  truth.kind = config.drift_kind;
  truth.class_std = config.class_std;
  truth.real_mean = broadcast(config.real_mean, d, "real_mean");
  truth.fake_base = broadcast(config.fake_base, d, "fake_base");
  truth.velocity = broadcast(config.velocity, d, "velocity");
  truth.frequency = config.frequency;
  for (int k = 1; k <= total_events; ++k) {
    std::vector<double> off(d, 0.0);
    if (config.separation > 0.0) {
      Rng rng(derive_seed(config.seed, SeedPurpose::kOffsets, static_cast<std::uint64_t>(k)));
      std::normal_distribution<double> normal(0.0, 1.0);
      double norm = 0.0;
      while (norm < 1e-9) {
        norm = 0.0;
        for (double& v : off) {
          v = normal(rng);
          norm += v * v;
        }
        norm = std::sqrt(norm);
      }
      for (double& v : off) v *= config.separation / norm;
    }
    truth.offsets.push_back(std::move(off));
  }

  StreamData out;
  out.manifest.d_t = config.d_t;
  out.manifest.d_v = config.d_v;
  out.manifest.num_events = config.num_events;
  out.manifest.has_future = config.include_future;
  out.manifest.seed = config.seed;

  const std::size_t n = config.samples_per_event;
  const std::size_t n_fake = static_cast<std::size_t>(std::llround(config.fake_fraction * static_cast<double>(n)));
  for (int k = 1; k <= total_events; ++k) {
    const bool future = k > config.num_events;
    Rng rng(derive_seed(config.seed, SeedPurpose::kGenerate, static_cast<std::uint64_t>(k)));
    std::normal_distribution<double> normal(0.0, config.class_std);
    std::vector<int> labels(n, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_fake), 1);
    std::shuffle(labels.begin(), labels.end(), rng);

    // Stratified test selection.
    std::vector<Split> splits(n, future ? Split::kTest : Split::kTrain);
    if (!future) {
      for (int cls = 0; cls <= 1; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n; ++i)
          if (labels[i] == cls) idx.push_back(i);
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto n_test = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < n_test; ++i) splits[idx[i]] = Split::kTest;
      }
    }

    const std::vector<double> fake_mu = truth.fake_mean(k);
    for (std::size_t i = 0; i < n; ++i) {
      Sample s;
      s.event = k;
      s.t = k;
      s.y = labels[i];
      s.split = splits[i];
      const std::vector<double>& mu = s.y == 1 ? fake_mu : truth.real_mean;
      s.xt.resize(config.d_t);
      s.xv.resize(config.d_v);
      for (std::size_t j = 0; j < d; ++j) {
        const double v = mu[j] + normal(rng);
        if (j < config.d_t) {
          s.xt[j] = v;
        } else {
          s.xv[j - config.d_t] = v;
        }
      }
      out.samples.push_back(std::move(s));
    }
    out.manifest.counts.push_back(n);
  }
  out.manifest.ground_truth = std::move(truth);
  return out;
}

Json manifest_to_json(const StreamManifest& m) {
  Json j;
  j["format"] = kFormat;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["d_t"] = m.d_t;
  j["d_v"] = m.d_v;
  j["num_events"] = m.num_events;
  j["has_future"] = m.has_future;
  j["counts"] = m.counts;
  j["ground_truth"] = m.ground_truth ? drift_to_json(*m.ground_truth) : Json(nullptr);
  return j;
}

StreamManifest manifest_from_json(const Json& j) {
  if (j.value("format", std::string()) != kFormat) throw ValidationError("not a stream manifest");
  StreamManifest m;
  m.version = j.at("version").get<int>();
  if (m.version != 1) throw ValidationError("unsupported stream version " + std::to_string(m.version));
  m.seed = j.at("seed").get<std::uint64_t>();
  m.d_t = j.at("d_t").get<std::size_t>();
  m.d_v = j.at("d_v").get<std::size_t>();
  m.num_events = j.at("num_events").get<int>();
  m.has_future = j.at("has_future").get<bool>();
  m.counts = j.at("counts").get<std::vector<std::size_t>>();
  if (!j.at("ground_truth").is_null()) m.ground_truth = drift_from_json(j.at("ground_truth"));
  if (m.num_events < 1) throw ValidationError("manifest num_events must be at least 1");
  if (m.counts.size() != static_cast<std::size_t>(m.last_event())) {
    throw ValidationError("manifest counts length does not match the number of events");
  }
  return m;
}

std::string serialize(const StreamData& stream) {
  std::string out = dump_json(manifest_to_json(stream.manifest));
  out += '\n';
  for (const Sample& s : stream.samples) {
    out += "{\"e\":" + std::to_string(s.event) + ",\"t\":" + std::to_string(s.t) +
           ",\"y\":" + std::to_string(s.y) + ",\"xt\":";
    append_array(out, s.xt);
    out += ",\"xv\":";
    append_array(out, s.xv);
    out += ",\"split\":\"";
    out += to_string(s.split);
    out += "\"}\n";
  }
  return out;
}

StreamData parse_stream(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  StreamData out;
  if (!std::getline(in, line) || line.empty()) throw ParseError("missing manifest", 1);
  try {
    out.manifest = manifest_from_json(Json::parse(line));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what(), 1);
  }
  const StreamManifest& m = out.manifest;
  std::vector<std::size_t> seen(m.counts.size(), 0);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw ParseError("empty record", line_no);
    Sample s = parse_sample(line, line_no);
    if (s.event < 1 || s.event > m.last_event()) {
      throw ValidationError("line " + std::to_string(line_no) + ": event " + std::to_string(s.event) +
                            " outside manifest range 1.." + std::to_string(m.last_event()));
    }
    if (s.t != s.event) throw ValidationError("line " + std::to_string(line_no) + ": temporal label differs from event");
    if (s.y != 0 && s.y != 1) throw ValidationError("line " + std::to_string(line_no) + ": label must be 0 or 1");
    if (s.xt.size() != m.d_t || s.xv.size() != m.d_v) {
      throw ValidationError("line " + std::to_string(line_no) + ": feature dimensions disagree with manifest");
    }
    if (s.event > m.num_events && s.split != Split::kTest) {
      throw ValidationError("line " + std::to_string(line_no) + ": future event samples must be test-only");
    }
    seen[static_cast<std::size_t>(s.event - 1)] += 1;
    out.samples.push_back(std::move(s));
  }
  if (seen != m.counts) throw ValidationError("per-event record counts disagree with manifest");
  return out;
}

StreamData load_stream(const std::filesystem::path& path) { return parse_stream(read_file(path)); }

void save_stream(const StreamData& stream, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(stream));
}

std::vector<EventSplit> partition(const StreamData& stream) {
  std::vector<EventSplit> events(static_cast<std::size_t>(stream.manifest.last_event()));
  for (std::size_t k = 0; k < events.size(); ++k) events[k].event = static_cast<int>(k + 1);
  for (const Sample& s : stream.samples) {
    EventSplit& e = events[static_cast<std::size_t>(s.event - 1)];
    (s.split == Split::kTrain ? e.train : e.test).push_back(&s);
  }
  return events;
}

std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (n == 0) throw InputError("batch_iter: empty dataset");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(start),
                               order.begin() + static_cast<std::ptrdiff_t>(end));
    if (b.size() < 2 && !batches.empty()) {
      batches.back().insert(batches.back().end(), b.begin(), b.end());
    } else {
      batches.push_back(std::move(b));
    }
  }
  return batches;
}

std::uint64_t epoch_seed(std::uint64_t global_seed, int event, int epoch) {
  return derive_seed(global_seed, SeedPurpose::kEpoch, static_cast<std::uint64_t>(event),
                     static_cast<std::uint64_t>(epoch));
}

}  // namespace cmmd
