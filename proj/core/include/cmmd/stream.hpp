#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cmmd/json_io.hpp"

namespace cmmd {

enum class Split { kTrain, kTest };

const char* to_string(Split s);

// One stream record. Feature vectors are raw per-modality inputs.
struct Sample {
  int event = 1;
  int t = 1;  // temporal label, always equal to event
  int y = 0;  // 1 = fake
  std::vector<double> xt;
  std::vector<double> xv;
  Split split = Split::kTrain;
};

enum class DriftKind { kLinear, kSinusoidal };

// Ground truth recorded by the generator. All vectors live in the
// concatenated [xt | xv] feature space.
struct DriftRecord {
  DriftKind kind = DriftKind::kLinear;
  double class_std = 1.0;
  std::vector<double> real_mean;
  std::vector<double> fake_base;
  // Per-event velocity (linear) or amplitude (sinusoidal).
  std::vector<double> velocity;
  double frequency = 0.0;
  // offsets[k - 1] is the offset of event k, including the future event.
  std::vector<std::vector<double>> offsets;

  // Fake-class mean of event k in [xt | xv] space.
  std::vector<double> fake_mean(int event) const;
};

struct StreamManifest {
  int version = 1;
  std::size_t d_t = 0;
  std::size_t d_v = 0;
  int num_events = 0;
  // When set, event num_events + 1 is a test-only future event.
  bool has_future = false;
  // One entry per event, including the future event when present.
  std::vector<std::size_t> counts;
  std::optional<DriftRecord> ground_truth;
  std::uint64_t seed = 0;

  int last_event() const { return num_events + (has_future ? 1 : 0); }
};

struct StreamData {
  StreamManifest manifest;
  std::vector<Sample> samples;
};

struct GenConfig {
  int num_events = 4;
  std::size_t samples_per_event = 500;
  double fake_fraction = 0.5;
  std::size_t d_t = 8;
  std::size_t d_v = 8;
  double class_std = 1.0;
  // Length d_t + d_v; a single value is broadcast.
  std::vector<double> real_mean{-0.5};
  std::vector<double> fake_base{0.5};
  std::vector<double> velocity{0.0};
  DriftKind drift_kind = DriftKind::kLinear;
  double frequency = 1.0;
  double separation = 0.0;
  double test_fraction = 0.2;
  bool include_future = false;
  std::uint64_t seed = 1;

  void validate() const;
  static GenConfig from_json(const Json& j);
  Json to_json() const;
};

StreamData generate(const GenConfig& config);

// Line 1 is the manifest, then one record per sample. Numbers carry 17
// significant digits.
std::string serialize(const StreamData& stream);
StreamData parse_stream(const std::string& text);
StreamData load_stream(const std::filesystem::path& path);
void save_stream(const StreamData& stream, const std::filesystem::path& path);

Json manifest_to_json(const StreamManifest& m);
StreamManifest manifest_from_json(const Json& j);

// Per-event views into a stream, preserving file order.
struct EventSplit {
  int event = 0;
  std::vector<const Sample*> train;
  std::vector<const Sample*> test;
};

// Index k - 1 holds event k; the future event, when present, is last.
std::vector<EventSplit> partition(const StreamData& stream);

// Shuffled index batches for one epoch. A trailing batch with fewer than two
// samples is merged into its predecessor.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed);

std::uint64_t epoch_seed(std::uint64_t global_seed, int event, int epoch);

}  // namespace cmmd
