#pragma once

// AdamW, batch sampling, the training loop and JSON checkpoints.

#include "umsd/io.hpp"
#include "umsd/losses.hpp"
#include "umsd/params.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace umsd {

struct AdamWConfig {
  double lr = 1e-3;  // 1e-6 for full-scale runs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;

  void validate() const;
  bool operator==(const AdamWConfig&) const = default;
};

struct OptimizerState {
  ParamSet m;
  ParamSet v;
  long step = 0;

  static OptimizerState zeros_like(const ParamSet& params);
  bool operator==(const OptimizerState&) const = default;
};

/// Decoupled weight decay with bias-corrected moments:
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
void adamw_step(ParamSet& params, const ParamSet& grads, OptimizerState& state,
                const AdamWConfig& config);

/// Fractions of the three batch pairing policies; they must sum to 1.
struct PairingPolicy {
  double random = 0.5;
  double same_style = 0.25;
  double same_content = 0.25;

  void validate() const;
  bool operator==(const PairingPolicy&) const = default;
};

struct TrainConfig {
  ModelConfig model;
  ScheduleKind schedule = ScheduleKind::kCosine;
  LossWeights weights;
  ContactThresholds contact;
  AdamWConfig optimizer;
  PairingPolicy pairing;
  int steps = 2000;
  int batch_size = 4;
  /// Frames per training window, for both streams.
  int window = 32;
  /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
  int eval_every = 500;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// JSON form with sections model, diffusion, loss, optimizer, train.
/// Missing fields keep their defaults; unknown fields are FormatErrors.
TrainConfig parse_train_config(std::string_view json_text);
std::string serialize_train_config(const TrainConfig& config);
/// Hash of the fields that fix the parameter layout and the diffusion
/// process, used to reject incompatible checkpoints.
std::string model_hash(const TrainConfig& config);
std::string config_hash(const TrainConfig& config);

/// One (content, style) pair drawn for a batch.
struct PairChoice {
  std::size_t content = 0;
  std::size_t style = 0;
  Index content_start = 0;
  Index style_start = 0;
};

/// Labels and lengths of the clips a batch is drawn from.
struct ClipIndex {
  std::vector<int> content_labels;
  std::vector<int> style_labels;
  std::vector<Index> frames;
};

/// Draws `batch` pairs: with probability policy.random any two clips, then
/// a style clip sharing the content clip's style label, then one sharing its
/// content label. Window starts are uniform over each clip's valid range.
std::vector<PairChoice> sample_pairs(const ClipIndex& clips, int batch, Index window,
                                     const PairingPolicy& policy, Rng& rng);

/// Training pairs in tensor form, root canonicalized to the window start.
LossInputs window_inputs(const Skeleton& skel, const ContentRepr& content,
                         const ContentRepr& style, const PairChoice& pair, Index window,
                         bool diffuse_root, const ContactThresholds& contact);

struct StepResult {
  LossReport report;
  ParamSet grads;
};

/// Batch-mean loss and gradient. Items get their own tape and random
/// stream (derived from seed and item index); up to `threads` items run
/// concurrently and gradients are summed in item order. Throws NumericError
/// on a non-finite loss.
StepResult loss_and_gradient(const ParamSet& params, const ModelConfig& model,
                             std::span<const LossInputs> batch, const LossWeights& weights,
                             const Skeleton& skel, const NoiseSchedule& schedule,
                             std::uint64_t seed, int threads = 1);

/// Worker count from UMSD_THREADS, defaulting to 1.
int thread_budget();

/// Runs f(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& f);

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  int schema_version = kCheckpointSchemaVersion;
  TrainConfig config;
  ParamSet params;
  OptimizerState optimizer;  // optimizer.step is the training step

  long step() const { return optimizer.step; }
  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on anything malformed or mismatched.
Checkpoint parse_checkpoint(std::string_view text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainRecord {
  long step = 0;
  LossReport loss;
  double wall_time = 0.0;  // seconds since the run started
};

std::string train_csv_header();
std::string train_csv_row(const TrainRecord& r);

struct TrainOptions {
  /// Where checkpoints and train_log.csv go; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Continue from this checkpoint instead of a fresh initialization.
  std::optional<Checkpoint> resume;
  int threads = 1;
  std::function<void(const TrainRecord&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainRecord> log;
};

/// Runs config.steps optimizer steps (counting from the resumed step).
TrainResult train(const Dataset& data, const TrainConfig& config, const TrainOptions& options = {});

/// Mean of the first and last `window` totals of a loss log.
struct LossTrend {
  double initial = 0.0;
  double final = 0.0;
};
LossTrend loss_trend(const std::vector<TrainRecord>& log, std::size_t window);

}  // namespace umsd
