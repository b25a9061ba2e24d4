#pragma once

// Alternating adversarial optimisation, deterministic batch sampling,
// held-out evaluation and the ablation / N-sweep runners.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "selgan/datamodel.hpp"
#include "selgan/metrics.hpp"
#include "selgan/model.hpp"
#include "selgan/optimizer.hpp"

namespace selgan {

AdamOptions adam_options(const TrainConfig& config);

/// Model plus both optimisers. Optimisers hold handles into the model's
/// parameters, so the state is move-only.
struct TrainState {
  explicit TrainState(const TrainConfig& config);
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;
  TrainState(TrainState&&) = default;
  TrainState& operator=(TrainState&&) = default;

  TrainConfig config;
  SelectionGan<float> model;
  Adam<float> generator_optimizer;
  Adam<float> discriminator_optimizer;
  std::int64_t iteration = 0;
};

struct StepResult {
  std::int64_t iteration = 0;   ///< index of the step just taken, from 0
  LossBreakdown generator;      ///< weighted generator terms and their total
  double discriminator = 0.0;   ///< discriminator objective
};

/// Fakes produced by the generator half-step, detached for the discriminator.
struct GeneratorStepOutput {
  LossBreakdown breakdown;
  Var<float> fake1;
  Var<float> fake2;  ///< undefined without stage II
};

/// One descent step on all generator-side parameters with the discriminator
/// frozen. Throws NumericsError naming the first non-finite term; parameters
/// are untouched in that case.
GeneratorStepOutput generator_step(TrainState& state, const Batch& batch);
/// One descent step on the discriminator; generator parameters are not read
/// for gradients and never written.
double discriminator_step(TrainState& state, const Batch& batch, const GeneratorStepOutput& fakes);
/// generator_step then discriminator_step, then advances the iteration counter.
StepResult train_step(TrainState& state, const Batch& batch);

/// Epoch-wise shuffling whose output is a pure function of (seed, iteration).
class BatchSampler {
 public:
  BatchSampler(std::size_t count, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> indices(std::int64_t iteration) const;

 private:
  std::vector<std::size_t> permutation(std::int64_t epoch) const;

  std::size_t count_;
  int batch_size_;
  std::uint64_t seed_;
};

/// Horizontal flip and replicate-pad random crop, applied identically to
/// source, guidance and target. Deterministic in (seed, iteration, slot).
GuidedSample augment(const GuidedSample& sample, const TrainConfig& config, std::int64_t iteration,
                     std::size_t slot);

Batch training_batch(const std::vector<GuidedSample>& samples, const BatchSampler& sampler,
                     const TrainConfig& config, std::int64_t iteration);

struct DataSplit {
  std::vector<GuidedSample> train;
  std::vector<GuidedSample> heldout;
};

/// The last `holdout` samples are held out. Throws ConfigError unless at
/// least one training sample remains.
DataSplit split_holdout(std::vector<GuidedSample> samples, int holdout);

/// Loads `root` per the config (one-hot or colour guidance) and splits off the
/// hold-out. ConfigError when the dataset's image size or guidance channel
/// count disagrees with the config.
DataSplit load_split(const TrainConfig& config, const std::filesystem::path& root);

/// Fixed CSV columns; terms absent at a level are written as 0.
const std::vector<std::string>& csv_columns();
void write_csv_header(std::ostream& out);
void write_csv_row(std::ostream& out, const StepResult& step);

struct ImageEval {
  std::string id;
  metrics::ImageScores stage1;
  metrics::ImageScores stage2;
};

struct EvalReport {
  std::vector<ImageEval> images;
  metrics::ImageScores stage1;  ///< means over images
  metrics::ImageScores stage2;  ///< equal to stage1 at levels without stage II
};

/// Scores I_g' and I_g'' against the targets after 8-bit requantisation.
EvalReport evaluate(const SelectionGan<float>& model, const std::vector<GuidedSample>& samples,
                    int batch_size = 8);

nlohmann::ordered_json to_json(const metrics::ImageScores& scores);
/// {ssim, psnr, sd} of the final stage plus per-stage blocks and the image count.
nlohmann::ordered_json to_json(const EvalReport& report);

struct RunOptions {
  std::filesystem::path out_dir;  ///< empty keeps the run in memory
  std::ostream* progress = nullptr;
  int progress_every = 100;
};

struct RunResult {
  std::vector<StepResult> log;
  double seconds = 0.0;
};

/// Runs `config.iterations - state.iteration` steps. With an output directory
/// it appends to train_log.csv and writes checkpoint.bin every
/// checkpoint_every steps and at the end. A NumericsError propagates after
/// the last good checkpoint has been kept.
RunResult run_training(TrainState& state, const std::vector<GuidedSample>& train,
                       const RunOptions& options = {});

struct AblationRecord {
  AblationLevel level = AblationLevel::H;
  int generations = 1;
  EvalReport eval;
  LossBreakdown final_losses;
  double seconds = 0.0;
};

/// Trains `base` with its ablation level overridden and evaluates on `split.heldout`.
AblationRecord run_ablation(AblationLevel level, const TrainConfig& base, const DataSplit& split,
                            const RunOptions& options = {});

/// Trains level `base.ablation_level` once per N in `generations`.
std::vector<AblationRecord> run_generation_sweep(const std::vector<int>& generations,
                                                 const TrainConfig& base, const DataSplit& split,
                                                 const RunOptions& options = {});

nlohmann::ordered_json to_json(const AblationRecord& record);
/// Markdown table with one row per record.
std::string format_table(const std::vector<AblationRecord>& records, const std::string& key_name);

}  // namespace selgan
