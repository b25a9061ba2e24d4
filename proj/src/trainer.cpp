#include "selgan/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include "selgan/checkpoint.hpp"
#include "selgan/fpenv.hpp"

namespace selgan {

AdamOptions adam_options(const TrainConfig& config) {
  return {config.learning_rate, config.adam_beta1, config.adam_beta2, 1e-8};
}

TrainState::TrainState(const TrainConfig& cfg)
    : config(cfg),
      model(cfg),
      generator_optimizer(model.generator_parameters(), adam_options(cfg)),
      discriminator_optimizer(model.discriminator_parameters(), adam_options(cfg)) {}

namespace {

class FreezeGuard {
 public:
  explicit FreezeGuard(ParameterList<float> params) : params_(std::move(params)) {
    set_requires_grad(params_, false);
  }
  ~FreezeGuard() { set_requires_grad(params_, true); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterList<float> params_;
};

void require_finite(const std::string& term, double value) {
  if (!std::isfinite(value)) throw NumericsError(term, value);
}

}  // namespace

GeneratorStepOutput generator_step(TrainState& state, const Batch& batch) {
  const SelectionGan<float>& model = state.model;
  const LossWeights weights = state.config.effective_weights();
  FreezeGuard frozen(model.discriminator_parameters());

  const Var<float> source(batch.source);
  const Var<float> guidance(batch.guidance);
  const Var<float> target(batch.target);
  const ModelOutputs<float> out = model.forward(source, guidance);

  const auto& disc = model.discriminator();
  const Var<float> none;
  Var<float> gan1 = gan_loss(none, disc.discriminate(source, out.stage1.image), GanSide::generator);
  Var<float> gan2;
  if (out.image2.defined()) {
    gan2 = gan_loss(none, disc.discriminate(source, out.image2), GanSide::generator);
  }
  const Var<float> gan = combined_gan_loss(gan1, gan2, weights.lambda_gan2);

  GeneratorPredictions<float> pred{out.stage1.image, out.stage1.guidance, out.image2, out.guidance2,
                                   out.uncertainty};
  Objective<float> objective = total_objective(pred, target, guidance, weights, gan,
                                               ObjectiveOptions{state.config.uncertainty_stage1});
  for (const auto& [name, value] : objective.breakdown.terms) require_finite(name, value);
  require_finite("total", objective.breakdown.total);

  state.generator_optimizer.zero_grad();
  objective.total.backward();
  state.generator_optimizer.step();
  state.generator_optimizer.zero_grad();

  GeneratorStepOutput result;
  result.breakdown = std::move(objective.breakdown);
  result.fake1 = out.stage1.image.detach();
  if (out.image2.defined()) result.fake2 = out.image2.detach();
  return result;
}

double discriminator_step(TrainState& state, const Batch& batch, const GeneratorStepOutput& fakes) {
  const auto& disc = state.model.discriminator();
  const double lambda = state.config.effective_weights().lambda_gan2;
  const Var<float> source(batch.source);
  const Var<float> target(batch.target);

  const Var<float> real = disc.discriminate(source, target);
  Var<float> d1 = gan_loss(real, disc.discriminate(source, fakes.fake1), GanSide::discriminator);
  Var<float> d2;
  if (fakes.fake2.defined()) {
    d2 = gan_loss(real, disc.discriminate(source, fakes.fake2), GanSide::discriminator);
  }
  Var<float> loss = combined_gan_loss(d1, d2, lambda);
  const double value = loss.item();
  require_finite("discriminator", value);

  state.discriminator_optimizer.zero_grad();
  loss.backward();
  state.discriminator_optimizer.step();
  state.discriminator_optimizer.zero_grad();
  return value;
}

StepResult train_step(TrainState& state, const Batch& batch) {
  FlushDenormals ftz;
  StepResult result;
  result.iteration = state.iteration;
  GeneratorStepOutput g = generator_step(state, batch);
  result.discriminator = discriminator_step(state, batch, g);
  result.generator = std::move(g.breakdown);
  ++state.iteration;
  return result;
}

// ---------------------------------------------------------------------------
// Sampling and augmentation

BatchSampler::BatchSampler(std::size_t count, int batch_size, std::uint64_t seed)
    : count_(count), batch_size_(batch_size), seed_(seed) {
  if (count == 0) throw ConfigError("cannot sample batches from an empty training set");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

std::vector<std::size_t> BatchSampler::permutation(std::int64_t epoch) const {
  std::vector<std::size_t> order(count_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5A3Bu};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = count_; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::vector<std::size_t> BatchSampler::indices(std::int64_t iteration) const {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size_));
  std::int64_t position = iteration * batch_size_;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> order;
  for (int k = 0; k < batch_size_; ++k, ++position) {
    const std::int64_t epoch = position / static_cast<std::int64_t>(count_);
    if (epoch != cached_epoch) {
      order = permutation(epoch);
      cached_epoch = epoch;
    }
    out.push_back(order[static_cast<std::size_t>(position % static_cast<std::int64_t>(count_))]);
  }
  return out;
}

namespace {

Tensor<float> flip_horizontal(const Tensor<float>& chw) {
  const std::int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor<float> out(chw.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < h; ++y) {
      const float* src = chw.data() + (ch * h + y) * w;
      float* dst = out.data() + (ch * h + y) * w;
      for (std::int64_t x = 0; x < w; ++x) dst[x] = src[w - 1 - x];
    }
  }
  return out;
}

// Equivalent to replicate-padding by `pad` and cropping at (pad+dy, pad+dx).
Tensor<float> shift_replicate(const Tensor<float>& chw, int dy, int dx) {
  const std::int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor<float> out(chw.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t sy = std::clamp<std::int64_t>(y + dy, 0, h - 1);
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sx = std::clamp<std::int64_t>(x + dx, 0, w - 1);
        out.data()[(ch * h + y) * w + x] = chw.data()[(ch * h + sy) * w + sx];
      }
    }
  }
  return out;
}

}  // namespace

GuidedSample augment(const GuidedSample& sample, const TrainConfig& config, std::int64_t iteration,
                     std::size_t slot) {
  if (!config.flip && config.crop_pad == 0) return sample;
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(iteration >> 32),
                    static_cast<std::uint32_t>(slot), 0xA06Eu};
  std::mt19937_64 rng(seq);
  const bool flip = config.flip && (rng() & 1u);
  const std::uint64_t span = 2 * static_cast<std::uint64_t>(config.crop_pad) + 1;
  const int dy = static_cast<int>(rng() % span) - config.crop_pad;
  const int dx = static_cast<int>(rng() % span) - config.crop_pad;

  GuidedSample out{sample.id, sample.source, sample.guidance, sample.target};
  for (Tensor<float>* t : {&out.source, &out.guidance, &out.target}) {
    if (dy != 0 || dx != 0) *t = shift_replicate(*t, dy, dx);
    if (flip) *t = flip_horizontal(*t);
  }
  return out;
}

Batch training_batch(const std::vector<GuidedSample>& samples, const BatchSampler& sampler,
                     const TrainConfig& config, std::int64_t iteration) {
  const auto idx = sampler.indices(iteration);
  std::vector<GuidedSample> augmented;
  augmented.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) augmented.push_back(augment(samples[idx[k]], config, iteration, k));
  std::vector<const GuidedSample*> ptrs;
  for (const auto& s : augmented) ptrs.push_back(&s);
  return stack(ptrs);
}

DataSplit split_holdout(std::vector<GuidedSample> samples, int holdout) {
  if (holdout < 0) throw ConfigError("holdout must be non-negative");
  if (static_cast<std::size_t>(holdout) >= samples.size()) {
    throw ConfigError("holdout " + std::to_string(holdout) + " leaves no training samples out of " +
                      std::to_string(samples.size()));
  }
  DataSplit split;
  const auto cut = samples.end() - holdout;
  split.heldout.assign(std::make_move_iterator(cut), std::make_move_iterator(samples.end()));
  samples.erase(cut, samples.end());
  split.train = std::move(samples);
  return split;
}

DataSplit load_split(const TrainConfig& config, const std::filesystem::path& root) {
  const DatasetManifest manifest = read_manifest(root);
  if (manifest.height != config.image_size || manifest.width != config.image_size) {
    throw ConfigError("dataset images are " + std::to_string(manifest.height) + "x" +
                      std::to_string(manifest.width) + " but image_size is " + std::to_string(config.image_size));
  }
  const int channels = config.one_hot_guidance ? static_cast<int>(guidance_palette().size()) : 3;
  if (channels != config.guidance_channels) {
    throw ConfigError("guidance_channels must be " + std::to_string(channels) +
                      (config.one_hot_guidance ? " with one_hot_guidance" : " for colour guidance"));
  }
  return split_holdout(load_dataset(manifest, config.one_hot_guidance), config.holdout);
}

// ---------------------------------------------------------------------------
// Logging

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> columns{
      "iteration",       "pixel_image1", "pixel_guidance1", "pixel_image2", "pixel_guidance2",
      "gan",             "tv",           "total",           "discriminator"};
  return columns;
}

void write_csv_header(std::ostream& out) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
}

void write_csv_row(std::ostream& out, const StepResult& step) {
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out << ',' << buf;
  };
  out << step.iteration;
  const auto& cols = csv_columns();
  for (std::size_t i = 1; i + 2 < cols.size(); ++i) {
    double v = 0.0;
    for (const auto& [name, value] : step.generator.terms) {
      if (name == cols[i]) v = value;
    }
    put(v);
  }
  put(step.generator.total);
  put(step.discriminator);
  out << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

Tensor<float> sample_of(const Tensor<float>& batch, std::int64_t i) {
  const std::int64_t per = batch.numel() / batch.dim(0);
  Tensor<float> out({batch.dim(1), batch.dim(2), batch.dim(3)});
  std::copy_n(batch.data() + i * per, per, out.data());
  return out;
}

void accumulate(metrics::ImageScores& acc, const metrics::ImageScores& s) {
  acc.ssim += s.ssim;
  acc.psnr += s.psnr;
  acc.sd += s.sd;
}

metrics::ImageScores divided(metrics::ImageScores s, double n) {
  if (n > 0) {
    s.ssim /= n;
    s.psnr /= n;
    s.sd /= n;
  }
  return s;
}

}  // namespace

EvalReport evaluate(const SelectionGan<float>& model, const std::vector<GuidedSample>& samples,
                    int batch_size) {
  if (batch_size < 1) throw ConfigError("evaluation batch size must be >= 1");
  NoGradGuard no_grad;
  FlushDenormals ftz;
  EvalReport report;
  for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const GuidedSample*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&samples[i]);
    const Batch batch = stack(ptrs);
    const auto out = model.forward(Var<float>(batch.source), Var<float>(batch.guidance));
    for (std::int64_t i = 0; i < batch.size(); ++i) {
      const auto truth = metrics::to_pixel_domain(sample_of(batch.target, i));
      ImageEval e;
      e.id = batch.ids[static_cast<std::size_t>(i)];
      e.stage1 = metrics::score(metrics::to_pixel_domain(sample_of(out.stage1.image.value(), i)), truth);
      e.stage2 = out.image2.defined()
                     ? metrics::score(metrics::to_pixel_domain(sample_of(out.image2.value(), i)), truth)
                     : e.stage1;
      accumulate(report.stage1, e.stage1);
      accumulate(report.stage2, e.stage2);
      report.images.push_back(std::move(e));
    }
  }
  const double n = static_cast<double>(report.images.size());
  report.stage1 = divided(report.stage1, n);
  report.stage2 = divided(report.stage2, n);
  return report;
}

nlohmann::ordered_json to_json(const metrics::ImageScores& s) {
  return {{"ssim", s.ssim}, {"psnr", s.psnr}, {"sd", s.sd}};
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j = to_json(report.stage2);
  j["count"] = report.images.size();
  j["stage1"] = to_json(report.stage1);
  j["stage2"] = to_json(report.stage2);
  return j;
}

// ---------------------------------------------------------------------------
// Runs

RunResult run_training(TrainState& state, const std::vector<GuidedSample>& train,
                       const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig& cfg = state.config;
  const BatchSampler sampler(train.size(), cfg.batch_size, cfg.seed);

  std::ofstream csv;
  std::filesystem::path checkpoint_path;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    if (ec) throw FileError("cannot create output directory " + options.out_dir.string() + ": " + ec.message());
    const auto csv_path = options.out_dir / "train_log.csv";
    const bool fresh = state.iteration == 0 || !std::filesystem::exists(csv_path);
    csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw FileError("cannot write " + csv_path.string());
    if (fresh) write_csv_header(csv);
    checkpoint_path = options.out_dir / "checkpoint.bin";
  }

  RunResult result;
  while (state.iteration < cfg.iterations) {
    const Batch batch = training_batch(train, sampler, cfg, state.iteration);
    StepResult step = train_step(state, batch);
    if (csv.is_open()) {
      write_csv_row(csv, step);
      csv.flush();
    }
    if (options.progress && options.progress_every > 0 &&
        (state.iteration % options.progress_every == 0 || state.iteration == cfg.iterations)) {
      char line[160];
      std::snprintf(line, sizeof line, "iter %lld/%d  G %.4f  D %.4f\n",
                    static_cast<long long>(state.iteration), cfg.iterations, step.generator.total,
                    step.discriminator);
      *options.progress << line << std::flush;
    }
    if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) {
      save_checkpoint(checkpoint_path, state);
    }
    result.log.push_back(std::move(step));
  }
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, state);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

AblationRecord run_ablation(AblationLevel level, const TrainConfig& base, const DataSplit& split,
                            const RunOptions& options) {
  TrainConfig cfg = base;
  cfg.ablation_level = level;
  TrainState state(cfg);
  const RunResult run = run_training(state, split.train, options);
  AblationRecord record;
  record.level = level;
  record.generations = cfg.effective_generations();
  record.eval = evaluate(state.model, split.heldout);
  if (!run.log.empty()) record.final_losses = run.log.back().generator;
  record.seconds = run.seconds;
  return record;
}

std::vector<AblationRecord> run_generation_sweep(const std::vector<int>& generations,
                                                 const TrainConfig& base, const DataSplit& split,
                                                 const RunOptions& options) {
  std::vector<AblationRecord> records;
  for (int n : generations) {
    TrainConfig cfg = base;
    cfg.attention_channels = n;
    RunOptions run_options = options;
    if (!options.out_dir.empty()) run_options.out_dir = options.out_dir / ("N" + std::to_string(n));
    records.push_back(run_ablation(cfg.ablation_level, cfg, split, run_options));
  }
  return records;
}

nlohmann::ordered_json to_json(const AblationRecord& r) {
  nlohmann::ordered_json j;
  j["level"] = std::string(1, to_char(r.level));
  j["generations"] = r.generations;
  j["metrics"] = to_json(r.eval);
  nlohmann::ordered_json losses;
  for (const auto& [name, value] : r.final_losses.terms) losses[name] = value;
  losses["total"] = r.final_losses.total;
  j["final_losses"] = losses;
  j["seconds"] = r.seconds;
  return j;
}

std::string format_table(const std::vector<AblationRecord>& records, const std::string& key_name) {
  std::string out = "| " + key_name +
                    " | SSIM I | PSNR I | SD I | SSIM II | PSNR II | SD II | seconds |\n"
                    "|---|---|---|---|---|---|---|---|\n";
  char line[256];
  for (const auto& r : records) {
    const std::string key = key_name == "N" ? std::to_string(r.generations) : std::string(1, to_char(r.level));
    std::snprintf(line, sizeof line, "| %s | %.4f | %.3f | %.3f | %.4f | %.3f | %.3f | %.0f |\n", key.c_str(),
                  r.eval.stage1.ssim, r.eval.stage1.psnr, r.eval.stage1.sd, r.eval.stage2.ssim,
                  r.eval.stage2.psnr, r.eval.stage2.sd, r.seconds);
    out += line;
  }
  return out;
}

}  // namespace selgan
