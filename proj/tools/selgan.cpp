// selgan: dataset synthesis, training, evaluation, inference and self-checks.
//
// Exit codes: 0 success, 1 unexpected error, 2 invalid flags or config,
// 3 I/O or format error, 4 non-finite loss, 5 gradcheck failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "selgan/checkpoint.hpp"
#include "selgan/fpenv.hpp"
#include "selgan/gradcheck.hpp"
#include "selgan/trainer.hpp"

namespace fs = std::filesystem;
using namespace selgan;

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kUsage = 2, kIo = 3, kNumerics = 4, kGradcheck = 5 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  out << text;
  if (!out) throw FileError("failed writing " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FileError("cannot create " + dir.string() + ": " + ec.message());
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// TrainConfig flags: one option per config key, typed after the default value.

struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "JSON config file (flags override it)");
    const auto defaults = to_json(TrainConfig{});
    for (const auto& [key, value] : defaults.items()) {
      std::string help = "default " + value.dump();
      if (value.is_array()) help += " (comma-separated)";
      app.add_option("--" + key, values[key], help);
    }
    app.add_option("--ablation", values["ablation_level"], "alias of --ablation_level");
  }

  TrainConfig resolve(const CLI::App& app) const {
    TrainConfig cfg;
    if (!config_file.empty()) cfg = merge_config(cfg, read_json_file(config_file));
    const auto defaults = to_json(TrainConfig{});
    nlohmann::json overlay = nlohmann::json::object();
    for (const auto& [key, text] : values) {
      if (app.count("--" + key) == 0 && !(key == "ablation_level" && app.count("--ablation"))) continue;
      overlay[key] = parse_value(key, text, defaults.at(key));
    }
    cfg = merge_config(cfg, overlay);
    cfg.validate();
    return cfg;
  }

  static nlohmann::json parse_value(const std::string& key, const std::string& text,
                                    const nlohmann::ordered_json& like) {
    try {
      if (like.is_boolean()) {
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw ConfigError("--" + key + " expects true or false, got '" + text + "'");
      }
      if (like.is_number_unsigned()) {
        if (!text.empty() && text[0] == '-') throw ConfigError("--" + key + " must be non-negative");
        return std::stoull(text);
      }
      if (like.is_number_integer()) return std::stoll(text);
      if (like.is_number()) return std::stod(text);
      if (like.is_array()) {
        nlohmann::json arr = nlohmann::json::array();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (!item.empty()) arr.push_back(std::stoll(item));
        }
        return arr;
      }
      return text;
    } catch (const std::logic_error&) {
      throw ConfigError("--" + key + " has an invalid value '" + text + "'");
    }
  }
};

std::vector<int> parse_int_list(const std::string& text, const char* what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      if (!item.empty()) out.push_back(std::stoi(item));
    } catch (const std::logic_error&) {
      throw ConfigError(std::string(what) + " has an invalid entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + " is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Array dumps

// Minimal .npy (format 1.0) writer for little-endian float32 arrays.
void write_npy(const fs::path& path, const Shape& shape, const float* data) {
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) dims += std::to_string(shape[i]) + (shape.size() == 1 || i + 1 < shape.size() ? "," : "");
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + dims + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out << header;
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(numel(shape) * sizeof(float)));
  if (!out) throw FileError("failed writing " + path.string());
}

// Tiles maps [n,H,W] side by side; values in [0,1] become gray levels.
Image8 gray_grid(const float* maps, std::int64_t n, std::int64_t h, std::int64_t w) {
  Image8 img;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(w * n);
  img.rgb.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  for (std::int64_t k = 0; k < n; ++k) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double v = std::clamp<double>(maps[(k * h + y) * w + x], 0.0, 1.0);
        const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
        for (int c = 0; c < 3; ++c) img.at(static_cast<int>(y), static_cast<int>(k * w + x), c) = g;
      }
    }
  }
  return img;
}

// Tiles RGB generations [n,3,H,W] in [-1,1] side by side.
Image8 color_grid(const float* gens, std::int64_t n, std::int64_t h, std::int64_t w) {
  Image8 img;
  img.height = static_cast<int>(h);
  img.width = static_cast<int>(w * n);
  img.rgb.resize(static_cast<std::size_t>(img.height) * img.width * 3);
  for (std::int64_t k = 0; k < n; ++k) {
    for (int c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          img.at(static_cast<int>(y), static_cast<int>(k * w + x), c) =
              denormalize_pixel(gens[((k * 3 + c) * h + y) * w + x]);
        }
      }
    }
  }
  return img;
}

Tensor<float> slice_sample(const Tensor<float>& batch, std::int64_t i) {
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  Tensor<float> out(shape);
  std::copy_n(batch.data() + i * out.numel(), out.numel(), out.data());
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const fs::path& out, std::uint64_t seed, int count, int size) {
  SynthOptions options{seed, count, size, size};
  const DatasetManifest manifest = synth_dataset(out, options);
  std::printf("wrote %zu triples (%dx%d, seed %llu) to %s\n", manifest.entries.size(), size, size,
              static_cast<unsigned long long>(seed), out.string().c_str());
  return kOk;
}

int cmd_train(const TrainConfig& cfg, const fs::path& data, const fs::path& out, bool quiet) {
  const DataSplit split = load_split(cfg, data);
  make_dirs(out);
  write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
  TrainState state(cfg);
  RunOptions options;
  options.out_dir = out;
  options.progress = quiet ? nullptr : &std::cerr;
  const RunResult run = run_training(state, split.train, options);
  const EvalReport report = evaluate(state.model, split.heldout);
  nlohmann::ordered_json metrics = to_json(report);
  metrics["ablation_level"] = std::string(1, to_char(cfg.ablation_level));
  metrics["iterations"] = state.iteration;
  metrics["seconds"] = run.seconds;
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  std::printf("trained %lld iterations in %.1fs; held-out SSIM %.4f PSNR %.3f SD %.3f (stage I SSIM %.4f)\n",
              static_cast<long long>(state.iteration), run.seconds, report.stage2.ssim, report.stage2.psnr,
              report.stage2.sd, report.stage1.ssim);
  return kOk;
}

const std::vector<GuidedSample>& pick_split(const DataSplit& split, std::vector<GuidedSample>& all,
                                            const std::string& which) {
  if (which == "heldout") return split.heldout;
  if (which == "train") return split.train;
  all = split.train;
  all.insert(all.end(), split.heldout.begin(), split.heldout.end());
  return all;
}

int cmd_eval_checkpoint(const fs::path& checkpoint, const fs::path& data, const std::string& which,
                        const fs::path& out) {
  TrainState state = load_checkpoint(checkpoint);
  const DataSplit split = load_split(state.config, data);
  std::vector<GuidedSample> all;
  const EvalReport report = evaluate(state.model, pick_split(split, all, which));
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  for (const auto& e : report.images) {
    nlohmann::ordered_json row = {{"id", e.id}, {"ssim", e.stage2.ssim}, {"psnr", e.stage2.psnr}, {"sd", e.stage2.sd},
           {"stage1", to_json(e.stage1)}};
    j["images"].push_back(row);
  }
  j["aggregate"] = to_json(report);
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return kOk;
}

int cmd_eval_predictions(const fs::path& predictions, const fs::path& data, const fs::path& out) {
  const DatasetManifest manifest = read_manifest(data);
  nlohmann::ordered_json j;
  j["images"] = nlohmann::ordered_json::array();
  metrics::ImageScores sum;
  int count = 0;
  for (const auto& entry : manifest.entries) {
    const fs::path pred_path = predictions / (entry.id + ".png");
    if (!fs::exists(pred_path)) continue;
    const auto truth = metrics::to_pixel_domain(image_to_tensor(read_png(manifest.root / entry.target_path)));
    const auto pred = metrics::to_pixel_domain(image_to_tensor(read_png(pred_path)));
    if (pred.shape() != truth.shape()) {
      throw ShapeError("prediction " + pred_path.string() + " has shape " + to_string(pred.shape()) +
                       ", target " + to_string(truth.shape()));
    }
    const auto s = metrics::score(pred, truth);
    j["images"].push_back({{"id", entry.id}, {"ssim", s.ssim}, {"psnr", s.psnr}, {"sd", s.sd}});
    sum.ssim += s.ssim;
    sum.psnr += s.psnr;
    sum.sd += s.sd;
    ++count;
  }
  if (count == 0) throw FileError("no predictions named <id>.png found in " + predictions.string());
  j["aggregate"] = {{"ssim", sum.ssim / count}, {"psnr", sum.psnr / count}, {"sd", sum.sd / count}, {"count", count}};
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return kOk;
}

struct InferFlags {
  bool attention = false;
  bool uncertainty = false;
  bool generations = false;
};

int cmd_infer(const fs::path& checkpoint, const fs::path& data, const std::string& which, const fs::path& out,
              const InferFlags& dumps) {
  TrainState state = load_checkpoint(checkpoint);
  const DataSplit split = load_split(state.config, data);
  std::vector<GuidedSample> all;
  const auto& samples = pick_split(split, all, which);
  make_dirs(out);
  const bool stage2 = state.model.has_stage2();
  if ((dumps.attention || dumps.uncertainty || dumps.generations) && !stage2) {
    throw ConfigError("ablation level " + std::string(1, to_char(state.config.ablation_level)) +
                      " has no selection stage to dump");
  }
  if (dumps.uncertainty && !state.model.mask().uncertainty) {
    throw ConfigError("this checkpoint was trained without uncertainty maps");
  }
  for (const char* sub : {"attention", "uncertainty", "generations"}) {
    const bool on = (sub[0] == 'a' && dumps.attention) || (sub[0] == 'u' && dumps.uncertainty) ||
                    (sub[0] == 'g' && dumps.generations);
    if (on) make_dirs(out / sub);
  }

  NoGradGuard no_grad;
  FlushDenormals ftz;
  for (const auto& sample : samples) {
    const Batch batch = stack({&sample});
    const auto res = state.model.forward(Var<float>(batch.source), Var<float>(batch.guidance));
    write_png(out / (sample.id + ".png"), tensor_to_image(slice_sample(res.final_image().value(), 0)));
    if (stage2) write_png(out / (sample.id + "_stage1.png"), tensor_to_image(slice_sample(res.stage1.image.value(), 0)));
    const std::int64_t h = batch.source.dim(2), w = batch.source.dim(3);
    if (dumps.attention) {
      const Tensor<float> att = slice_sample(res.attention.value(), 0);
      write_npy(out / "attention" / (sample.id + ".npy"), att.shape(), att.data());
      write_png(out / "attention" / (sample.id + ".png"), gray_grid(att.data(), att.dim(0), h, w));
    }
    if (dumps.uncertainty) {
      const Tensor<float> u = slice_sample(res.uncertainty.value(), 0);
      write_npy(out / "uncertainty" / (sample.id + ".npy"), u.shape(), u.data());
      write_png(out / "uncertainty" / (sample.id + ".png"), gray_grid(u.data(), u.dim(0), h, w));
    }
    if (dumps.generations) {
      const Tensor<float> g = slice_sample(res.generations.value(), 0);
      write_npy(out / "generations" / (sample.id + ".npy"), g.shape(), g.data());
      write_png(out / "generations" / (sample.id + ".png"), color_grid(g.data(), g.dim(0) / 3, h, w));
    }
  }
  std::printf("wrote %zu predictions to %s\n", samples.size(), out.string().c_str());
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto results = run_all_checks(seed);
  bool ok = true;
  std::printf("%-26s %-6s %12s %12s %8s\n", "suite", "result", "max error", "tolerance", "checked");
  for (const auto& r : results) {
    std::printf("%-26s %-6s %12.3e %12.3e %8lld\n", r.suite.c_str(), r.passed ? "PASS" : "FAIL", r.max_error,
                r.tolerance, static_cast<long long>(r.checked));
    if (!r.passed) {
      std::printf("    worst: %s\n", r.detail.c_str());
      ok = false;
    }
  }
  return ok ? kOk : kGradcheck;
}

int cmd_ablation(const TrainConfig& base, const fs::path& data, const fs::path& out, const std::string& levels,
                 bool quiet) {
  std::vector<AblationLevel> ladder;
  for (char c : levels) {
    if (c != ',' && c != ' ') ladder.push_back(parse_ablation_level(std::string(1, c)));
  }
  if (ladder.empty()) throw ConfigError("--levels is empty");
  const DataSplit split = load_split(base, data);
  make_dirs(out);
  std::vector<AblationRecord> records;
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (AblationLevel level : ladder) {
    RunOptions options;
    options.out_dir = out / (std::string("level_") + to_char(level));
    options.progress = quiet ? nullptr : &std::cerr;
    records.push_back(run_ablation(level, base, split, options));
    all.push_back(to_json(records.back()));
    write_text(out / "ablation.json", all.dump(2) + "\n");
  }
  const std::string table = format_table(records, "level");
  write_text(out / "ablation.md", table);
  std::cout << table;
  return kOk;
}

int cmd_sweep(const TrainConfig& base, const fs::path& data, const fs::path& out, const std::string& list,
              bool quiet) {
  const std::vector<int> generations = parse_int_list(list, "--generations");
  const DataSplit split = load_split(base, data);
  make_dirs(out);
  RunOptions options;
  options.out_dir = out;
  options.progress = quiet ? nullptr : &std::cerr;
  const auto records = run_generation_sweep(generations, base, split, options);
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const auto& r : records) all.push_back(to_json(r));
  write_text(out / "sweep.json", all.dump(2) + "\n");
  const std::string table = format_table(records, "N");
  write_text(out / "sweep.md", table);
  std::cout << table;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage guided image synthesis with attention selection"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress output");

  // dataset synth
  CLI::App* dataset = app.add_subcommand("dataset", "dataset utilities");
  dataset->require_subcommand(1);
  CLI::App* synth = dataset->add_subcommand("synth", "write a procedurally generated paired dataset");
  std::uint64_t synth_seed = 0;
  int synth_count = 512, synth_size = 64;
  fs::path synth_out;
  synth->add_option("--seed", synth_seed, "generator seed")->envname("SELECTION_SYNTH_SEED");
  synth->add_option("--count", synth_count, "number of triples")->capture_default_str();
  synth->add_option("--size", synth_size, "side length in pixels, divisible by 16")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  CLI::App* train = app.add_subcommand("train", "train one model and evaluate it on the hold-out split");
  ConfigFlags train_flags;
  train_flags.attach(*train);
  fs::path train_data, train_out;
  train->add_option("--data", train_data, "dataset root")->required();
  train->add_option("--out", train_out, "run directory")->required();

  // eval
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint or a directory of predictions");
  fs::path eval_ckpt, eval_pred, eval_data, eval_out;
  std::string eval_split = "heldout";
  auto* ck_opt = eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate");
  auto* pr_opt = eval->add_option("--predictions", eval_pred, "directory of <id>.png predictions");
  ck_opt->excludes(pr_opt);
  eval->add_option("--data", eval_data, "dataset root")->required();
  eval->add_option("--split", eval_split, "heldout, train or all")
      ->check(CLI::IsMember({"heldout", "train", "all"}))
      ->capture_default_str();
  eval->add_option("--out", eval_out, "write JSON here instead of stdout");

  // infer
  CLI::App* infer = app.add_subcommand("infer", "write generated images and optional intermediate maps");
  fs::path infer_ckpt, infer_data, infer_out;
  std::string infer_split = "heldout";
  InferFlags dumps;
  infer->add_option("--checkpoint", infer_ckpt, "checkpoint")->required();
  infer->add_option("--data", infer_data, "dataset root")->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_option("--split", infer_split, "heldout, train or all")
      ->check(CLI::IsMember({"heldout", "train", "all"}))
      ->capture_default_str();
  infer->add_flag("--dump-attention", dumps.attention, "N attention maps per input (.png grid and .npy)");
  infer->add_flag("--dump-uncertainty", dumps.uncertainty, "K uncertainty maps per input");
  infer->add_flag("--dump-generations", dumps.generations, "N intermediate generations per input");

  // gradcheck
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference and invariant self-checks");
  std::uint64_t gc_seed = 0;
  gradcheck->add_option("--seed", gc_seed, "seed for random probes")->capture_default_str();

  // ablation
  CLI::App* ablation = app.add_subcommand("ablation", "train and evaluate several ablation levels");
  ConfigFlags ablation_flags;
  ablation_flags.attach(*ablation);
  fs::path abl_data, abl_out;
  std::string abl_levels = "ABCDEFGH";
  ablation->add_option("--data", abl_data, "dataset root")->required();
  ablation->add_option("--out", abl_out, "output directory")->required();
  ablation->add_option("--levels", abl_levels, "levels to run, e.g. AH or A,C,H")->capture_default_str();

  // sweep
  CLI::App* sweep = app.add_subcommand("sweep", "compare numbers of attention generations");
  ConfigFlags sweep_flags;
  sweep_flags.attach(*sweep);
  fs::path sweep_data, sweep_out;
  std::string sweep_list = "1,5,10";
  sweep->add_option("--data", sweep_data, "dataset root")->required();
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--generations", sweep_list, "comma-separated N values")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_out, synth_seed, synth_count, synth_size);
    if (train->parsed()) return cmd_train(train_flags.resolve(*train), train_data, train_out, quiet);
    if (eval->parsed()) {
      if (!eval_ckpt.empty()) return cmd_eval_checkpoint(eval_ckpt, eval_data, eval_split, eval_out);
      if (!eval_pred.empty()) return cmd_eval_predictions(eval_pred, eval_data, eval_out);
      throw ConfigError("eval needs --checkpoint or --predictions");
    }
    if (infer->parsed()) return cmd_infer(infer_ckpt, infer_data, infer_split, infer_out, dumps);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
    if (ablation->parsed()) return cmd_ablation(ablation_flags.resolve(*ablation), abl_data, abl_out, abl_levels, quiet);
    if (sweep->parsed()) return cmd_sweep(sweep_flags.resolve(*sweep), sweep_data, sweep_out, sweep_list, quiet);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const NumericsError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumerics;
  } catch (const FileError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnexpected;
  }
  return kUsage;
}
