// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fail.
//
//   acceptance [--work DIR] [--only 1,4,7]
//
// Criteria 7-10 train on 512 synthetic 64x64 pairs written to DIR/data.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "selgan/gradcheck.hpp"
#include "selgan/mcas.hpp"
#include "selgan/metrics.hpp"
#include "selgan/mspc.hpp"
#include "selgan/trainer.hpp"

using namespace selgan;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

// Desk preset: 2000 iterations, batch 4, 64x64, 512 pairs. Image generator and
// discriminator widths are halved from the architecture defaults so the whole
// suite fits a CPU budget.
TrainConfig desk_config() {
  TrainConfig c;
  c.iterations = 2000;
  c.batch_size = 4;
  c.image_size = 64;
  c.holdout = 64;
  c.image_base_width = 32;
  c.disc_base_width = 32;
  c.checkpoint_every = 0;
  return c;
}

constexpr int kSweepIterations = 300;
constexpr std::uint64_t kDataSeed = 0;

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

template <typename T>
Var<T> random_var(const Shape& shape, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return Var<T>(std::move(t));
}

Outcome attention_normalization() {
  Rng rng(101);
  const int choices[] = {2, 5, 10};
  double worst = 0.0;
  NoGradGuard no_grad;
  for (int c = 0; c < 1000; ++c) {
    const int n = choices[c % 3];
    const AttentionSelection<float> head(8, n, 1, rng);
    const auto features = random_var<float>({1, 8, 5, 7}, -3.0, 3.0, rng);
    const Var<float> att = head.make_attention(features);
    for (std::int64_t p = 0; p < 35; ++p) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += att.value()[k * 35 + p];
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  return {worst <= 1e-5, fmt("1000 cases, max |sum - 1| = %.2e", worst)};
}

Outcome selection_convexity() {
  Rng rng(102);
  std::uniform_int_distribution<int> pick_n(1, 10);
  double worst = 0.0;
  NoGradGuard no_grad;
  for (int c = 0; c < 1000; ++c) {
    const int n = pick_n(rng);
    const AttentionSelection<float> head(6, n, 1, rng);
    const auto gens = random_var<float>({1, 3 * n, 4, 4}, -1.0, 1.0, rng);
    const auto att = head.make_attention(random_var<float>({1, 6, 4, 4}, -4.0, 4.0, rng));
    const Var<float> out = select(gens, att);
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < 16; ++p) {
        float lo = std::numeric_limits<float>::max(), hi = -lo;
        for (int k = 0; k < n; ++k) {
          lo = std::min(lo, gens.value()[(3 * k + ch) * 16 + p]);
          hi = std::max(hi, gens.value()[(3 * k + ch) * 16 + p]);
        }
        const float v = out.value()[ch * 16 + p];
        worst = std::max(worst, std::max<double>(lo - v, v - hi));
      }
  }
  // A float convex combination may leave the hull by rounding only.
  const double slack = 8 * std::numeric_limits<float>::epsilon();
  bool collapse = true;
  for (int c = 0; c < 20; ++c) {
    const AttentionSelection<float> head(6, 1, 1, rng);
    const auto gens = random_var<float>({2, 3, 5, 5}, -1.0, 1.0, rng);
    const auto att = head.make_attention(random_var<float>({2, 6, 5, 5}, -50.0, 50.0, rng));
    collapse = collapse && select(gens, att).value() == gens.value();
  }
  return {worst <= slack && collapse,
          fmt("1000 cases, max hull excess %.2e; N=1 collapse ", worst) + (collapse ? "bitwise" : "NOT bitwise")};
}

// Direct loop: out = alpha * softmax_rows(F F^T) F + F.
std::vector<double> selection_oracle(const std::vector<double>& f, std::int64_t c, std::int64_t hw, double alpha) {
  std::vector<double> gram(c * c), out(f);
  for (std::int64_t i = 0; i < c; ++i)
    for (std::int64_t j = 0; j < c; ++j)
      for (std::int64_t p = 0; p < hw; ++p) gram[i * c + j] += f[i * hw + p] * f[j * hw + p];
  for (std::int64_t i = 0; i < c; ++i) {
    double m = -1e300, z = 0;
    for (std::int64_t j = 0; j < c; ++j) m = std::max(m, gram[i * c + j]);
    for (std::int64_t j = 0; j < c; ++j) z += gram[i * c + j] = std::exp(gram[i * c + j] - m);
    for (std::int64_t j = 0; j < c; ++j)
      for (std::int64_t p = 0; p < hw; ++p) out[i * hw + p] += alpha * gram[i * c + j] / z * f[j * hw + p];
  }
  return out;
}

Outcome channel_selection_oracle() {
  NoGradGuard no_grad;
  const Var<double> hand(Tensor<double>({1, 2, 1, 1}, std::vector<double>{1.0, 2.0}));
  const Var<double> got = channel_selection(hand, 1.0);
  const double e0 = std::abs(got.value()[0] - 2.7311), e1 = std::abs(got.value()[1] - 3.8808);
  const auto loop = selection_oracle({1.0, 2.0}, 2, 1, 1.0);
  const double oracle_err = std::max(std::abs(loop[0] - 2.7311), std::abs(loop[1] - 3.8808));
  double random_err = 0.0;

  Rng rng(103);
  bool identity = true;
  for (int c = 2; c <= 6; ++c) {
    const auto f = random_var<double>({1, c, 3, 4}, -1.0, 1.0, rng);
    identity = identity && channel_selection(f, 0.0).value() == f.value();
    const auto alpha = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
    const Var<double> out = channel_selection(f, alpha);
    const auto ref = selection_oracle({f.value().values().begin(), f.value().values().end()}, c, 12, alpha);
    for (std::size_t i = 0; i < ref.size(); ++i) random_err = std::max(random_err, std::abs(out.value()[i] - ref[i]));
  }
  const double err = std::max(e0, e1);
  return {err <= 1e-4 && oracle_err <= 1e-4 && random_err <= 1e-12 && identity,
          fmt("hand example [%.4f, %.4f], max error %.1e; ", got.value()[0], got.value()[1], err) +
              fmt("random cases vs loop oracle %.1e", random_err) +
              (identity ? "; alpha=0 identity exact" : "; alpha=0 NOT identity")};
}

Outcome gradient_checks() {
  const auto start = std::chrono::steady_clock::now();
  const GradcheckOptions options;
  const CheckResult results[] = {check_channel_selection_gradients(options), check_selection_gradients(options),
                                 check_uncertainty_loss_gradients(options), check_toy_generator_gradients(options),
                                 check_toy_discriminator_gradients(options)};
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double worst = 0.0;
  std::int64_t entries = 0;
  bool ok = secs < 120.0;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_error);
    entries += r.checked;
    ok = ok && r.passed && r.max_error <= 1e-4;
  }
  return {ok, fmt("5 suites, %.0f entries, max relative error %.2e, %.1f s", static_cast<double>(entries), worst, secs)};
}

Outcome uncertainty_law() {
  NoGradGuard no_grad;
  Rng rng(104);
  const auto loss = random_var<double>({2, 1, 8, 8}, 0.0, 3.0, rng);
  double mean = 0.0;
  for (double v : loss.value().values()) mean += v;
  mean /= static_cast<double>(loss.numel());
  const double at_one = uncertainty_weighted_loss(loss, Var<double>(Tensor<double>(loss.shape(), 1.0))).item();
  const bool exact = at_one == mean;

  constexpr int kGrid = 10000;
  double worst = 0.0;
  for (double l : {0.1, 0.3, 0.7}) {
    const Var<double> lmap(Tensor<double>({1, 1, 1, 1}, l));
    double best = std::numeric_limits<double>::infinity(), best_u = 0.0;
    for (int k = 1; k <= kGrid; ++k) {
      const double u = static_cast<double>(k) / kGrid;
      const double v = uncertainty_weighted_loss(lmap, Var<double>(Tensor<double>({1, 1, 1, 1}, u))).item();
      if (v < best) best = v, best_u = u;
    }
    worst = std::max(worst, std::abs(best_u - l));
  }
  return {exact && worst <= 1.0 / kGrid, std::string(exact ? "U=1 gives mean(L) exactly" : "U=1 differs from mean(L)") +
                                             fmt("; grid minimiser off by %.1e (grid %.0e)", worst, 1.0 / kGrid)};
}

Outcome metrics_sanity() {
  Rng rng(105);
  std::uniform_int_distribution<int> pix(0, 255);
  double ssim_err = 0.0, shift_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    Tensor<double> x({3, 32, 32}), y({3, 32, 32});
    for (auto& v : x.values()) v = pix(rng);
    for (auto& v : y.values()) v = pix(rng);
    ssim_err = std::max(ssim_err, std::abs(metrics::ssim(x, x) - 1.0));
    const double sd = metrics::sharpness_difference(x, y);
    Tensor<double> xs = x, ys = y;
    const double shift = pix(rng) - 128.0;
    for (auto& v : xs.values()) v += shift;
    for (auto& v : ys.values()) v += shift;
    shift_err = std::max(shift_err, std::abs(metrics::sharpness_difference(xs, ys) - sd));
  }
  const Tensor<double> a({3, 64, 64}, 120.0), b({3, 64, 64}, 121.0);
  const double p = metrics::psnr(a, b);
  return {ssim_err <= 1e-12 && std::abs(p - 48.13) <= 0.01 && shift_err <= 1e-9,
          fmt("|ssim(x,x)-1| = %.1e, psnr(1 level) = %.4f dB, SD shift drift %.1e", ssim_err, p, shift_err)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Desk {
  fs::path work;
  DataSplit split;
};

const Desk& desk(const fs::path& work) {
  static const Desk d = [&] {
    const fs::path data = work / "data";
    if (!fs::exists(data / "pairs.jsonl")) {
      std::cerr << "writing 512 synthetic pairs to " << data << "\n";
      synth_dataset(data, {kDataSeed, 512, 64, 64});
    }
    return Desk{work, load_split(desk_config(), data)};
  }();
  return d;
}

RunOptions run_options(const fs::path& dir) {
  fs::remove_all(dir);
  return {dir, &std::cerr, 250};
}

Outcome determinism(const fs::path& work) {
  const auto& d = desk(work);
  auto cfg = desk_config();
  cfg.iterations = 100;
  for (const char* name : {"det_a", "det_b"}) {
    TrainState state(cfg);
    std::cerr << "determinism run " << name << "\n";
    run_training(state, d.split.train, run_options(work / name));
  }
  const std::string a = slurp(work / "det_a" / "train_log.csv"), b = slurp(work / "det_b" / "train_log.csv");
  const auto rows = std::count(a.begin(), a.end(), '\n') - 1;
  return {!a.empty() && a == b, fmt("%.0f logged steps, CSVs ", static_cast<double>(rows)) + (a == b ? "identical" : "differ")};
}

// H is trained once and shared by the trend and ablation criteria.
const AblationRecord& level_h(const fs::path& work) {
  static const AblationRecord r = [&] {
    std::cerr << "training level H\n";
    return run_ablation(AblationLevel::H, desk_config(), desk(work).split, run_options(work / "H"));
  }();
  return r;
}

Outcome coarse_to_fine(const fs::path& work) {
  const auto& h = level_h(work);
  const double s1 = h.eval.stage1.ssim, s2 = h.eval.stage2.ssim;
  return {s2 >= s1, fmt("held-out SSIM stage I %.4f, stage II %.4f (%.0f s)", s1, s2, h.seconds)};
}

Outcome ablation_gap(const fs::path& work) {
  const auto& h = level_h(work);
  std::cerr << "training level A\n";
  const auto a = run_ablation(AblationLevel::A, desk_config(), desk(work).split, run_options(work / "A"));
  std::ofstream(work / "ablation.md") << format_table({a, h}, "level");
  const double gap = h.eval.stage2.ssim - a.eval.stage2.ssim;
  return {gap >= 0.05, fmt("held-out SSIM A %.4f, H %.4f, gap %.4f", a.eval.stage2.ssim, h.eval.stage2.ssim, gap)};
}

Outcome generation_sweep(const fs::path& work) {
  auto cfg = desk_config();
  cfg.iterations = kSweepIterations;
  std::cerr << "sweeping N in {1,5,10}\n";
  fs::remove_all(work / "sweep");
  const auto records = run_generation_sweep({1, 5, 10}, cfg, desk(work).split, {work / "sweep", &std::cerr, 250});
  const std::string table = format_table(records, "N");
  std::ofstream(work / "sweep.md") << table;
  std::cerr << table;
  bool ok = records.size() == 3;
  std::set<int> ns;
  for (const auto& r : records) {
    ns.insert(r.generations);
    ok = ok && std::isfinite(r.eval.stage2.ssim);
  }
  ok = ok && ns == std::set<int>{1, 5, 10} && table.find("| 10 |") != std::string::npos;
  return {ok, fmt("table for N = 1, 5, 10 at %.0f iterations written to sweep.md", kSweepIterations)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  fs::path work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory for data and runs");
  app.add_option("--only", only, "criterion numbers to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"attention normalization", attention_normalization},
      {"selection convexity", selection_convexity},
      {"channel-selection oracle", channel_selection_oracle},
      {"gradient checks", gradient_checks},
      {"uncertainty-loss law", uncertainty_law},
      {"metrics sanity", metrics_sanity},
      {"determinism", [&] { return determinism(work); }},
      {"coarse-to-fine trend", [&] { return coarse_to_fine(work); }},
      {"ablation H vs A", [&] { return ablation_gap(work); }},
      {"N-sweep harness", [&] { return generation_sweep(work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), number) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.passed;
    std::printf("%s %2d %s: %s\n", o.passed ? "PASS" : "FAIL", number, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
