#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "selgan/checkpoint.hpp"
#include "test_util.hpp"

using namespace selgan;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.image_size = 32;
  c.image_base_width = 4;
  c.guidance_base_width = 2;
  c.image_depth = 3;
  c.guidance_depth = 2;
  c.disc_base_width = 4;
  c.disc_layers = 2;
  c.attention_channels = 3;
  c.batch_size = 2;
  c.seed = 5;
  return c;
}

const std::vector<GuidedSample>& samples() {
  static const std::vector<GuidedSample> s = [] {
    const auto dir = testutil::scratch_dir("checkpoint_data");
    return load_dataset(synth_dataset(dir, {2, 6, 32, 32}));
  }();
  return s;
}

std::string run_steps(TrainState& state, int steps) {
  const BatchSampler sampler(samples().size(), state.config.batch_size, state.config.seed);
  std::ostringstream out;
  for (int i = 0; i < steps; ++i)
    write_csv_row(out, train_step(state, training_batch(samples(), sampler, state.config, state.iteration)));
  return out.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

bool same_state(const TrainState& a, const TrainState& b) {
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].name != pb[i].name || !(pa[i].var.value() == pb[i].var.value())) return false;
  for (const auto* opt : {&a.generator_optimizer, &a.discriminator_optimizer}) {
    const auto* other = opt == &a.generator_optimizer ? &b.generator_optimizer : &b.discriminator_optimizer;
    if (opt->steps() != other->steps()) return false;
    for (std::size_t i = 0; i < opt->slots().size(); ++i)
      if (!(opt->slots()[i].m == other->slots()[i].m) || !(opt->slots()[i].v == other->slots()[i].v)) return false;
  }
  return a.iteration == b.iteration && to_json(a.config) == to_json(b.config);
}

}  // namespace

TEST_CASE("round trip restores the exact training state") {
  const auto dir = testutil::scratch_dir("checkpoint_round_trip");
  TrainState state(small_config());
  run_steps(state, 3);
  save_checkpoint(dir / "ck.bin", state);
  TrainState loaded = load_checkpoint(dir / "ck.bin");
  CHECK(same_state(state, loaded));
  // Resuming continues the same trajectory bit for bit.
  CHECK(run_steps(state, 2) == run_steps(loaded, 2));
  CHECK(same_state(state, loaded));
}

TEST_CASE("header is readable without the payload") {
  const auto dir = testutil::scratch_dir("checkpoint_header");
  TrainState state(small_config());
  run_steps(state, 1);
  save_checkpoint(dir / "ck.bin", state);
  const auto header = read_checkpoint_header(dir / "ck.bin");
  CHECK(header.version == kCheckpointVersion);
  CHECK(header.iteration == 1);
  CHECK(header.generator_steps == 1);
  CHECK(header.discriminator_steps == 1);
  CHECK(to_json(header.config) == to_json(state.config));
  const auto params = state.model.parameters().size();
  CHECK(header.tensors.size() == 3 * params);
  std::uint64_t next = 0;
  for (const auto& t : header.tensors) {
    CHECK(t.offset == next);
    CHECK(t.count == static_cast<std::uint64_t>(numel(t.shape)));
    next += t.count;
  }
}

TEST_CASE("damaged files raise FormatError and leave the state alone") {
  const auto dir = testutil::scratch_dir("checkpoint_damaged");
  TrainState trained(small_config());
  run_steps(trained, 2);
  save_checkpoint(dir / "ck.bin", trained);
  const std::string bytes = slurp(dir / "ck.bin");

  TrainState target(small_config());
  run_steps(target, 1);
  TrainState reference(small_config());
  run_steps(reference, 1);
  REQUIRE(same_state(target, reference));

  auto expect_rejected = [&](const std::string& damaged) {
    spit(dir / "bad.bin", damaged);
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.bin"), FormatError);
    CHECK_THROWS_AS(restore_checkpoint(dir / "bad.bin", target), FormatError);
    CHECK(same_state(target, reference));
  };
  SUBCASE("truncated payload") { expect_rejected(bytes.substr(0, bytes.size() - 7)); }
  SUBCASE("truncated header") { expect_rejected(bytes.substr(0, 30)); }
  SUBCASE("bad magic") {
    auto b = bytes;
    b[0] = 'X';
    expect_rejected(b);
  }
  SUBCASE("version mismatch") {
    auto b = bytes;
    b[8] = static_cast<char>(kCheckpointVersion + 1);
    expect_rejected(b);
  }
  SUBCASE("different architecture") {
    auto cfg = small_config();
    cfg.image_base_width = 8;
    TrainState wide(cfg);
    save_checkpoint(dir / "wide.bin", wide);
    CHECK_THROWS_AS(restore_checkpoint(dir / "wide.bin", target), FormatError);
    CHECK(same_state(target, reference));
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), FileError); }
}

TEST_CASE("saving replaces the previous file atomically") {
  const auto dir = testutil::scratch_dir("checkpoint_replace");
  TrainState state(small_config());
  save_checkpoint(dir / "ck.bin", state);
  run_steps(state, 1);
  save_checkpoint(dir / "ck.bin", state);
  CHECK(read_checkpoint_header(dir / "ck.bin").iteration == 1);
  int files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  CHECK(files == 1);
}
