#include "selgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <type_traits>

namespace selgan {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'E', 'L', 'G', 'A', 'N', 'C', 'K'};
constexpr std::size_t kPreambleBytes = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);

template <typename Ptr>
struct NamedTensor {
  std::string name;
  Ptr tensor;
};

// Every tensor a state owns, in a fixed order; const states yield read-only
// pointers.
template <typename State>
auto state_tensors(State& state) {
  constexpr bool read_only = std::is_const_v<State>;
  using Ptr = std::conditional_t<read_only, const Tensor<float>*, Tensor<float>*>;
  std::vector<NamedTensor<Ptr>> out;
  for (const auto& p : state.model.parameters()) {
    Var<float> handle = p.var;
    if constexpr (read_only) {
      out.push_back({"model/" + p.name, &handle.value()});
    } else {
      out.push_back({"model/" + p.name, &handle.mutable_value()});
    }
  }
  auto add_optimizer = [&](const std::string& prefix, auto& opt) {
    const auto& params = opt.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.push_back({prefix + "/" + params[i].name + "/m", &opt.slots()[i].m});
      out.push_back({prefix + "/" + params[i].name + "/v", &opt.slots()[i].v});
    }
  };
  add_optimizer("adam_g", state.generator_optimizer);
  add_optimizer("adam_d", state.discriminator_optimizer);
  return out;
}

struct ParsedCheckpoint {
  CheckpointHeader header;
  std::vector<char> payload;
};

std::vector<char> read_bytes(const std::filesystem::path& path, std::size_t limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open checkpoint " + path.string());
  std::vector<char> bytes;
  char buf[1 << 16];
  while (bytes.size() < limit && in) {
    in.read(buf, static_cast<std::streamsize>(std::min(sizeof buf, limit - bytes.size())));
    bytes.insert(bytes.end(), buf, buf + in.gcount());
  }
  return bytes;
}

template <typename U>
U read_pod(const char* p) {
  U v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

CheckpointHeader parse_header(const std::vector<char>& bytes, const std::filesystem::path& path,
                              std::size_t* header_end) {
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < kPreambleBytes || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError(where + " is not a checkpoint (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(bytes.data() + sizeof kMagic);
  if (version != kCheckpointVersion) {
    throw FormatError(where + " has format version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  const auto length = read_pod<std::uint64_t>(bytes.data() + sizeof kMagic + sizeof(std::uint32_t));
  if (length > bytes.size() - kPreambleBytes) throw FormatError(where + " is truncated inside the header");
  *header_end = kPreambleBytes + static_cast<std::size_t>(length);

  CheckpointHeader header;
  try {
    const auto j = nlohmann::json::parse(bytes.begin() + kPreambleBytes, bytes.begin() + *header_end);
    header.version = version;
    header.config = merge_config(TrainConfig{}, j.at("config"));
    header.iteration = j.at("iteration").get<std::int64_t>();
    header.generator_steps = j.at("generator_steps").get<std::int64_t>();
    header.discriminator_steps = j.at("discriminator_steps").get<std::int64_t>();
    for (const auto& t : j.at("tensors")) {
      CheckpointTensor rec;
      rec.name = t.at("name").get<std::string>();
      rec.shape = t.at("shape").get<Shape>();
      rec.offset = t.at("offset").get<std::uint64_t>();
      rec.count = t.at("count").get<std::uint64_t>();
      if (static_cast<std::uint64_t>(numel(rec.shape)) != rec.count) {
        throw FormatError(where + ": tensor " + rec.name + " count does not match its shape");
      }
      header.tensors.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + " has a malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(where + " stores an invalid config: " + e.what());
  }
  return header;
}

ParsedCheckpoint parse_file(const std::filesystem::path& path) {
  ParsedCheckpoint parsed;
  std::vector<char> bytes = read_bytes(path, std::numeric_limits<std::size_t>::max());
  std::size_t header_end = 0;
  parsed.header = parse_header(bytes, path, &header_end);
  parsed.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header_end), bytes.end());
  const std::uint64_t floats = parsed.payload.size() / sizeof(float);
  for (const auto& t : parsed.header.tensors) {
    if (t.offset > floats || t.count > floats - t.offset) {
      throw FormatError("checkpoint " + path.string() + " is truncated (tensor " + t.name + ")");
    }
  }
  return parsed;
}

void apply(const ParsedCheckpoint& parsed, TrainState& state, const std::filesystem::path& path) {
  const std::string where = "checkpoint " + path.string();
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : parsed.header.tensors) {
    if (!by_name.emplace(t.name, &t).second) throw FormatError(where + " repeats tensor " + t.name);
  }
  auto targets = state_tensors(state);
  if (targets.size() != by_name.size()) {
    throw FormatError(where + " holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                      std::to_string(targets.size()));
  }
  std::vector<const CheckpointTensor*> sources;
  sources.reserve(targets.size());
  for (const auto& target : targets) {
    const auto it = by_name.find(target.name);
    if (it == by_name.end()) throw FormatError(where + " is missing tensor " + target.name);
    if (it->second->shape != target.tensor->shape()) {
      throw FormatError(where + ": tensor " + target.name + " has shape " + to_string(it->second->shape) +
                        ", model expects " + to_string(target.tensor->shape()));
    }
    sources.push_back(it->second);
  }
  // All checks passed; nothing below can fail.
  const char* base = parsed.payload.data();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::memcpy(targets[i].tensor->data(), base + sources[i]->offset * sizeof(float),
                sources[i]->count * sizeof(float));
  }
  state.iteration = parsed.header.iteration;
  state.generator_optimizer.set_steps(parsed.header.generator_steps);
  state.discriminator_optimizer.set_steps(parsed.header.discriminator_steps);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  const auto tensors = state_tensors(state);

  nlohmann::ordered_json header;
  header["version"] = kCheckpointVersion;
  header["config"] = to_json(state.config);
  header["iteration"] = state.iteration;
  header["generator_steps"] = state.generator_optimizer.steps();
  header["discriminator_steps"] = state.discriminator_optimizer.steps();
  auto& list = header["tensors"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    const auto count = static_cast<std::uint64_t>(t.tensor->numel());
    list.push_back({{"name", t.name}, {"shape", t.tensor->shape()}, {"offset", offset}, {"count", count}});
    offset += count;
  }
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write checkpoint " + tmp.string());
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors) {
      out.write(reinterpret_cast<const char*>(t.tensor->data()),
                static_cast<std::streamsize>(t.tensor->numel() * sizeof(float)));
    }
    out.flush();
    if (!out) throw FileError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FileError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::vector<char> bytes = read_bytes(path, kPreambleBytes);
  if (bytes.size() == kPreambleBytes && std::memcmp(bytes.data(), kMagic, sizeof kMagic) == 0) {
    const auto length = read_pod<std::uint64_t>(bytes.data() + sizeof kMagic + sizeof(std::uint32_t));
    const auto file_size = std::filesystem::file_size(path);
    if (length <= file_size - kPreambleBytes) bytes = read_bytes(path, kPreambleBytes + length);
  }
  std::size_t header_end = 0;
  return parse_header(bytes, path, &header_end);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const ParsedCheckpoint parsed = parse_file(path);
  TrainState state(parsed.header.config);
  apply(parsed, state, path);
  return state;
}

void restore_checkpoint(const std::filesystem::path& path, TrainState& state) {
  const ParsedCheckpoint parsed = parse_file(path);
  apply(parsed, state, path);
}

}  // namespace selgan
