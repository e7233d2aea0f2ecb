#include "spangrad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "spangrad/errors.hpp"
#include "spangrad/training.hpp"

namespace spangrad {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'P', 'G', 'R', 'A', 'D', '0', '1'};

template <typename T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IoError("truncated checkpoint " + path.string());
  }
  return value;
}

std::string get_string(std::ifstream& in, std::uint64_t n,
                       const std::filesystem::path& path) {
  if (n > (1u << 26)) throw IoError("corrupt checkpoint " + path.string());
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw IoError("truncated checkpoint " + path.string());
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const ModelConfig& config, const ModelState& state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());

  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header = to_json(config).dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  std::uint32_t count = 0;
  state.for_each([&](const std::string&, const Matrix&) { ++count; });
  put<std::uint32_t>(out, count);

  state.for_each([&](const std::string& name, const Matrix& m) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
    }
  });
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());

  char magic[8];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw IoError(path.string() + " is not a spangrad checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get<std::uint64_t>(in, path);
  const std::string header = get_string(in, header_len, path);

  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(nlohmann::json::parse(header));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }
  ckpt.state = ModelState::zeros(ckpt.config);

  std::map<std::string, Matrix*> slots;
  ckpt.state.for_each(
      [&](const std::string& name, Matrix& m) { slots[name] = &m; });

  const auto count = get<std::uint32_t>(in, path);
  if (count != slots.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) +
                  " tensors, config implies " + std::to_string(slots.size()));
  }
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = get<std::uint32_t>(in, path);
    const std::string name = get_string(in, name_len, path);
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw IoError("unexpected tensor '" + name + "' in checkpoint");
    }
    Matrix& m = *it->second;
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    if (rows != static_cast<std::uint64_t>(m.rows()) ||
        cols != static_cast<std::uint64_t>(m.cols())) {
      throw IoError("tensor '" + name + "' has the wrong shape");
    }
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path);
    }
    slots.erase(it);
  }
  return ckpt;
}

}  // namespace spangrad
