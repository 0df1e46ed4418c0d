#include "plkrf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "plkrf/error.hpp"

namespace plkrf {

namespace {

constexpr char kMagic[7] = {'P', 'L', 'K', 'R', 'F', '1', '\0'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint i/o assumes a little-endian host");

void write_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::ifstream& in, const std::filesystem::path& path) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw DataError("checkpoint truncated: " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, entries.size());
  for (const auto& [name, tensor] : entries) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint8_t dtype = static_cast<std::uint8_t>(tensor.dtype());
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    const Shape& shape = tensor.shape();
    write_u64(out, shape.size());
    for (std::size_t e : shape) write_u64(out, e);
    if (tensor.dtype() == Dtype::f64) {
      out.write(reinterpret_cast<const char*>(tensor.data()),
                static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    } else {
      std::vector<float> buf(tensor.numel());
      const double* src = tensor.data();
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(src[i]);
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  }
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic): " + path.string());
  }
  const std::uint64_t count = read_u64(in, path);
  NamedTensors entries;
  entries.reserve(count);
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::uint64_t name_len = read_u64(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    std::uint8_t dtype_code = 0;
    in.read(reinterpret_cast<char*>(&dtype_code), 1);
    if (!in) throw DataError("checkpoint truncated: " + path.string());
    if (dtype_code > 1) {
      throw DataError("unknown dtype code " + std::to_string(dtype_code) + " in " + path.string());
    }
    const Dtype dtype = static_cast<Dtype>(dtype_code);
    const std::uint64_t rank = read_u64(in, path);
    Shape shape(rank);
    for (std::uint64_t d = 0; d < rank; ++d) shape[d] = read_u64(in, path);
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    if (dtype == Dtype::f64) {
      in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
      std::vector<float> buf(n);
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(buf[i]);
    }
    if (!in) throw DataError("checkpoint truncated: " + path.string());
    entries.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data), dtype));
  }
  return entries;
}

}  // namespace plkrf
