#include "mgev/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mgev {

namespace {

bool host_le() {
  uint16_t probe = 1;
  uint8_t b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

void put_u64(std::ofstream& out, uint64_t v) {
  uint8_t buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t get_u64(std::ifstream& in, const std::string& path) {
  uint8_t buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (in.gcount() != 8) fail("load_checkpoint: truncated file ", path);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

template <typename T>
void put_payload(std::ofstream& out, const std::vector<T>& values) {
  if (host_le()) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
    return;
  }
  for (T v : values) {
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    for (size_t i = 0; i + 1 < sizeof(T); ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }
}

template <typename S>
std::vector<S> get_payload(std::ifstream& in, size_t n, const std::string& path) {
  std::vector<S> values(n);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(S)));
  if (static_cast<size_t>(in.gcount()) != n * sizeof(S))
    fail("load_checkpoint: truncated payload in ", path);
  if (!host_le()) {
    for (auto& v : values) {
      uint8_t buf[sizeof(S)];
      std::memcpy(buf, &v, sizeof(S));
      for (size_t i = 0; i + 1 < sizeof(S) / 2 * 2; ++i)
        if (i < sizeof(S) - 1 - i) std::swap(buf[i], buf[sizeof(S) - 1 - i]);
      std::memcpy(&v, buf, sizeof(S));
    }
  }
  return values;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, TensorT<T>>>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("save_checkpoint: cannot open ", path);
  out.write(kCheckpointMagic, 9);
  for (const auto& [name, tensor] : entries) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    uint8_t dtype = static_cast<uint8_t>(dtype_of<T>());
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    put_u64(out, tensor.shape().size());
    for (int64_t dim : tensor.shape()) put_u64(out, static_cast<uint64_t>(dim));
    put_payload(out, tensor.values());
  }
  if (!out) fail("save_checkpoint: write failed for ", path);
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_checkpoint: cannot open ", path);
  char magic[9];
  in.read(magic, 9);
  if (in.gcount() != 9 || std::memcmp(magic, kCheckpointMagic, 9) != 0)
    fail("load_checkpoint: ", path, " is not a checkpoint (bad magic)");

  std::vector<std::pair<std::string, TensorT<T>>> entries;
  while (true) {
    if (in.peek() == EOF) break;
    uint64_t name_len = get_u64(in, path);
    if (name_len > 4096) fail("load_checkpoint: absurd name length ", name_len, " in ", path);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (static_cast<uint64_t>(in.gcount()) != name_len)
      fail("load_checkpoint: truncated name in ", path);
    uint8_t dtype = 0;
    in.read(reinterpret_cast<char*>(&dtype), 1);
    if (in.gcount() != 1) fail("load_checkpoint: truncated dtype in ", path);
    if (dtype > 1) fail("load_checkpoint: unknown dtype ", int(dtype), " in ", path);
    uint64_t rank = get_u64(in, path);
    if (rank > 8) fail("load_checkpoint: absurd rank ", rank, " in ", path);
    Shape shape;
    for (uint64_t i = 0; i < rank; ++i)
      shape.push_back(static_cast<int64_t>(get_u64(in, path)));
    size_t n = static_cast<size_t>(shape_numel(shape));
    std::vector<T> values(n);
    if (dtype == 0) {
      auto raw = get_payload<float>(in, n, path);
      for (size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
    } else {
      auto raw = get_payload<double>(in, n, path);
      for (size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
    }
    entries.emplace_back(std::move(name), TensorT<T>::from(std::move(shape), std::move(values)));
  }
  return entries;
}

template void save_checkpoint<float>(const std::string&,
                                     const std::vector<std::pair<std::string, TensorT<float>>>&);
template void save_checkpoint<double>(const std::string&,
                                      const std::vector<std::pair<std::string, TensorT<double>>>&);
template std::vector<std::pair<std::string, TensorT<float>>> load_checkpoint<float>(
    const std::string&);
template std::vector<std::pair<std::string, TensorT<double>>> load_checkpoint<double>(
    const std::string&);

}  // namespace mgev
