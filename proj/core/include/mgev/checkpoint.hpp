// Named-tensor container file.
//
// Layout: magic "MGEVCKPT1", then per entry: name length (LE u64), UTF-8
// name, dtype byte (0 = f32, 1 = f64), rank (LE u64), dims (LE u64 each),
// raw little-endian float payload. Entries run to end of file.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mgev/tensor.hpp"

namespace mgev {

inline constexpr const char* kCheckpointMagic = "MGEVCKPT1";

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, TensorT<T>>>& entries);

// entries are converted to T regardless of stored dtype
template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> load_checkpoint(const std::string& path);

// text round-trip through a float tensor, one byte per element; used to carry
// the model configuration inside a checkpoint under "__config__"
template <typename T>
TensorT<T> encode_text(const std::string& text) {
  TensorT<T> t = TensorT<T>::zeros(Shape{static_cast<int64_t>(text.size())});
  for (size_t i = 0; i < text.size(); ++i)
    t.data()[i] = static_cast<T>(static_cast<unsigned char>(text[i]));
  return t;
}

template <typename T>
std::string decode_text(const TensorT<T>& t) {
  std::string text(static_cast<size_t>(t.numel()), '\0');
  for (int64_t i = 0; i < t.numel(); ++i)
    text[static_cast<size_t>(i)] = static_cast<char>(static_cast<unsigned char>(t.data()[i]));
  return text;
}

}  // namespace mgev
