#include "mgev/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace mgev {

namespace {

bool host_little_endian() {
  uint16_t probe = 1;
  uint8_t byte;
  std::memcpy(&byte, &probe, 1);
  return byte == 1;
}

float byteswap_f32(float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  u = ((u & 0x000000FFu) << 24) | ((u & 0x0000FF00u) << 8) | ((u & 0x00FF0000u) >> 8) |
      ((u & 0xFF000000u) >> 24);
  std::memcpy(&v, &u, 4);
  return v;
}

class Reader {
 public:
  Reader(const std::string& path, const char* what) : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) fail(what, ": cannot open ", path);
  }

  // whitespace-delimited token, '#' comments skipped
  std::string token(const char* what) {
    std::string t;
    int c = in_.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
      if (c == '#')
        while (c != EOF && c != '\n') c = in_.get();
      c = in_.get();
    }
    while (c != EOF && !std::isspace(c)) {
      t.push_back(static_cast<char>(c));
      c = in_.get();
    }
    if (t.empty()) fail(what, ": unexpected end of header in ", path_, " at byte ", offset());
    return t;  // consumed exactly one trailing whitespace char
  }

  int64_t parse_dim(const char* what) {
    std::string t = token(what);
    char* end = nullptr;
    long v = std::strtol(t.c_str(), &end, 10);
    if (*end != '\0' || v < 1)
      fail(what, ": bad dimension '", t, "' in ", path_, " at byte ", offset());
    return v;
  }

  void read_raw(void* dst, size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n)
      fail(what, ": truncated payload in ", path_, " at byte ", offset(), ", wanted ", n,
           " more bytes");
  }

  int64_t offset() { return static_cast<int64_t>(in_.tellg()); }

 private:
  std::string path_;
  std::ifstream in_;
};

}  // namespace

Tensor read_pfm(const std::string& path) {
  Reader r(path, "read_pfm");
  std::string magic = r.token("read_pfm");
  if (magic != "Pf")
    fail("read_pfm: bad magic '", magic, "' in ", path, " at byte 0 (expected Pf)");
  int64_t w = r.parse_dim("read_pfm");
  int64_t h = r.parse_dim("read_pfm");
  std::string scale_tok = r.token("read_pfm");
  char* end = nullptr;
  double scale = std::strtod(scale_tok.c_str(), &end);
  if (*end != '\0' || scale == 0.0)
    fail("read_pfm: bad scale '", scale_tok, "' in ", path, " at byte ", r.offset());
  bool file_le = scale < 0.0;
  bool swap = file_le != host_little_endian();

  Tensor map = Tensor::zeros(Shape{h, w});
  std::vector<float> row(static_cast<size_t>(w));
  for (int64_t y = h - 1; y >= 0; --y) {  // bottom-to-top storage
    r.read_raw(row.data(), static_cast<size_t>(w) * 4, "read_pfm");
    float* dst = map.data() + y * w;
    for (int64_t x = 0; x < w; ++x) dst[x] = swap ? byteswap_f32(row[static_cast<size_t>(x)]) : row[static_cast<size_t>(x)];
  }
  return map;
}

void write_pfm(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) fail("write_pfm: expected [H,W], got ", shape_str(map.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_pfm: cannot open ", path);
  int64_t h = map.dim(0), w = map.dim(1);
  out << "Pf\n" << w << " " << h << "\n" << (host_little_endian() ? "-1.0" : "1.0") << "\n";
  for (int64_t y = h - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(map.data() + y * w),
              static_cast<std::streamsize>(w) * 4);
  if (!out) fail("write_pfm: write failed for ", path);
}

namespace {

Tensor read_pnm(const std::string& path, bool color) {
  const char* what = color ? "read_ppm" : "read_pgm";
  Reader r(path, what);
  std::string magic = r.token(what);
  const char* expect = color ? "P6" : "P5";
  if (magic != expect)
    fail(what, ": bad magic '", magic, "' in ", path, " at byte 0 (expected ", expect, ")");
  int64_t w = r.parse_dim(what);
  int64_t h = r.parse_dim(what);
  int64_t maxval = r.parse_dim(what);
  if (maxval != 255)
    fail(what, ": maxval must be 255, got ", maxval, " in ", path, " at byte ", r.offset());
  int64_t ch = color ? 3 : 1;
  std::vector<uint8_t> raw(static_cast<size_t>(w * h * ch));
  r.read_raw(raw.data(), raw.size(), what);
  Tensor img = color ? Tensor::zeros(Shape{3, h, w}) : Tensor::zeros(Shape{h, w});
  if (color) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t c = 0; c < 3; ++c)
          img.data()[(c * h + y) * w + x] =
              static_cast<float>(raw[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f;
  } else {
    for (int64_t i = 0; i < h * w; ++i)
      img.data()[i] = static_cast<float>(raw[static_cast<size_t>(i)]) / 255.0f;
  }
  return img;
}

uint8_t to_byte(float v) {
  float s = std::round(v * 255.0f);
  if (s < 0.0f) s = 0.0f;
  if (s > 255.0f) s = 255.0f;
  return static_cast<uint8_t>(s);
}

}  // namespace

Tensor read_ppm(const std::string& path) { return read_pnm(path, true); }
Tensor read_pgm(const std::string& path) { return read_pnm(path, false); }

void write_ppm(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    fail("write_ppm: expected [3,H,W], got ", shape_str(img.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_ppm: cannot open ", path);
  int64_t h = img.dim(1), w = img.dim(2);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> raw(static_cast<size_t>(w * h * 3));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        raw[static_cast<size_t>((y * w + x) * 3 + c)] = to_byte(img.data()[(c * h + y) * w + x]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail("write_ppm: write failed for ", path);
}

void write_pgm(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) fail("write_pgm: expected [H,W], got ", shape_str(map.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_pgm: cannot open ", path);
  int64_t h = map.dim(0), w = map.dim(1);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> raw(static_cast<size_t>(w * h));
  for (int64_t i = 0; i < h * w; ++i) raw[static_cast<size_t>(i)] = to_byte(map.data()[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) fail("write_pgm: write failed for ", path);
}

void write_pfm_stack(const std::string& dir, const std::string& prefix, const Tensor& volume) {
  if (volume.rank() != 3 && volume.rank() != 4)
    fail("write_pfm_stack: expected [D,H,W] or [G,D,H,W], got ", shape_str(volume.shape()));
  int64_t groups = volume.rank() == 4 ? volume.dim(0) : 1;
  int64_t bins = volume.dim(volume.rank() - 3);
  int64_t h = volume.dim(volume.rank() - 2), w = volume.dim(volume.rank() - 1);
  int64_t plane = h * w;
  for (int64_t g = 0; g < groups; ++g)
    for (int64_t d = 0; d < bins; ++d) {
      Tensor slice = Tensor::zeros(Shape{h, w});
      const float* src = volume.data() + (g * bins + d) * plane;
      std::copy(src, src + plane, slice.data());
      char name[64];
      if (volume.rank() == 4)
        std::snprintf(name, sizeof(name), "%s_g%lld_b%03lld.pfm", prefix.c_str(),
                      static_cast<long long>(g), static_cast<long long>(d));
      else
        std::snprintf(name, sizeof(name), "%s_b%03lld.pfm", prefix.c_str(),
                      static_cast<long long>(d));
      write_pfm(dir + "/" + name, slice);
    }
}

Tensor read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) fail("read_image: cannot open ", path);
  char m[2] = {0, 0};
  probe.read(m, 2);
  probe.close();
  if (m[0] == 'P' && m[1] == '6') return read_ppm(path);
  if (m[0] == 'P' && m[1] == '5') {
    Tensor g = read_pgm(path);
    int64_t h = g.dim(0), w = g.dim(1);
    Tensor img = Tensor::zeros(Shape{3, h, w});
    for (int64_t c = 0; c < 3; ++c)
      std::copy(g.data(), g.data() + h * w, img.data() + c * h * w);
    return img;
  }
  fail("read_image: ", path, " is neither P6 nor P5");
}

}  // namespace mgev
