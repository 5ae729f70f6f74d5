#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "posekit/common.hpp"
#include "posekit/errors.hpp"

namespace posekit {

// Row-major RGB image, channels in [0, 1].
struct ImageRGB {
  int width = 0, height = 0;
  std::vector<float> pixels;  // 3 * width * height

  static ImageRGB filled(int w, int h, float r = 0, float g = 0, float b = 0) {
    ImageRGB img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<size_t>(3) * w * h);
    for (size_t i = 0; i + 2 < img.pixels.size(); i += 3) {
      img.pixels[i] = r;
      img.pixels[i + 1] = g;
      img.pixels[i + 2] = b;
    }
    return img;
  }

  float& at(int x, int y, int c) {
    return pixels[3 * (static_cast<size_t>(y) * width + x) + static_cast<size_t>(c)];
  }
  float at(int x, int y, int c) const {
    return pixels[3 * (static_cast<size_t>(y) * width + x) + static_cast<size_t>(c)];
  }

  bool same_size(const ImageRGB& o) const { return width == o.width && height == o.height; }
};

namespace imgdetail {

inline std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

inline void put_u32be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

inline std::uint32_t get_u32be(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

inline void append_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc =
      ::crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_u32be(out, static_cast<std::uint32_t>(crc));
}

}  // namespace imgdetail

// ---------------------------------------------------------------------------
// PNG: 8-bit, non-interlaced. Writer emits RGB; reader accepts gray, RGB and
// RGBA (alpha dropped). Compression through zlib.
// ---------------------------------------------------------------------------

inline std::string encode_png(const ImageRGB& img) {
  if (img.width <= 0 || img.height <= 0) throw ShapeError("encode_png: empty image");
  const int w = img.width, h = img.height;
  std::vector<std::uint8_t> raw(static_cast<size_t>(h) * (1 + 3 * static_cast<size_t>(w)));
  size_t pos = 0;
  for (int y = 0; y < h; ++y) {
    raw[pos++] = 0;  // filter: none
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) raw[pos++] = imgdetail::to_byte(img.at(x, y, c));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(bound);
  if (compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                Z_DEFAULT_COMPRESSION) != Z_OK) {
    throw IoError("encode_png: deflate failed");
  }
  packed.resize(bound);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  imgdetail::put_u32be(ihdr, static_cast<std::uint32_t>(w));
  imgdetail::put_u32be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  imgdetail::append_chunk(out, "IHDR", ihdr);
  imgdetail::append_chunk(out, "IDAT",
                          std::string(reinterpret_cast<const char*>(packed.data()), packed.size()));
  imgdetail::append_chunk(out, "IEND", "");
  return out;
}

inline ImageRGB decode_png(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const size_t n = bytes.size();
  if (n < 8 || std::memcmp(p, "\x89PNG\r\n\x1a\n", 8) != 0) {
    throw ParseError("decode_png: bad signature");
  }
  size_t pos = 8;
  int w = 0, h = 0, color = -1, channels = 0;
  std::string idat;
  while (pos + 8 <= n) {
    const std::uint32_t len = imgdetail::get_u32be(p + pos);
    const std::string type(reinterpret_cast<const char*>(p + pos + 4), 4);
    if (pos + 12 + len > n) throw ParseError("decode_png: truncated chunk");
    const unsigned char* data = p + pos + 8;
    if (type == "IHDR") {
      w = static_cast<int>(imgdetail::get_u32be(data));
      h = static_cast<int>(imgdetail::get_u32be(data + 4));
      const int depth = data[8];
      color = data[9];
      if (depth != 8) throw ParseError("decode_png: only 8-bit depth supported");
      if (color != 0 && color != 2 && color != 6) {
        throw ParseError("decode_png: unsupported color type " + std::to_string(color));
      }
      if (data[12] != 0) throw ParseError("decode_png: interlaced PNG not supported");
      channels = color == 0 ? 1 : (color == 2 ? 3 : 4);
    } else if (type == "IDAT") {
      idat.append(reinterpret_cast<const char*>(data), len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || channels == 0) throw ParseError("decode_png: missing IHDR");

  const size_t stride = static_cast<size_t>(w) * channels;
  std::vector<std::uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size()) {
    throw ParseError("decode_png: inflate failed");
  }

  std::vector<std::uint8_t> recon(static_cast<size_t>(h) * stride);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t filter = raw[static_cast<size_t>(y) * (stride + 1)];
    const std::uint8_t* src = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
    std::uint8_t* dst = recon.data() + static_cast<size_t>(y) * stride;
    const std::uint8_t* up = y > 0 ? dst - stride : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      const int a = i >= static_cast<size_t>(channels) ? dst[i - channels] : 0;
      const int b = up ? up[i] : 0;
      const int c = (up && i >= static_cast<size_t>(channels)) ? up[i - channels] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += imgdetail::paeth(a, b, c); break;
        default: throw ParseError("decode_png: bad filter byte");
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
  }

  ImageRGB img = ImageRGB::filled(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::uint8_t* px = recon.data() + static_cast<size_t>(y) * stride +
                               static_cast<size_t>(x) * channels;
      if (channels == 1) {
        const float g = imgdetail::from_byte(px[0]);
        img.at(x, y, 0) = img.at(x, y, 1) = img.at(x, y, 2) = g;
      } else {
        img.at(x, y, 0) = imgdetail::from_byte(px[0]);
        img.at(x, y, 1) = imgdetail::from_byte(px[1]);
        img.at(x, y, 2) = imgdetail::from_byte(px[2]);
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255): dependency-free interchange for tests.
// ---------------------------------------------------------------------------

inline std::string encode_ppm(const ImageRGB& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.reserve(out.size() + static_cast<size_t>(3) * img.width * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.push_back(static_cast<char>(imgdetail::to_byte(img.at(x, y, c))));
  return out;
}

inline ImageRGB decode_ppm(const std::string& bytes) {
  size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") throw ParseError("decode_ppm: not a P6 file");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  if (token() != "255") throw ParseError("decode_ppm: only maxval 255 supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() - pos < static_cast<size_t>(3) * w * h) {
    throw ParseError("decode_ppm: truncated pixel data");
  }
  ImageRGB img = ImageRGB::filled(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = imgdetail::from_byte(static_cast<std::uint8_t>(bytes[pos++]));
  return img;
}

// Extension-based dispatch (.png or .ppm).
inline void save_image(const ImageRGB& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_image: cannot open " + path);
  const bool png = path.size() >= 4 && path.substr(path.size() - 4) == ".png";
  const std::string bytes = png ? encode_png(img) : encode_ppm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline ImageRGB load_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_image: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 8 && bytes.compare(0, 2, "P6") == 0) return decode_ppm(bytes);
  return decode_png(bytes);
}

// ---------------------------------------------------------------------------
// Sampling / resize
// ---------------------------------------------------------------------------

// Bilinear sample at continuous (x, y); black outside the image.
inline void sample_bilinear(const ImageRGB& img, double x, double y, float rgb[3]) {
  rgb[0] = rgb[1] = rgb[2] = 0.0f;
  if (x < 0 || y < 0 || x > img.width - 1 || y > img.height - 1) return;
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  for (int c = 0; c < 3; ++c) {
    const double top = (1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
    const double bot = (1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
    rgb[c] = static_cast<float>((1 - fy) * top + fy * bot);
  }
}

inline ImageRGB resize_bilinear(const ImageRGB& src, int w, int h) {
  if (src.width == w && src.height == h) return src;
  ImageRGB out = ImageRGB::filled(w, h);
  const double sx = w > 1 ? static_cast<double>(src.width - 1) / (w - 1) : 0.0;
  const double sy = h > 1 ? static_cast<double>(src.height - 1) / (h - 1) : 0.0;
  float rgb[3];
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      sample_bilinear(src, x * sx, y * sy, rgb);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// RGB <-> HSV (hexcone). H in [0,1), S,V in [0,1]; math in double so the
// augment tests are bit-stable.
// ---------------------------------------------------------------------------

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double c = mx - mn;
  v = mx;
  s = mx > 0 ? c / mx : 0.0;
  if (c <= 0) {
    h = 0.0;
    return;
  }
  double hp;
  if (mx == r) {
    hp = std::fmod((g - b) / c, 6.0);
  } else if (mx == g) {
    hp = (b - r) / c + 2.0;
  } else {
    hp = (r - g) / c + 4.0;
  }
  h = hp / 6.0;
  if (h < 0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hp = h * 6.0;
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  const double m = v - c;
  double rr = 0, gg = 0, bb = 0;
  if (hp < 1) {
    rr = c; gg = x;
  } else if (hp < 2) {
    rr = x; gg = c;
  } else if (hp < 3) {
    gg = c; bb = x;
  } else if (hp < 4) {
    gg = x; bb = c;
  } else if (hp < 5) {
    rr = x; bb = c;
  } else {
    rr = c; bb = x;
  }
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

}  // namespace posekit
