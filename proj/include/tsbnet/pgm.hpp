#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsbnet {

struct PgmImage {
  int w = 0;
  int h = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(int row, int col) const {
    return pixels[static_cast<std::size_t>(row) * w + col];
  }
};

// Binary 8-bit PGM (P5, maxval 255).
inline void write_pgm(const std::string& path, const PgmImage& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

inline PgmImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw std::runtime_error("not a P5 PGM: " + path);

  auto next_int = [&]() {
    // skip whitespace and '#' comment lines between header fields
    int c = f.peek();
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else {
        f.get();
      }
      c = f.peek();
    }
    int v = -1;
    f >> v;
    if (!f) throw std::runtime_error("bad PGM header: " + path);
    return v;
  };

  PgmImage img;
  img.w = next_int();
  img.h = next_int();
  const int maxval = next_int();
  if (img.w <= 0 || img.h <= 0 || maxval != 255)
    throw std::runtime_error("unsupported PGM geometry in " + path);
  f.get();  // single whitespace after maxval
  img.pixels.resize(static_cast<std::size_t>(img.w) * img.h);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error("truncated PGM data in " + path);
  return img;
}

}  // namespace tsbnet
