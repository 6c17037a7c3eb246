#include "ocrseg/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <string>

#include "ocrseg/errors.hpp"

namespace ocrseg {

namespace {

void write_pnm(const std::filesystem::path& path, const Image8& img, const char* magic, std::size_t channels) {
  if (img.channels != channels) throw DataError(path.string() + ": wrong channel count for " + magic);
  if (img.pixels.size() != img.width * img.height * channels) throw DataError(path.string() + ": pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << magic << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

// Next header token, skipping whitespace and '#' comments.
std::string token(std::istream& in, const std::filesystem::path& path) {
  std::string t;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!t.empty()) break;
    } else {
      t.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  if (t.empty()) throw DataError(path.string() + ": truncated NetPBM header");
  return t;
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string t = token(in, path);
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(t, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != t.size()) throw DataError(path.string() + ": bad header field '" + t + "'");
  return v;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image8& img) { write_pnm(path, img, "P6", 3); }
void write_pgm(const std::filesystem::path& path, const Image8& img) { write_pnm(path, img, "P5", 1); }

Image8 read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = token(in, path);
  Image8 img;
  if (magic == "P6") {
    img.channels = 3;
  } else if (magic == "P5") {
    img.channels = 1;
  } else {
    throw DataError(path.string() + ": unsupported NetPBM magic '" + magic + "'");
  }
  img.width = header_number(in, path);
  img.height = header_number(in, path);
  const std::size_t maxval = header_number(in, path);
  if (maxval != 255) throw DataError(path.string() + ": only maxval 255 is supported");
  if (img.width == 0 || img.height == 0) throw DataError(path.string() + ": empty image");
  img.pixels.resize(img.width * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw DataError(path.string() + ": truncated pixel data");
  return img;
}

}  // namespace ocrseg
