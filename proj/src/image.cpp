#include "efld/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace efld {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(c);
  }
  return token;
}

Index header_number(std::istream& in, const std::filesystem::path& path) {
  const std::string token = header_token(in);
  try {
    std::size_t used = 0;
    const long v = std::stol(token, &used);
    if (used != token.size() || v <= 0) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw FormatError("image " + path.string() + ": bad header field '" + token + "'");
  }
}

}  // namespace

Tensorf read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  const std::string magic = header_token(in);
  if (magic != "P6" && magic != "P5") {
    throw FormatError("image " + path.string() + ": unsupported format '" + magic + "' (expected P6 or P5)");
  }
  const Index width = header_number(in, path);
  const Index height = header_number(in, path);
  const Index maxval = header_number(in, path);
  if (maxval > 255) throw FormatError("image " + path.string() + ": only 8-bit images are supported");
  const Index channels = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(std::size_t(width * height * channels));
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (in.gcount() != std::streamsize(raw.size())) throw FormatError("image " + path.string() + ": truncated pixel data");
  Tensorf image({height, width, 3});
  for (Index p = 0; p < height * width; ++p) {
    for (Index c = 0; c < 3; ++c) image[p * 3 + c] = from_byte(raw[std::size_t(p * channels + (channels == 3 ? c : 0))], unsigned(maxval));
  }
  return image;
}

void write_image(const Tensorf& image, const std::filesystem::path& path) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("write_image: expected (H,W,3), got " + shape_string(image.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image " + path.string());
  out << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::vector<unsigned char> raw(std::size_t(image.size()));
  for (Index i = 0; i < image.size(); ++i) {
    raw[std::size_t(i)] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!out) throw IoError("failed writing image " + path.string());
}

Tensorf resize_bilinear(const Tensorf& image, Index height, Index width) {
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h == height && w == width) return image;
  Tensorf out({height, width, c});
  const double sy = double(h) / double(height), sx = double(w) / double(width);
  for (Index y = 0; y < height; ++y) {
    const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(h - 1));
    const Index y0 = Index(fy), y1 = std::min(y0 + 1, h - 1);
    const float wy = float(fy - double(y0));
    for (Index x = 0; x < width; ++x) {
      const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(w - 1));
      const Index x0 = Index(fx), x1 = std::min(x0 + 1, w - 1);
      const float wx = float(fx - double(x0));
      for (Index ch = 0; ch < c; ++ch) {
        const float top = image[(y0 * w + x0) * c + ch] * (1 - wx) + image[(y0 * w + x1) * c + ch] * wx;
        const float bottom = image[(y1 * w + x0) * c + ch] * (1 - wx) + image[(y1 * w + x1) * c + ch] * wx;
        out[(y * width + x) * c + ch] = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

}  // namespace efld
