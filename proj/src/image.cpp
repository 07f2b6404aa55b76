#include "endoclip/image.hpp"

#include "endoclip/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace endoclip {

Image Image::zeros(Index channels, Index height, Index width) {
  Image img;
  img.planes.assign(channels, Matrix::Zero(height, width));
  return img;
}

bool operator==(const Image& a, const Image& b) {
  if (a.channels() != b.channels()) return false;
  for (Index c = 0; c < a.channels(); ++c) {
    if (a.planes[c].rows() != b.planes[c].rows() || a.planes[c].cols() != b.planes[c].cols() ||
        a.planes[c] != b.planes[c]) {
      return false;
    }
  }
  return true;
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const std::string magic = next_token(in);
  Index channels = 0;
  if (magic == "P5") channels = 1;
  else if (magic == "P6") channels = 3;
  else throw DataError("unsupported image format in " + path.string() + " (want P5/P6)");
  Index width = 0, height = 0;
  int maxval = 0;
  try {
    width = std::stol(next_token(in));
    height = std::stol(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw DataError("malformed image header in " + path.string());
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw DataError("unsupported image geometry in " + path.string());
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width * height * channels));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError("truncated image data in " + path.string());
  }
  Image img = Image::zeros(channels, height, width);
  std::size_t k = 0;
  for (Index y = 0; y < height; ++y)
    for (Index x = 0; x < width; ++x)
      for (Index c = 0; c < channels; ++c) img.planes[c](y, x) = bytes[k++] / double(maxval);
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) {
    throw DataError("write_pnm: need 1 or 3 channels, got " + std::to_string(image.channels()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << (image.channels() == 1 ? "P5" : "P6") << '\n'
      << image.width() << ' ' << image.height() << "\n255\n";
  for (Index y = 0; y < image.height(); ++y)
    for (Index x = 0; x < image.width(); ++x)
      for (Index c = 0; c < image.channels(); ++c) {
        const double v = std::clamp(image.planes[c](y, x), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
}

Image crop_black_border(const Image& image, double threshold) {
  Index top = image.height(), bottom = -1, left = image.width(), right = -1;
  for (Index y = 0; y < image.height(); ++y) {
    for (Index x = 0; x < image.width(); ++x) {
      double v = 0.0;
      for (const auto& p : image.planes) v = std::max(v, p(y, x));
      if (v > threshold) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
    }
  }
  if (bottom < 0) return image;
  Image out;
  for (const auto& p : image.planes) {
    out.planes.push_back(p.block(top, left, bottom - top + 1, right - left + 1));
  }
  return out;
}

Image resize_bilinear(const Image& image, Index height, Index width) {
  if (height <= 0 || width <= 0) throw ConfigError("resize: target size must be positive");
  const double sy = static_cast<double>(image.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width()) / static_cast<double>(width);
  const Index maxy = image.height() - 1, maxx = image.width() - 1;
  Image out = Image::zeros(image.channels(), height, width);
  for (Index y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(maxy));
    const Index y0 = static_cast<Index>(std::floor(fy));
    const Index y1 = std::min(y0 + 1, maxy);
    const double wy = fy - static_cast<double>(y0);
    for (Index x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(maxx));
      const Index x0 = static_cast<Index>(std::floor(fx));
      const Index x1 = std::min(x0 + 1, maxx);
      const double wx = fx - static_cast<double>(x0);
      for (Index c = 0; c < image.channels(); ++c) {
        const Matrix& p = image.planes[c];
        const double top = p(y0, x0) * (1 - wx) + p(y0, x1) * wx;
        const double bot = p(y1, x0) * (1 - wx) + p(y1, x1) * wx;
        out.planes[c](y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Image load_image(const std::filesystem::path& path, Index size, Index channels) {
  Image img = resize_bilinear(crop_black_border(read_pnm(path)), size, size);
  if (img.channels() == channels) return img;
  if (img.channels() == 1) {
    img.planes.resize(channels, img.planes.front());
    return img;
  }
  throw DataError(path.string() + ": " + std::to_string(img.channels()) +
                  " channels where the model expects " + std::to_string(channels));
}

}  // namespace endoclip
