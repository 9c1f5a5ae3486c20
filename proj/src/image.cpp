#include "cityradar/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "cityradar/errors.hpp"

namespace cityradar {

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h) {
  if (w <= 0 || h <= 0) throw InvalidArgument("image dimensions must be positive");
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t k = 0; k < pixels.size(); k += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + k);
}

void RgbImage::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  std::copy(c.begin(), c.end(), pixels.begin() + (static_cast<std::size_t>(y) * width + x) * 3);
}

Rgb RgbImage::get(int x, int y) const {
  const auto k = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[k], pixels[k + 1], pixels[k + 2]};
}

void RgbImage::draw_line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

void RgbImage::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
  }
}

std::vector<std::uint8_t> to_gray(const Eigen::MatrixXd& m, double lo, double hi) {
  if (!(hi > lo)) throw InvalidArgument("to_gray: empty value range");
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double t = std::clamp((m(i, j) - lo) / (hi - lo), 0.0, 1.0);
      out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * t)));
    }
  }
  return out;
}

RgbImage diverging_image(const Eigen::MatrixXd& m, double limit) {
  if (!(limit > 0.0)) limit = 1.0;
  RgbImage img(static_cast<int>(m.cols()), static_cast<int>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double t = std::clamp(m(i, j) / limit, -1.0, 1.0);
      const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(t))));
      img.set(static_cast<int>(j), static_cast<int>(i), t >= 0 ? Rgb{255, fade, fade} : Rgb{fade, fade, 255});
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& m, double lo, double hi) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  const auto px = to_gray(m, lo, hi);
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw ParseError(path.string() + ": unsupported PPM header");
  is.get();
  RgbImage img(w, h);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!is) throw ParseError(path.string() + ": truncated PPM data");
  return img;
}

}  // namespace cityradar
