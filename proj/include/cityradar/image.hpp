#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace cityradar {

using Rgb = std::array<std::uint8_t, 3>;

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {255, 255, 255});

  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const;
  void draw_line(int x0, int y0, int x1, int y1, Rgb c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
};

/// Grey image with values scaled from [lo, hi]; row 0 of `m` ends up at the top.
std::vector<std::uint8_t> to_gray(const Eigen::MatrixXd& m, double lo, double hi);

/// Diverging blue/white/red map for values in [-limit, limit].
RgbImage diverging_image(const Eigen::MatrixXd& m, double limit);

void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& m, double lo = 0.0, double hi = 1.0);
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);

}  // namespace cityradar
