#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

namespace hydro {

/// Row-major 2D grid; rows = height, cols = width.
template <class Scalar>
using Image = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Gray8 = Image<std::uint8_t>;
using ImageF = Image<float>;
using ImageD = Image<double>;
using Mask = Image<bool>;

/// Three equally-sized channel planes (RGB order).
template <class Scalar>
using Planes = std::array<Image<Scalar>, 3>;

using Rgb8 = Planes<std::uint8_t>;

enum class Border { clamp, reflect };

/// Maps an out-of-range integer coordinate into [0, n) by the given rule.
/// Reflection mirrors about the edge pixel centers (…2 1 0 1 2…).
inline Eigen::Index border_index(Eigen::Index i, Eigen::Index n, Border border) {
  if (n == 1) return 0;
  if (border == Border::clamp) return std::clamp<Eigen::Index>(i, 0, n - 1);
  const Eigen::Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Bilinear sample at continuous pixel-center coordinates (y, x); pixel (r, c) sits at (r, c).
template <class Derived>
double sample_bilinear(const Eigen::ArrayBase<Derived>& img, double y, double x, Border border) {
  const Eigen::Index rows = img.rows(), cols = img.cols();
  const double fy = std::floor(y), fx = std::floor(x);
  const double wy = y - fy, wx = x - fx;
  const auto y0 = static_cast<Eigen::Index>(fy), x0 = static_cast<Eigen::Index>(fx);
  const Eigen::Index ya = border_index(y0, rows, border), yb = border_index(y0 + 1, rows, border);
  const Eigen::Index xa = border_index(x0, cols, border), xb = border_index(x0 + 1, cols, border);
  const double top = (1.0 - wx) * static_cast<double>(img(ya, xa)) + wx * static_cast<double>(img(ya, xb));
  const double bot = (1.0 - wx) * static_cast<double>(img(yb, xa)) + wx * static_cast<double>(img(yb, xb));
  return (1.0 - wy) * top + wy * bot;
}

/// Bilinear resize with half-pixel centers and edge clamping. Same-size input is copied unchanged.
template <class Out, class Derived>
Image<Out> resize_bilinear(const Eigen::ArrayBase<Derived>& img, Eigen::Index rows, Eigen::Index cols) {
  Image<Out> out(rows, cols);
  if (rows == img.rows() && cols == img.cols()) {
    out = img.template cast<Out>();
    return out;
  }
  const double sy = static_cast<double>(img.rows()) / static_cast<double>(rows);
  const double sx = static_cast<double>(img.cols()) / static_cast<double>(cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double y = (static_cast<double>(r) + 0.5) * sy - 0.5;
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * sx - 0.5;
      out(r, c) = static_cast<Out>(sample_bilinear(img, y, x, Border::clamp));
    }
  }
  return out;
}

/// Round and saturate a real image to 8 bits.
template <class Derived>
Gray8 to_gray8(const Eigen::ArrayBase<Derived>& img) {
  return img.template cast<double>().round().max(0.0).min(255.0).template cast<std::uint8_t>();
}

}  // namespace hydro
