// quadric.hpp - symmetric 4x4 error quadric stored as its 10 upper-triangle terms.
#pragma once

#include <array>
#include <optional>

namespace mforge {

using Vec3d = std::array<double, 3>;

/// Q = [a2 ab ac ad; ab b2 bc bd; ac bc c2 cd; ad bd cd d2].
/// error(v) = v^T Q v with v = (x, y, z, 1).
class Quadric {
 public:
  Quadric() = default;

  /// Quadric of plane n.x + d = 0 scaled by `weight`; n need not be unit length.
  static Quadric from_plane(double a, double b, double c, double d, double weight = 1.0);

  double error(const Vec3d& v) const;

  /// Determinant of the upper-left 3x3 block.
  double determinant3() const;

  /// Minimizer of error() when |det| > threshold.
  std::optional<Vec3d> minimizer(double singular_threshold) const;

  Quadric& operator+=(const Quadric& o);
  friend Quadric operator+(Quadric a, const Quadric& b) { return a += b; }
  Quadric& operator*=(double s);

  const std::array<double, 10>& coefficients() const { return m_; }
  double& operator[](int i) { return m_[i]; }
  double operator[](int i) const { return m_[i]; }

  /// Full matrix entry (row, col), 0 <= row, col < 4.
  double at(int row, int col) const;

  bool operator==(const Quadric&) const = default;

 private:
  // a2, ab, ac, ad, b2, bc, bd, c2, cd, d2
  std::array<double, 10> m_{};
};

}  // namespace mforge
