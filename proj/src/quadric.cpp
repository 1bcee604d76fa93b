#include "mforge/quadric.hpp"

#include <cmath>

namespace mforge {

namespace {
// Index of (row, col) in the packed upper triangle.
constexpr int kIndex[4][4] = {{0, 1, 2, 3}, {1, 4, 5, 6}, {2, 5, 7, 8}, {3, 6, 8, 9}};
}  // namespace

Quadric Quadric::from_plane(double a, double b, double c, double d, double weight) {
  Quadric q;
  q.m_ = {a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d};
  q *= weight;
  return q;
}

double Quadric::at(int row, int col) const { return m_[kIndex[row][col]]; }

double Quadric::error(const Vec3d& v) const {
  const double x = v[0], y = v[1], z = v[2];
  return m_[0] * x * x + 2 * m_[1] * x * y + 2 * m_[2] * x * z + 2 * m_[3] * x + m_[4] * y * y +
         2 * m_[5] * y * z + 2 * m_[6] * y + m_[7] * z * z + 2 * m_[8] * z + m_[9];
}

double Quadric::determinant3() const {
  const double a = m_[0], b = m_[1], c = m_[2], e = m_[4], f = m_[5], i = m_[7];
  return a * (e * i - f * f) - b * (b * i - f * c) + c * (b * f - e * c);
}

std::optional<Vec3d> Quadric::minimizer(double singular_threshold) const {
  const double det = determinant3();
  if (!(std::abs(det) > singular_threshold)) return std::nullopt;
  const double a = m_[0], b = m_[1], c = m_[2], e = m_[4], f = m_[5], i = m_[7];
  // Solve A x = -[ad, bd, cd] by Cramer's rule (A symmetric).
  const double r0 = -m_[3], r1 = -m_[6], r2 = -m_[8];
  const double x = (r0 * (e * i - f * f) - b * (r1 * i - f * r2) + c * (r1 * f - e * r2)) / det;
  const double y = (a * (r1 * i - f * r2) - r0 * (b * i - f * c) + c * (b * r2 - r1 * c)) / det;
  const double z = (a * (e * r2 - r1 * f) - b * (b * r2 - r1 * c) + r0 * (b * f - e * c)) / det;
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) return std::nullopt;
  return Vec3d{x, y, z};
}

Quadric& Quadric::operator+=(const Quadric& o) {
  for (int k = 0; k < 10; ++k) m_[k] += o.m_[k];
  return *this;
}

Quadric& Quadric::operator*=(double s) {
  for (auto& v : m_) v *= s;
  return *this;
}

}  // namespace mforge
