#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace metadiv {

// Scalar field over a 3D grid, x-fastest storage: data[x + sx*(y + sy*z)].
struct Field3 {
  int sx = 0, sy = 0, sz = 0;
  std::vector<double> data;

  Field3() = default;
  Field3(int x, int y, int z, double fill = 0.0)
      : sx(x), sy(y), sz(z), data(static_cast<std::size_t>(x) * y * z, fill) {}

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(sx) * (y + static_cast<std::size_t>(sy) * z);
  }

  double& at(int x, int y, int z) { return data[index(x, y, z)]; }
  double at(int x, int y, int z) const { return data[index(x, y, z)]; }

  std::size_t size() const { return data.size(); }

  bool same_shape(const Field3& o) const { return sx == o.sx && sy == o.sy && sz == o.sz; }

  bool operator==(const Field3& o) const {
    return sx == o.sx && sy == o.sy && sz == o.sz && data == o.data;
  }
};

inline int wrap(int i, int n) {
  int r = i % n;
  return r < 0 ? r + n : r;
}

// Torus roll: out(x,y,z) = f(x+dx, y+dy, z+dz), indices wrapped.
inline Field3 roll(const Field3& f, int dx, int dy, int dz) {
  Field3 out(f.sx, f.sy, f.sz);
  for (int z = 0; z < f.sz; ++z)
    for (int y = 0; y < f.sy; ++y)
      for (int x = 0; x < f.sx; ++x)
        out.at(x, y, z) = f.at(wrap(x + dx, f.sx), wrap(y + dy, f.sy), wrap(z + dz, f.sz));
  return out;
}

}  // namespace metadiv
