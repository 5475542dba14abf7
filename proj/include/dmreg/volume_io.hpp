#ifndef DMREG_VOLUME_IO_HPP
#define DMREG_VOLUME_IO_HPP

#include <string>
#include <vector>

#include "dmreg/binary_io.hpp"
#include "dmreg/volume.hpp"

namespace dmreg {

// V3D1 layout: "V3D1", u32 nx ny nz, f64 sx sy sz, f64 ox oy oz, f32 voxels (x fastest).
inline constexpr std::size_t kV3dHeaderBytes = 4 + 4 * 3 + 8 * 3 + 8 * 3;

inline void write_volume(const std::string& path, const Volume& vol) {
  detail::BinaryWriter w(path);
  w.bytes("V3D1", 4);
  const Geometry& g = vol.geometry();
  for (int a = 0; a < 3; ++a) w.put<std::uint32_t>(static_cast<std::uint32_t>(g.dims[a]));
  for (int a = 0; a < 3; ++a) w.put<double>(g.spacing[a]);
  for (int a = 0; a < 3; ++a) w.put<double>(g.origin[a]);
  w.put_array<float>(vol.voxels());
  w.close();
}

inline Volume read_volume(const std::string& path) {
  detail::BinaryReader r(path);
  r.expect_magic("V3D1");
  Geometry g;
  std::uint32_t n[3];
  for (auto& v : n) v = r.get<std::uint32_t>();
  if (n[0] == 0 || n[1] == 0 || n[2] == 0 || n[0] > (1u << 16) || n[1] > (1u << 16) || n[2] > (1u << 16)) {
    throw ParseError("implausible dims in " + path);
  }
  g.dims = {static_cast<int>(n[0]), static_cast<int>(n[1]), static_cast<int>(n[2])};
  for (int a = 0; a < 3; ++a) g.spacing[a] = r.get<double>();
  for (int a = 0; a < 3; ++a) g.origin[a] = r.get<double>();
  if (!(g.spacing.x > 0 && g.spacing.y > 0 && g.spacing.z > 0)) throw ParseError("non-positive spacing in " + path);
  std::vector<float> voxels(g.dims.count());
  r.get_array<float>(voxels);
  if (!r.at_end()) throw ParseError("trailing bytes in " + path);
  return Volume(g, std::move(voxels));
}

}  // namespace dmreg

#endif  // DMREG_VOLUME_IO_HPP
