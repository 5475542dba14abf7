#ifndef DMREG_MODEL_IO_HPP
#define DMREG_MODEL_IO_HPP

#include <optional>
#include <string>

#include "dmreg/binary_io.hpp"
#include "dmreg/network.hpp"

namespace dmreg {

// DMR1 layout: "DMR1", u32 format version, u32 in_channels, u32 patch_size,
// u32 classes, u32 conv count, per conv u32 (in, out, kernel, stride, pad),
// u64 parameter count, f32 parameters in layout order.
inline constexpr std::uint32_t kModelFormatVersion = 1;

inline void save_model(const std::string& path, const ModelParams<float>& model) {
  detail::BinaryWriter w(path);
  w.bytes("DMR1", 4);
  w.put<std::uint32_t>(kModelFormatVersion);
  const ArchDescriptor& a = model.arch;
  w.put<std::uint32_t>(a.in_channels);
  w.put<std::uint32_t>(a.patch_size);
  w.put<std::uint32_t>(a.classes);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.convs.size()));
  for (const auto& c : a.convs) {
    for (int v : {c.in, c.out, c.kernel, c.stride, c.pad}) w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.put<std::uint64_t>(model.data.size());
  w.put_array<float>(model.data);
  w.close();
}

/// Loads a model. If `expected` is given, the stored descriptor must equal it.
inline ModelParams<float> load_model(const std::string& path, const std::optional<ArchDescriptor>& expected = {}) {
  detail::BinaryReader r(path);
  r.expect_magic("DMR1");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelFormatVersion) {
    throw UnsupportedVersionError("unsupported model format version " + std::to_string(version) + " in " + path);
  }
  ArchDescriptor a;
  a.in_channels = static_cast<int>(r.get<std::uint32_t>());
  a.patch_size = static_cast<int>(r.get<std::uint32_t>());
  a.classes = static_cast<int>(r.get<std::uint32_t>());
  const auto n_convs = r.get<std::uint32_t>();
  if (n_convs > 64) throw DescriptorMismatchError("implausible conv count in " + path);
  for (std::uint32_t i = 0; i < n_convs; ++i) {
    ConvSpec c;
    c.in = static_cast<int>(r.get<std::uint32_t>());
    c.out = static_cast<int>(r.get<std::uint32_t>());
    c.kernel = static_cast<int>(r.get<std::uint32_t>());
    c.stride = static_cast<int>(r.get<std::uint32_t>());
    c.pad = static_cast<int>(r.get<std::uint32_t>());
    a.convs.push_back(c);
  }
  try {
    a.validate();
  } catch (const ShapeError& e) {
    throw DescriptorMismatchError(std::string("invalid architecture in ") + path + ": " + e.what());
  }
  if (expected && !(*expected == a)) throw DescriptorMismatchError("architecture mismatch in " + path);
  ModelParams<float> m(a);
  const auto count = r.get<std::uint64_t>();
  if (count != m.data.size()) throw DescriptorMismatchError("parameter count does not match architecture in " + path);
  r.get_array<float>(m.data);
  if (!r.at_end()) throw ParseError("trailing bytes in " + path);
  return m;
}

}  // namespace dmreg

#endif  // DMREG_MODEL_IO_HPP
