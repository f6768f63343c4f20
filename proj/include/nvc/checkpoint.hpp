#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace nvc {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Container: magic "NVCK", format version u32, length-prefixed UTF-8 config
// snapshot, section count u32, then named f32 tensor sections
// {name_len u32, name, rank u32, dims u32 x rank, payload little-endian f32}.
// All integers little-endian. Round-trips are byte-identical.

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'N', 'V', 'C', 'K'};

struct TensorSection {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;

  uint64_t numel() const {
    uint64_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<TensorSection> sections;

  const TensorSection* find(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
};

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(buf), 4);
}

inline uint32_t read_u32(std::istream& is, const char* ctx) {
  unsigned char buf[4];
  if (!is.read(reinterpret_cast<char*>(buf), 4))
    throw CheckpointError(std::string("unexpected end of section while reading ") +
                          ctx);
  return static_cast<uint32_t>(buf[0]) | (static_cast<uint32_t>(buf[1]) << 8) |
         (static_cast<uint32_t>(buf[2]) << 16) |
         (static_cast<uint32_t>(buf[3]) << 24);
}

inline void write_f32_le(std::ostream& os, const std::vector<float>& v) {
  static_assert(sizeof(float) == 4);
  // x86/ARM little-endian hosts write payloads directly.
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * 4));
}

inline void read_f32_le(std::istream& is, std::vector<float>& v) {
  if (!is.read(reinterpret_cast<char*>(v.data()),
               static_cast<std::streamsize>(v.size() * 4)))
    throw CheckpointError("unexpected end of section while reading payload");
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const Checkpoint& ckpt) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp + " for writing");
    os.write(kCheckpointMagic, 4);
    detail::write_u32(os, ckpt.version);
    detail::write_u32(os, static_cast<uint32_t>(ckpt.config_text.size()));
    os.write(ckpt.config_text.data(),
             static_cast<std::streamsize>(ckpt.config_text.size()));
    detail::write_u32(os, static_cast<uint32_t>(ckpt.sections.size()));
    for (const auto& s : ckpt.sections) {
      detail::write_u32(os, static_cast<uint32_t>(s.name.size()));
      os.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
      detail::write_u32(os, static_cast<uint32_t>(s.dims.size()));
      for (uint32_t d : s.dims) detail::write_u32(os, d);
      if (s.data.size() != s.numel())
        throw CheckpointError("section " + s.name + " dims do not match payload");
      detail::write_f32_le(os, s.data);
    }
    if (!os) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointError("bad magic: " + path.string() +
                          " is not an NVCK checkpoint");
  Checkpoint ckpt;
  ckpt.version = detail::read_u32(is, "version");
  if (ckpt.version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(ckpt.version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const uint32_t cfg_len = detail::read_u32(is, "config length");
  ckpt.config_text.resize(cfg_len);
  if (cfg_len > 0 &&
      !is.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len)))
    throw CheckpointError("unexpected end of section while reading config");
  const uint32_t n_sections = detail::read_u32(is, "section count");
  ckpt.sections.resize(n_sections);
  for (auto& s : ckpt.sections) {
    const uint32_t name_len = detail::read_u32(is, "section name length");
    s.name.resize(name_len);
    if (name_len > 0 &&
        !is.read(s.name.data(), static_cast<std::streamsize>(name_len)))
      throw CheckpointError("unexpected end of section while reading name");
    const uint32_t rank = detail::read_u32(is, "section rank");
    s.dims.resize(rank);
    for (auto& d : s.dims) d = detail::read_u32(is, "section dim");
    s.data.resize(s.numel());
    detail::read_f32_le(is, s.data);
  }
  return ckpt;
}

}  // namespace nvc
