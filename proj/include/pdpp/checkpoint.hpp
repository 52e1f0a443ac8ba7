#pragma once

#include <string>
#include <vector>

#include "pdpp/array.hpp"
#include "pdpp/params.hpp"

namespace pdpp {

inline constexpr char kCheckpointMagic[] = "PDPPCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Array value;
};

// Self-describing container: magic, version, text metadata, named arrays.
//
//   "PDPPCKPT" | u32 version | u32 len, metadata bytes | u32 count |
//   count x (u32 len, name bytes, u32 rank, rank x u32 dim, f32 data...)
//
// All integers and floats are little-endian.
struct Checkpoint {
  std::string metadata;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Parameter store <-> named arrays. Loading requires an exact name/shape match.
std::vector<NamedArray> export_parameters(const ParameterStore<float>& store);
void import_parameters(ParameterStore<float>& store, const std::vector<NamedArray>& arrays);

}  // namespace pdpp
