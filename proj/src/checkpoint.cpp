#include "pdpp/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "pdpp/binio.hpp"

namespace pdpp {

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open " + path + " for reading");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::string& path, const std::vector<unsigned char>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::kIo, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::kIo, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& text) {
  write_file_atomic(path, std::vector<unsigned char>(text.begin(), text.end()));
}

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.str(ckpt.metadata);
  w.u32(static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    w.str(a.name);
    w.u32(static_cast<std::uint32_t>(a.value.rank()));
    for (int d : a.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float f : a.value.vec()) w.f32(f);
  }
  return w.data();
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.fixed(8, "magic") != std::string(kCheckpointMagic, 8)) r.error("bad magic (expected PDPPCKPT)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) r.error("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.metadata = r.str("metadata");
  const std::uint32_t count = r.u32("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str("array name");
    const std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) r.error("invalid rank " + std::to_string(rank) + " for array " + a.name);
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32("dimension");
      if (dim == 0 || dim > (1u << 30)) r.error("invalid dimension for array " + a.name);
      shape.push_back(static_cast<int>(dim));
      n *= dim;
    }
    r.need(n * 4, "array data");
    std::vector<float> data(n);
    for (auto& f : data) f = r.f32("array data");
    a.value = Array(std::move(shape), std::move(data));
    ckpt.arrays.push_back(std::move(a));
  }
  if (!r.at_end()) r.error("trailing bytes after last array");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path));
}

std::vector<NamedArray> export_parameters(const ParameterStore<float>& store) {
  std::vector<NamedArray> out;
  for (std::size_t i = 0; i < store.size(); ++i) out.push_back({store[i].name, store[i].value});
  return out;
}

void import_parameters(ParameterStore<float>& store, const std::vector<NamedArray>& arrays) {
  require(arrays.size() == store.size(), ErrorCode::kFormat,
          "checkpoint holds " + std::to_string(arrays.size()) + " arrays, model expects " +
              std::to_string(store.size()));
  for (const auto& a : arrays) {
    Parameter<float>* p = store.find(a.name);
    require(p != nullptr, ErrorCode::kFormat, "checkpoint array " + a.name + " has no matching parameter");
    require(p->value.shape() == a.value.shape(), ErrorCode::kFormat,
            "shape mismatch for " + a.name + ": checkpoint " + shape_str(a.value.shape()) + ", model " +
                shape_str(p->value.shape()));
    p->value = a.value;
  }
}

}  // namespace pdpp
