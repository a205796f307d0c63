#include "dinomm/checkpoint.hpp"

#include <cstring>

#include "dinomm/serial.hpp"

namespace dinomm {

namespace {

void write_array(ByteWriter& w, const Array& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) w.f64(v[i]);
}

Array read_array(ByteReader& r) {
  const std::uint32_t n = r.u32();
  Array v(static_cast<Index>(n));
  for (std::uint32_t i = 0; i < n; ++i) v[static_cast<Index>(i)] = r.f64();
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  if (ckpt.student.size() != ckpt.teacher.size() || ckpt.student.size() != ckpt.adam.size()) {
    throw ContractError("save_checkpoint: student/teacher/adam key sets differ in size");
  }
  ByteWriter w;
  w.bytes(reinterpret_cast<const std::uint8_t*>("DMMC"), 4);
  w.u16(1);
  w.str(ckpt.config_text);
  w.u64(ckpt.config_hash);
  w.u64(ckpt.seed);
  w.u64(static_cast<std::uint64_t>(ckpt.step));
  w.u64(static_cast<std::uint64_t>(ckpt.epochs_done));
  w.u64(static_cast<std::uint64_t>(ckpt.adam_t));
  write_array(w, ckpt.center);
  w.u32(static_cast<std::uint32_t>(ckpt.student.size()));
  auto ti = ckpt.teacher.begin();
  auto ai = ckpt.adam.begin();
  for (auto si = ckpt.student.begin(); si != ckpt.student.end(); ++si, ++ti, ++ai) {
    if (si->first != ti->first || si->first != ai->first) {
      throw ContractError("save_checkpoint: key mismatch at " + si->first);
    }
    w.str(si->first);
    const Shape& shape = si->second.shape();
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (Index d : shape) w.u32(static_cast<std::uint32_t>(d));
    const Array& sv = si->second.values();
    const Array& tv = ti->second.values();
    if (tv.size() != sv.size() || ai->second.m.size() != sv.size() || ai->second.v.size() != sv.size()) {
      throw ContractError("save_checkpoint: size mismatch at " + si->first);
    }
    for (Index i = 0; i < sv.size(); ++i) w.f64(sv[i]);
    for (Index i = 0; i < tv.size(); ++i) w.f64(tv[i]);
    for (Index i = 0; i < sv.size(); ++i) w.f64(ai->second.m[i]);
    for (Index i = 0; i < sv.size(); ++i) w.f64(ai->second.v[i]);
  }
  const std::uint32_t crc = crc32_ieee(w.data());
  w.u32(crc);
  write_file_bytes(path, w.data());
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 10) throw FormatError(path + ": truncated checkpoint file");
  if (std::memcmp(bytes.data(), "DMMC", 4) != 0) throw FormatError(path + ": bad magic, not a checkpoint");
  const std::uint32_t stored_crc = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24);
  if (crc32_ieee(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw FormatError(path + ": crc32 mismatch, checkpoint is corrupt");
  }
  ByteReader r(bytes.data(), bytes.size() - 4);
  r.raw(4);
  const std::uint16_t version = r.u16();
  if (version != 1) throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_text = r.str();
  ckpt.config_hash = r.u64();
  if (ckpt.config_hash != fnv1a64(ckpt.config_text)) {
    throw FormatError(path + ": config hash does not match config text");
  }
  ckpt.seed = r.u64();
  ckpt.step = static_cast<Index>(r.u64());
  ckpt.epochs_done = static_cast<Index>(r.u64());
  ckpt.adam_t = static_cast<Index>(r.u64());
  ckpt.center = read_array(r);
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string key = r.str();
    const std::uint8_t nd = r.u8();
    if (nd < 1 || nd > 8) throw FormatError(path + ": invalid rank for " + key);
    Shape shape(nd);
    for (std::uint8_t d = 0; d < nd; ++d) shape[d] = static_cast<Index>(r.u32());
    const Index numel = shape_numel(shape);
    if (numel < 1) throw FormatError(path + ": invalid shape for " + key);
    Array sv(numel), tv(numel);
    AdamW::Slot slot{Array(numel), Array(numel)};
    for (Index p = 0; p < numel; ++p) sv[p] = r.f64();
    for (Index p = 0; p < numel; ++p) tv[p] = r.f64();
    for (Index p = 0; p < numel; ++p) slot.m[p] = r.f64();
    for (Index p = 0; p < numel; ++p) slot.v[p] = r.f64();
    ckpt.student[key] = Tensor::param(shape, std::move(sv));
    ckpt.teacher[key] = Tensor::from_data(shape, std::move(tv));
    ckpt.adam[key] = std::move(slot);
  }
  if (r.remaining() != 0) throw FormatError(path + ": trailing bytes after checkpoint payload");
  return ckpt;
}

}  // namespace dinomm
