#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxslu/params.hpp"

namespace ctxslu {

// Checkpoint layout (all integers little-endian):
//   bytes 0..7   magic "SLUCKPT1"
//   bytes 8..15  uint64 header length H
//   H bytes      JSON header: {format, variant, hyper{...}, meta{...},
//                params: [{name, shape}...] in creation order}
//   then         one float32 payload per parameter, in header order
inline constexpr char kCheckpointMagic[8] = {'S', 'L', 'U', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void put_u64_le(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t get_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("checkpoint truncated while reading a length field");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f32_le(std::ostream& out, float f) {
  static_assert(sizeof(float) == 4);
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline float get_f32_le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint truncated inside a parameter payload");
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(b[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParameterStore& store,
                            const std::string& variant, const nlohmann::json& hyper,
                            const nlohmann::json& meta) {
  nlohmann::json params = nlohmann::json::array();
  for (int i = 0; i < store.count(); ++i) {
    params.push_back({{"name", store.name(i)}, {"shape", store.value(i).shape}});
  }
  nlohmann::json header{
      {"format", 1}, {"variant", variant}, {"hyper", hyper}, {"meta", meta},
      {"params", std::move(params)}};
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint to " + path);
  out.write(kCheckpointMagic, 8);
  detail::put_u64_le(out, hs.size());
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (int i = 0; i < store.count(); ++i) {
    for (double v : store.value(i).data) detail::put_f32_le(out, static_cast<float>(v));
  }
  if (!out) throw std::runtime_error("write error while saving checkpoint to " + path);
}

// Loads into an empty store, recreating parameters in the recorded order so a
// model constructed afterwards binds them without re-initialization. Returns
// the JSON header.
inline nlohmann::json load_checkpoint(const std::string& path, ParameterStore& store) {
  if (store.count() != 0) {
    throw std::invalid_argument("load_checkpoint needs an empty parameter store");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error(path + " is not a checkpoint file (bad magic)");
  }
  uint64_t hlen = detail::get_u64_le(in);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("checkpoint truncated inside the header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  for (const auto& p : header.at("params")) {
    std::string name = p.at("name").get<std::string>();
    Shape shape = p.at("shape").get<Shape>();
    int idx = store.get_or_create(name, shape, ParamInit::Zero);
    Tensor& value = store.value(idx);
    for (double& v : value.data) v = static_cast<double>(detail::get_f32_le(in));
  }
  return header;
}

}  // namespace ctxslu
