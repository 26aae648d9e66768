#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lanatt/model/config.hpp"
#include "lanatt/model/params.hpp"

namespace lanatt::model {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Layout (little-endian):
//   "LANATTCK" | u32 version | u32 len | config JSON | u32 count |
//   count x { u32 len | name | u32 rank | u64 dims[rank] | f64 data[] }
inline constexpr char kCheckpointMagic[8] = {'L', 'A', 'N', 'A', 'T', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw ParseError(std::string("checkpoint truncated while reading ") + what);
  }
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  const std::string cfg = to_json(ck.config).dump();
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(cfg.size()));
  buf += cfg;
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ck.params.size()));
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const std::string& name = ck.params.names()[i];
    const Tensor& t = ck.params.tensors()[i];
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put<std::uint64_t>(buf, d);
    buf.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  }
  return buf;
}

inline Checkpoint deserialize(const std::string& buf) {
  detail::Reader r(buf);
  if (r.bytes(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw ParseError("not a checkpoint file (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto cfg_len = r.get<std::uint32_t>("config length");
  try {
    ck.config = model_config_from_json(nlohmann::json::parse(r.bytes(cfg_len, "config")));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.bytes(name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw ParseError("checkpoint tensor '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
    Tensor t(shape);
    const std::string raw = r.bytes(t.size() * sizeof(double), "tensor data");
    std::memcpy(t.data().data(), raw.data(), raw.size());
    ck.params.add(std::move(name), std::move(t));
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint tensors");
  const ModelParams expected = zero_params(ck.config);
  if (expected.names() != ck.params.names()) throw ParseError("checkpoint tensors do not match its model config");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (expected.tensors()[i].shape() != ck.params.tensors()[i].shape())
      throw ParseError("checkpoint tensor '" + expected.names()[i] + "' has the wrong shape");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  const std::string buf = serialize(ck);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(buf);
}

}  // namespace lanatt::model
