#include "vcwn/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>

#include "vcwn/binary_io.hpp"
#include "vcwn/error.hpp"

namespace vcwn {

std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::string& path, const std::vector<char>& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

void Checkpoint::add_parameters(const ParameterSet& params, const std::string& prefix) {
  for (const auto& p : params.items()) tensors.emplace_back(prefix + p.name, p.value);
}

void Checkpoint::load_parameters(ParameterSet& params, const std::string& prefix) const {
  for (auto& p : params.items()) {
    const Tensor& t = tensor(prefix + p.name);
    require(t.same_shape(p.value), ErrorCode::kFormat,
            "checkpoint tensor '" + prefix + p.name + "' has shape " + t.shape_string() +
                ", model expects " + p.value.shape_string());
    p.value = t;
  }
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  fail(ErrorCode::kFormat, "checkpoint has no tensor '" + name + "'");
}

const std::string& Checkpoint::get_meta(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) fail(ErrorCode::kFormat, "checkpoint has no metadata '" + key + "'");
  return it->second;
}

std::vector<char> Checkpoint::serialize() const {
  ByteWriter w;
  w.bytes("VCRM");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u64(e);
    for (double v : t.values()) w.f64(v);
  }
  return w.buffer();
}

Checkpoint Checkpoint::deserialize(const std::vector<char>& bytes) {
  ByteReader r(bytes, "VCRM checkpoint");
  if (r.bytes(4) != "VCRM") fail(ErrorCode::kFormat, "not a VCRM checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    fail(ErrorCode::kFormat, "unsupported VCRM version " + std::to_string(version));
  Checkpoint c;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }
  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.u64());
    std::vector<double> values(shape_count(shape));
    for (auto& v : values) v = r.f64();
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) fail(ErrorCode::kFormat, "VCRM checkpoint has trailing bytes");
  return c;
}

void Checkpoint::save(const std::string& path) const { write_file_bytes(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) {
  return deserialize(read_file_bytes(path));
}

}  // namespace vcwn
